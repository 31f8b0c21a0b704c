"""Cepstral mean (and variance) normalization of feature sequences.

Normalization is per recording: subtracting each dimension's mean over
time removes any additive per-recording offset exactly, which is the
formal counterpart of cancelling a between-montage mean bias. Ed and its
delta are excluded by default because Ed is already shift-invariant.
"""

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import EmptyInput, InvalidConfig
from .features import FeatureConfig, FeatureSequence, spectral_indices

VARIANCE_FLOOR = 1e-8


class NormalizationMode(Enum):
    NONE = "none"
    CMN = "cmn"
    CMVN = "cmvn"


class NormalizationScope(Enum):
    PER_RECORDING_PER_CHANNEL = "per_channel"
    PER_RECORDING_POOLED = "pooled"


@dataclass(frozen=True)
class NormalizationConfig:
    mode: NormalizationMode = NormalizationMode.CMN
    scope: NormalizationScope = NormalizationScope.PER_RECORDING_PER_CHANNEL
    apply_to: tuple[int, ...] | None = None

    def resolved_indices(self, dim: int) -> tuple[int, ...]:
        if self.apply_to is None:
            indices = spectral_indices(FeatureConfig())
            if max(indices) >= dim:
                raise InvalidConfig(
                    f"default apply_to needs {max(indices) + 1} dims, have {dim}")
            return indices
        if any(i < 0 or i >= dim for i in self.apply_to):
            raise InvalidConfig(f"apply_to {self.apply_to} outside 0..{dim - 1}")
        return tuple(sorted(set(self.apply_to)))


def normalize_array(x: np.ndarray, cfg: NormalizationConfig,
                    stats_from: np.ndarray | None = None) -> np.ndarray:
    """Normalize the selected columns of a (n_frames, dim) matrix.

    `stats_from` supplies the frames used for the mean/stddev (pooled
    scope); it defaults to `x` itself. Unselected columns pass through
    bit-identically.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyInput(f"cannot normalize shape {x.shape}")
    if cfg.mode is NormalizationMode.NONE:
        return x.copy()
    idx = list(cfg.resolved_indices(x.shape[1]))
    ref = x if stats_from is None else np.asarray(stats_from, dtype=np.float64)
    out = x.copy()
    out[:, idx] -= ref[:, idx].mean(axis=0)
    if cfg.mode is NormalizationMode.CMVN:
        std = np.maximum(ref[:, idx].std(axis=0), VARIANCE_FLOOR)
        out[:, idx] /= std
    return out


def normalize(seq: FeatureSequence,
              cfg: NormalizationConfig = NormalizationConfig()) -> FeatureSequence:
    """Apply per-channel normalization to one feature sequence."""
    return replace(seq, data=normalize_array(seq.data, cfg))


def normalize_recording(seqs: list[FeatureSequence],
                        cfg: NormalizationConfig = NormalizationConfig()
                        ) -> list[FeatureSequence]:
    """Normalize all channels of one recording, honoring the scope."""
    if not seqs:
        raise EmptyInput("no feature sequences to normalize")
    if cfg.scope is NormalizationScope.PER_RECORDING_POOLED:
        pooled = np.vstack([s.data for s in seqs])
        return [replace(s, data=normalize_array(s.data, cfg, stats_from=pooled))
                for s in seqs]
    return [normalize(s, cfg) for s in seqs]


class CepstralMeanNormalizer(BaseEstimator, TransformerMixin):
    """Stateless per-input mean (and optionally variance) normalizer.

    Like sklearn's Normalizer, transform() uses statistics of the input
    itself, matching the per-recording scope of the pipeline.
    """

    def __init__(self, mode="cmn", apply_to=None):
        self.mode = mode
        self.apply_to = apply_to

    def _config(self):
        return NormalizationConfig(
            mode=NormalizationMode(self.mode),
            apply_to=None if self.apply_to is None else tuple(self.apply_to))

    def fit(self, X, y=None):
        self._config()
        return self

    def transform(self, X):
        return normalize_array(X, self._config())
