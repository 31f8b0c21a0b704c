"""Cepstral feature extraction: 26-dim vectors per 0.1 s frame.

Each frame of a channel yields a log frequency-domain energy Ef, cepstral
coefficients c1..c7 (DCT-II of log triangular-filterbank energies over a
Hann-windowed 0.2 s analysis window), and a differential energy Ed
(max-minus-min of the Ef track over a local frame window).  First
derivatives are appended for all nine base features and second
derivatives for all but Ed, giving 9 + 9 + 8 = 26 dimensions.

Row layout: [Ef, c1..c7, Ed, d(Ef), d(c1..c7), d(Ed), dd(Ef), dd(c1..c7)].
"""

import struct
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct
from scipy.ndimage import maximum_filter1d, minimum_filter1d
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import InvalidConfig, TooShort
from .ingest import Recording
from .validation import check_signal

FEATURE_MAGIC = b"FEAT"
FEATURE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class FeatureConfig:
    """Knobs of the feature pipeline; defaults give 26-dim vectors."""

    frame_s: float = 0.1
    window_s: float = 0.2
    num_cepstra: int = 7
    num_filters: int = 8
    delta_halfwidth: int = 2
    diff_energy_halfwidth: int = 4
    energy_floor: float = 1e-10

    def __post_init__(self):
        if not (self.window_s >= self.frame_s > 0):
            raise InvalidConfig(
                f"need window_s >= frame_s > 0, got {self.window_s}/{self.frame_s}")
        if not (0 < self.num_cepstra < self.num_filters):
            raise InvalidConfig(
                f"need 0 < num_cepstra < num_filters, got "
                f"{self.num_cepstra}/{self.num_filters}")
        if self.delta_halfwidth < 1 or self.diff_energy_halfwidth < 0:
            raise InvalidConfig("delta/differential-energy halfwidths out of range")
        if self.energy_floor <= 0:
            raise InvalidConfig("energy floor must be positive")

    @property
    def num_base(self):
        """Base features: Ef, c1..cK, Ed."""
        return self.num_cepstra + 2

    @property
    def dim(self):
        """Base + deltas of all + delta-deltas of all but Ed."""
        return 3 * self.num_base - 1

    def window_length(self, fs):
        return int(round(self.window_s * fs))

    def frame_step(self, fs):
        return int(round(self.frame_s * fs))


def feature_names(cfg: FeatureConfig = FeatureConfig()) -> list[str]:
    base = ["Ef"] + [f"c{i}" for i in range(1, cfg.num_cepstra + 1)] + ["Ed"]
    return base + [f"d{n}" for n in base] + [f"dd{n}" for n in base[:-1]]


def spectral_indices(cfg: FeatureConfig = FeatureConfig()) -> tuple[int, ...]:
    """Indices of Ef/c features and their derivatives (everything but Ed, dEd)."""
    nb = cfg.num_base
    ed, d_ed = nb - 1, 2 * nb - 1
    return tuple(i for i in range(cfg.dim) if i not in (ed, d_ed))


def frame_count(num_samples: int, fs: float, cfg: FeatureConfig = FeatureConfig()) -> int:
    """Number of frames for a signal: floor((N - window) / step) + 1."""
    window = cfg.window_length(fs)
    step = cfg.frame_step(fs)
    if window < 1 or step < 1:
        raise InvalidConfig(f"window/step collapse to zero samples at fs={fs}")
    if num_samples < window:
        raise TooShort(f"{num_samples} samples < one window of {window}")
    return (num_samples - window) // step + 1


def _frames(x, fs, cfg):
    window = cfg.window_length(fs)
    step = cfg.frame_step(fs)
    n = frame_count(x.shape[0], fs, cfg)
    idx = step * np.arange(n)[:, None] + np.arange(window)[None, :]
    return x[idx]


def _power_spectrum(frames):
    """One-sided, energy-preserving power spectrum of each row.

    Bin weights are chosen so the row sum equals sum(x**2) exactly
    (Parseval), i.e. interior bins are doubled and scaled by 1/N.
    """
    n = frames.shape[-1]
    spectrum = np.fft.rfft(frames, axis=-1)
    power = (spectrum.real ** 2 + spectrum.imag ** 2) / n
    power[..., 1:] *= 2.0
    if n % 2 == 0:
        power[..., -1] /= 2.0
    return power


def triangular_filterbank(num_filters: int, window_len: int, fs: float) -> np.ndarray:
    """(num_filters, n_bins) triangles with linearly spaced centers on 0..fs/2."""
    freqs = np.fft.rfftfreq(window_len, d=1.0 / fs)
    edges = np.linspace(0.0, fs / 2.0, num_filters + 2)
    num_bins = freqs.shape[0]
    weights = np.zeros((num_filters, num_bins))
    for m in range(num_filters):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (freqs - lo) / (mid - lo)
        falling = (hi - freqs) / (hi - mid)
        weights[m] = np.clip(np.minimum(rising, falling), 0.0, 1.0)
    return weights


def base_features(frame, fs: float, cfg: FeatureConfig = FeatureConfig()):
    """(Ef, c1..cK) of one analysis window. See `base_features_batch`."""
    ef, ceps = base_features_batch(np.asarray(frame, dtype=np.float64)[None, :], fs, cfg)
    return float(ef[0]), ceps[0]


def base_features_batch(frames, fs: float, cfg: FeatureConfig = FeatureConfig()):
    """Ef and cepstra for a (n_frames, window_len) batch.

    Ef is the log of the floored total spectral energy of the
    Hann-windowed frame; cepstra are DCT-II coefficients 1..K of the log
    filterbank energies (coefficient 0 is discarded in favor of Ef).
    """
    frames = np.asarray(frames, dtype=np.float64)
    window = np.hanning(frames.shape[-1])
    power = _power_spectrum(frames * window)
    ef = np.log(np.maximum(power.sum(axis=-1), cfg.energy_floor))
    fbank = triangular_filterbank(cfg.num_filters, frames.shape[-1], fs)
    energies = np.maximum(power @ fbank.T, cfg.energy_floor)
    ceps = dct(np.log(energies), type=2, norm="ortho", axis=-1)
    return ef, ceps[:, 1:cfg.num_cepstra + 1]


def differential_energy(ef_track, t: int | None = None,
                        cfg: FeatureConfig = FeatureConfig()):
    """Max-minus-min of Ef over frames [t-M, t+M], clamped at the edges.

    With t=None the whole track is returned at once.
    """
    track = check_signal(ef_track, "Ef track")
    size = 2 * cfg.diff_energy_halfwidth + 1
    ed = (maximum_filter1d(track, size=size, mode="nearest")
          - minimum_filter1d(track, size=size, mode="nearest"))
    return ed if t is None else float(ed[t])


def deltas(track, halfwidth: int = 2) -> np.ndarray:
    """Regression delta d(t) = sum_n n*(x[t+n]-x[t-n]) / (2*sum_n n^2).

    Edge frames are replicated so the output aligns 1:1 with the input.
    """
    if halfwidth < 1:
        raise InvalidConfig(f"delta halfwidth {halfwidth} must be >= 1")
    track = np.asarray(track, dtype=np.float64)
    squeeze = track.ndim == 1
    if squeeze:
        track = track[:, None]
    padded = np.pad(track, ((halfwidth, halfwidth), (0, 0)), mode="edge")
    n = track.shape[0]
    num = np.zeros_like(track)
    for k in range(1, halfwidth + 1):
        num += k * (padded[halfwidth + k:halfwidth + k + n]
                    - padded[halfwidth - k:halfwidth - k + n])
    out = num / (2.0 * sum(k * k for k in range(1, halfwidth + 1)))
    return out[:, 0] if squeeze else out


@dataclass(frozen=True)
class FeatureSequence:
    """Per-channel feature matrix with one row per frame."""

    channel_label: str
    frame_s: float
    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise InvalidConfig(f"feature data must be 2-D, got {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def num_frames(self):
        return self.data.shape[0]

    @property
    def dim(self):
        return self.data.shape[1]


def extract_channel(samples, fs: float, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Feature matrix (n_frames, dim) for one channel's samples."""
    x = check_signal(samples, "samples")
    frames = _frames(x, fs, cfg)
    ef, ceps = base_features_batch(frames, fs, cfg)
    ed = differential_energy(ef, cfg=cfg)
    base = np.column_stack([ef, ceps, ed])
    d = deltas(base, cfg.delta_halfwidth)
    dd = deltas(d[:, :-1], cfg.delta_halfwidth)
    return np.hstack([base, d, dd])


def extract(rec: Recording, cfg: FeatureConfig = FeatureConfig()) -> list[FeatureSequence]:
    """Run the full feature pipeline on every channel of a recording."""
    out = []
    for ch in rec.channels:
        try:
            data = extract_channel(ch.samples, rec.sample_rate_hz, cfg)
        except TooShort as exc:
            raise TooShort(f"channel {ch.label!r}: {exc}") from exc
        out.append(FeatureSequence(channel_label=ch.label, frame_s=cfg.frame_s, data=data))
    return out


class CepstralFeatureExtractor(BaseEstimator, TransformerMixin):
    """Stateless transformer yielding the 26-dim cepstral feature matrix.

    transform() accepts a 1-D sample array (returns (n_frames, dim)) or a
    2-D (n_channels, n_samples) array (returns (n_channels, n_frames, dim)).
    """

    def __init__(self, sample_rate_hz=100.0, frame_s=0.1, window_s=0.2,
                 num_cepstra=7, num_filters=8, delta_halfwidth=2,
                 diff_energy_halfwidth=4, energy_floor=1e-10):
        self.sample_rate_hz = sample_rate_hz
        self.frame_s = frame_s
        self.window_s = window_s
        self.num_cepstra = num_cepstra
        self.num_filters = num_filters
        self.delta_halfwidth = delta_halfwidth
        self.diff_energy_halfwidth = diff_energy_halfwidth
        self.energy_floor = energy_floor

    def _config(self):
        return FeatureConfig(
            frame_s=self.frame_s, window_s=self.window_s,
            num_cepstra=self.num_cepstra, num_filters=self.num_filters,
            delta_halfwidth=self.delta_halfwidth,
            diff_energy_halfwidth=self.diff_energy_halfwidth,
            energy_floor=self.energy_floor)

    def fit(self, X, y=None):
        self._config()
        return self

    def transform(self, X):
        cfg = self._config()
        arr = np.asarray(X, dtype=np.float64)
        if arr.ndim == 1:
            return extract_channel(arr, self.sample_rate_hz, cfg)
        if arr.ndim == 2:
            return np.stack([extract_channel(row, self.sample_rate_hz, cfg)
                             for row in arr])
        raise InvalidConfig(f"expected 1-D or 2-D input, got shape {arr.shape}")


# --- feature dumps ----------------------------------------------------------

def write_features_csv(seq: FeatureSequence, cfg: FeatureConfig = FeatureConfig()) -> str:
    names = feature_names(cfg)
    if len(names) != seq.dim:
        names = [f"f{i}" for i in range(seq.dim)]
    lines = ["t," + ",".join(names)]
    for i, row in enumerate(seq.data):
        t = i * seq.frame_s
        lines.append(f"{t:.17g}," + ",".join(f"{v:.17g}" for v in row))
    return "\n".join(lines) + "\n"


def read_features_csv(text: str, channel_label: str = "") -> FeatureSequence:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 2:
        raise InvalidConfig("feature CSV has no data rows")
    rows = [[float(v) for v in ln.split(",")] for ln in lines[1:]]
    arr = np.asarray(rows, dtype=np.float64)
    frame_s = arr[1, 0] - arr[0, 0] if arr.shape[0] > 1 else 0.1
    return FeatureSequence(channel_label=channel_label, frame_s=frame_s,
                           data=arr[:, 1:])


def write_features_binary(seq: FeatureSequence) -> bytes:
    """Little-endian float32 rows behind a 16-byte FEAT header."""
    header = struct.pack("<4sIII", FEATURE_MAGIC, FEATURE_FORMAT_VERSION,
                         seq.num_frames, seq.dim)
    return header + seq.data.astype("<f4").tobytes()


def read_features_binary(data: bytes, channel_label: str = "",
                         frame_s: float = 0.1) -> FeatureSequence:
    if len(data) < 16:
        raise InvalidConfig("feature dump shorter than its 16-byte header")
    magic, version, frames, dims = struct.unpack("<4sIII", data[:16])
    if magic != FEATURE_MAGIC:
        raise InvalidConfig(f"bad feature-dump magic {magic!r}")
    if version != FEATURE_FORMAT_VERSION:
        raise InvalidConfig(f"unsupported feature-dump version {version}")
    expected = 16 + 4 * frames * dims
    if len(data) != expected:
        raise InvalidConfig(f"feature dump is {len(data)} bytes, expected {expected}")
    arr = np.frombuffer(data, dtype="<f4", offset=16).reshape(frames, dims)
    return FeatureSequence(channel_label=channel_label, frame_s=frame_s,
                           data=arr.astype(np.float64))
