"""Left-to-right GMM-HMMs for SEIZ/BCKG epoch classification.

One model per class, diagonal-covariance Gaussian mixtures per state,
trained with flat-start Baum-Welch EM and binary mixture splitting.
Decoding is channel-independent: each epoch (a short, fixed-length slice
of one channel's feature sequence) is scored against both class models
and the log-likelihood margin drives classification and DET sweeps.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, ClassifierMixin

from .errors import (
    DimensionMismatch,
    InsufficientData,
    InvalidConfig,
    NonFiniteLikelihood,
)
from .features import FeatureSequence
from .ingest import EventClass, LabelSet
from .validation import check_feature_matrix

MODEL_MAGIC = b"HMM1"
MODEL_FORMAT_VERSION = 1
_TINY_OCCUPANCY = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    num_states: int = 3
    num_mixtures: int = 4
    max_iterations: int = 50
    tolerance: float = 1e-5
    min_epochs: int = 1
    variance_floor_fraction: float = 1e-3

    def __post_init__(self):
        if self.num_states < 1 or self.num_mixtures < 1:
            raise InvalidConfig("need at least one state and one mixture")
        if self.max_iterations < 1 or self.tolerance <= 0:
            raise InvalidConfig("bad EM iteration settings")
        if self.variance_floor_fraction <= 0:
            raise InvalidConfig("variance floor fraction must be positive")


@dataclass(frozen=True)
class Epoch:
    """A contiguous slice of one channel's feature sequence."""

    channel_label: str
    data: np.ndarray
    reference_class: EventClass | None = None
    start_s: float = 0.0

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise InvalidConfig(f"epoch data must be (T, D), got {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)


def epochize(seq: FeatureSequence, labels: LabelSet, epoch_s: float = 1.0) -> list[Epoch]:
    """Cut a feature sequence into fixed-length labeled epochs.

    Each epoch takes the class owning the majority of its time span;
    epochs not covered by any label event are dropped.
    """
    frames_per = int(round(epoch_s / seq.frame_s))
    if frames_per < 1:
        raise InvalidConfig(f"epoch of {epoch_s}s is shorter than one frame")
    epochs = []
    for k in range(seq.num_frames // frames_per):
        start = k * frames_per
        t0, t1 = start * seq.frame_s, (start + frames_per) * seq.frame_s
        cls = labels.class_at(t0, t1)
        if cls is None:
            continue
        epochs.append(Epoch(channel_label=seq.channel_label,
                            data=seq.data[start:start + frames_per],
                            reference_class=cls, start_s=t0))
    return epochs


@dataclass(frozen=True)
class HmmModel:
    """Left-to-right GMM-HMM for one event class.

    `transitions` is row-stochastic with nonzeros only on the diagonal
    and first superdiagonal; the chain starts in state 0 and the last
    state self-loops (sequence end doubles as exit).
    """

    class_tag: EventClass
    transitions: np.ndarray          # (S, S)
    weights: np.ndarray              # (S, M)
    means: np.ndarray                # (S, M, D)
    variances: np.ndarray            # (S, M, D)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("transitions", "weights", "means", "variances"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        s = self.transitions.shape[0]
        if self.transitions.shape != (s, s):
            raise InvalidConfig("transition matrix is not square")
        if not np.allclose(self.transitions.sum(axis=1), 1.0, atol=1e-9):
            raise InvalidConfig("transition rows must sum to 1")
        lower = np.tril(self.transitions, -1)
        upper = np.triu(self.transitions, 2)
        if np.any(lower != 0) or np.any(upper != 0):
            raise InvalidConfig("transitions violate the left-to-right structure")
        if not np.allclose(self.weights.sum(axis=1), 1.0, atol=1e-9):
            raise InvalidConfig("mixture weights must sum to 1 per state")
        if np.any(self.variances <= 0):
            raise InvalidConfig("variances must be strictly positive")

    @property
    def num_states(self):
        return self.transitions.shape[0]

    @property
    def num_mixtures(self):
        return self.weights.shape[1]

    @property
    def dim(self):
        return self.means.shape[2]


def _epoch_data(epoch) -> np.ndarray:
    data = epoch.data if isinstance(epoch, Epoch) else epoch
    return check_feature_matrix(data, name="epoch")


def _check_dims(model: HmmModel, x: np.ndarray):
    if x.shape[1] != model.dim:
        raise DimensionMismatch(
            f"epoch has {x.shape[1]} feature dims, model expects {model.dim}")


def _log_gauss_mix(x, weights, means, variances):
    """Mixture-level log densities for a (..., T, D) batch: (..., T, S, M)."""
    diff = x[..., None, None, :] - means
    quad = np.sum(diff * diff / variances, axis=-1)
    norm = np.sum(np.log(2.0 * np.pi * variances), axis=-1)
    with np.errstate(divide="ignore"):
        return np.log(weights) - 0.5 * (quad + norm)


def _log_emissions(model: HmmModel, x: np.ndarray):
    """Per-frame log densities: mixture-level (T,S,M) and state-level (T,S)."""
    log_mix = _log_gauss_mix(x, model.weights, model.means, model.variances)
    return log_mix, logsumexp(log_mix, axis=-1)


def _log_transitions(model: HmmModel):
    with np.errstate(divide="ignore"):
        return np.log(model.transitions)


def _forward_lattice(log_trans, log_b):
    """Batched forward recursion: log_b is (..., T, S), alpha likewise."""
    t_len = log_b.shape[-2]
    alpha = np.full_like(log_b, -np.inf)
    alpha[..., 0, 0] = log_b[..., 0, 0]  # chain starts in state 0
    for t in range(1, t_len):
        alpha[..., t, :] = log_b[..., t, :] + logsumexp(
            alpha[..., t - 1, :, None] + log_trans, axis=-2)
    return alpha


def log_forward(model: HmmModel, epoch) -> float:
    """Exact log p(observations | model) via the forward recursion."""
    x = _epoch_data(epoch)
    _check_dims(model, x)
    _, log_b = _log_emissions(model, x)
    alpha = _forward_lattice(_log_transitions(model), log_b)
    return float(logsumexp(alpha[-1]))


def log_forward_many(model: HmmModel, epochs) -> np.ndarray:
    """log p(O|model) for a collection of epochs, batched by length."""
    datas = [_epoch_data(ep) for ep in epochs]
    out = np.empty(len(datas))
    log_trans = _log_transitions(model)
    for t_len in sorted({x.shape[0] for x in datas}):
        idx = [i for i, x in enumerate(datas) if x.shape[0] == t_len]
        batch = np.stack([datas[i] for i in idx])
        _check_dims(model, batch[0])
        log_b = logsumexp(_log_gauss_mix(batch, model.weights, model.means,
                                         model.variances), axis=-1)
        alpha = _forward_lattice(log_trans, log_b)
        out[idx] = logsumexp(alpha[:, -1, :], axis=-1)
    return out


def viterbi(model: HmmModel, epoch):
    """Most probable state path and its log score.

    Ties are broken to the lexicographically smallest state sequence.
    The score never exceeds the forward log-likelihood.
    """
    x = _epoch_data(epoch)
    _check_dims(model, x)
    _, log_b = _log_emissions(model, x)
    log_trans = _log_transitions(model)
    t_len, s = log_b.shape

    # Suffix potentials: best completion score from (t, state), inclusive
    # of the emission at t. Reusing these exact values during the forward
    # reconstruction makes tie detection exact, so picking the smallest
    # arg at each step yields the lexicographically smallest optimal path.
    suffix = np.empty((t_len, s))
    suffix[-1] = log_b[-1]
    for t in range(t_len - 2, -1, -1):
        suffix[t] = log_b[t] + np.max(log_trans + suffix[t + 1][None, :], axis=1)

    path = np.empty(t_len, dtype=np.intp)
    path[0] = 0  # start distribution is a point mass on state 0
    score = float(suffix[0, 0])
    for t in range(1, t_len):
        step = log_trans[path[t - 1]] + suffix[t]
        path[t] = int(np.argmax(step))
    return path, score


def classify(models: dict, epoch):
    """Argmax-class decision with the SEIZ-minus-BCKG margin.

    A zero margin (identical models) resolves to BCKG.
    """
    ll_seiz = log_forward(models[EventClass.SEIZ], epoch)
    ll_bckg = log_forward(models[EventClass.BCKG], epoch)
    margin = ll_seiz - ll_bckg
    return (EventClass.SEIZ if margin > 0 else EventClass.BCKG), margin


# --- training ---------------------------------------------------------------

def _left_right_matrix(num_states):
    a = np.zeros((num_states, num_states))
    for i in range(num_states - 1):
        a[i, i] = a[i, i + 1] = 0.5
    a[-1, -1] = 1.0
    return a


def _flat_start(sequences, cfg, floor):
    """Uniform-segmentation initialization of a single-mixture model."""
    s = cfg.num_states
    counts = np.zeros(s)
    sums = np.zeros((s, sequences[0].shape[1]))
    sqsums = np.zeros_like(sums)
    for x in sequences:
        bounds = np.linspace(0, x.shape[0], s + 1).astype(int)
        for state in range(s):
            chunk = x[bounds[state]:bounds[state + 1]]
            counts[state] += chunk.shape[0]
            sums[state] += chunk.sum(axis=0)
            sqsums[state] += (chunk ** 2).sum(axis=0)
    all_x = np.vstack(sequences)
    g_mean, g_var = all_x.mean(axis=0), all_x.var(axis=0)
    means = np.empty((s, 1, sums.shape[1]))
    variances = np.empty_like(means)
    for state in range(s):
        if counts[state] > 0:
            m = sums[state] / counts[state]
            v = sqsums[state] / counts[state] - m ** 2
        else:
            m, v = g_mean, g_var
        means[state, 0] = m
        variances[state, 0] = np.maximum(v, floor)
    weights = np.ones((s, 1))
    return _left_right_matrix(s), weights, means, variances


def _split_mixtures(weights, means, variances, target, offset=0.2):
    """Double components (largest weights first) up to `target` per state."""
    s, m, d = means.shape
    grow = min(target, 2 * m) - m
    if grow <= 0:
        return weights, means, variances
    new_w = np.empty((s, m + grow))
    new_mu = np.empty((s, m + grow, d))
    new_var = np.empty_like(new_mu)
    for state in range(s):
        order = np.argsort(-weights[state], kind="stable")
        split = set(order[:grow].tolist())
        w_list, mu_list, var_list = [], [], []
        for comp in range(m):
            if comp in split:
                sigma = np.sqrt(variances[state, comp])
                for sign in (-1.0, 1.0):
                    w_list.append(weights[state, comp] / 2.0)
                    mu_list.append(means[state, comp] + sign * offset * sigma)
                    var_list.append(variances[state, comp])
            else:
                w_list.append(weights[state, comp])
                mu_list.append(means[state, comp])
                var_list.append(variances[state, comp])
        new_w[state] = w_list
        new_mu[state] = mu_list
        new_var[state] = var_list
    return new_w, new_mu, new_var


def _em_pass(sequences, trans, weights, means, variances):
    """One accumulation pass; returns (total ll, sufficient statistics).

    Sequences are grouped by length and the forward/backward lattices run
    batched over each group, so only the (short) time axis is a Python loop.
    """
    s, m, d = means.shape
    with np.errstate(divide="ignore"):
        log_trans = np.log(trans)
    trans_num = np.zeros((s, s))
    occ = np.zeros((s, m))
    mean_num = np.zeros((s, m, d))
    sq_num = np.zeros((s, m, d))
    total_ll = 0.0

    for t_len in sorted({x.shape[0] for x in sequences}):
        batch = np.stack([x for x in sequences if x.shape[0] == t_len])
        log_mix = _log_gauss_mix(batch, weights, means, variances)  # (N,T,S,M)
        log_b = logsumexp(log_mix, axis=-1)                         # (N,T,S)

        alpha = _forward_lattice(log_trans, log_b)
        beta = np.zeros_like(log_b)
        for t in range(t_len - 2, -1, -1):
            beta[:, t, :] = logsumexp(
                log_trans + (log_b[:, t + 1, :] + beta[:, t + 1, :])[:, None, :],
                axis=-1)
        log_p = logsumexp(alpha[:, -1, :], axis=-1)                 # (N,)
        if not np.all(np.isfinite(log_p)):
            raise NonFiniteLikelihood(
                "epoch likelihood is not finite; check the variance floor")
        total_ll += float(log_p.sum())

        gamma = np.exp(alpha + beta - log_p[:, None, None])         # (N,T,S)
        mix_resp = np.exp(log_mix - log_b[..., None])               # (N,T,S,M)
        gamma_m = gamma[..., None] * mix_resp
        occ += gamma_m.sum(axis=(0, 1))
        mean_num += np.einsum("ntsm,ntd->smd", gamma_m, batch)
        sq_num += np.einsum("ntsm,ntd->smd", gamma_m, batch * batch)
        if t_len > 1:
            xi = np.exp(alpha[:, :-1, :, None] + log_trans[None, None]
                        + (log_b[:, 1:, :] + beta[:, 1:, :])[:, :, None, :]
                        - log_p[:, None, None, None])
            trans_num += xi.sum(axis=(0, 1))

    return total_ll, trans_num, occ, mean_num, sq_num


def _em_update(stats, trans, weights, means, variances, floor):
    _, trans_num, occ, mean_num, sq_num = stats
    mask = trans > 0
    new_trans = trans.copy()
    for i in range(trans.shape[0]):
        row = trans_num[i] * mask[i]
        if row.sum() > _TINY_OCCUPANCY:
            new_trans[i] = row / row.sum()
    new_w = weights.copy()
    new_mu = means.copy()
    new_var = variances.copy()
    for state in range(means.shape[0]):
        state_occ = occ[state].sum()
        if state_occ <= _TINY_OCCUPANCY:
            continue
        new_w[state] = np.maximum(occ[state] / state_occ, 0.0)
        new_w[state] /= new_w[state].sum()
        for comp in range(means.shape[1]):
            if occ[state, comp] <= _TINY_OCCUPANCY:
                continue
            mu = mean_num[state, comp] / occ[state, comp]
            var = sq_num[state, comp] / occ[state, comp] - mu ** 2
            new_mu[state, comp] = mu
            new_var[state, comp] = np.maximum(var, floor)
    return new_trans, new_w, new_mu, new_var


def train(epochs, class_tag: EventClass, cfg: TrainConfig = TrainConfig(),
          metadata: dict | None = None) -> HmmModel:
    """Flat-start Baum-Welch training of one class model.

    Epoch objects carrying a reference class are filtered to `class_tag`;
    bare arrays are used as-is. EM runs per mixture-count phase (1, 2, 4,
    ... up to the configured count, splitting means by +-0.2 stddev)
    until the relative log-likelihood gain drops below the tolerance.
    The per-phase likelihood history lands in metadata["em_history"].
    """
    sequences = []
    for ep in epochs:
        if isinstance(ep, Epoch) and ep.reference_class is not None \
                and ep.reference_class is not class_tag:
            continue
        sequences.append(_epoch_data(ep))
    if len(sequences) < cfg.min_epochs:
        raise InsufficientData(
            f"{len(sequences)} epochs for {class_tag.value}, "
            f"need at least {cfg.min_epochs}")
    dims = {x.shape[1] for x in sequences}
    if len(dims) != 1:
        raise DimensionMismatch(f"epochs disagree on feature dim: {sorted(dims)}")

    all_frames = np.vstack(sequences)
    floor = np.maximum(cfg.variance_floor_fraction * all_frames.var(axis=0), 1e-10)
    trans, weights, means, variances = _flat_start(sequences, cfg, floor)

    history = []
    while True:
        phase = []
        prev_ll = -np.inf
        for _ in range(cfg.max_iterations):
            stats = _em_pass(sequences, trans, weights, means, variances)
            ll = stats[0]
            phase.append(ll)
            trans, weights, means, variances = _em_update(
                stats, trans, weights, means, variances, floor)
            if np.isfinite(prev_ll):
                gain = (ll - prev_ll) / (abs(prev_ll) + 1e-30)
                if gain < cfg.tolerance:
                    break
            prev_ll = ll
        history.append(phase)
        if means.shape[1] >= cfg.num_mixtures:
            break
        weights, means, variances = _split_mixtures(
            weights, means, variances, cfg.num_mixtures)

    meta = dict(metadata or {})
    meta.update({
        "num_epochs": len(sequences),
        "em_history": [list(map(float, p)) for p in history],
        "config": {
            "num_states": cfg.num_states,
            "num_mixtures": cfg.num_mixtures,
            "max_iterations": cfg.max_iterations,
            "tolerance": cfg.tolerance,
            "variance_floor_fraction": cfg.variance_floor_fraction,
        },
    })
    return HmmModel(class_tag=class_tag, transitions=trans, weights=weights,
                    means=means, variances=variances, metadata=meta)


# --- model persistence --------------------------------------------------------

def model_to_json(model: HmmModel) -> str:
    doc = {
        "format": "gmm-hmm",
        "version": MODEL_FORMAT_VERSION,
        "class_tag": model.class_tag.value,
        "transitions": model.transitions.tolist(),
        "weights": model.weights.tolist(),
        "means": model.means.tolist(),
        "variances": model.variances.tolist(),
        "metadata": model.metadata,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def model_from_json(text: str) -> HmmModel:
    doc = json.loads(text)
    if doc.get("format") != "gmm-hmm" or doc.get("version") != MODEL_FORMAT_VERSION:
        raise InvalidConfig("not a supported model JSON document")
    return HmmModel(
        class_tag=EventClass(doc["class_tag"]),
        transitions=np.asarray(doc["transitions"], dtype=np.float64),
        weights=np.asarray(doc["weights"], dtype=np.float64),
        means=np.asarray(doc["means"], dtype=np.float64),
        variances=np.asarray(doc["variances"], dtype=np.float64),
        metadata=doc.get("metadata", {}),
    )


def model_to_bytes(model: HmmModel) -> bytes:
    s, m, d = model.num_states, model.num_mixtures, model.dim
    tag = model.class_tag.value.encode("ascii")
    header = struct.pack("<4sIB", MODEL_MAGIC, MODEL_FORMAT_VERSION, len(tag))
    header += tag + struct.pack("<III", s, m, d)
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in (
        model.transitions, model.weights, model.means, model.variances))
    return header + body


def model_from_bytes(data: bytes) -> HmmModel:
    if len(data) < 9 or data[:4] != MODEL_MAGIC:
        raise InvalidConfig("not a model file (bad magic)")
    version, tag_len = struct.unpack("<IB", data[4:9])
    if version != MODEL_FORMAT_VERSION:
        raise InvalidConfig(f"unsupported model version {version}")
    tag = data[9:9 + tag_len].decode("ascii")
    s, m, d = struct.unpack("<III", data[9 + tag_len:21 + tag_len])
    expected = 21 + tag_len + 8 * (s * s + s * m + 2 * s * m * d)
    if len(data) != expected:
        raise InvalidConfig(f"model file is {len(data)} bytes, expected {expected}")
    off = 21 + tag_len

    def take(shape):
        nonlocal off
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape)
        off += 8 * count
        return arr.astype(np.float64)

    return HmmModel(
        class_tag=EventClass(tag),
        transitions=take((s, s)),
        weights=take((s, m)),
        means=take((s, m, d)),
        variances=take((s, m, d)),
        metadata={},
    )


class SeizureDetector(BaseEstimator, ClassifierMixin):
    """Two-model GMM-HMM classifier over fixed-length feature epochs.

    fit() takes a list of (T, D) arrays (or a 3-D array) and a label per
    epoch; predict() returns labels and decision_function() the
    SEIZ-minus-BCKG log-likelihood margin.
    """

    def __init__(self, num_states=3, num_mixtures=4, max_iterations=50,
                 tolerance=1e-5, min_epochs=1, variance_floor_fraction=1e-3):
        self.num_states = num_states
        self.num_mixtures = num_mixtures
        self.max_iterations = max_iterations
        self.tolerance = tolerance
        self.min_epochs = min_epochs
        self.variance_floor_fraction = variance_floor_fraction

    def _train_config(self):
        return TrainConfig(
            num_states=self.num_states, num_mixtures=self.num_mixtures,
            max_iterations=self.max_iterations, tolerance=self.tolerance,
            min_epochs=self.min_epochs,
            variance_floor_fraction=self.variance_floor_fraction)

    def fit(self, X, y):
        from .validation import check_sequences
        seqs = check_sequences(X)
        labels = [EventClass(v) if not isinstance(v, EventClass) else v for v in y]
        if len(labels) != len(seqs):
            raise DimensionMismatch(f"{len(seqs)} epochs but {len(labels)} labels")
        cfg = self._train_config()
        self.models_ = {
            cls: train([s for s, lab in zip(seqs, labels) if lab is cls], cls, cfg)
            for cls in (EventClass.SEIZ, EventClass.BCKG)
        }
        self.classes_ = np.array([EventClass.BCKG.value, EventClass.SEIZ.value])
        return self

    def decision_function(self, X):
        from .validation import check_sequences
        if not hasattr(self, "models_"):
            raise RuntimeError("SeizureDetector is not fitted; call fit() first")
        seqs = check_sequences(X)
        return (log_forward_many(self.models_[EventClass.SEIZ], seqs)
                - log_forward_many(self.models_[EventClass.BCKG], seqs))

    def predict(self, X):
        margins = self.decision_function(X)
        return np.where(margins > 0, EventClass.SEIZ.value, EventClass.BCKG.value)
