"""Descriptive statistics per montage class and PCA eigen-analysis.

StatsSummary accumulates mean/variance online (Welford) and merges
associatively, so per-file partial summaries can be combined in any
order. PCA uses a cyclic Jacobi eigensolver: for 9x9 covariance matrices
simplicity and a verifiable convergence criterion beat asymptotics.
"""

import io
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import DimensionMismatch, EmptyInput, InsufficientData
from .validation import check_feature_matrix, check_is_fitted

BASE_FEATURE_NAMES = ("Ef", "c1", "c2", "c3", "c4", "c5", "c6", "c7", "Ed")


@dataclass
class StatsSummary:
    """Streaming per-dimension mean/variance accumulator.

    Keeps Welford's (count, mean, M2) triple per dimension; variance is
    the population (divide-by-N) variance. Empty summaries report NaN.
    """

    class_tag: str = "GLOBAL"
    count: int = 0
    mean: np.ndarray | None = None
    _m2: np.ndarray | None = field(default=None, repr=False)

    def add(self, vector) -> "StatsSummary":
        v = np.asarray(vector, dtype=np.float64)
        if self.mean is None:
            self.mean = np.zeros_like(v)
            self._m2 = np.zeros_like(v)
        elif v.shape != self.mean.shape:
            raise DimensionMismatch(
                f"vector has shape {v.shape}, summary tracks {self.mean.shape}")
        self.count += 1
        delta = v - self.mean
        self.mean = self.mean + delta / self.count
        self._m2 = self._m2 + delta * (v - self.mean)
        return self

    def add_batch(self, matrix) -> "StatsSummary":
        x = check_feature_matrix(matrix, name="batch")
        batch = StatsSummary(class_tag=self.class_tag)
        batch.count = x.shape[0]
        batch.mean = x.mean(axis=0)
        batch._m2 = ((x - batch.mean) ** 2).sum(axis=0)
        merged = self.merge(batch)
        self.count, self.mean, self._m2 = merged.count, merged.mean, merged._m2
        return self

    def merge(self, other: "StatsSummary") -> "StatsSummary":
        """Associative parallel merge (Chan's update)."""
        if self.count == 0:
            out = StatsSummary(self.class_tag if self.class_tag == other.class_tag
                               else other.class_tag)
            out.count, out.mean, out._m2 = other.count, other.mean, other._m2
            return out
        if other.count == 0:
            out = StatsSummary(self.class_tag)
            out.count, out.mean, out._m2 = self.count, self.mean, self._m2
            return out
        if self.mean.shape != other.mean.shape:
            raise DimensionMismatch(
                f"cannot merge summaries of dims {self.mean.shape} and {other.mean.shape}")
        tag = self.class_tag if self.class_tag == other.class_tag else "GLOBAL"
        n = self.count + other.count
        delta = other.mean - self.mean
        out = StatsSummary(tag)
        out.count = n
        out.mean = self.mean + delta * (other.count / n)
        out._m2 = self._m2 + other._m2 + delta ** 2 * (self.count * other.count / n)
        return out

    @property
    def variance(self) -> np.ndarray:
        if self.count == 0 or self.mean is None:
            return np.full(0 if self.mean is None else self.mean.shape, np.nan)
        return self._m2 / self.count


def accumulate(summary: StatsSummary, vectors) -> StatsSummary:
    """Fold a stream of base-feature vectors into a summary."""
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None] if arr.size and np.isscalar(arr[0]) else arr[None, :]
    if arr.size == 0:
        return summary
    return summary.add_batch(arr)


# --- Table-style stats report -----------------------------------------------

@dataclass(frozen=True)
class StatsTable:
    """Per-feature mean/variance by montage class plus the global block."""

    feature_names: tuple[str, ...]
    mean_le: np.ndarray
    mean_ar: np.ndarray
    var_le: np.ndarray
    var_ar: np.ndarray
    mean_global: np.ndarray
    var_global: np.ndarray

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("feature,mean_le,mean_ar,var_le,var_ar,mean_global,var_global\n")
        for i, name in enumerate(self.feature_names):
            out.write(",".join([name] + [
                f"{v:.17g}" for v in (
                    self.mean_le[i], self.mean_ar[i], self.var_le[i],
                    self.var_ar[i], self.mean_global[i], self.var_global[i])]) + "\n")
        return out.getvalue()

    def to_text(self) -> str:
        lines = [f"{'Feature':<8}{'Mean LE':>12}{'Mean AR':>12}"
                 f"{'Var LE':>12}{'Var AR':>12}"]
        for i, name in enumerate(self.feature_names):
            lines.append(f"{name:<8}{self.mean_le[i]:>12.3f}{self.mean_ar[i]:>12.3f}"
                         f"{self.var_le[i]:>12.3f}{self.var_ar[i]:>12.3f}")
        lines.append("")
        lines.append(f"{'Global':<8}{'Mean':>12}{'Var':>12}")
        for i, name in enumerate(self.feature_names):
            lines.append(f"{name:<8}{self.mean_global[i]:>12.3f}"
                         f"{self.var_global[i]:>12.3f}")
        return "\n".join(lines) + "\n"


def parse_stats_csv(text: str) -> StatsTable:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    names, cols = [], [[] for _ in range(6)]
    for ln in lines[1:]:
        parts = ln.split(",")
        names.append(parts[0])
        for j in range(6):
            cols[j].append(float(parts[j + 1]))
    arrays = [np.asarray(c) for c in cols]
    return StatsTable(tuple(names), *arrays)


def report_table(le: StatsSummary, ar: StatsSummary,
                 global_: StatsSummary | None = None,
                 feature_names: tuple[str, ...] = BASE_FEATURE_NAMES) -> StatsTable:
    """Assemble the per-class descriptive-statistics table.

    The global block defaults to the merge of the two class summaries.
    """
    if global_ is None:
        global_ = le.merge(ar)
    dims = {s.mean.shape[0] for s in (le, ar, global_)
            if s.mean is not None and s.count > 0}
    if len(dims) > 1:
        raise DimensionMismatch(f"summaries disagree on dimension: {sorted(dims)}")
    dim = dims.pop() if dims else len(feature_names)
    if dim != len(feature_names):
        raise DimensionMismatch(
            f"{dim}-dim summaries need {dim} feature names, have {len(feature_names)}")

    def block(s):
        if s.count == 0 or s.mean is None:
            return np.full(dim, np.nan), np.full(dim, np.nan)
        return s.mean.copy(), s.variance

    mean_le, var_le = block(le)
    mean_ar, var_ar = block(ar)
    mean_g, var_g = block(global_)
    return StatsTable(tuple(feature_names), mean_le, mean_ar, var_le, var_ar,
                      mean_g, var_g)


# --- PCA --------------------------------------------------------------------

def jacobi_eigh(matrix, tol: float = 1e-12, max_sweeps: int = 100):
    """Eigen-decompose a symmetric matrix with cyclic Jacobi rotations.

    Sweeps run until the off-diagonal Frobenius norm drops below
    tol * max(1, ||A||_F). Returns (eigenvalues descending, eigenvectors
    as columns).
    """
    a = np.array(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"need a square matrix, got {a.shape}")
    if not np.allclose(a, a.T, rtol=0, atol=1e-8 * max(1.0, np.abs(a).max())):
        raise DimensionMismatch("matrix is not symmetric")
    d = a.shape[0]
    v = np.eye(d)
    threshold = tol * max(1.0, float(np.linalg.norm(a)))

    off_mask = ~np.eye(d, dtype=bool)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(a[off_mask] ** 2))
        if off <= threshold:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                # Stable rotation angle (Golub & Van Loan, sym. Schur 2x2).
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p, rot_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * rot_p - s * rot_q
                a[:, q] = s * rot_p + c * rot_q
                rot_p, rot_q = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rot_p - s * rot_q
                a[q, :] = s * rot_p + c * rot_q
                a[p, q] = a[q, p] = 0.0
                rot_p, rot_q = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * rot_p - s * rot_q
                v[:, q] = s * rot_p + c * rot_q

    eigenvalues = np.diag(a).copy()
    order = np.argsort(-eigenvalues, kind="stable")
    return eigenvalues[order], v[:, order]


def _fix_signs(vectors):
    out = vectors.copy()
    for j in range(out.shape[1]):
        k = int(np.argmax(np.abs(out[:, j])))
        if out[k, j] < 0:
            out[:, j] = -out[:, j]
    return out


@dataclass(frozen=True)
class EigenDecomposition:
    """Mean, covariance, and the sorted eigen system of a data cloud."""

    mean: np.ndarray
    covariance: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns, orthonormal, sign-fixed
    explained: np.ndarray

    @property
    def dim(self):
        return self.mean.shape[0]


def pca(vectors, ddof: int = 1) -> EigenDecomposition:
    """Eigen-analysis of the covariance of a (n, d) collection.

    Covariance is about the sample mean with divide-by-(N-ddof);
    eigenvalues are sorted descending and each eigenvector's sign is fixed
    so its largest-magnitude entry is positive.
    """
    x = check_feature_matrix(vectors, name="vectors")
    n = x.shape[0]
    if n < 2:
        raise InsufficientData(f"PCA needs at least 2 vectors, got {n}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - ddof)
    cov = (cov + cov.T) / 2.0
    eigenvalues, eigenvectors = jacobi_eigh(cov)
    eigenvectors = _fix_signs(eigenvectors)
    total = eigenvalues.sum()
    explained = eigenvalues / total if total > 0 else np.full_like(eigenvalues, np.nan)
    return EigenDecomposition(mean=mean, covariance=cov, eigenvalues=eigenvalues,
                              eigenvectors=eigenvectors, explained=explained)


@dataclass(frozen=True)
class EigenvectorComparison:
    """Rank-by-rank comparison of two eigen systems."""

    cosine_similarity: np.ndarray          # |v_a . v_b| per rank
    amplitudes_a: np.ndarray               # (dim, rank) signed entries
    amplitudes_b: np.ndarray
    polarity_mismatch: tuple[tuple[int, ...], ...]  # per rank: flipped components

    def to_gnuplot(self) -> str:
        """Columns: component index, then per-rank amplitudes for a and b."""
        dim, k = self.amplitudes_a.shape
        lines = ["# component " +
                 " ".join(f"a_rank{j + 1} b_rank{j + 1}" for j in range(k))]
        for i in range(dim):
            row = [str(i + 1)]
            for j in range(k):
                row.append(f"{self.amplitudes_a[i, j]:.17g}")
                row.append(f"{self.amplitudes_b[i, j]:.17g}")
            lines.append(" ".join(row))
        return "\n".join(lines) + "\n"


def compare_eigenvectors(a: EigenDecomposition, b: EigenDecomposition
                         ) -> EigenvectorComparison:
    """Compare same-rank eigenvectors of two decompositions.

    Reports the absolute cosine similarity per rank, the signed component
    amplitudes of both systems, and which components differ in polarity
    after the sign convention is applied.
    """
    if a.dim != b.dim:
        raise DimensionMismatch(f"dimensions differ: {a.dim} vs {b.dim}")
    va, vb = a.eigenvectors, b.eigenvectors
    cosines = np.abs(np.sum(va * vb, axis=0))
    mismatches = []
    for j in range(a.dim):
        flipped = np.flatnonzero(np.sign(va[:, j]) * np.sign(vb[:, j]) < 0)
        mismatches.append(tuple(int(i) for i in flipped))
    return EigenvectorComparison(
        cosine_similarity=cosines,
        amplitudes_a=va.copy(),
        amplitudes_b=vb.copy(),
        polarity_mismatch=tuple(mismatches),
    )


class PrincipalComponentAnalysis(BaseEstimator, TransformerMixin):
    """Jacobi-based PCA with sklearn fit/transform semantics.

    After fit: `mean_`, `covariance_`, `eigenvalues_`,
    `components_` (rows are eigenvectors), `explained_variance_ratio_`,
    and `decomposition_` with the full result.
    """

    def __init__(self, ddof=1):
        self.ddof = ddof

    def fit(self, X, y=None):
        dec = pca(X, ddof=self.ddof)
        self.decomposition_ = dec
        self.mean_ = dec.mean
        self.covariance_ = dec.covariance
        self.eigenvalues_ = dec.eigenvalues
        self.components_ = dec.eigenvectors.T
        self.explained_variance_ratio_ = dec.explained
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        x = check_feature_matrix(X, dim=self.mean_.shape[0])
        return (x - self.mean_) @ self.components_.T
