"""Sample x sample correlation matrices (Pearson, Spearman, Kendall tau-b)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from ._io import read_square_matrix, write_square_matrix
from .dataset import ExpressionMatrix
from .errors import DataError

__all__ = [
    "SimilarityMatrix",
    "pearson_matrix",
    "spearman_matrix",
    "kendall_matrix",
    "similarity_matrix",
    "rank_transform",
    "symmetrize_upper",
    "METHODS",
]


@dataclass(frozen=True)
class SimilarityMatrix:
    sample_ids: list[str]
    values: np.ndarray
    method: str = "pearson"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        n = len(self.sample_ids)
        if v.shape != (n, n):
            raise DataError(f"similarity matrix shape {v.shape} does not match {n} samples")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "sample_ids", list(self.sample_ids))

    @property
    def n(self) -> int:
        return len(self.sample_ids)

    def to_tsv(self, path) -> None:
        write_square_matrix(path, self.sample_ids, self.values, [f"similarity: {self.method}"])

    @classmethod
    def from_tsv(cls, path) -> "SimilarityMatrix":
        ids, values, comments = read_square_matrix(path)
        method = "unknown"
        for c in comments:
            if c.startswith("similarity:"):
                method = c.split(":", 1)[1].strip()
        return cls(ids, values, method)


def symmetrize_upper(a: np.ndarray, diag: float | None = None) -> np.ndarray:
    """Copy the strict upper triangle onto the lower one (exact symmetry)."""
    iu = np.triu_indices(a.shape[0], k=1)
    out = np.array(a, dtype=float, copy=True)
    out[(iu[1], iu[0])] = out[iu]
    if diag is not None:
        np.fill_diagonal(out, diag)
    return out


def _pearson_columns(X: np.ndarray, sample_ids) -> np.ndarray:
    if X.shape[0] < 2:
        raise DataError("correlation needs at least 2 features")
    Z = X - X.mean(axis=0)
    norms = np.sqrt((Z * Z).sum(axis=0))
    bad = np.flatnonzero(norms == 0)
    if bad.size:
        raise DataError(f"sample {sample_ids[bad[0]]!r} has a zero-variance profile")
    Z = Z / norms
    C = symmetrize_upper(Z.T @ Z, diag=1.0)
    return np.clip(C, -1.0, 1.0)


def pearson_matrix(M: ExpressionMatrix) -> SimilarityMatrix:
    return SimilarityMatrix(M.sample_ids, _pearson_columns(M.values, M.sample_ids), "pearson")


def rank_transform(M: ExpressionMatrix) -> ExpressionMatrix:
    """Replace every sample column by its ranks (ties get the average rank)."""
    return ExpressionMatrix(M.feature_ids, M.sample_ids, rankdata(M.values, axis=0))


def spearman_matrix(M: ExpressionMatrix) -> SimilarityMatrix:
    R = rank_transform(M)
    return SimilarityMatrix(M.sample_ids, _pearson_columns(R.values, M.sample_ids), "spearman")


def kendall_matrix(M: ExpressionMatrix, block: int = 200_000) -> SimilarityMatrix:
    """Kendall tau-b between every pair of sample columns.

    Pair signs ``sign(x_b - x_a)`` over all feature pairs ``a < b`` are
    accumulated block by block, so concordant-minus-discordant counts and tie
    counts are exact integers before the final division.
    """
    X = M.values
    m, n = X.shape
    if m < 2:
        raise DataError("Kendall tau needs at least 2 features")
    n0 = m * (m - 1) // 2
    cd = np.zeros((n, n))
    ties = np.zeros(n)
    a = 0
    while a < m - 1:
        # gather rows a..b-1 as pair anchors so one block holds ~`block` pairs
        stop, count = a, 0
        while stop < m - 1 and (count == 0 or count + (m - stop - 1) <= block):
            count += m - stop - 1
            stop += 1
        S = np.concatenate([np.sign(X[i + 1:] - X[i]) for i in range(a, stop)])
        cd += S.T @ S
        ties += (S == 0).sum(axis=0)
        a = stop
    untied = n0 - ties
    bad = np.flatnonzero(untied == 0)
    if bad.size:
        raise DataError(f"sample {M.sample_ids[bad[0]]!r} has all-equal values; tau undefined")
    tau = cd / np.sqrt(np.outer(untied, untied))
    tau = symmetrize_upper(tau, diag=1.0)
    return SimilarityMatrix(M.sample_ids, np.clip(tau, -1.0, 1.0), "kendall")


METHODS = {
    "pearson": pearson_matrix,
    "spearman": spearman_matrix,
    "kendall": kendall_matrix,
}


def similarity_matrix(M: ExpressionMatrix, method: str = "pearson") -> SimilarityMatrix:
    try:
        fn = METHODS[method]
    except KeyError:
        raise DataError(f"unknown similarity {method!r}; choose from {sorted(METHODS)}") from None
    return fn(M)
