"""Kernelized score functions.

Every score of node i is computed from row i of a kernel matrix and the set of
positive (phenotype) nodes; the total and differential scores also use the
negative nodes.  When the diagonal of K is zero the label of i itself never
enters its own score, which is what makes the one-pass leave-one-out work.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._io import atomic_write, fmt_float
from .errors import DataError, DegenerateLabelsError

__all__ = [
    "ScoreSpec",
    "ScoreVector",
    "SCORE_KINDS",
    "score_node",
    "score_all",
    "score_rows",
    "rank_samples",
]

SCORE_KINDS = ("average", "nearest", "knn", "total", "diff", "dnorm")
_ALIASES = {"av": "average", "avg": "average", "nn": "nearest", "k-nn": "knn",
            "kNN": "knn", "tot": "total", "differential": "diff"}
_NEEDS_NEGATIVES = ("total", "diff", "dnorm")


@dataclass(frozen=True)
class ScoreSpec:
    kind: str
    k: int | None = None

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        if kind not in SCORE_KINDS:
            raise DataError(f"unknown score {self.kind!r}; choose from {', '.join(SCORE_KINDS)}")
        object.__setattr__(self, "kind", kind)
        if kind == "knn":
            if self.k is None or int(self.k) != self.k or self.k < 1:
                raise DataError("knn score needs an integer k >= 1")
            object.__setattr__(self, "k", int(self.k))
        elif self.k is not None:
            raise DataError(f"k only applies to the knn score, not {kind}")

    def describe(self) -> str:
        return f"knn k={self.k}" if self.kind == "knn" else self.kind


@dataclass
class ScoreVector:
    sample_ids: list[str]
    scores: np.ndarray
    zero_denominator: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        self.sample_ids = list(self.sample_ids)
        if self.scores.shape != (len(self.sample_ids),):
            raise DataError("scores and sample_ids differ in length")
        if self.zero_denominator is None:
            self.zero_denominator = np.zeros(len(self.sample_ids), dtype=bool)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.sample_ids, self.scores.tolist()))

    def to_tsv(self, path, extra: dict[str, Sequence] | None = None) -> None:
        order = rank_samples(self)
        rank = {sid: r for r, sid in enumerate(order, start=1)}
        extra = extra or {}
        with atomic_write(path) as fh:
            fh.write("\t".join(["sample_id", "score", "rank", *extra]) + "\n")
            for i, sid in enumerate(self.sample_ids):
                cols = [sid, fmt_float(self.scores[i]), str(rank[sid])]
                cols += [str(v[i]) for v in extra.values()]
                fh.write("\t".join(cols) + "\n")

    @classmethod
    def from_tsv(cls, path) -> "ScoreVector":
        ids, vals = [], []
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n").split("\t")
            col = header.index("score") if "score" in header else 1
            for line in fh:
                if line.strip():
                    cells = line.rstrip("\n").split("\t")
                    ids.append(cells[0])
                    vals.append(float(cells[col]))
        return cls(ids, np.array(vals))


def _as_index(idx, n: int) -> np.ndarray:
    idx = np.asarray(idx)
    if idx.dtype == bool:
        if idx.shape != (n,):
            raise DataError("boolean index has the wrong length")
        return np.flatnonzero(idx)
    idx = idx.astype(int).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise DataError("node index out of range")
    return idx


def _complement(pos: np.ndarray, n: int) -> np.ndarray:
    mask = np.ones(n, dtype=bool)
    mask[pos] = False
    return np.flatnonzero(mask)


def score_rows(
    rows: np.ndarray,
    positives: np.ndarray,
    spec: ScoreSpec,
    negatives: np.ndarray | None = None,
    n_positive: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Score each row of ``rows`` (shape t x n).  Returns ``(scores, zero_denominator)``.

    ``n_positive`` is the normalising constant of the average score and
    defaults to ``len(positives)``.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    n = rows.shape[1]
    pos = _as_index(positives, n)
    if pos.size == 0:
        raise DegenerateLabelsError("score functions need at least one positive node")
    zero_den = np.zeros(rows.shape[0], dtype=bool)
    kind = spec.kind
    if kind == "average":
        norm = pos.size if n_positive is None else n_positive
        return rows[:, pos].sum(axis=1) / norm, zero_den
    if kind == "nearest":
        return rows[:, pos].max(axis=1), zero_den
    if kind == "knn":
        k = min(spec.k, pos.size)
        top = -np.sort(-rows[:, pos], axis=1)[:, :k]
        return top.sum(axis=1), zero_den
    neg = _complement(pos, n) if negatives is None else _as_index(negatives, n)
    if neg.size == 0:
        raise DegenerateLabelsError(f"the {kind} score needs at least one negative node")
    sp = rows[:, pos].sum(axis=1)
    sn = rows[:, neg].sum(axis=1)
    if kind == "diff":
        return sp - sn, zero_den
    den = sp + sn
    zero_den = den == 0
    safe = np.where(zero_den, 1.0, den)
    num = sp if kind == "total" else sp - sn
    return np.where(zero_den, 0.0, num / safe), zero_den


def score_node(
    i: int,
    K_row,
    positives,
    spec: ScoreSpec,
    negatives=None,
    n_positive: int | None = None,
) -> float:
    """Score of node ``i`` from its kernel row.

    Without ``negatives`` the negative set is every node not in ``positives``,
    node ``i`` included, so ``k_ii`` counts unless the diagonal was zeroed.
    """
    K_row = np.asarray(K_row, dtype=float)
    if not 0 <= i < K_row.size:
        raise DataError(f"node index {i} out of range")
    s, _ = score_rows(K_row[None, :], positives, spec, negatives, n_positive)
    return float(s[0])


def score_all(
    K,
    positives,
    spec: ScoreSpec,
    targets=None,
    negatives=None,
    n_positive: int | None = None,
):
    """Score every node in ``targets`` (default: all nodes) from its row of K."""
    from .kernel import KernelMatrix

    if isinstance(K, KernelMatrix):
        ids, Kv = K.sample_ids, K.values
    else:
        Kv = np.asarray(K, dtype=float)
        ids = [str(i) for i in range(Kv.shape[0])]
    n = Kv.shape[0]
    tgt = np.arange(n) if targets is None else _as_index(targets, n)
    scores, zero_den = score_rows(Kv[tgt], positives, spec, negatives, n_positive)
    return ScoreVector([ids[i] for i in tgt], scores, zero_den)


def rank_samples(s: ScoreVector) -> list[str]:
    """Sample ids by descending score; equal scores in ascending id order."""
    ids = np.array(s.sample_ids, dtype=str)
    order = np.lexsort((ids, -s.scores))
    return [s.sample_ids[i] for i in order]
