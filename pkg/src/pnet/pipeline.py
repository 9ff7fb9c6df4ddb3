"""Network scoring end to end: leave-one-out, cross-validated and held-out
variants, and the MCCV / repeated k-fold evaluation harnesses.

Graphs are transductive: W and K always span every sample, test samples
included, but only training labels are ever read.  Features are selected on
training samples only.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np

from ._io import atomic_write
from .dataset import ExpressionMatrix, PhenotypeLabels
from .errors import DataError, DegenerateLabelsError, PNetError, SplitError
from .featsel import moderated_t, select_top_k, welch_t
from .kernel import KernelMatrix, KernelSpec, make_kernel
from .scoring import ScoreSpec, ScoreVector, score_rows
from .similarity import similarity_matrix
from .threshold import DEFAULT_GRID, ThresholdResult, as_grid, optimize_thresh_by_loo

log = logging.getLogger(__name__)

__all__ = [
    "PipelineConfig",
    "DoubleLooResult",
    "HeldoutResult",
    "CVResult",
    "SplitRecord",
    "RoundRecord",
    "EvaluationReport",
    "pnet_double_loo",
    "pnet_heldout",
    "pnet_cv",
    "select_score_threshold",
    "evaluate_split",
    "mccv",
    "kfold_eval",
    "stability",
    "balanced_split",
    "random_folds",
    "round_rng",
]

FEATSEL = ("welch", "moderated", "none")
MAX_ATTEMPTS = 100


@dataclass(frozen=True)
class PipelineConfig:
    featsel: str = "welch"
    top_k: int | None = 1000
    shrink: bool = True
    similarity: str = "pearson"
    kernel: KernelSpec = field(default_factory=lambda: KernelSpec("random_walk", p=1, a=2.0))
    score: ScoreSpec = field(default_factory=lambda: ScoreSpec("nearest"))
    grid: tuple[float, ...] = DEFAULT_GRID
    score_grid: tuple[float, ...] | None = None
    seed: int = 0
    rounds: int = 1
    train_size: int | None = None
    folds: int = 5
    stability_k: int = 20

    def __post_init__(self):
        if self.featsel not in FEATSEL:
            raise DataError(f"featsel must be one of {FEATSEL}, got {self.featsel!r}")
        if self.featsel != "none" and (self.top_k is None or self.top_k < 1):
            raise DataError("top_k must be a positive integer when feature selection is on")
        if self.similarity not in ("pearson", "spearman", "kendall"):
            raise DataError(f"unknown similarity {self.similarity!r}")
        if self.rounds < 1:
            raise DataError("rounds must be >= 1")
        if self.folds < 2:
            raise DataError("folds must be >= 2")
        if self.seed is None:
            raise DataError("a seed is required")
        object.__setattr__(self, "grid", tuple(float(q) for q in as_grid(self.grid)))
        if self.score_grid is not None:
            object.__setattr__(self, "score_grid",
                               tuple(float(q) for q in as_grid(self.score_grid)))

    @property
    def effective_score_grid(self) -> tuple[float, ...]:
        return self.grid if self.score_grid is None else self.score_grid

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel"] = {"kind": self.kernel.kind, **self.kernel.params()}
        d["score"] = {"kind": self.score.kind, **({"k": self.score.k} if self.score.k else {})}
        d["grid"] = list(self.grid)
        d["score_grid"] = list(self.effective_score_grid)
        return d


def _kernel_values(K) -> tuple[list[str], np.ndarray]:
    if isinstance(K, KernelMatrix):
        return K.sample_ids, K.values
    K = np.asarray(K, dtype=float)
    return [str(i) for i in range(K.shape[0])], K


def _index_set(idx, n: int) -> np.ndarray:
    idx = np.asarray(idx)
    if idx.dtype == bool:
        return np.flatnonzero(idx)
    idx = np.unique(idx.astype(int))
    if idx.size and (idx[0] < 0 or idx[-1] >= n):
        raise DataError("node index out of range")
    return idx


# --------------------------------------------------------------------------
# scoring variants on a fixed kernel
# --------------------------------------------------------------------------

@dataclass
class DoubleLooResult:
    scores: ScoreVector
    quantiles: np.ndarray
    thresholds: np.ndarray


def pnet_double_loo(K, positives, grid=DEFAULT_GRID, spec: ScoreSpec = ScoreSpec("nearest")
                    ) -> DoubleLooResult:
    """Outer leave-one-out around the internal threshold search.

    For each node i the filtering quantile is chosen with i removed from the
    labelled set (internal LOO on the other nodes), only row i is filtered
    with it, ``k_ii`` is zeroed, and i is scored against the remaining labels.
    """
    ids, A = _kernel_values(K)
    n = A.shape[0]
    pos_mask = np.zeros(n, dtype=bool)
    pos_mask[_index_set(positives, n)] = True
    if pos_mask.sum() < 2 or (~pos_mask).sum() < 2:
        raise DegenerateLabelsError("double LOO needs >= 2 positive and >= 2 negative nodes")
    scores = np.empty(n)
    quantiles = np.empty(n)
    thresholds = np.empty(n)
    everyone = np.arange(n)
    for i in range(n):
        others = everyone[everyone != i]
        pos_i = others[pos_mask[others]]
        neg_i = others[~pos_mask[others]]
        res = optimize_thresh_by_loo(A, pos_i, others, grid, spec, neg_i)
        row = np.where(A[i] < res.threshold, 0.0, A[i])
        row[i] = 0.0
        s, _ = score_rows(row, pos_i, spec, neg_i, n_positive=pos_i.size)
        scores[i] = s[0]
        quantiles[i] = res.quantile
        thresholds[i] = res.threshold
    return DoubleLooResult(ScoreVector(ids, scores), quantiles, thresholds)


@dataclass
class HeldoutResult:
    scores: ScoreVector
    train_scores: ScoreVector
    threshold: ThresholdResult


def pnet_heldout(K, positives, train, test, grid=DEFAULT_GRID,
                 spec: ScoreSpec = ScoreSpec("nearest")) -> HeldoutResult:
    """Single train/test split: threshold by internal LOO on train, score test.

    Only the labels of training nodes are read (``positives`` outside
    ``train`` are ignored).  ``train_scores`` are the leave-one-out scores of
    the training nodes on the same filtered matrix.
    """
    ids, A = _kernel_values(K)
    n = A.shape[0]
    train = np.asarray(train, dtype=int)
    test = np.asarray(test, dtype=int)
    if np.intersect1d(train, test).size:
        raise DataError("train and test sets overlap")
    if test.size == 0:
        raise DataError("test set is empty")
    pos_mask = np.zeros(n, dtype=bool)
    pos_mask[_index_set(positives, n)] = True
    pos_tr = train[pos_mask[train]]
    neg_tr = train[~pos_mask[train]]
    if pos_tr.size == 0 or neg_tr.size == 0:
        raise DegenerateLabelsError("training set must contain both classes")
    res = optimize_thresh_by_loo(A, pos_tr, train, grid, spec, neg_tr)
    Kz = A.copy()
    np.fill_diagonal(Kz, 0.0)
    rows = np.concatenate([test, train])
    block = Kz[rows]
    block = np.where(block < res.threshold, 0.0, block)
    s, zd = score_rows(block, pos_tr, spec, neg_tr, n_positive=pos_tr.size)
    t = test.size
    return HeldoutResult(
        ScoreVector([ids[i] for i in test], s[:t], zd[:t]),
        ScoreVector([ids[i] for i in train], s[t:], zd[t:]),
        res,
    )


@dataclass
class CVResult:
    scores: ScoreVector
    fold_of: np.ndarray
    quantiles: list[float]


def random_folds(n: int, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Random partition of ``range(n)`` into ``k`` folds of (nearly) equal size."""
    if not 2 <= k <= n:
        raise DataError(f"fold count must lie in [2, {n}], got {k}")
    return [np.sort(f) for f in np.array_split(rng.permutation(n), k)]


def pnet_cv(K, positives, folds: int, grid=DEFAULT_GRID,
            spec: ScoreSpec = ScoreSpec("nearest"), seed: int = 0) -> CVResult:
    """External k-fold CV: per fold, threshold on the other folds, score the fold."""
    ids, A = _kernel_values(K)
    n = A.shape[0]
    parts = random_folds(n, folds, np.random.default_rng(seed))
    scores = np.empty(n)
    fold_of = np.empty(n, dtype=int)
    quantiles = []
    everyone = np.arange(n)
    for j, test in enumerate(parts):
        train = np.setdiff1d(everyone, test)
        res = pnet_heldout(A, positives, train, test, grid, spec)
        scores[test] = res.scores.scores
        fold_of[test] = j
        quantiles.append(res.threshold.quantile)
    return CVResult(ScoreVector(ids, scores), fold_of, quantiles)


def select_score_threshold(train_scores, train_labels, grid=DEFAULT_GRID) -> float:
    """Cut on training scores (score > cut means positive) with the best accuracy.

    Candidate cuts are the grid quantiles of the training scores; among equally
    accurate cuts the lowest wins.
    """
    s = np.asarray(getattr(train_scores, "scores", train_scores), dtype=float)
    y = np.asarray(train_labels, dtype=bool)
    if s.shape != y.shape:
        raise DataError("training scores and labels differ in length")
    if y.all() or not y.any():
        raise DegenerateLabelsError("score threshold needs both classes in training")
    cuts = np.quantile(s, as_grid(grid))
    acc = ((s[None, :] > cuts[:, None]) == y[None, :]).mean(axis=1)
    best = np.flatnonzero(acc == acc.max())
    return float(cuts[best].min())


# --------------------------------------------------------------------------
# evaluation harnesses
# --------------------------------------------------------------------------

def round_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for round ``index``; identical whatever the scheduling."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def balanced_split(labels: np.ndarray, train_size: int, rng: np.random.Generator,
                   min_train_per_class: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Random train/test split whose test classes are equal in size or differ by one."""
    labels = np.asarray(labels, dtype=bool)
    n = labels.size
    t = n - train_size
    if not 1 <= t < n:
        raise DataError(f"train size must lie in [1, {n - 1}], got {train_size}")
    pos = np.flatnonzero(labels)
    neg = np.flatnonzero(~labels)
    for _ in range(MAX_ATTEMPTS):
        t_pos = t // 2 + (t % 2) * int(rng.integers(2))
        t_neg = t - t_pos
        if (pos.size - t_pos < min_train_per_class or neg.size - t_neg < min_train_per_class
                or t_pos > pos.size or t_neg > neg.size):
            continue
        test = np.sort(np.concatenate([rng.choice(pos, t_pos, replace=False),
                                       rng.choice(neg, t_neg, replace=False)]))
        train = np.setdiff1d(np.arange(n), test)
        return train, test
    raise SplitError(f"no balanced split with train size {train_size} after {MAX_ATTEMPTS} attempts")


def _kfold_partition(labels, folds, rng, min_train_per_class=2) -> list[np.ndarray]:
    n = labels.size
    for _ in range(MAX_ATTEMPTS):
        parts = random_folds(n, folds, rng)
        ok = all(
            labels[np.setdiff1d(np.arange(n), p)].sum() >= min_train_per_class
            and (~labels[np.setdiff1d(np.arange(n), p)]).sum() >= min_train_per_class
            for p in parts
        )
        if ok:
            return parts
    raise SplitError(f"no admissible {folds}-fold partition after {MAX_ATTEMPTS} attempts")


@dataclass
class SplitRecord:
    train: list[int]
    test: list[int]
    selected: list[str] = field(repr=False)
    q_star: float
    inner_auc: float
    edge_threshold: float
    score_threshold: float
    test_scores: np.ndarray
    predictions: np.ndarray
    truth: np.ndarray

    @property
    def n_errors(self) -> int:
        return int((self.predictions != self.truth).sum())

    @property
    def error(self) -> float:
        return self.n_errors / len(self.test)

    @property
    def accuracy(self) -> float:
        return 1.0 - self.error

    def class_counts(self) -> dict:
        t = self.truth
        wrong = self.predictions != t
        return {
            "n_positive": int(t.sum()), "n_negative": int((~t).sum()),
            "errors_positive": int((wrong & t).sum()), "errors_negative": int((wrong & ~t).sum()),
        }


def _select_features(M: ExpressionMatrix, y: np.ndarray, train: np.ndarray,
                     cfg: PipelineConfig) -> list[str]:
    if cfg.featsel == "none":
        return list(M.feature_ids)
    Mt = M.subset_samples(train)
    yt = PhenotypeLabels(Mt.sample_ids, y[train])
    stats = welch_t(Mt, yt) if cfg.featsel == "welch" else moderated_t(Mt, yt, shrink=cfg.shrink)
    return select_top_k(stats, cfg.top_k)


def evaluate_split(M: ExpressionMatrix, labels, train, test, cfg: PipelineConfig) -> SplitRecord:
    """One train/test evaluation: select features on train, build W and K over all
    samples, choose the edge threshold and the score cut on train, predict test."""
    y = np.asarray(labels, dtype=bool)
    train = np.asarray(train, dtype=int)
    test = np.asarray(test, dtype=int)
    selected = _select_features(M, y, train, cfg)
    W = similarity_matrix(M.select_features(selected), cfg.similarity)
    K = make_kernel(W, cfg.kernel)
    positives = train[y[train]]
    ho = pnet_heldout(K, positives, train, test, cfg.grid, cfg.score)
    cut = select_score_threshold(ho.train_scores.scores, y[train], cfg.effective_score_grid)
    pred = ho.scores.scores > cut
    return SplitRecord(
        train=train.tolist(), test=test.tolist(), selected=selected,
        q_star=ho.threshold.quantile, inner_auc=ho.threshold.auc,
        edge_threshold=ho.threshold.threshold, score_threshold=cut,
        test_scores=ho.scores.scores, predictions=pred, truth=y[test],
    )


@dataclass
class RoundRecord:
    index: int
    splits: list[SplitRecord] = field(default_factory=list)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def accuracy(self) -> float:
        # mean of per-split accuracies: one split for MCCV, the folds for k-fold CV
        return 1.0 - self.cv_error

    @property
    def cv_error(self) -> float:
        return float(np.mean([s.error for s in self.splits]))


def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


@dataclass
class EvaluationReport:
    kind: str
    config: PipelineConfig
    sample_ids: list[str]
    labels: np.ndarray
    rounds: list[RoundRecord]
    aggregates: dict
    baselines: dict = field(default_factory=dict)

    @property
    def completed(self) -> list[RoundRecord]:
        return [r for r in self.rounds if r.ok]

    @property
    def all_splits(self) -> list[SplitRecord]:
        return [s for r in self.completed for s in r.splits]

    def split_indices(self):
        """Splits in the form accepted by the ``splits`` argument of the harnesses."""
        if self.kind == "mccv":
            return [(r.splits[0].train, r.splits[0].test) if r.ok else None for r in self.rounds]
        return [[s.test for s in r.splits] if r.ok else None for r in self.rounds]

    def to_dict(self) -> dict:
        ids = self.sample_ids
        rounds = []
        for r in self.rounds:
            rec = {"round": r.index, "status": "ok" if r.ok else "aborted"}
            if not r.ok:
                rec["error"] = r.error
                rounds.append(rec)
                continue
            splits = []
            for j, s in enumerate(r.splits):
                splits.append({
                    "fold": j,
                    "train_ids": [ids[i] for i in s.train],
                    "test_ids": [ids[i] for i in s.test],
                    "selected_top": s.selected[: self.config.stability_k],
                    "n_selected": len(s.selected),
                    "q_star": s.q_star,
                    "inner_auc": s.inner_auc,
                    "edge_threshold": s.edge_threshold,
                    "score_threshold": s.score_threshold,
                    "test_scores": {ids[i]: float(v) for i, v in zip(s.test, s.test_scores)},
                    "predicted": {ids[i]: int(v) for i, v in zip(s.test, s.predictions)},
                    "accuracy": s.accuracy,
                    **s.class_counts(),
                })
            rec["accuracy"] = r.accuracy
            if self.kind == "kfold":
                rec["cv_error"] = r.cv_error
                rec["folds"] = splits
            else:
                rec.update(splits[0])
                rec.pop("fold")
            rounds.append(rec)
        return _clean({
            "kind": self.kind,
            "config": self.config.to_dict(),
            "aggregates": self.aggregates,
            "baselines": self.baselines,
            "metadata": {
                "sem": "sample sd (ddof=1) of per-round accuracies / sqrt(completed rounds)",
                "score_zero_denominator": "total/dnorm scores with a zero denominator are 0",
                "prediction": "positive iff score > score_threshold",
            },
            "rounds": rounds,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, allow_nan=False) + "\n"

    def write_json(self, path) -> None:
        with atomic_write(path) as fh:
            fh.write(self.to_json())

    def write_accuracy_tsv(self, path) -> None:
        with atomic_write(path) as fh:
            fh.write("round\tstatus\taccuracy\n")
            for r in self.rounds:
                acc = repr(r.accuracy) if r.ok else "NA"
                fh.write(f"{r.index}\t{'ok' if r.ok else 'aborted'}\t{acc}\n")


def _run_rounds(fn, n_rounds: int, threads: int | None) -> list[RoundRecord]:
    def guarded(r):
        try:
            return fn(r)
        except PNetError as exc:
            log.warning("round %d aborted: %s", r, exc)
            return RoundRecord(r, error=f"{type(exc).__name__}: {exc}")

    threads = max(1, int(threads or 1))
    if threads == 1:
        return [guarded(r) for r in range(n_rounds)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(guarded, range(n_rounds)))


def _aligned_labels(M: ExpressionMatrix, y: PhenotypeLabels) -> np.ndarray:
    labels = y.aligned_to(M.sample_ids).labels
    if labels.sum() < 2 or (~labels).sum() < 2:
        raise DegenerateLabelsError("each class needs at least 2 samples")
    return labels


def _patient_accuracy(n: int, splits: Sequence[SplitRecord]) -> list[float | None]:
    hits = np.zeros(n)
    seen = np.zeros(n)
    for s in splits:
        idx = np.asarray(s.test)
        seen[idx] += 1
        hits[idx] += s.predictions == s.truth
    return [float(h / c) if c else None for h, c in zip(hits, seen)]


def _mean_sem(values) -> tuple[float | None, float | None]:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return None, None
    sem = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), sem


def _class_errors(rounds: Sequence[RoundRecord]) -> dict:
    """Per round: class errors over that round's test predictions; then averaged."""
    out = {}
    for cls in ("positive", "negative"):
        per_round = []
        for r in rounds:
            n = sum(s.class_counts()[f"n_{cls}"] for s in r.splits)
            e = sum(s.class_counts()[f"errors_{cls}"] for s in r.splits)
            if n:
                per_round.append(e / n)
        out[cls] = float(np.mean(per_round)) if per_round else None
    return out


def _stability_or_none(splits: Sequence[SplitRecord], k: int) -> float | None:
    sets = [s.selected for s in splits]
    if len(sets) < 2 or any(len(s) < k for s in sets):
        return None
    return stability(sets, k)


def mccv(M: ExpressionMatrix, y: PhenotypeLabels, cfg: PipelineConfig, *,
         splits=None, threads: int | None = 1) -> EvaluationReport:
    """Monte Carlo cross-validation with balanced random splits.

    ``splits`` optionally fixes the (train, test) index pair of every round,
    bypassing the random draw.
    """
    labels = _aligned_labels(M, y)
    n = labels.size
    if splits is None and cfg.train_size is None:
        raise DataError("mccv needs cfg.train_size")

    def one(r):
        if splits is not None:
            if splits[r] is None:
                raise SplitError("no split given for this round")
            train, test = (np.asarray(x, dtype=int) for x in splits[r])
        else:
            train, test = balanced_split(labels, cfg.train_size, round_rng(cfg.seed, r))
        return RoundRecord(r, [evaluate_split(M, labels, train, test, cfg)])

    n_rounds = cfg.rounds if splits is None else len(splits)
    rounds = _run_rounds(one, n_rounds, threads)
    done = [r for r in rounds if r.ok]
    mean_acc, sem = _mean_sem([r.accuracy for r in done])
    all_splits = [s for r in done for s in r.splits]
    agg = {
        "rounds": len(rounds),
        "completed_rounds": len(done),
        "aborted_rounds": len(rounds) - len(done),
        "mean_accuracy": mean_acc,
        "sem": sem,
        "class_error": _class_errors(done),
        "patient_accuracy": dict(zip(M.sample_ids, _patient_accuracy(n, all_splits))),
        "stability": _stability_or_none(all_splits, cfg.stability_k),
        "mean_q_star": float(np.mean([s.q_star for s in all_splits])) if all_splits else None,
    }
    return EvaluationReport("mccv", cfg, M.sample_ids, labels, rounds, agg)


def kfold_eval(M: ExpressionMatrix, y: PhenotypeLabels, cfg: PipelineConfig, *,
               splits=None, threads: int | None = 1) -> EvaluationReport:
    """Repeated k-fold CV: ``cfg.rounds`` random ``cfg.folds``-fold partitions.

    ``splits`` optionally fixes every round's partition as a list of test folds.
    """
    labels = _aligned_labels(M, y)
    n = labels.size

    def one(r):
        if splits is not None:
            if splits[r] is None:
                raise SplitError("no partition given for this round")
            parts = [np.asarray(p, dtype=int) for p in splits[r]]
        else:
            parts = _kfold_partition(labels, cfg.folds, round_rng(cfg.seed, r))
        everyone = np.arange(n)
        recs = [evaluate_split(M, labels, np.setdiff1d(everyone, p), p, cfg) for p in parts]
        return RoundRecord(r, recs)

    n_rounds = cfg.rounds if splits is None else len(splits)
    rounds = _run_rounds(one, n_rounds, threads)
    done = [r for r in rounds if r.ok]
    cv_err, cv_sem = _mean_sem([r.cv_error for r in done])
    all_splits = [s for r in done for s in r.splits]
    pacc = _patient_accuracy(n, all_splits)
    agg = {
        "rounds": len(rounds),
        "completed_rounds": len(done),
        "aborted_rounds": len(rounds) - len(done),
        "cv_error": cv_err,
        "cv_error_sem": cv_sem,
        "mean_accuracy": None if cv_err is None else 1.0 - cv_err,
        "class_error": _class_errors(done),
        "patient_accuracy": dict(zip(M.sample_ids, pacc)),
        "patient_error": dict(zip(M.sample_ids, [None if a is None else 1.0 - a for a in pacc])),
        "stability": _stability_or_none(all_splits, cfg.stability_k),
        "mean_q_star": float(np.mean([s.q_star for s in all_splits])) if all_splits else None,
    }
    return EvaluationReport("kfold", cfg, M.sample_ids, labels, rounds, agg)


def stability(feature_sets: Sequence[Sequence[str]], top_k: int) -> float:
    """Mean over all pairs of sets of |common top_k features| / top_k."""
    if len(feature_sets) < 2:
        raise DataError("stability needs at least 2 feature sets")
    if top_k < 1:
        raise DataError("top_k must be positive")
    if any(len(s) < top_k for s in feature_sets):
        raise DataError(f"a feature set has fewer than {top_k} features")
    prefixes = [frozenset(s[:top_k]) for s in feature_sets]
    total = sum(len(a & b) for a, b in combinations(prefixes, 2))
    n_pairs = len(prefixes) * (len(prefixes) - 1) // 2
    return total / (n_pairs * top_k)
