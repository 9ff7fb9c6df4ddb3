"""Expression matrices, phenotype labels and the microarray pre-filtering chain.

The pre-filtering order is mean filter, then standard-deviation filter, then
probe collapsing (one probe per gene, the one with the highest mean).
"""
from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._io import atomic_write, fmt_float
from .errors import DataError, DegenerateLabelsError, EmptyMatrixError

log = logging.getLogger(__name__)

__all__ = [
    "ExpressionMatrix",
    "PhenotypeLabels",
    "load_expression",
    "write_expression",
    "load_probe_map",
    "load_gene_list",
    "load_labels",
    "write_labels",
    "load_survival",
    "filter_by_mean",
    "filter_by_sd",
    "collapse_probes",
    "filter_by_gene_list",
    "derive_labels",
    "synth_cohort",
]


def _check_unique(ids: Sequence[str], what: str) -> None:
    seen = set()
    for pos, i in enumerate(ids):
        if i in seen:
            raise DataError(f"duplicate {what} id {i!r} (position {pos + 1})")
        seen.add(i)


@dataclass(frozen=True)
class ExpressionMatrix:
    """m features x n samples of log2 expression values."""

    feature_ids: list[str]
    sample_ids: list[str]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise DataError(f"expression values must be 2-D, got shape {values.shape}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "feature_ids", list(self.feature_ids))
        object.__setattr__(self, "sample_ids", list(self.sample_ids))
        if values.shape != (len(self.feature_ids), len(self.sample_ids)):
            raise DataError(
                f"values shape {values.shape} does not match "
                f"{len(self.feature_ids)} features x {len(self.sample_ids)} samples"
            )
        _check_unique(self.feature_ids, "feature")
        _check_unique(self.sample_ids, "sample")
        if not np.all(np.isfinite(values)):
            r, c = np.argwhere(~np.isfinite(values))[0]
            raise DataError(
                f"non-finite value at feature {self.feature_ids[r]!r}, "
                f"sample {self.sample_ids[c]!r}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def subset_rows(self, mask_or_index) -> "ExpressionMatrix":
        idx = np.asarray(mask_or_index)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        if idx.size == 0:
            raise EmptyMatrixError("filter removed every feature")
        return ExpressionMatrix(
            [self.feature_ids[i] for i in idx], self.sample_ids, self.values[idx]
        )

    def subset_samples(self, index) -> "ExpressionMatrix":
        idx = np.asarray(index, dtype=int)
        return ExpressionMatrix(
            self.feature_ids, [self.sample_ids[i] for i in idx], self.values[:, idx]
        )

    def select_features(self, ids: Sequence[str]) -> "ExpressionMatrix":
        pos = {f: i for i, f in enumerate(self.feature_ids)}
        return self.subset_rows(np.array([pos[f] for f in ids], dtype=int))


@dataclass(frozen=True)
class PhenotypeLabels:
    """Binary labels; True marks the phenotype of interest (e.g. poor prognosis)."""

    sample_ids: list[str]
    labels: np.ndarray = field(repr=False)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=bool)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "sample_ids", list(self.sample_ids))
        if labels.shape != (len(self.sample_ids),):
            raise DataError("labels and sample_ids differ in length")
        _check_unique(self.sample_ids, "sample")

    @property
    def n_positive(self) -> int:
        return int(self.labels.sum())

    @property
    def n_negative(self) -> int:
        return int((~self.labels).sum())

    def aligned_to(self, sample_ids: Sequence[str]) -> "PhenotypeLabels":
        """Reorder to ``sample_ids``; every sample must carry a label."""
        pos = {s: i for i, s in enumerate(self.sample_ids)}
        missing = [s for s in sample_ids if s not in pos]
        if missing:
            raise DataError(f"no label for sample(s): {', '.join(missing[:5])}")
        idx = [pos[s] for s in sample_ids]
        return PhenotypeLabels(list(sample_ids), self.labels[idx])

    def require_both_classes(self, min_per_class: int = 1) -> None:
        if self.n_positive < min_per_class or self.n_negative < min_per_class:
            raise DegenerateLabelsError(
                f"need >= {min_per_class} positive and negative samples, "
                f"got {self.n_positive} positive / {self.n_negative} negative"
            )


# --------------------------------------------------------------------------
# file formats
# --------------------------------------------------------------------------

def _delimiter(path, fmt: str | None) -> str:
    if fmt is None:
        fmt = "csv" if str(path).lower().endswith(".csv") else "tsv"
    if fmt not in ("tsv", "csv"):
        raise DataError(f"unknown matrix format {fmt!r} (expected tsv or csv)")
    return "\t" if fmt == "tsv" else ","


def load_expression(path, format: str | None = None) -> ExpressionMatrix:
    """Read a feature x sample matrix.

    The first row holds sample ids (its first cell is a corner label and is
    ignored); the first column holds feature ids.  Missing values are not
    imputed: any non-numeric cell is an error.
    """
    delim = _delimiter(path, format)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh, delimiter=delim)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        sample_ids = [s.strip() for s in header[1:]]
        if not sample_ids:
            raise DataError(f"{path}: header has no sample columns")
        _check_unique(sample_ids, "sample")
        n = len(sample_ids)
        feature_ids: list[str] = []
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != n + 1:
                raise DataError(
                    f"{path}: line {lineno} has {len(row) - 1} values, expected {n}"
                )
            vals = []
            for col, cell in enumerate(row[1:], start=2):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric value {cell!r} at line {lineno}, column {col}"
                    ) from None
                if not math.isfinite(v):
                    raise DataError(
                        f"{path}: non-finite value {cell!r} at line {lineno}, column {col}"
                    )
                vals.append(v)
            feature_ids.append(row[0].strip())
            rows.append(vals)
    if not rows:
        raise EmptyMatrixError(f"{path}: no feature rows")
    _check_unique(feature_ids, "feature")
    return ExpressionMatrix(feature_ids, sample_ids, np.array(rows, dtype=float))


def write_expression(M: ExpressionMatrix, path, format: str | None = None) -> None:
    delim = _delimiter(path, format)
    with atomic_write(path) as fh:
        w = csv.writer(fh, delimiter=delim, lineterminator="\n")
        w.writerow(["feature_id", *M.sample_ids])
        for fid, row in zip(M.feature_ids, M.values):
            w.writerow([fid, *(fmt_float(v) for v in row)])


def _read_pairs(path, what: str) -> list[tuple[str, str]]:
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    pairs = []
    with fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter="\t"), start=1):
            if not row or not row[0].strip() or row[0].startswith("#"):
                continue
            if len(row) < 2:
                raise DataError(f"{path}: line {lineno} needs two columns ({what})")
            pairs.append((row[0].strip(), row[1].strip()))
    return pairs


def load_probe_map(path) -> dict[str, str]:
    """Two-column TSV ``probe_id<TAB>gene_id``.  A header line is tolerated."""
    mapping: dict[str, str] = {}
    for i, (probe, gene) in enumerate(_read_pairs(path, "probe_id, gene_id")):
        if i == 0 and probe.lower() in ("probe", "probe_id", "probeid"):
            continue
        if probe in mapping:
            raise DataError(f"{path}: probe {probe!r} mapped more than once")
        if gene:
            mapping[probe] = gene
    return mapping


def load_gene_list(path) -> set[str]:
    try:
        with open(path, encoding="utf-8") as fh:
            return {line.strip() for line in fh if line.strip() and not line.startswith("#")}
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc


_TRUE = {"1", "true", "t", "yes", "pos", "positive", "pp"}
_FALSE = {"0", "false", "f", "no", "neg", "negative", "gp"}


def load_labels(path) -> PhenotypeLabels:
    """Two-column TSV ``sample_id<TAB>label`` with label in 1/0, true/false, PP/GP."""
    ids, labels = [], []
    for i, (sid, raw) in enumerate(_read_pairs(path, "sample_id, label")):
        key = raw.lower()
        if key in _TRUE:
            labels.append(True)
        elif key in _FALSE:
            labels.append(False)
        elif i == 0:
            continue  # header
        else:
            raise DataError(f"{path}: unrecognised label {raw!r} for sample {sid!r}")
        ids.append(sid)
    return PhenotypeLabels(ids, np.array(labels, dtype=bool))


def write_labels(y: PhenotypeLabels, path) -> None:
    with atomic_write(path) as fh:
        fh.write("sample_id\tlabel\n")
        for sid, lab in zip(y.sample_ids, y.labels):
            fh.write(f"{sid}\t{int(lab)}\n")


def load_survival(path) -> dict[str, float]:
    out = {}
    for i, (sid, raw) in enumerate(_read_pairs(path, "sample_id, survival")):
        try:
            out[sid] = float(raw)
        except ValueError:
            if i == 0:
                continue
            raise DataError(f"{path}: non-numeric survival {raw!r} for {sid!r}") from None
    return out


# --------------------------------------------------------------------------
# pre-filtering
# --------------------------------------------------------------------------

def filter_by_mean(M: ExpressionMatrix, min_mean: float) -> ExpressionMatrix:
    """Keep rows whose mean over samples is >= ``min_mean``."""
    keep = M.values.mean(axis=1) >= min_mean
    log.info("mean filter (>= %g): %d of %d features kept", min_mean, keep.sum(), len(keep))
    return M.subset_rows(keep)


def filter_by_sd(M: ExpressionMatrix, min_sd: float) -> ExpressionMatrix:
    """Keep rows whose sample standard deviation (ddof=1) is >= ``min_sd``."""
    if M.shape[1] < 2:
        raise DataError("standard deviation needs at least two samples")
    keep = M.values.std(axis=1, ddof=1) >= min_sd
    log.info("sd filter (>= %g): %d of %d features kept", min_sd, keep.sum(), len(keep))
    return M.subset_rows(keep)


def collapse_probes(M: ExpressionMatrix, probe_map: Mapping[str, str]) -> ExpressionMatrix:
    """One row per gene: the probe with the highest mean expression.

    Unmapped probes are dropped (and counted in the log).  Ties on the mean go
    to the probe that comes first in ``M``.  Output rows follow the order in
    which each gene's first probe appears; feature ids become gene ids.
    """
    means = M.values.mean(axis=1)
    best: dict[str, int] = {}
    unmapped = 0
    for i, probe in enumerate(M.feature_ids):
        gene = probe_map.get(probe)
        if gene is None:
            unmapped += 1
            continue
        j = best.get(gene)
        if j is None or means[i] > means[j]:
            best[gene] = i
    if unmapped:
        log.warning("collapse_probes: %d unmapped probe(s) dropped", unmapped)
    if not best:
        raise EmptyMatrixError("no probe could be mapped to a gene")
    order = _gene_order(M.feature_ids, probe_map, best)
    genes = [g for g, _ in order]
    rows = np.array([i for _, i in order], dtype=int)
    return ExpressionMatrix(genes, M.sample_ids, M.values[rows])


def _gene_order(probes, probe_map, best):
    # genes in order of first appearance, paired with their winning row
    order, done = [], set()
    for p in probes:
        g = probe_map.get(p)
        if g is not None and g not in done:
            done.add(g)
            order.append((g, best[g]))
    return order


def filter_by_gene_list(M: ExpressionMatrix, ids: Iterable[str]) -> ExpressionMatrix:
    ids = set(ids)
    if not ids:
        raise DataError("gene list is empty")
    keep = np.array([f in ids for f in M.feature_ids], dtype=bool)
    log.info("gene-list filter: %d of %d features kept", keep.sum(), len(keep))
    if not keep.any():
        raise EmptyMatrixError("no feature id overlaps the gene list")
    return M.subset_rows(keep)


def derive_labels(
    survival: Mapping[str, float] | Sequence[float],
    cutoff: float,
    sample_ids: Sequence[str] | None = None,
) -> PhenotypeLabels:
    """Positive (poor prognosis) iff survival < cutoff.

    A survival exactly equal to the cutoff is negative.
    """
    if isinstance(survival, Mapping):
        if sample_ids is None:
            sample_ids = list(survival)
        values = np.array([survival[s] for s in sample_ids], dtype=float)
    else:
        values = np.asarray(survival, dtype=float)
        if sample_ids is None:
            sample_ids = [f"S{i + 1}" for i in range(len(values))]
    if not cutoff > 0:
        raise DataError(f"cutoff must be > 0, got {cutoff}")
    if not np.all(np.isfinite(values)):
        raise DataError("survival values must be finite")
    y = PhenotypeLabels(list(sample_ids), values < cutoff)
    if y.n_positive == 0 or y.n_negative == 0:
        warnings.warn(f"cutoff {cutoff} puts every sample in one class", stacklevel=2)
    return y


def synth_cohort(
    n_samples: int,
    n_features: int,
    n_informative: int,
    effect_size: float,
    seed: int,
    *,
    baseline_sd: float = 1.5,
) -> tuple[ExpressionMatrix, PhenotypeLabels]:
    """Two Gaussian classes that differ by ``effect_size`` on the informative features.

    Each feature gets a baseline level drawn around 8 (log2 scale), so sample
    profiles are strongly correlated as in real microarray data.  The first
    ``n_informative`` features (ids ``F00001``...) carry the class shift; half
    of the samples (rounded down) are positive, assigned at random.
    """
    if n_samples < 4 or n_features < 1:
        raise DataError("synth_cohort needs n_samples >= 4 and n_features >= 1")
    if not 0 <= n_informative <= n_features:
        raise DataError("n_informative must lie in [0, n_features]")
    rng = np.random.default_rng(seed)
    n_pos = n_samples // 2
    labels = np.zeros(n_samples, dtype=bool)
    labels[rng.permutation(n_samples)[:n_pos]] = True
    baseline = 8.0 + baseline_sd * rng.standard_normal(n_features)
    values = baseline[:, None] + rng.standard_normal((n_features, n_samples))
    values[:n_informative, labels] += effect_size
    width = max(5, len(str(n_features)))
    fids = [f"F{i + 1:0{width}d}" for i in range(n_features)]
    sids = [f"S{i + 1:03d}" for i in range(n_samples)]
    return ExpressionMatrix(fids, sids, values), PhenotypeLabels(sids, labels)
