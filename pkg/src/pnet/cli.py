"""Command-line entry point: ``pnet <subcommand> ...``.

Evaluation runs can be driven by an INI-style config file whose sections
mirror the pipeline configuration; command-line flags override file values::

    [data]
    expression = expr.tsv        ; relative paths resolve against the config file
    labels = labels.tsv

    [featsel]
    method = welch               ; welch | moderated | none
    top_k = 1000
    shrink = true

    [similarity]
    method = pearson             ; pearson | spearman | kendall

    [kernel]
    kind = random_walk
    p = 8
    a = 2

    [score]
    kind = nearest               ; average nearest knn total diff dnorm
    ; k = 5                      ; knn only

    [threshold]
    grid = 0 0.1 0.2 0.3 0.4 0.5 0.6 0.7 0.8 0.9 0.95 0.99
    ; score_grid = ...           ; defaults to grid

    [run]
    seed = 7
    rounds = 1000
    train_size = 28              ; eval-mccv
    folds = 5                    ; eval-cv
    stability_k = 20

Exit status: 0 success, 1 usage error, 2 data error, 3 internal error.
The default worker count comes from ``PNET_THREADS`` (else 1).
"""
from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    ExpressionMatrix,
    PhenotypeLabels,
    collapse_probes,
    derive_labels,
    filter_by_gene_list,
    filter_by_mean,
    filter_by_sd,
    load_expression,
    load_gene_list,
    load_labels,
    load_probe_map,
    load_survival,
    synth_cohort,
    write_expression,
    write_labels,
)
from ._io import atomic_write, read_square_matrix
from .errors import DataError, PNetError
from .export import GraphExportSpec, export_graph
from .featsel import moderated_t, select_top_k, welch_t
from .kernel import KernelMatrix, KernelSpec, make_kernel
from .pipeline import PipelineConfig, kfold_eval, mccv, pnet_double_loo, pnet_heldout
from .scoring import ScoreSpec, ScoreVector
from .similarity import SimilarityMatrix, similarity_matrix
from .threshold import DEFAULT_GRID

log = logging.getLogger("pnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a list of numbers, got {text!r}") from None


def _default_threads() -> int:
    raw = os.environ.get("PNET_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"PNET_THREADS must be an integer, got {raw!r}") from None


# --------------------------------------------------------------------------
# argument groups shared between subcommands
# --------------------------------------------------------------------------

def _add_kernel_args(p, required=False):
    g = p.add_argument_group("kernel")
    g.add_argument("--kernel", required=required,
                   help="identity, linear, polynomial, gaussian, laplacian, cauchy, "
                        "inverse_multiquadric or random_walk (alias rwk)")
    g.add_argument("--p", type=int, help="random walk steps")
    g.add_argument("--a", type=float, help="random walk parameter (> 1)")
    g.add_argument("--negatives", choices=("clip", "affine"),
                   help="how negative correlations enter the random walk")
    g.add_argument("--sigma", type=float)
    g.add_argument("--c", type=float)
    g.add_argument("--degree", type=int)
    g.add_argument("--alpha", type=float)


def _add_score_args(p):
    g = p.add_argument_group("scoring")
    g.add_argument("--score", help="average, nearest (nn), knn, total, diff or dnorm")
    g.add_argument("--k", type=int, help="neighbours for the knn score")
    g.add_argument("--grid", type=_floats, help="edge-filtering quantile levels")


def _add_eval_args(p, mode):
    p.add_argument("--config", type=Path, help="INI config file")
    p.add_argument("--in", dest="input", type=Path, help="expression matrix")
    p.add_argument("--labels", type=Path, help="two-column label file")
    p.add_argument("--featsel", choices=("welch", "moderated", "none"))
    p.add_argument("--top-k", type=int)
    p.add_argument("--no-shrink", action="store_true", default=None,
                   help="moderated t without variance shrinkage")
    p.add_argument("--similarity", choices=("pearson", "spearman", "kendall"))
    _add_kernel_args(p)
    _add_score_args(p)
    p.add_argument("--score-grid", type=_floats, help="score-threshold quantile levels")
    p.add_argument("--seed", type=int)
    p.add_argument("--rounds", type=int)
    if mode == "mccv":
        p.add_argument("--train-size", type=int)
    else:
        p.add_argument("--folds", type=int)
    p.add_argument("--stability-k", type=int)
    p.add_argument("--threads", type=int, help="worker threads (default $PNET_THREADS or 1)")
    p.add_argument("--baseline", action="append", default=[], metavar="NAME=VALUE",
                   help="externally produced baseline number to store in the report")
    p.add_argument("--out", type=Path, required=True, help="JSON report")
    p.add_argument("--tsv", type=Path, help="per-round accuracy table")


def _kernel_spec(args, default=None) -> KernelSpec | None:
    if args.kernel is None:
        if any(getattr(args, k) is not None for k in
               ("p", "a", "negatives", "sigma", "c", "degree", "alpha")):
            raise UsageError("kernel parameters given without --kernel")
        return default
    kw = {k: getattr(args, k) for k in ("p", "a", "negatives", "sigma", "c", "degree", "alpha")
          if getattr(args, k) is not None}
    return KernelSpec(args.kernel, **kw)


def _score_spec(args, default="nearest") -> ScoreSpec:
    return ScoreSpec(args.score or default, args.k)


# --------------------------------------------------------------------------
# config files
# --------------------------------------------------------------------------

_CONFIG_KEYS = {
    "data": {"expression", "labels"},
    "featsel": {"method", "top_k", "shrink"},
    "similarity": {"method"},
    "kernel": {"kind", "p", "a", "negatives", "sigma", "c", "degree", "alpha"},
    "score": {"kind", "k"},
    "threshold": {"grid", "score_grid"},
    "run": {"seed", "rounds", "train_size", "folds", "stability_k", "threads"},
}


def read_config(path: Path) -> dict:
    """Parse a run config into a nested dict of raw strings (unknown keys rejected)."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise DataError(f"{path}: {exc}") from None
    out = {}
    for section in cp.sections():
        if section not in _CONFIG_KEYS:
            raise DataError(f"{path}: unknown section [{section}]")
        bad = set(cp[section]) - _CONFIG_KEYS[section]
        if bad:
            raise DataError(f"{path}: unknown key(s) {sorted(bad)} in [{section}]")
        out[section] = dict(cp[section])
    base = Path(path).parent
    for key in ("expression", "labels"):
        if key in out.get("data", {}):
            p = Path(out["data"][key])
            out["data"][key] = str(p if p.is_absolute() else base / p)
    return out


def _pick(flag, cfg: dict, section: str, key: str, conv, default):
    if flag is not None:
        return flag
    raw = cfg.get(section, {}).get(key)
    if raw is None:
        return default
    try:
        return conv(raw)
    except (ValueError, argparse.ArgumentTypeError):
        raise DataError(f"config [{section}] {key}: cannot parse {raw!r}") from None


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def build_eval_config(args, mode: str) -> tuple[PipelineConfig, Path, Path, int]:
    """Merge config file and flags.  Returns (config, expression path, label path, threads)."""
    cfg = read_config(args.config) if args.config else {}
    expr = args.input or _pick(None, cfg, "data", "expression", Path, None)
    labels = args.labels or _pick(None, cfg, "data", "labels", Path, None)
    if expr is None or labels is None:
        raise UsageError("an expression matrix and labels are required (--in/--labels or [data])")
    shrink = _pick(None if args.no_shrink is None else False, cfg, "featsel", "shrink", _bool, True)
    kernel = _kernel_spec(args)
    if kernel is None:
        ksec = cfg.get("kernel", {})
        kind = ksec.get("kind", "random_walk")
        kw = {}
        for k, conv in (("p", int), ("degree", int), ("a", float), ("sigma", float),
                        ("c", float), ("alpha", float), ("negatives", str)):
            if k in ksec:
                kw[k] = _pick(None, cfg, "kernel", k, conv, None)
        if kind in ("random_walk", "rwk") and "p" not in kw:
            kw["p"] = 1
        kernel = KernelSpec(kind, **kw)
    score = ScoreSpec(_pick(args.score, cfg, "score", "kind", str, "nearest"),
                      _pick(args.k, cfg, "score", "k", int, None))
    seed = _pick(args.seed, cfg, "run", "seed", int, None)
    if seed is None:
        raise UsageError("a seed is required (--seed or [run] seed)")
    kw = dict(
        featsel=_pick(args.featsel, cfg, "featsel", "method", str, "welch"),
        top_k=_pick(args.top_k, cfg, "featsel", "top_k", int, 1000),
        shrink=shrink,
        similarity=_pick(args.similarity, cfg, "similarity", "method", str, "pearson"),
        kernel=kernel,
        score=score,
        grid=_pick(args.grid, cfg, "threshold", "grid", _floats, DEFAULT_GRID),
        score_grid=_pick(args.score_grid, cfg, "threshold", "score_grid", _floats, None),
        seed=seed,
        rounds=_pick(args.rounds, cfg, "run", "rounds", int, 100 if mode == "cv" else 1000),
        stability_k=_pick(args.stability_k, cfg, "run", "stability_k", int, 20),
    )
    if mode == "mccv":
        kw["train_size"] = _pick(args.train_size, cfg, "run", "train_size", int, None)
        if kw["train_size"] is None:
            raise UsageError("eval-mccv needs a train size (--train-size or [run] train_size)")
    else:
        kw["folds"] = _pick(args.folds, cfg, "run", "folds", int, 5)
    threads = args.threads or _pick(None, cfg, "run", "threads", int, None) or _default_threads()
    return PipelineConfig(**kw), Path(expr), Path(labels), threads


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_prep(args) -> str:
    M = load_expression(args.input)
    counts = [f"{M.shape[0]} features in"]
    if args.min_mean is not None:
        M = filter_by_mean(M, args.min_mean)
        counts.append(f"{M.shape[0]} after mean filter")
    if args.min_sd is not None:
        M = filter_by_sd(M, args.min_sd)
        counts.append(f"{M.shape[0]} after sd filter")
    if args.map is not None:
        M = collapse_probes(M, load_probe_map(args.map))
        counts.append(f"{M.shape[0]} genes after collapsing")
    if args.genes is not None:
        M = filter_by_gene_list(M, load_gene_list(args.genes))
        counts.append(f"{M.shape[0]} after gene list")
    write_expression(M, args.out)
    if args.survival is not None:
        if args.cutoff is None or args.labels_out is None:
            raise UsageError("--survival needs --cutoff and --labels-out")
        surv = load_survival(args.survival)
        missing = [s for s in M.sample_ids if s not in surv]
        if missing:
            raise DataError(f"no survival value for sample {missing[0]!r}")
        y = derive_labels(surv, args.cutoff, M.sample_ids)
        write_labels(y, args.labels_out)
        counts.append(f"{y.n_positive} positive / {y.n_negative} negative")
    return "prep: " + ", ".join(counts) + f" -> {args.out}"


def _labels_for(M: ExpressionMatrix, path) -> PhenotypeLabels:
    return load_labels(path).aligned_to(M.sample_ids)


def cmd_select(args) -> str:
    M = load_expression(args.input)
    y = _labels_for(M, args.labels)
    if args.method == "welch":
        if args.no_shrink:
            raise UsageError("--no-shrink only applies to --method moderated")
        stats = welch_t(M, y)
    else:
        stats = moderated_t(M, y, shrink=not args.no_shrink)
    stats.to_tsv(args.out)
    msg = f"select: {args.method} t on {len(stats)} features -> {args.out}"
    if args.top_k is not None:
        top = select_top_k(stats, args.top_k)
        if args.ids_out is not None:
            with atomic_write(args.ids_out) as fh:
                fh.write("".join(f"{f}\n" for f in top))
        if args.selected_out is not None:
            write_expression(M.select_features(top), args.selected_out)
        msg += f"; top {len(top)} kept"
    elif args.ids_out is not None or args.selected_out is not None:
        raise UsageError("--ids-out/--selected-out need --top-k")
    return msg


def cmd_similarity(args) -> str:
    M = load_expression(args.input)
    if args.features is not None:
        wanted = load_gene_list(args.features)
        M = M.select_features([f for f in M.feature_ids if f in wanted])
    W = similarity_matrix(M, args.method)
    W.to_tsv(args.out)
    return f"similarity: {args.method} over {W.n} samples, {M.shape[0]} features -> {args.out}"


def cmd_kernel(args) -> str:
    W = SimilarityMatrix.from_tsv(args.input)
    K = make_kernel(W, _kernel_spec(args))
    K.to_tsv(args.out)
    return f"kernel: {K.spec.describe()} on {K.n} samples -> {args.out}"


def _load_matrix_for_rank(args) -> KernelMatrix:
    spec = _kernel_spec(args)
    if spec is None:
        return KernelMatrix.from_tsv(args.input)
    ids, values, _ = read_square_matrix(args.input)
    return make_kernel(SimilarityMatrix(ids, values), spec)


def _read_ids(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]


def cmd_rank(args) -> str:
    K = _load_matrix_for_rank(args)
    spec = _score_spec(args)
    grid = args.grid or DEFAULT_GRID
    lab = load_labels(args.labels)
    index = {s: i for i, s in enumerate(K.sample_ids)}
    unknown = [s for s in lab.sample_ids if s not in index]
    if unknown:
        raise DataError(f"labelled sample {unknown[0]!r} is not in the matrix")
    if args.test_ids is None:
        y = lab.aligned_to(K.sample_ids).labels
        res = pnet_double_loo(K, np.flatnonzero(y), grid, spec)
        res.scores.to_tsv(args.out, extra={"quantile": [repr(float(q)) for q in res.quantiles]})
        return f"rank: double leave-one-out over {K.n} samples ({spec.describe()}) -> {args.out}"
    test_ids = _read_ids(args.test_ids)
    missing = [s for s in test_ids if s not in index]
    if missing:
        raise DataError(f"test sample {missing[0]!r} is not in the matrix")
    test = np.array([index[s] for s in test_ids], dtype=int)
    test_set = set(test_ids)
    train_ids = [s for s in lab.sample_ids if s not in test_set]
    train = np.array([index[s] for s in train_ids], dtype=int)
    pos = train[[bool(v) for s, v in zip(lab.sample_ids, lab.labels) if s not in test_set]]
    res = pnet_heldout(K, pos, train, test, grid, spec)
    q = repr(res.threshold.quantile)
    res.scores.to_tsv(args.out, extra={"quantile": [q] * len(test_ids)})
    return (f"rank: held-out scoring of {len(test_ids)} samples from {len(train_ids)} labelled "
            f"(q*={res.threshold.quantile}) -> {args.out}")


def _parse_baselines(items) -> dict:
    out = {}
    for item in items:
        name, sep, value = item.partition("=")
        if not sep or not name:
            raise UsageError(f"--baseline expects NAME=VALUE, got {item!r}")
        try:
            out[name] = float(value)
        except ValueError:
            raise UsageError(f"--baseline value for {name!r} is not a number") from None
    return out


def _run_eval(args, mode) -> str:
    cfg, expr, labels, threads = build_eval_config(args, mode)
    M = load_expression(expr)
    y = _labels_for(M, labels)
    fn = mccv if mode == "mccv" else kfold_eval
    report = fn(M, y, cfg, threads=threads)
    report.baselines = _parse_baselines(args.baseline)
    report.write_json(args.out)
    if args.tsv is not None:
        report.write_accuracy_tsv(args.tsv)
    agg = report.aggregates
    acc = agg["mean_accuracy"]
    acc_s = "n/a" if acc is None else f"{acc:.4f}"
    name = "eval-mccv" if mode == "mccv" else "eval-cv"
    return (f"{name}: {agg['completed_rounds']}/{agg['rounds']} rounds, "
            f"mean accuracy {acc_s} -> {args.out}")


def cmd_eval_mccv(args) -> str:
    return _run_eval(args, "mccv")


def cmd_eval_cv(args) -> str:
    return _run_eval(args, "cv")


def cmd_export_graph(args) -> str:
    ids, values, _ = read_square_matrix(args.input)
    labels = load_labels(args.labels) if args.labels else None
    scores = ScoreVector.from_tsv(args.scores) if args.scores else None
    fmt = args.format or ("graphml" if str(args.out).endswith(".graphml") else "dot")
    spec = GraphExportSpec(fmt)
    n_nodes, n_edges = export_graph(SimilarityMatrix(ids, values), args.out,
                                    labels=labels, scores=scores, spec=spec)
    return f"export-graph: {n_nodes} nodes, {n_edges} edges ({fmt}) -> {args.out}"


def cmd_synth(args) -> str:
    M, y = synth_cohort(args.samples, args.features, args.informative, args.effect, args.seed)
    write_expression(M, args.out)
    write_labels(y, args.labels_out)
    return (f"synth: {M.shape[0]} features x {M.shape[1]} samples, "
            f"{y.n_positive} positive -> {args.out}, {args.labels_out}")


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pnet", description="Network-based ranking and classification of samples.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prep", help="pre-filter an expression matrix")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--min-mean", type=float)
    p.add_argument("--min-sd", type=float)
    p.add_argument("--map", type=Path, help="probe-to-gene TSV; keeps the highest-mean probe")
    p.add_argument("--genes", type=Path, help="keep only ids listed in this file")
    p.add_argument("--survival", type=Path, help="sample_id/survival TSV to derive labels")
    p.add_argument("--cutoff", type=float, help="positive iff survival < cutoff")
    p.add_argument("--labels-out", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("select", help="per-feature t statistics and top-k selection")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--method", choices=("welch", "moderated"), default="welch")
    p.add_argument("--no-shrink", action="store_true")
    p.add_argument("--top-k", type=int)
    p.add_argument("--ids-out", type=Path, help="selected ids, one per line")
    p.add_argument("--selected-out", type=Path, help="expression matrix of the selected features")
    p.add_argument("--out", type=Path, required=True, help="statistics TSV")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("similarity", help="sample correlation matrix")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--method", choices=("pearson", "spearman", "kendall"), default="pearson")
    p.add_argument("--features", type=Path, help="restrict to ids listed in this file")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_similarity)

    p = sub.add_parser("kernel", help="kernel matrix from a similarity matrix")
    p.add_argument("--in", dest="input", type=Path, required=True)
    _add_kernel_args(p, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_kernel)

    p = sub.add_parser("rank", help="score and rank samples (double LOO, or held-out with --test-ids)")
    p.add_argument("--in", dest="input", type=Path, required=True,
                   help="kernel matrix, or a similarity matrix when --kernel is given")
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--test-ids", type=Path, help="ids to score from the other labelled samples")
    _add_kernel_args(p)
    _add_score_args(p)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("eval-mccv", help="Monte Carlo cross-validation")
    _add_eval_args(p, "mccv")
    p.set_defaults(func=cmd_eval_mccv)

    p = sub.add_parser("eval-cv", help="repeated k-fold cross-validation")
    _add_eval_args(p, "cv")
    p.set_defaults(func=cmd_eval_cv)

    p = sub.add_parser("export-graph", help="write a matrix as a DOT or GraphML graph")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--labels", type=Path)
    p.add_argument("--scores", type=Path, help="score TSV as written by rank")
    p.add_argument("--format", choices=("dot", "graphml"))
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_export_graph)

    p = sub.add_parser("synth", help="synthetic two-class cohort")
    p.add_argument("--samples", type=int, default=40)
    p.add_argument("--features", type=int, default=500)
    p.add_argument("--informative", type=int, default=20)
    p.add_argument("--effect", type=float, default=1.0)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--labels-out", type=Path, required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "threads", None) is not None and args.threads < 1:
        print("pnet: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        print(args.func(args))
        return EXIT_OK
    except UsageError as exc:
        print(f"pnet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PNetError, OSError) as exc:
        print(f"pnet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort guard for the exit code
        log.debug("internal error", exc_info=True)
        print(f"pnet {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
