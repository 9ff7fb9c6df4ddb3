"""Kernel matrices built from a sample similarity matrix W.

The p-step random walk kernel works on W as a weighted graph:
``K = ((a-1) I + D^-1/2 W D^-1/2)^p``.  The pointwise kernels (linear,
polynomial, gaussian, laplacian, cauchy, inverse multiquadric) treat row i of W
as the feature vector of sample i.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform

from ._io import read_square_matrix, write_square_matrix
from .errors import DataError
from .similarity import SimilarityMatrix, symmetrize_upper

log = logging.getLogger(__name__)

__all__ = [
    "KernelSpec",
    "KernelMatrix",
    "KINDS",
    "normalized_adjacency",
    "random_walk_kernel",
    "pointwise_kernel",
    "identity_kernel",
    "make_kernel",
    "kernel_convergence",
]

KINDS = (
    "identity",
    "linear",
    "gaussian",
    "laplacian",
    "cauchy",
    "inverse_multiquadric",
    "polynomial",
    "random_walk",
)

_ALIASES = {"rwk": "random_walk", "rw": "random_walk", "inv_mq": "inverse_multiquadric",
            "invmq": "inverse_multiquadric", "poly": "polynomial", "rbf": "gaussian"}

# parameters each kind reads; anything else must stay None
_PARAMS = {
    "identity": (),
    "linear": ("c",),
    "gaussian": ("sigma",),
    "laplacian": ("sigma",),
    "cauchy": ("sigma",),
    "inverse_multiquadric": ("c",),
    "polynomial": ("c", "degree", "alpha"),
    "random_walk": ("p", "a", "negatives"),
}

_DEFAULTS = {"c": 0.0, "sigma": 1.0, "degree": 2, "alpha": 1.0, "p": 1, "a": 2.0,
             "negatives": "clip"}


@dataclass(frozen=True)
class KernelSpec:
    kind: str
    sigma: float | None = None
    c: float | None = None
    degree: int | None = None
    alpha: float | None = None
    p: int | None = None
    a: float | None = None
    negatives: str | None = None

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        if kind not in KINDS:
            raise DataError(f"unknown kernel {self.kind!r}; choose from {', '.join(KINDS)}")
        object.__setattr__(self, "kind", kind)
        used = _PARAMS[kind]
        for name in ("sigma", "c", "degree", "alpha", "p", "a", "negatives"):
            val = getattr(self, name)
            if name in used and val is None:
                object.__setattr__(self, name, _DEFAULTS[name])
            elif name not in used and val is not None:
                raise DataError(f"parameter {name!r} does not apply to the {kind} kernel")
        for name in ("sigma", "c", "alpha", "a"):
            if getattr(self, name) is not None:
                object.__setattr__(self, name, float(getattr(self, name)))
        if kind in ("gaussian", "laplacian", "cauchy") and not self.sigma > 0:
            raise DataError(f"sigma must be > 0, got {self.sigma}")
        if kind == "inverse_multiquadric" and self.c == 0:
            raise DataError("inverse multiquadric kernel needs c != 0")
        if kind == "polynomial" and (int(self.degree) != self.degree or self.degree < 1):
            raise DataError(f"polynomial degree must be a positive integer, got {self.degree}")
        if kind == "random_walk":
            if int(self.p) != self.p or self.p < 0:
                raise DataError(f"random walk steps p must be an integer >= 0, got {self.p}")
            if not self.a > 1:
                raise DataError(f"random walk parameter a must be > 1, got {self.a}")
            if self.negatives not in ("clip", "affine"):
                raise DataError("negatives must be 'clip' or 'affine'")
            object.__setattr__(self, "p", int(self.p))

    def params(self) -> dict:
        return {k: v for k, v in asdict(self).items() if k != "kind" and v is not None}

    def describe(self) -> str:
        return " ".join([self.kind, *(f"{k}={v}" for k, v in self.params().items())])

    @classmethod
    def parse(cls, text: str) -> "KernelSpec":
        """Inverse of :meth:`describe`."""
        kind, *rest = text.split()
        kw = {}
        for item in rest:
            k, v = item.split("=", 1)
            if k in ("p", "degree"):
                kw[k] = int(v)
            elif k == "negatives":
                kw[k] = v
            else:
                kw[k] = float(v)
        return cls(kind, **kw)


@dataclass(frozen=True)
class KernelMatrix:
    sample_ids: list[str]
    values: np.ndarray
    spec: KernelSpec

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        n = len(self.sample_ids)
        if v.shape != (n, n):
            raise DataError(f"kernel shape {v.shape} does not match {n} samples")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "sample_ids", list(self.sample_ids))

    @property
    def n(self) -> int:
        return len(self.sample_ids)

    def to_tsv(self, path) -> None:
        write_square_matrix(path, self.sample_ids, self.values, [f"kernel: {self.spec.describe()}"])

    @classmethod
    def from_tsv(cls, path) -> "KernelMatrix":
        """Read a kernel TSV.  A file without a kernel comment (e.g. a plain
        similarity matrix) is taken as an identity kernel."""
        ids, values, comments = read_square_matrix(path)
        spec = KernelSpec("identity")
        for c in comments:
            if c.startswith("kernel:"):
                spec = KernelSpec.parse(c.split(":", 1)[1].strip())
        return cls(ids, values, spec)


def _values(W) -> tuple[list[str], np.ndarray]:
    if isinstance(W, (SimilarityMatrix, KernelMatrix)):
        return W.sample_ids, W.values
    W = np.asarray(W, dtype=float)
    return [str(i) for i in range(W.shape[0])], W


def normalized_adjacency(W: np.ndarray, negatives: str = "clip") -> np.ndarray:
    """``D^-1/2 W+ D^-1/2`` with ``W+`` the nonnegative version of W.

    ``negatives='clip'`` sets negative weights to 0; ``'affine'`` maps
    ``w -> (w + 1) / 2``.  Isolated nodes (zero degree) get a zero row and
    column.  The result is exactly symmetric.
    """
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise DataError("W must be a square matrix")
    if negatives == "clip":
        Wp = np.maximum(W, 0.0)
    elif negatives == "affine":
        Wp = (W + 1.0) / 2.0
    else:
        raise DataError("negatives must be 'clip' or 'affine'")
    Wp = symmetrize_upper(Wp)
    deg = Wp.sum(axis=1)
    iso = deg <= 0
    if iso.any():
        warnings.warn(f"{iso.sum()} isolated node(s) in W; their random walk rows are zero",
                      stacklevel=3)
    inv_sqrt = np.zeros_like(deg)
    inv_sqrt[~iso] = 1.0 / np.sqrt(deg[~iso])
    S = inv_sqrt[:, None] * Wp * inv_sqrt[None, :]
    return symmetrize_upper(S)


def _rwk_base(W: np.ndarray, a: float, negatives: str) -> np.ndarray:
    B = normalized_adjacency(W, negatives)
    B[np.diag_indices_from(B)] += a - 1.0
    return B


def random_walk_kernel(W, p: int, a: float = 2.0, negatives: str = "clip") -> KernelMatrix:
    """p-step random walk kernel, computed by repeated multiplication."""
    spec = KernelSpec("random_walk", p=p, a=a, negatives=negatives)
    ids, Wv = _values(W)
    n = Wv.shape[0]
    if spec.p == 0:
        return KernelMatrix(ids, np.eye(n), spec)
    B = _rwk_base(Wv, spec.a, spec.negatives)
    K = B
    for _ in range(spec.p - 1):
        K = K @ B
    K = (K + K.T) / 2.0
    return KernelMatrix(ids, K, spec)


def identity_kernel(W) -> KernelMatrix:
    ids, Wv = _values(W)
    return KernelMatrix(ids, Wv.copy(), KernelSpec("identity"))


def pointwise_kernel(W, spec: KernelSpec) -> KernelMatrix:
    """Apply a vector kernel to the rows of W (each sample's similarity profile)."""
    if spec.kind in ("identity", "random_walk"):
        raise DataError(f"{spec.kind} is not a pointwise kernel")
    ids, X = _values(W)
    if spec.kind in ("linear", "polynomial"):
        G = symmetrize_upper(X @ X.T)
        G[np.diag_indices_from(G)] = np.einsum("ij,ij->i", X, X)
        if spec.kind == "linear":
            K = G + spec.c
        else:
            K = (spec.alpha * G + spec.c) ** spec.degree
        return KernelMatrix(ids, K, spec)
    D = squareform(pdist(X, "euclidean"))
    if spec.kind == "gaussian":
        K = np.exp(-(D**2) / (2.0 * spec.sigma**2))
    elif spec.kind == "laplacian":
        K = np.exp(-D / spec.sigma)
    elif spec.kind == "cauchy":
        K = 1.0 / (1.0 + D**2 / spec.sigma**2)
    else:
        K = 1.0 / np.sqrt(D**2 + spec.c**2)
    return KernelMatrix(ids, K, spec)


def make_kernel(W, spec: KernelSpec) -> KernelMatrix:
    if spec.kind == "identity":
        return identity_kernel(W)
    if spec.kind == "random_walk":
        return random_walk_kernel(W, spec.p, spec.a, spec.negatives)
    return pointwise_kernel(W, spec)


def kernel_convergence(
    W, p_list: Sequence[int], a: float = 2.0, negatives: str = "clip"
) -> list[tuple[int, float]]:
    """Correlation of each K(p) with the reference K(max p), off-diagonal entries only.

    A correlation near 1 for the second-largest p signals that the walk has
    converged (its stationary structure dominates).
    """
    ps = [int(p) for p in p_list]
    if len(ps) < 2:
        raise DataError("kernel_convergence needs at least 2 values of p")
    if min(ps) < 0:
        raise DataError("p values must be >= 0")
    _, Wv = _values(W)
    n = Wv.shape[0]
    off = ~np.eye(n, dtype=bool)
    B = _rwk_base(Wv, a, negatives)
    kernels = {}
    K, cur = np.eye(n), 0
    for p in sorted(set(ps)):
        while cur < p:
            K = B if cur == 0 else K @ B
            cur += 1
        kernels[p] = (K + K.T) / 2.0 if p > 0 else np.eye(n)
    ref = kernels[max(ps)][off]
    out = []
    for p in ps:
        x = kernels[p][off]
        if np.ptp(x) == 0 or np.ptp(ref) == 0:
            r = 1.0 if np.array_equal(x, ref) else 0.0
        else:
            r = float(np.corrcoef(x, ref)[0, 1])
        out.append((p, r))
    return out
