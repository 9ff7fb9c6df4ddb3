"""Write a similarity or kernel matrix as a styled graph (DOT or GraphML).

Edges carry the matrix weight, a pen width mapped linearly onto
[0.5, 5.0] and a colour on a fixed blue-to-red ramp.  Positive samples are
drawn as squares, negatives as circles; an optional score sets node fill.
"""
from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ._io import atomic_write, fmt_float
from .errors import DataError

__all__ = ["GraphExportSpec", "export_graph", "ramp_color", "EDGE_COLD", "EDGE_HOT",
           "FILL_LOW", "FILL_HIGH"]

# endpoints are fixed so figures from different runs share one colour scale
EDGE_COLD = "#2c7bb6"
EDGE_HOT = "#d7191c"
FILL_LOW = "#ffffff"
FILL_HIGH = "#fd8d3c"
UNSCORED_FILL = "#d9d9d9"


@dataclass(frozen=True)
class GraphExportSpec:
    format: str = "dot"
    min_width: float = 0.5
    max_width: float = 5.0

    def __post_init__(self):
        if self.format not in ("dot", "graphml"):
            raise DataError(f"graph format must be dot or graphml, got {self.format!r}")
        if not 0 < self.min_width <= self.max_width:
            raise DataError("edge widths must satisfy 0 < min_width <= max_width")


def _unit(x: np.ndarray) -> np.ndarray:
    """Linear map of x onto [0, 1]; a constant vector maps to 0.5."""
    if x.size == 0:
        return x
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.full_like(x, 0.5, dtype=float)
    return (x - lo) / (hi - lo)


def _rgb(hex_color: str) -> np.ndarray:
    h = hex_color.lstrip("#")
    return np.array([int(h[i:i + 2], 16) for i in (0, 2, 4)], dtype=float)


def ramp_color(t: float, low: str = EDGE_COLD, high: str = EDGE_HOT) -> str:
    """Colour at position t in [0, 1] on the straight RGB line from ``low`` to ``high``."""
    c = (1.0 - t) * _rgb(low) + t * _rgb(high)
    return "#" + "".join(f"{int(round(v)):02x}" for v in c)


def _lookup(meta, ids, what):
    if meta is None:
        return None
    if hasattr(meta, "sample_ids"):
        vals = getattr(meta, "labels", None)
        if vals is None:
            vals = meta.scores
        meta = dict(zip(meta.sample_ids, np.asarray(vals).tolist()))
    if not isinstance(meta, Mapping):
        raise DataError(f"{what} must be a mapping from sample id")
    missing = [s for s in ids if s not in meta]
    if missing:
        raise DataError(f"{what} missing for sample {missing[0]!r} ({len(missing)} in total)")
    return [meta[s] for s in ids]


def _graph_parts(sample_ids, values, labels, scores, spec):
    A = np.asarray(values, dtype=float)
    n = len(sample_ids)
    if A.shape != (n, n):
        raise DataError(f"matrix shape {A.shape} does not match {n} sample ids")
    if not np.allclose(A, A.T, rtol=1e-12, atol=1e-12):
        raise DataError("graph export needs a symmetric matrix")
    iu, ju = np.triu_indices(n, k=1)
    w = A[iu, ju]
    keep = w != 0
    iu, ju, w = iu[keep], ju[keep], w[keep]
    t = _unit(w)
    width = spec.min_width + (spec.max_width - spec.min_width) * t
    edges = [(int(i), int(j), float(wi), float(wd), ramp_color(ti))
             for i, j, wi, wd, ti in zip(iu, ju, w, width, t)]

    lab = _lookup(labels, sample_ids, "labels")
    sc = _lookup(scores, sample_ids, "scores")
    fills = None
    if sc is not None:
        s = np.asarray(sc, dtype=float)
        fills = [ramp_color(u, FILL_LOW, FILL_HIGH) for u in _unit(s)]
    nodes = []
    for k, sid in enumerate(sample_ids):
        nodes.append({
            "id": sid,
            "positive": None if lab is None else bool(lab[k]),
            "score": None if sc is None else float(sc[k]),
            "shape": "circle" if lab is None or not lab[k] else "square",
            "fill": UNSCORED_FILL if fills is None else fills[k],
        })
    return nodes, edges


def _dot_id(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _write_dot(fh, nodes, edges):
    fh.write("graph pnet {\n")
    fh.write("  node [style=filled, fontsize=10];\n")
    for nd in nodes:
        attrs = [f"shape={'box' if nd['shape'] == 'square' else 'circle'}",
                 f'fillcolor="{nd["fill"]}"']
        if nd["positive"] is not None:
            attrs.append(f"positive={int(nd['positive'])}")
        if nd["score"] is not None:
            attrs.append(f'score="{fmt_float(nd["score"])}"')
        fh.write(f"  {_dot_id(nd['id'])} [{', '.join(attrs)}];\n")
    for i, j, w, width, color in edges:
        fh.write(f"  {_dot_id(nodes[i]['id'])} -- {_dot_id(nodes[j]['id'])} "
                 f'[similarity="{fmt_float(w)}", penwidth="{width:.4f}", color="{color}"];\n')
    fh.write("}\n")


_GRAPHML_NS = "http://graphml.graphdrawing.org/xmlns"
_NODE_KEYS = (("positive", "boolean"), ("score", "double"), ("shape", "string"), ("fill", "string"))
_EDGE_KEYS = (("weight", "double"), ("width", "double"), ("color", "string"))


def _write_graphml(fh, nodes, edges):
    ET.register_namespace("", _GRAPHML_NS)
    root = ET.Element(f"{{{_GRAPHML_NS}}}graphml")
    for name, typ in _NODE_KEYS:
        ET.SubElement(root, f"{{{_GRAPHML_NS}}}key", id=f"n_{name}", attrib={
            "for": "node", "attr.name": name, "attr.type": typ})
    for name, typ in _EDGE_KEYS:
        ET.SubElement(root, f"{{{_GRAPHML_NS}}}key", id=f"e_{name}", attrib={
            "for": "edge", "attr.name": name, "attr.type": typ})
    g = ET.SubElement(root, f"{{{_GRAPHML_NS}}}graph", id="pnet", edgedefault="undirected")
    for nd in nodes:
        el = ET.SubElement(g, f"{{{_GRAPHML_NS}}}node", id=nd["id"])
        for name, _ in _NODE_KEYS:
            v = nd[name]
            if v is None:
                continue
            d = ET.SubElement(el, f"{{{_GRAPHML_NS}}}data", key=f"n_{name}")
            d.text = ("true" if v else "false") if isinstance(v, bool) else (
                fmt_float(v) if isinstance(v, float) else str(v))
    for k, (i, j, w, width, color) in enumerate(edges):
        el = ET.SubElement(g, f"{{{_GRAPHML_NS}}}edge", id=f"e{k}",
                           source=nodes[i]["id"], target=nodes[j]["id"])
        for key, text in (("e_weight", fmt_float(w)), ("e_width", f"{width:.4f}"),
                          ("e_color", color)):
            ET.SubElement(el, f"{{{_GRAPHML_NS}}}data", key=key).text = text
    ET.indent(root)
    fh.write('<?xml version="1.0" encoding="UTF-8"?>\n')
    fh.write(ET.tostring(root, encoding="unicode"))
    fh.write("\n")


def export_graph(matrix, path, *, labels=None, scores=None,
                 spec: GraphExportSpec = GraphExportSpec()) -> tuple[int, int]:
    """Write ``matrix`` (anything with ``sample_ids`` and ``values``) as a graph.

    ``labels`` and ``scores`` are optional mappings from sample id (or
    PhenotypeLabels / ScoreVector objects).  Zero entries produce no edge.
    Returns ``(n_nodes, n_edges)``.
    """
    nodes, edges = _graph_parts(matrix.sample_ids, matrix.values, labels, scores, spec)
    with atomic_write(path) as fh:
        if spec.format == "dot":
            _write_dot(fh, nodes, edges)
        else:
            _write_graphml(fh, nodes, edges)
    return len(nodes), len(edges)
