import networkx as nx
import numpy as np
import pydot
import pytest

from pnet.dataset import PhenotypeLabels
from pnet.errors import DataError
from pnet.export import EDGE_COLD, EDGE_HOT, GraphExportSpec, export_graph, ramp_color
from pnet.kernel import KernelMatrix, KernelSpec, random_walk_kernel
from pnet.scoring import ScoreVector
from pnet.similarity import SimilarityMatrix
from conftest import random_W


def triangle():
    W = np.array([[1.0, 0.2, 0.5], [0.2, 1.0, 0.9], [0.5, 0.9, 1.0]])
    return SimilarityMatrix(["a", "b", "c"], W)


def dot_edges(path):
    g = pydot.graph_from_dot_file(str(path))[0]
    out = {}
    for e in g.get_edges():
        key = frozenset((e.get_source().strip('"'), e.get_destination().strip('"')))
        out[key] = {k: v.strip('"') for k, v in e.get_attributes().items()}
    return g, out


def test_triangle_widths_increase(tmp_path):
    export_graph(triangle(), tmp_path / "g.dot")
    _, edges = dot_edges(tmp_path / "g.dot")
    assert len(edges) == 3
    w = {float(a["similarity"]): float(a["penwidth"]) for a in edges.values()}
    assert w[0.2] < w[0.5] < w[0.9]
    assert w[0.2] == 0.5 and w[0.9] == 5.0
    colors = {float(a["similarity"]): a["color"] for a in edges.values()}
    assert colors[0.2] == EDGE_COLD and colors[0.9] == EDGE_HOT


def test_zero_entry_omitted(tmp_path):
    W = triangle().values.copy()
    W[0, 1] = W[1, 0] = 0.0
    n, m = export_graph(SimilarityMatrix(["a", "b", "c"], W), tmp_path / "g.dot")
    _, edges = dot_edges(tmp_path / "g.dot")
    assert (n, m) == (3, 2) and frozenset("ab") not in edges


def test_constant_weights_midpoint(tmp_path):
    W = np.full((3, 3), 0.4)
    export_graph(SimilarityMatrix(["a", "b", "c"], W), tmp_path / "g.dot")
    _, edges = dot_edges(tmp_path / "g.dot")
    assert {float(a["penwidth"]) for a in edges.values()} == {2.75}
    assert {a["color"] for a in edges.values()} == {ramp_color(0.5)}


def test_thirty_node_counts_and_graphml(tmp_path, rng):
    W = random_W(rng, 30, nonneg=True)
    K = random_walk_kernel(W, 3)
    vals = K.values.copy()
    vals[vals < np.quantile(vals, 0.6)] = 0.0
    vals = np.triu(vals) + np.triu(vals, 1).T
    ids = [f"P{i:02d}" for i in range(30)]
    Km = KernelMatrix(ids, vals, KernelSpec("random_walk", p=3))
    labels = PhenotypeLabels(ids, rng.random(30) < 0.5)
    scores = ScoreVector(ids, rng.random(30))
    nz = int(np.count_nonzero(vals[np.triu_indices(30, 1)]))
    n, m = export_graph(Km, tmp_path / "g.graphml", labels=labels, scores=scores,
                        spec=GraphExportSpec("graphml"))
    assert (n, m) == (30, nz)
    G = nx.read_graphml(tmp_path / "g.graphml")
    assert G.number_of_nodes() == 30 and G.number_of_edges() == nz
    for i, sid in enumerate(ids):
        assert G.nodes[sid]["shape"] == ("square" if labels.labels[i] else "circle")
        assert G.nodes[sid]["positive"] == bool(labels.labels[i])
    widths = [d["width"] for _, _, d in G.edges(data=True)]
    assert min(widths) == 0.5 and max(widths) == 5.0
    export_graph(Km, tmp_path / "g.dot", labels=labels, scores=scores)
    g, edges = dot_edges(tmp_path / "g.dot")
    assert len(g.get_nodes()) >= 30 and len(edges) == nz
    shapes = {nd.get_name().strip('"'): nd.get("shape") for nd in g.get_nodes()}
    assert shapes[ids[int(np.argmax(labels.labels))]] == "box"


def test_fill_follows_score(tmp_path):
    scores = {"a": 0.0, "b": 1.0, "c": 0.5}
    export_graph(triangle(), tmp_path / "g.graphml", scores=scores, spec=GraphExportSpec("graphml"))
    G = nx.read_graphml(tmp_path / "g.graphml")
    assert G.nodes["a"]["fill"] == "#ffffff"
    assert G.nodes["b"]["fill"] == "#fd8d3c"


def test_misaligned_metadata(tmp_path):
    with pytest.raises(DataError, match="'c'"):
        export_graph(triangle(), tmp_path / "g.dot", labels={"a": True, "b": False})
    asym = SimilarityMatrix(["a", "b"], [[1.0, 0.3], [0.2, 1.0]])
    with pytest.raises(DataError):
        export_graph(asym, tmp_path / "g.dot")
    with pytest.raises(DataError):
        GraphExportSpec("gml")


def test_ramp_endpoints():
    assert ramp_color(0.0) == EDGE_COLD and ramp_color(1.0) == EDGE_HOT
