import numpy as np
import pytest
import scipy.sparse as sp

from qdcs.graphs import AttributedGraph


def graph_from_edges(n, edges, features, communities, name="toy"):
    a = np.zeros((n, n))
    for u, v in edges:
        a[u, v] = a[v, u] = 1.0
    return AttributedGraph(
        adjacency=sp.csr_matrix(a),
        features=sp.csr_matrix(np.asarray(features, dtype=float)),
        communities=[frozenset(c) for c in communities],
        name=name,
    ).validate()


def random_graph(rng, n_max=10, d_max=6, name="random"):
    """Connected-ish random attributed graph for oracle sweeps."""
    n = int(rng.integers(2, n_max + 1))
    d = int(rng.integers(1, d_max + 1))
    edges = [(i, int(rng.integers(0, i))) for i in range(1, n)]
    for _ in range(n):
        u, v = rng.integers(0, n, size=2)
        if u != v:
            edges.append((int(u), int(v)))
    features = (rng.random((n, d)) < 0.5).astype(float)
    half = frozenset(range(n // 2 + 1))
    return graph_from_edges(n, set(tuple(sorted(e)) for e in edges),
                            features, [half], name=name)


@pytest.fixture
def fix6():
    """Two triangles joined by a bridge, four attributes."""
    return graph_from_edges(
        6,
        [(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (3, 5), (2, 3)],
        [[1, 0, 1, 0], [0, 1, 0, 0], [1, 1, 0, 1],
         [0, 0, 1, 1], [1, 0, 0, 0], [0, 1, 1, 0]],
        [{0, 1, 2}, {3, 4, 5}],
        name="fix6",
    )


@pytest.fixture
def path5():
    return graph_from_edges(
        5, [(0, 1), (1, 2), (2, 3), (3, 4)], np.eye(5), [{0, 1, 2}],
        name="path5")


@pytest.fixture
def clique_ring():
    """Three 4-cliques in a ring; attributes indicate the clique."""
    edges = []
    for c in range(3):
        base = 4 * c
        edges.extend((base + i, base + j) for i in range(4) for j in range(i + 1, 4))
    edges.extend([(3, 4), (7, 8), (11, 0)])
    features = np.zeros((12, 6))
    for i in range(12):
        features[i, 2 * (i // 4)] = 1.0
        features[i, 2 * (i // 4) + 1] = 1.0
    communities = [set(range(4 * c, 4 * c + 4)) for c in range(3)]
    return graph_from_edges(12, edges, features, communities, name="clique-ring")


CONTENT_LINES = """\
p0 1 0 1 A
p1 0 1 0 A
p2 1 1 0 B
p3 0 0 1 B
p4 1 0 0 B
"""

CITES_LINES = """\
p0 p1
p1 p0
p2 p2
p2 p3
p0 p2
px p1
"""


@pytest.fixture
def citation_files(tmp_path):
    """Tiny citation dataset with one self-loop, one reverse duplicate,
    and one edge referencing an unknown id."""
    content = tmp_path / "tiny.content"
    cites = tmp_path / "tiny.cites"
    content.write_text(CONTENT_LINES)
    cites.write_text(CITES_LINES)
    return content, cites


@pytest.fixture
def ego_files(tmp_path):
    """Tiny ego network: three alters, one two-member and one singleton circle."""
    (tmp_path / "7.feat").write_text("10 1 0\n11 0 1\n12 1 1\n")
    (tmp_path / "7.egofeat").write_text("1 0\n")
    (tmp_path / "7.edges").write_text("10 11\n11 12\n")
    (tmp_path / "7.circles").write_text("circle0 10 11\ncircle1 12\n")
    return (tmp_path / "7.edges", tmp_path / "7.feat",
            tmp_path / "7.egofeat", tmp_path / "7.circles")
