"""Attributed-graph ingestion, validation, and the derived matrices.

Two on-disk layouts are supported (citation content/cites files and SNAP
ego-network files) plus a canonical directory format that decouples
training from either loader.
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

CANONICAL_FORMAT_VERSION = 1

#: distance marker for nodes disconnected from the query set
UNREACHABLE = -1


class DatasetFormatError(Exception):
    """Malformed or inconsistent input files."""

    def __init__(self, message: str, path=None, line: int | None = None):
        loc = ""
        if path is not None:
            loc = f" [{path}" + (f":{line}" if line is not None else "") + "]"
        super().__init__(message + loc)
        self.path = path
        self.line = line


class EmptyDatasetError(DatasetFormatError):
    pass


@dataclass
class AttributedGraph:
    """One dataset: symmetric adjacency, node attributes, ground-truth communities."""

    adjacency: sp.csr_matrix
    features: sp.csr_matrix
    communities: list[frozenset[int]]
    name: str = "unnamed"
    node_labels: list[str] | None = None
    attr_labels: list[str] | None = None
    small_communities: list[int] = field(default_factory=list)
    ingest_stats: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def m(self) -> int:
        return self.adjacency.nnz // 2

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def num_communities(self) -> int:
        return len(self.communities)

    def validate(self) -> "AttributedGraph":
        a = self.adjacency
        if a.shape[0] != a.shape[1]:
            raise ValueError("adjacency must be square")
        if (a != a.T).nnz != 0:
            raise ValueError("adjacency must be symmetric")
        if a.diagonal().any():
            raise ValueError("adjacency diagonal must be zero")
        if self.features.shape[0] != self.n:
            raise ValueError("feature row count must match node count")
        if not np.all(np.isfinite(self.features.data)):
            raise ValueError("features contain non-finite entries")
        for k, comm in enumerate(self.communities):
            if not comm:
                raise ValueError(f"community {k} is empty")
            if min(comm) < 0 or max(comm) >= self.n:
                raise ValueError(f"community {k} references an unknown node id")
        return self

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.n},{self.m},{self.d},{self.num_communities}".encode())
        coo = sp.triu(self.adjacency, k=1).tocoo()
        order = np.lexsort((coo.col, coo.row))
        h.update(coo.row[order].astype(np.int64).tobytes())
        h.update(coo.col[order].astype(np.int64).tobytes())
        f = self.features.tocoo()
        order = np.lexsort((f.col, f.row))
        h.update(f.row[order].astype(np.int64).tobytes())
        h.update(f.col[order].astype(np.int64).tobytes())
        h.update(np.round(f.data[order], 12).tobytes())
        for comm in self.communities:
            h.update((" ".join(map(str, sorted(comm))) + "\n").encode())
        return h.hexdigest()


def _dedup_edges(pairs, n: int) -> tuple[sp.csr_matrix, dict]:
    """Symmetric 0/1 adjacency from raw (u, v) pairs, with cleanup counts."""
    seen: set[tuple[int, int]] = set()
    self_loops = duplicates = 0
    for u, v in pairs:
        if u == v:
            self_loops += 1
            continue
        key = (u, v) if u < v else (v, u)
        if key in seen:
            duplicates += 1
        else:
            seen.add(key)
    if seen:
        rows, cols = zip(*seen)
        rows, cols = np.array(rows), np.array(cols)
        data = np.ones(len(rows))
        a = sp.coo_matrix((np.concatenate([data, data]),
                           (np.concatenate([rows, cols]),
                            np.concatenate([cols, rows]))), shape=(n, n))
        adjacency = a.tocsr()
    else:
        adjacency = sp.csr_matrix((n, n))
    adjacency.data[:] = 1.0
    stats = {"self_loops_dropped": self_loops, "duplicate_edges_dropped": duplicates}
    if self_loops or duplicates:
        log.warning("normalized away %d self-loops and %d duplicate/reverse edges",
                    self_loops, duplicates)
    return adjacency, stats


def load_citation_dataset(content_path, cites_path, name: str | None = None) -> AttributedGraph:
    """Load a content/cites citation dataset; class labels become communities."""
    content_path, cites_path = Path(content_path), Path(cites_path)
    node_ids: list[str] = []
    index: dict[str, int] = {}
    rows, labels = [], []
    d = None
    with content_path.open() as fh:
        for ln, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 3:
                raise DatasetFormatError("content line needs id, attributes, label",
                                         content_path, ln)
            node_id, label = parts[0], parts[-1]
            try:
                feats = np.array([float(v) for v in parts[1:-1]])
            except ValueError as exc:
                raise DatasetFormatError(f"bad attribute value: {exc}",
                                         content_path, ln) from None
            if d is None:
                d = len(feats)
            elif len(feats) != d:
                raise DatasetFormatError(f"expected {d} attributes, got {len(feats)}",
                                         content_path, ln)
            if node_id in index:
                raise DatasetFormatError(f"duplicate node id {node_id}", content_path, ln)
            index[node_id] = len(node_ids)
            node_ids.append(node_id)
            rows.append(feats)
            labels.append(label)
    if not node_ids:
        raise EmptyDatasetError("no nodes in content file", content_path)

    pairs = []
    unknown = 0
    with cites_path.open() as fh:
        for ln, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise DatasetFormatError("cites line needs exactly two ids", cites_path, ln)
            src, dst = parts
            if src not in index or dst not in index:
                unknown += 1
                continue
            pairs.append((index[src], index[dst]))
    if unknown:
        log.warning("dropped %d edges referencing unknown node ids", unknown)

    n = len(node_ids)
    adjacency, stats = _dedup_edges(pairs, n)
    stats["unknown_id_edges_dropped"] = unknown
    by_label: dict[str, set[int]] = {}
    for i, label in enumerate(labels):
        by_label.setdefault(label, set()).add(i)
    communities = [frozenset(by_label[label]) for label in sorted(by_label)]
    graph = AttributedGraph(
        adjacency=adjacency,
        features=sp.csr_matrix(np.vstack(rows)),
        communities=communities,
        name=name or content_path.stem,
        node_labels=node_ids,
        ingest_stats=stats,
    )
    return graph.validate()


def load_ego_dataset(edges_path, feat_path, egofeat_path, circles_path,
                     name: str | None = None) -> AttributedGraph:
    """Load one SNAP ego-network; the ego joins the graph connected to all alters."""
    edges_path, feat_path = Path(edges_path), Path(feat_path)
    egofeat_path, circles_path = Path(egofeat_path), Path(circles_path)
    ego_label = egofeat_path.stem

    alter_ids: list[str] = []
    feat_rows = []
    d = None
    with feat_path.open() as fh:
        for ln, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            alter_ids.append(parts[0])
            feats = np.array([float(v) for v in parts[1:]])
            if d is None:
                d = len(feats)
            elif len(feats) != d:
                raise DatasetFormatError(f"expected {d} attributes, got {len(feats)}",
                                         feat_path, ln)
            feat_rows.append(feats)
    ego_feats = None
    with egofeat_path.open() as fh:
        for ln, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            ego_feats = np.array([float(v) for v in parts])
            break
    if ego_feats is None:
        raise DatasetFormatError("empty egofeat file", egofeat_path)
    if d is not None and len(ego_feats) != d:
        raise DatasetFormatError(
            f"egofeat width {len(ego_feats)} does not match feat width {d}", egofeat_path)

    index = {nid: i for i, nid in enumerate(alter_ids)}
    ego_idx = len(alter_ids)
    n = ego_idx + 1

    pairs = []
    with edges_path.open() as fh:
        for ln, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise DatasetFormatError("edges line needs exactly two ids", edges_path, ln)
            u, v = parts
            if u not in index or v not in index:
                raise DatasetFormatError(f"edge references unknown alter {u} or {v}",
                                         edges_path, ln)
            pairs.append((index[u], index[v]))
    pairs.extend((ego_idx, i) for i in range(ego_idx))
    adjacency, stats = _dedup_edges(pairs, n)

    communities = []
    small = []
    with circles_path.open() as fh:
        for ln, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            members = set()
            for nid in parts[1:]:
                if nid not in index:
                    raise DatasetFormatError(f"circle references unknown node {nid}",
                                             circles_path, ln)
                members.add(index[nid])
            if not members:
                continue
            if len(members) < 2:
                small.append(len(communities))
                log.warning("circle %s has fewer than 2 members", parts[0])
            communities.append(frozenset(members))

    features = np.vstack(feat_rows + [ego_feats]) if feat_rows else ego_feats.reshape(1, -1)
    graph = AttributedGraph(
        adjacency=adjacency,
        features=sp.csr_matrix(features),
        communities=communities,
        name=name or f"ego-{ego_label}",
        node_labels=alter_ids + [ego_label],
        small_communities=small,
        ingest_stats=stats,
    )
    return graph.validate()


# ---------------------------------------------------------------------------
# derived matrices


def normalize_adjacency(graph: AttributedGraph) -> sp.csr_matrix:
    """D^{-1/2} (A + I) D^{-1/2} with D the degree matrix of A + I."""
    a_self = (graph.adjacency + sp.identity(graph.n, format="csr")).tocsr()
    inv_sqrt = 1.0 / np.sqrt(np.asarray(a_self.sum(axis=1)).ravel())
    scaling = sp.diags(inv_sqrt)
    return (scaling @ a_self @ scaling).tocsr()


def row_normalize_features(graph: AttributedGraph) -> sp.csr_matrix:
    """Divide each nonzero feature row by its row sum; all-zero rows stay zero."""
    f = graph.features.tocsr(copy=True)
    sums = np.asarray(f.sum(axis=1)).ravel()
    scale = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums != 0)
    return (sp.diags(scale) @ f).tocsr()


def build_bipartite(graph: AttributedGraph) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Node-attribute bipartite adjacency blocks (B_V = F, B_F = F^T)."""
    b_v = graph.features.tocsr(copy=True)
    return b_v, b_v.T.tocsr()


def query_distances(graph: AttributedGraph, query_nodes) -> tuple[np.ndarray, int]:
    """Multi-source BFS hop counts from the query set; UNREACHABLE marks disconnection."""
    query_nodes = sorted(set(int(q) for q in query_nodes))
    if not query_nodes:
        raise ValueError("query node set must be non-empty")
    if query_nodes[0] < 0 or query_nodes[-1] >= graph.n:
        raise ValueError("query node id out of range")
    indptr, indices = graph.adjacency.indptr, graph.adjacency.indices
    dist = np.full(graph.n, UNREACHABLE, dtype=np.int64)
    queue = deque(query_nodes)
    for q in query_nodes:
        dist[q] = 0
    while queue:
        u = queue.popleft()
        du = dist[u] + 1
        for v in indices[indptr[u]:indptr[u + 1]]:
            if dist[v] == UNREACHABLE:
                dist[v] = du
                queue.append(v)
    d_max = 1 + int(dist.max())  # max finite distance; query-only components give 1
    return dist, d_max


@dataclass
class NormalizedViews:
    """Everything the encoders consume, computed once per dataset."""

    a_hat: sp.csr_matrix
    f_hat: sp.csr_matrix
    b_v: sp.csr_matrix
    b_f: sp.csr_matrix

    @classmethod
    def from_graph(cls, graph: AttributedGraph) -> "NormalizedViews":
        b_v, b_f = build_bipartite(graph)
        return cls(a_hat=normalize_adjacency(graph),
                   f_hat=row_normalize_features(graph),
                   b_v=b_v, b_f=b_f)

    @property
    def n(self) -> int:
        return self.a_hat.shape[0]

    @property
    def d(self) -> int:
        return self.f_hat.shape[1]


# ---------------------------------------------------------------------------
# canonical on-disk format


def save_canonical(graph: AttributedGraph, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": CANONICAL_FORMAT_VERSION,
        "dataset": graph.name,
        "n": graph.n,
        "m": graph.m,
        "d": graph.d,
        "K": graph.num_communities,
        "avg_community_size": (
            sum(len(c) for c in graph.communities) / len(graph.communities)
            if graph.communities else 0.0),
    }
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    coo = sp.triu(graph.adjacency, k=1).tocoo()
    order = np.lexsort((coo.col, coo.row))
    with (out_dir / "edges.txt").open("w") as fh:
        for u, v in zip(coo.row[order], coo.col[order]):
            fh.write(f"{u} {v}\n")
    f = graph.features.tocoo()
    order = np.lexsort((f.col, f.row))
    with (out_dir / "features.txt").open("w") as fh:
        for i, j, val in zip(f.row[order], f.col[order], f.data[order]):
            fh.write(f"{i} {j} {val:.17g}\n")
    with (out_dir / "communities.txt").open("w") as fh:
        for comm in graph.communities:
            fh.write(" ".join(map(str, sorted(comm))) + "\n")
    return out_dir


def load_canonical(dataset_dir) -> AttributedGraph:
    dataset_dir = Path(dataset_dir)
    meta_path = dataset_dir / "meta.json"
    if not meta_path.exists():
        raise DatasetFormatError("missing meta.json", meta_path)
    meta = json.loads(meta_path.read_text())
    n, d = meta["n"], meta["d"]
    pairs = []
    with (dataset_dir / "edges.txt").open() as fh:
        for ln, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise DatasetFormatError("edge line needs two ids",
                                         dataset_dir / "edges.txt", ln)
            pairs.append((int(parts[0]), int(parts[1])))
    adjacency, _ = _dedup_edges(pairs, n)
    rows, cols, vals = [], [], []
    with (dataset_dir / "features.txt").open() as fh:
        for ln, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise DatasetFormatError("feature line needs i j value",
                                         dataset_dir / "features.txt", ln)
            rows.append(int(parts[0]))
            cols.append(int(parts[1]))
            vals.append(float(parts[2]))
    features = sp.csr_matrix((vals, (rows, cols)), shape=(n, d))
    communities = []
    with (dataset_dir / "communities.txt").open() as fh:
        for line in fh:
            parts = line.split()
            if parts:
                communities.append(frozenset(int(v) for v in parts))
    graph = AttributedGraph(adjacency=adjacency, features=features,
                            communities=communities, name=meta["dataset"])
    return graph.validate()
