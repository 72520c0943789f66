"""Query workloads: node/attribute sampling, the train/val/test split,
and the per-query model inputs (structure seed and attribute indicator).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graphs import UNREACHABLE, AttributedGraph, query_distances
from .rng import seeded_rng

QUERYSET_FORMAT_VERSION = 1

MODES = ("community-attrs", "node-attrs", "none")


class QueryGenerationError(Exception):
    pass


@dataclass(frozen=True)
class Query:
    query_nodes: frozenset[int]
    query_attrs: frozenset[int]
    community_id: int
    mode: str

    def ground_truth(self, graph: AttributedGraph) -> np.ndarray:
        y = np.zeros(graph.n, dtype=np.int64)
        y[sorted(graph.communities[self.community_id])] = 1
        return y


@dataclass
class QuerySet:
    train: list[Query]
    validation: list[Query]
    test: list[Query]
    seed: int
    mode: str
    dataset: str = "unnamed"

    def all_queries(self) -> list[Query]:
        return self.train + self.validation + self.test

    def split_of(self, query: Query) -> str:
        if query in self.train:
            return "train"
        if query in self.validation:
            return "val"
        return "test"


def sample_query_nodes(community, k_max: int, rng: np.random.Generator) -> frozenset[int]:
    """Uniform node subset of the community; size uniform in {1..min(k_max, |C|)}."""
    members = sorted(community)
    if not members:
        raise ValueError("community must be non-empty")
    size = int(rng.integers(1, min(k_max, len(members)) + 1))
    picked = rng.choice(len(members), size=size, replace=False)
    return frozenset(members[i] for i in picked)


def _rank_positions(sums: np.ndarray) -> np.ndarray:
    """rank[j] = position of attribute j when sorted by (sum desc, id asc)."""
    order = np.lexsort((np.arange(len(sums)), -sums))
    ranks = np.empty(len(sums), dtype=np.int64)
    ranks[order] = np.arange(len(sums))
    return ranks


def attrs_from_community(graph: AttributedGraph, community,
                         rng: np.random.Generator,
                         k: int | None = None) -> frozenset[int]:
    """Attributes ranked high inside the community but lower graph-wide.

    Specificity score = global rank minus community rank (ranks by
    descending column sum); top-k by score, ties toward smaller ids.
    """
    members = sorted(community)
    if not members:
        raise ValueError("community must be non-empty")
    if graph.d < 1:
        raise ValueError("graph has no attributes")
    comm_sums = np.asarray(graph.features[members].sum(axis=0)).ravel()
    global_sums = np.asarray(graph.features.sum(axis=0)).ravel()
    score = _rank_positions(global_sums) - _rank_positions(comm_sums)
    if k is None:
        k = int(rng.integers(1, 6))
    k = min(k, graph.d)
    order = np.lexsort((np.arange(graph.d), -score))
    return frozenset(int(j) for j in order[:k])


def attrs_from_nodes(graph: AttributedGraph, query_nodes) -> frozenset[int]:
    """The five highest-valued attributes in the summed query-node rows."""
    nodes = sorted(query_nodes)
    if not nodes:
        raise ValueError("query node set must be non-empty")
    sums = np.asarray(graph.features[nodes].sum(axis=0)).ravel()
    nonzero = np.flatnonzero(sums)
    order = nonzero[np.lexsort((nonzero, -sums[nonzero]))]
    return frozenset(int(j) for j in order[:5])


def generate_query_set(graph: AttributedGraph, mode: str, count: int = 350,
                       split: tuple[int, int, int] = (150, 100, 100),
                       seed: int = 0, k_max: int = 3) -> QuerySet:
    """Sample ``count`` queries (communities uniform with replacement) and split them."""
    if mode not in MODES:
        raise ValueError(f"unknown query mode {mode!r}")
    if sum(split) != count:
        raise ValueError(f"split {split} does not sum to count {count}")
    usable = [k for k, c in enumerate(graph.communities) if c]
    if mode == "community-attrs":
        usable = [k for k in usable if graph.d >= 1]
    if not usable:
        raise QueryGenerationError(f"no community usable for mode {mode!r}")
    rng = seeded_rng(seed, "query-gen")

    community_attrs: dict[int, frozenset[int]] = {}
    if mode == "community-attrs":
        # the attribute set is fixed once per community and shared by its queries
        for k in usable:
            community_attrs[k] = attrs_from_community(graph, graph.communities[k], rng)

    queries: list[Query] = []
    for _ in range(count):
        cid = usable[int(rng.integers(0, len(usable)))]
        nodes = sample_query_nodes(graph.communities[cid], k_max, rng)
        if mode == "community-attrs":
            attrs = community_attrs[cid]
        elif mode == "node-attrs":
            attrs = attrs_from_nodes(graph, nodes)
        else:
            attrs = frozenset()
        queries.append(Query(nodes, attrs, cid, mode))

    a, b, _ = split
    return QuerySet(train=queries[:a], validation=queries[a:a + b],
                    test=queries[a + b:], seed=seed, mode=mode, dataset=graph.name)


def build_structure_seed(dist: np.ndarray, d_max: int) -> np.ndarray:
    """Length-n seed: 1 on query nodes, 1 - dist/d_max when connected, else 0."""
    seed = np.zeros(len(dist), dtype=np.float64)
    reachable = dist != UNREACHABLE
    seed[reachable] = 1.0 - dist[reachable] / d_max
    seed[dist == 0] = 1.0
    return seed


def one_hot_attrs(query_attrs, d: int) -> np.ndarray:
    """Multi-hot indicator over the d attributes."""
    vec = np.zeros(d, dtype=np.float64)
    for j in query_attrs:
        if not 0 <= j < d:
            raise ValueError(f"attribute id {j} out of range")
        vec[j] = 1.0
    return vec


def query_inputs(graph: AttributedGraph, query: Query) -> tuple[np.ndarray, np.ndarray]:
    """(structure seed, attribute indicator) for one query."""
    dist, d_max = query_distances(graph, query.query_nodes)
    return build_structure_seed(dist, d_max), one_hot_attrs(query.query_attrs, graph.d)


# ---------------------------------------------------------------------------
# persistence: header line + one JSON object per query


def save_query_set(qs: QuerySet, path) -> Path:
    path = Path(path)
    header = {"format_version": QUERYSET_FORMAT_VERSION, "seed": qs.seed,
              "mode": qs.mode, "dataset": qs.dataset}
    with path.open("w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for split_name, queries in (("train", qs.train), ("val", qs.validation),
                                    ("test", qs.test)):
            for q in queries:
                fh.write(json.dumps({
                    "nodes": sorted(q.query_nodes),
                    "attrs": sorted(q.query_attrs),
                    "community": q.community_id,
                    "split": split_name,
                }, sort_keys=True) + "\n")
    return path


def load_query_set(path) -> QuerySet:
    path = Path(path)
    with path.open() as fh:
        header = json.loads(fh.readline())
        splits: dict[str, list[Query]] = {"train": [], "val": [], "test": []}
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            splits[rec["split"]].append(Query(
                frozenset(rec["nodes"]), frozenset(rec["attrs"]),
                rec["community"], header["mode"]))
    return QuerySet(train=splits["train"], validation=splits["val"],
                    test=splits["test"], seed=header["seed"],
                    mode=header["mode"], dataset=header["dataset"])
