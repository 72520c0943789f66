"""The four-component query-driven GCN.

Per layer, in dataflow order: graph-encoder embedding (query independent),
structure-encoder embedding (seeded by query distances), attribute-encoder
embedding (over the node-attribute bipartite graph), fusion of the enabled
embeddings, then the attribute-side and graph-side state updates. The final
fusion output feeds a learned linear head squashed to (0,1).

Batch normalization statistics are taken over the stacked node rows of all
queries in a training batch; the batch is one logical unit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, SparseTensor, Tensor
from .graphs import NormalizedViews
from .rng import seeded_rng

AGGREGATIONS = ("concat", "sum", "max", "min", "mean")

_AGG_FNS = {
    "sum": ad.agg_sum,
    "mean": ad.agg_mean,
    "max": ad.agg_max,
    "min": ad.agg_min,
    "concat": ad.concat_cols,
}


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 3
    channels: tuple[int, ...] = (128, 128, 1)
    aggregation: str = "concat"
    dropout: float = 0.5
    graph_encoder: bool = True
    structure_encoder: bool = True
    attribute_encoder: bool = True
    feature_fusion: bool = True

    def validate(self) -> "ModelConfig":
        if self.num_layers < 1:
            raise ValueError("need at least one layer")
        if len(self.channels) != self.num_layers:
            raise ValueError("one channel size per layer required")
        if any(c < 1 for c in self.channels):
            raise ValueError("channel sizes must be >= 1")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.num_enabled == 0:
            raise ValueError("at least one encoder must be enabled")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        return self

    @property
    def enabled(self) -> tuple[str, ...]:
        names = []
        if self.graph_encoder:
            names.append("G")
        if self.structure_encoder:
            names.append("S")
        if self.attribute_encoder:
            names.append("A")
        return tuple(names)

    @property
    def num_enabled(self) -> int:
        return len(self.enabled)

    def fusion_width(self, layer: int) -> int:
        """Width of the fused output of layer ``layer`` (1-based)."""
        base = self.channels[layer - 1]
        return base * self.num_enabled if self.aggregation == "concat" else base

    def to_dict(self) -> dict:
        return {
            "num_layers": self.num_layers,
            "channels": list(self.channels),
            "aggregation": self.aggregation,
            "dropout": self.dropout,
            "graph_encoder": self.graph_encoder,
            "structure_encoder": self.structure_encoder,
            "attribute_encoder": self.attribute_encoder,
            "feature_fusion": self.feature_fusion,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        data["channels"] = tuple(data["channels"])
        return cls(**data).validate()


def width_ledger(config: ModelConfig, d: int) -> dict[str, list[int]]:
    """Actual input widths per layer, from which every weight shape follows."""
    config.validate()
    L = config.num_layers
    h_g = [d] + [config.channels[l] for l in range(L - 1)]
    if config.feature_fusion:
        carried = [config.fusion_width(l) for l in range(1, L)]
    else:
        carried = [config.channels[l] for l in range(L - 1)]
    i_s = [1] + carried
    h_f = [1] + carried
    h_f_out = ([config.fusion_width(l + 1) for l in range(L)]
               if config.feature_fusion else list(config.channels))
    return {"h_g": h_g, "i_s": i_s, "h_f": h_f, "h_f_out": h_f_out,
            "head_in": [config.fusion_width(L)]}


@dataclass
class ModelParams:
    weights: dict[str, Tensor]
    batch_norms: dict[str, BatchNormState]
    config: ModelConfig

    def trainable(self) -> dict[str, Tensor]:
        out = dict(self.weights)
        for key, bn in self.batch_norms.items():
            out[f"{key}.gamma"] = bn.gamma
            out[f"{key}.beta"] = bn.beta
        return out

    def zero_grad(self):
        for t in self.trainable().values():
            t.zero_grad()

    def copy(self) -> "ModelParams":
        weights = {k: Tensor(t.data.copy(), requires_grad=True)
                   for k, t in self.weights.items()}
        bns = {}
        for k, bn in self.batch_norms.items():
            dup = BatchNormState(bn.channels, momentum=bn.momentum, eps=bn.eps)
            dup.gamma.data[:] = bn.gamma.data
            dup.beta.data[:] = bn.beta.data
            dup.running_mean = bn.running_mean.copy()
            dup.running_var = bn.running_var.copy()
            bns[k] = dup
        return ModelParams(weights=weights, batch_norms=bns, config=self.config)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)),
                  requires_grad=True)


def init_params(config: ModelConfig, n: int, d: int,
                rng: np.random.Generator | int) -> ModelParams:
    """Glorot-uniform weights, zero biases, identity batch-norm scale/shift."""
    config.validate()
    if isinstance(rng, (int, np.integer)):
        rng = seeded_rng(int(rng), "init")
    ledger = width_ledger(config, d)
    L = config.num_layers
    weights: dict[str, Tensor] = {}
    bns: dict[str, BatchNormState] = {}
    for l in range(L):
        out_w = config.channels[l]
        hidden = l < L - 1
        if config.graph_encoder:
            w_in = ledger["h_g"][l]
            weights[f"W_G_{l}"] = _glorot(rng, w_in, out_w)
            weights[f"W_G_self_{l}"] = _glorot(rng, w_in, out_w)
            weights[f"b_G_{l}"] = Tensor(np.zeros((1, out_w)), requires_grad=True)
            if hidden:
                bns[f"bn_G_{l}"] = BatchNormState(out_w)
        if config.structure_encoder:
            w_in = ledger["i_s"][l]
            weights[f"W_S_{l}"] = _glorot(rng, w_in, out_w)
            weights[f"W_S_self_{l}"] = _glorot(rng, w_in, out_w)
            weights[f"b_S_{l}"] = Tensor(np.zeros((1, out_w)), requires_grad=True)
        if config.attribute_encoder:
            w_in = ledger["h_f"][l]
            weights[f"W_V_{l}"] = _glorot(rng, w_in, out_w)
            weights[f"W_F_self_{l}"] = _glorot(rng, w_in, ledger["h_f_out"][l])
            if hidden:
                bns[f"bn_F_{l}"] = BatchNormState(ledger["h_f_out"][l])
        if config.feature_fusion and hidden:
            bns[f"bn_FF_{l}"] = BatchNormState(config.fusion_width(l + 1))
    weights["w_out"] = _glorot(rng, ledger["head_in"][0], 1)
    weights["b_out"] = Tensor(np.zeros((1, 1)), requires_grad=True)
    return ModelParams(weights=weights, batch_norms=bns, config=config)


@dataclass
class ForwardTrace:
    """Per-layer activations of one query's forward pass (detached arrays)."""

    mode: str
    e_g: list[np.ndarray] = field(default_factory=list)
    e_s: list[np.ndarray] = field(default_factory=list)
    e_a: list[np.ndarray] = field(default_factory=list)
    h_ff: list[np.ndarray] = field(default_factory=list)
    h_f: list[np.ndarray] = field(default_factory=list)
    h_g: list[np.ndarray] = field(default_factory=list)
    z: Tensor | None = None

    @property
    def prediction(self) -> np.ndarray:
        return self.z.data.ravel()


def _as_column(vec: np.ndarray) -> Tensor:
    return Tensor(np.asarray(vec, dtype=np.float64).reshape(-1, 1))


def _batch_norm_across(parts: list[Tensor], state: BatchNormState,
                       mode: str) -> list[Tensor]:
    """Normalize with statistics pooled over every query's rows in the batch."""
    if len(parts) == 1:
        return [ad.batch_norm(parts[0], state, mode)]
    stacked = ad.concat_rows(parts)
    normed = ad.batch_norm(stacked, state, mode)
    return ad.split_rows(normed, [p.shape[0] for p in parts])


def precompute_graph_states(views: NormalizedViews,
                            params: ModelParams) -> dict[str, list]:
    """Infer-mode graph-encoder activations, shared by every query.

    The graph encoder never sees the query, so its per-layer embeddings can
    be computed once per (graph, parameters) pair and reused across an
    arbitrary number of inference calls via ``forward_batch(graph_cache=...)``.
    """
    config = params.config
    cache: dict[str, list] = {"e_g": [], "h_g": []}
    if not config.graph_encoder:
        return cache
    W = params.weights
    a_hat = SparseTensor(views.a_hat)
    h_g: Tensor | SparseTensor = SparseTensor(views.f_hat)
    for l in range(config.num_layers):
        e_g = ad.add_bias(
            ad.add(ad.matmul(a_hat, ad.matmul(h_g, W[f"W_G_{l}"])),
                   ad.matmul(h_g, W[f"W_G_self_{l}"])),
            W[f"b_G_{l}"])
        cache["e_g"].append(e_g)
        if l < config.num_layers - 1:
            h_g = ad.batch_norm(ad.relu(e_g), params.batch_norms[f"bn_G_{l}"],
                                "infer")
            cache["h_g"].append(h_g)
    return cache


def forward_batch(views: NormalizedViews, query_inputs: list[tuple[np.ndarray, np.ndarray]],
                  params: ModelParams, mode: str,
                  rng: np.random.Generator | None = None,
                  graph_cache: dict[str, list] | None = None) -> list[ForwardTrace]:
    """Run the network on a batch of (structure seed, attribute indicator) pairs.

    Train mode requires an rng for dropout and updates batch-norm running
    statistics; infer mode is deterministic and records nothing on any tape.
    ``graph_cache`` (from :func:`precompute_graph_states`) skips the
    query-independent graph-encoder work during inference.
    """
    config = params.config
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "train" and rng is None:
        raise ValueError("train mode needs an rng for dropout")
    if graph_cache is not None and mode != "infer":
        raise ValueError("graph_cache is only valid in infer mode")
    L = config.num_layers
    W = params.weights
    rate = config.dropout
    agg = _AGG_FNS[config.aggregation]

    a_hat = SparseTensor(views.a_hat)
    b_v = SparseTensor(views.b_v)
    b_f = SparseTensor(views.b_f)

    nq = len(query_inputs)
    traces = [ForwardTrace(mode=mode) for _ in range(nq)]
    # graph-encoder state is query independent and shared across the batch
    h_g: Tensor | SparseTensor = SparseTensor(views.f_hat)
    i_s = [_as_column(seed) for seed, _ in query_inputs]
    h_f = [_as_column(fq) for _, fq in query_inputs]

    for l in range(L):
        out_layer = l == L - 1
        e_g = e_s = None
        e_a: list[Tensor | None] = [None] * nq

        if config.graph_encoder:
            if graph_cache is not None:
                e_g = graph_cache["e_g"][l]
            else:
                if isinstance(h_g, SparseTensor):
                    h_in = ad.dropout_sparse(h_g, rate, mode, rng) if mode == "train" else h_g
                else:
                    h_in = ad.dropout(h_g, rate, mode, rng) if mode == "train" else h_g
                e_g = ad.add_bias(
                    ad.add(ad.matmul(a_hat, ad.matmul(h_in, W[f"W_G_{l}"])),
                           ad.matmul(h_in, W[f"W_G_self_{l}"])),
                    W[f"b_G_{l}"])

        e_s_list: list[Tensor | None] = [None] * nq
        for q in range(nq):
            if config.structure_encoder:
                s_in = ad.dropout(i_s[q], rate, mode, rng) if mode == "train" else i_s[q]
                e_s_list[q] = ad.add_bias(
                    ad.add(ad.matmul(a_hat, ad.matmul(s_in, W[f"W_S_{l}"])),
                           ad.matmul(s_in, W[f"W_S_self_{l}"])),
                    W[f"b_S_{l}"])
            if config.attribute_encoder:
                f_in = ad.dropout(h_f[q], rate, mode, rng) if mode == "train" else h_f[q]
                e_a[q] = ad.matmul(b_v, ad.matmul(f_in, W[f"W_V_{l}"]))

        # fusion (hidden layers only when feature fusion is enabled)
        h_ff: list[Tensor | None] = [None] * nq
        if config.feature_fusion or out_layer:
            fused = []
            for q in range(nq):
                parts = []
                if config.graph_encoder:
                    parts.append(e_g)
                if config.structure_encoder:
                    parts.append(e_s_list[q])
                if config.attribute_encoder:
                    parts.append(e_a[q])
                fused.append(ad.relu(agg(parts)))
            if out_layer:
                h_ff = fused
            else:
                h_ff = _batch_norm_across(fused, params.batch_norms[f"bn_FF_{l}"], mode)

        # attribute-side update
        if config.attribute_encoder:
            pre = []
            for q in range(nq):
                node_side = h_ff[q] if config.feature_fusion else ad.relu(e_a[q])
                if mode == "train":
                    node_side = ad.dropout(node_side, rate, mode, rng)
                pre.append(ad.relu(ad.add(ad.matmul(b_f, node_side),
                                          ad.matmul(h_f[q], W[f"W_F_self_{l}"]))))
            if out_layer:
                h_f = pre
            else:
                h_f = _batch_norm_across(pre, params.batch_norms[f"bn_F_{l}"], mode)

        # structure-side carry
        if config.structure_encoder and not out_layer:
            i_s = h_ff if config.feature_fusion else e_s_list

        # graph-side carry
        if config.graph_encoder and not out_layer:
            if graph_cache is not None:
                h_g = graph_cache["h_g"][l]
            else:
                h_g = ad.batch_norm(ad.relu(e_g), params.batch_norms[f"bn_G_{l}"], mode)

        for q in range(nq):
            t = traces[q]
            if config.graph_encoder:
                t.e_g.append(e_g.data)
                if not out_layer:
                    t.h_g.append(h_g.data)
            if config.structure_encoder:
                t.e_s.append(e_s_list[q].data)
            if config.attribute_encoder:
                t.e_a.append(e_a[q].data)
                t.h_f.append(h_f[q].data)
            if h_ff[q] is not None:
                t.h_ff.append(h_ff[q].data)

        if out_layer:
            for q in range(nq):
                traces[q].z = ad.sigmoid(
                    ad.add_bias(ad.matmul(h_ff[q], W["w_out"]), W["b_out"]))
    return traces


def forward_single(views: NormalizedViews, seed: np.ndarray, f_q: np.ndarray,
                   params: ModelParams, mode: str = "infer",
                   rng: np.random.Generator | None = None) -> ForwardTrace:
    return forward_batch(views, [(seed, f_q)], params, mode, rng)[0]


def export_embedding(trace: ForwardTrace) -> np.ndarray:
    """Concatenated last-layer encoder embeddings, one row per node."""
    if trace.mode != "infer":
        raise ValueError("embeddings must come from an infer-mode pass")
    parts = []
    for store in (trace.e_g, trace.e_s, trace.e_a):
        if store:
            parts.append(store[-1])
    return np.concatenate(parts, axis=1)
