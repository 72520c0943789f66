"""Independent straight-line reference for the forward pass.

Everything here is dense plain numpy, written directly from the layer
definitions with no reuse of the package's autodiff or model code, so it
can serve as an oracle for the layered implementation.
"""

import numpy as np


def bn_train(x, gamma, beta, eps):
    mu = x.mean(axis=0, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=0, keepdims=True)
    return gamma * (x - mu) / np.sqrt(var + eps) + beta


def bn_infer(x, gamma, beta, mean, var, eps):
    return gamma * (x - mean) / np.sqrt(var + eps) + beta


def aggregate(parts, how):
    if how == "concat":
        return np.concatenate(parts, axis=1)
    stacked = np.stack(parts, axis=0)
    return {"sum": stacked.sum(axis=0), "mean": stacked.mean(axis=0),
            "max": stacked.max(axis=0), "min": stacked.min(axis=0)}[how]


def reference_forward(views, query_inputs, params, mode="infer"):
    """Per-query probability vectors (n x 1 arrays), no dropout.

    In train mode batch-normalization statistics are pooled over the
    stacked rows of every query in the batch, matching the contract that
    one batch is one logical unit.
    """
    cfg = params.config
    A = views.a_hat.toarray()
    F = views.f_hat.toarray()
    BV = views.b_v.toarray()
    BF = BV.T
    W = {k: t.data for k, t in params.weights.items()}
    bns = params.batch_norms
    nq = len(query_inputs)
    L = cfg.num_layers

    def norm(parts, key):
        st = bns[key]
        if mode == "train":
            x = np.concatenate(parts, axis=0)
            out = bn_train(x, st.gamma.data, st.beta.data, st.eps)
            cuts = np.cumsum([p.shape[0] for p in parts])[:-1]
            return np.split(out, cuts, axis=0)
        return [bn_infer(p, st.gamma.data, st.beta.data,
                         st.running_mean, st.running_var, st.eps)
                for p in parts]

    h_g = F
    i_s = [np.asarray(s, dtype=float).reshape(-1, 1) for s, _ in query_inputs]
    h_f = [np.asarray(f, dtype=float).reshape(-1, 1) for _, f in query_inputs]
    zs = [None] * nq

    for l in range(L):
        out_layer = l == L - 1
        e_g = None
        if cfg.graph_encoder:
            e_g = (A @ h_g @ W[f"W_G_{l}"] + h_g @ W[f"W_G_self_{l}"]
                   + W[f"b_G_{l}"])
        e_s = [None] * nq
        e_a = [None] * nq
        for q in range(nq):
            if cfg.structure_encoder:
                e_s[q] = (A @ i_s[q] @ W[f"W_S_{l}"]
                          + i_s[q] @ W[f"W_S_self_{l}"] + W[f"b_S_{l}"])
            if cfg.attribute_encoder:
                e_a[q] = BV @ (h_f[q] @ W[f"W_V_{l}"])

        h_ff = [None] * nq
        if cfg.feature_fusion or out_layer:
            fused = []
            for q in range(nq):
                parts = []
                if cfg.graph_encoder:
                    parts.append(e_g)
                if cfg.structure_encoder:
                    parts.append(e_s[q])
                if cfg.attribute_encoder:
                    parts.append(e_a[q])
                fused.append(np.maximum(aggregate(parts, cfg.aggregation), 0.0))
            h_ff = fused if out_layer else norm(fused, f"bn_FF_{l}")

        if cfg.attribute_encoder:
            pre = []
            for q in range(nq):
                node = h_ff[q] if cfg.feature_fusion else np.maximum(e_a[q], 0.0)
                pre.append(np.maximum(BF @ node + h_f[q] @ W[f"W_F_self_{l}"], 0.0))
            h_f = pre if out_layer else norm(pre, f"bn_F_{l}")

        if cfg.structure_encoder and not out_layer:
            i_s = h_ff if cfg.feature_fusion else e_s

        if cfg.graph_encoder and not out_layer:
            st = bns[f"bn_G_{l}"]
            r = np.maximum(e_g, 0.0)
            if mode == "train":
                h_g = bn_train(r, st.gamma.data, st.beta.data, st.eps)
            else:
                h_g = bn_infer(r, st.gamma.data, st.beta.data,
                               st.running_mean, st.running_var, st.eps)

        if out_layer:
            for q in range(nq):
                logits = h_ff[q] @ W["w_out"] + W["b_out"]
                zs[q] = 1.0 / (1.0 + np.exp(-logits))
    return zs
