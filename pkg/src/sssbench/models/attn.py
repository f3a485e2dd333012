"""AttnRec: causal self-attention scorer with hand-written backward pass.

Per block: single- or multi-head scaled dot-product attention without an
output projection, residual + layer norm, ReLU feed-forward, residual +
layer norm. Padding positions are zeroed after the embedding and after
every block, and real queries never attend to padding keys.
"""

from __future__ import annotations

import numpy as np

from sssbench.models.base import (
    ForwardCache,
    ModelConfig,
    NeuralModel,
    check_inputs,
    layer_norm,
    layer_norm_backward,
    scatter_rows,
    uniform_init,
)

BLOCK_PARAMS = ("W_Q", "W_K", "W_V", "W_1", "b_1", "W_2", "b_2", "ln1_g", "ln1_b", "ln2_g", "ln2_b")


def init_attn_params(config: ModelConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(config.seed)
    d, dff, dt = config.d, config.d_ff, np.dtype(config.dtype)
    params = {
        "item_embed": uniform_init(rng, (config.num_items + 1, d), d, dt),
        "pos_embed": uniform_init(rng, (config.max_len, d), d, dt),
    }
    params["item_embed"][0] = 0.0
    for b in range(config.num_blocks):
        p = f"blocks.{b}."
        for name in ("W_Q", "W_K", "W_V"):
            params[p + name] = uniform_init(rng, (d, d), d, dt)
        params[p + "W_1"] = uniform_init(rng, (d, dff), d, dt)
        params[p + "b_1"] = np.zeros(dff, dtype=dt)
        params[p + "W_2"] = uniform_init(rng, (dff, d), d, dt)
        params[p + "b_2"] = np.zeros(d, dtype=dt)
        params[p + "ln1_g"] = np.ones(d, dtype=dt)
        params[p + "ln1_b"] = np.zeros(d, dtype=dt)
        params[p + "ln2_g"] = np.ones(d, dtype=dt)
        params[p + "ln2_b"] = np.zeros(d, dtype=dt)
    return params


def num_blocks(params) -> int:
    return sum(1 for k in params if k.endswith(".W_Q"))


def _split_heads(x, h):
    b, n, d = x.shape
    return x.reshape(b, n, h, d // h).transpose(0, 2, 1, 3)


def _outer(a, b):
    """sum over batch and positions of a_i^T b_i, as one 2-D product."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def _merge_heads(x):
    b, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


def attention_mask(mask: np.ndarray) -> np.ndarray:
    """allowed[b, i, j]: query i may read key j (causal, real keys, diagonal always)."""
    n = mask.shape[1]
    causal = np.tril(np.ones((n, n), dtype=bool))
    allowed = causal[None] & mask[:, None, :]
    allowed |= np.eye(n, dtype=bool)[None]
    return allowed


def _dense(x, w):
    return (x.reshape(-1, x.shape[-1]) @ w).reshape(*x.shape[:-1], w.shape[-1])


def attn_forward(params, inputs, positions_needed: str = "last", num_heads: int = 1):
    """Run the attention stack over left-padded ``inputs`` (batch x length).

    Returns hidden states for the last position (batch x d) or for all
    positions (batch x length x d), plus the cache needed by the backward pass.
    Rows shorter than ``max_len`` are treated as right-aligned. In ``last``
    mode the final block only computes the last query row.
    """
    if positions_needed not in ("last", "all"):
        raise ValueError("positions_needed must be 'last' or 'all'")
    max_len = params["pos_embed"].shape[0]
    inputs = check_inputs(inputs, max_len)
    _, n = inputs.shape
    mask = inputs != 0
    fmask = mask[..., None].astype(params["item_embed"].dtype)
    allowed = attention_mask(mask)[:, None]
    x = (params["item_embed"][inputs] + params["pos_embed"][max_len - n :][None]) * fmask

    cache = ForwardCache("attn", inputs, positions_needed, {"fmask": fmask, "allowed": allowed})
    layers = []
    nb = num_blocks(params)
    for b in range(nb):
        p = f"blocks.{b}."
        rows = slice(n - 1, n) if (positions_needed == "last" and b == nb - 1) else slice(0, n)
        xq = x[:, rows]
        q = _split_heads(_dense(xq, params[p + "W_Q"]), num_heads)
        k = _split_heads(_dense(x, params[p + "W_K"]), num_heads)
        v = _split_heads(_dense(x, params[p + "W_V"]), num_heads)
        scale = 1.0 / np.sqrt(q.shape[-1])
        logits = np.where(allowed[:, :, rows], (q @ k.transpose(0, 1, 3, 2)) * scale, -np.inf)
        logits -= logits.max(axis=-1, keepdims=True)
        weights = np.exp(logits)
        weights /= weights.sum(axis=-1, keepdims=True)
        attended = _merge_heads(weights @ v)
        h1, ln1 = layer_norm(xq + attended, params[p + "ln1_g"], params[p + "ln1_b"])
        pre = _dense(h1, params[p + "W_1"]) + params[p + "b_1"]
        act = np.maximum(pre, 0.0)
        ff = _dense(act, params[p + "W_2"]) + params[p + "b_2"]
        h2, ln2 = layer_norm(h1 + ff, params[p + "ln2_g"], params[p + "ln2_b"])
        layers.append(
            dict(rows=rows, x=x, q=q, k=k, v=v, scale=scale, weights=weights,
                 ln1=ln1, h1=h1, pre=pre, act=act, ln2=ln2)
        )
        x = h2 * fmask[:, rows]
    cache.acts["layers"] = layers
    cache.acts["num_heads"] = num_heads
    hidden = x[:, -1] if positions_needed == "last" else x
    return hidden, cache


def attn_backward(params, cache: ForwardCache, grad_hidden: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradients of <grad_hidden, hidden> with respect to every parameter."""
    if cache.kind != "attn":
        raise ValueError("cache was not produced by attn_forward")
    inputs = cache.inputs
    bsz, n = inputs.shape
    d = params["item_embed"].shape[1]
    expected = (bsz, d) if cache.positions == "last" else (bsz, n, d)
    if grad_hidden.shape != expected:
        raise ValueError(f"upstream gradient shape {grad_hidden.shape} != {expected}")

    grads = {k: np.zeros_like(v) for k, v in params.items()}
    fmask = cache.acts["fmask"]
    allowed = cache.acts["allowed"]
    heads = cache.acts["num_heads"]
    # gradient w.r.t. the output rows of the current block
    dout = grad_hidden[:, None, :] if cache.positions == "last" else grad_hidden

    for b in reversed(range(len(cache.acts["layers"]))):
        p = f"blocks.{b}."
        a = cache.acts["layers"][b]
        rows = a["rows"]
        dh2 = dout * fmask[:, rows]
        dr2, grads[p + "ln2_g"], grads[p + "ln2_b"] = layer_norm_backward(dh2, params[p + "ln2_g"], a["ln2"])
        grads[p + "W_2"] = _outer(a["act"], dr2)
        grads[p + "b_2"] = dr2.sum(axis=(0, 1))
        dpre = _dense(dr2, params[p + "W_2"].T) * (a["pre"] > 0)
        grads[p + "W_1"] = _outer(a["h1"], dpre)
        grads[p + "b_1"] = dpre.sum(axis=(0, 1))
        dh1 = dr2 + _dense(dpre, params[p + "W_1"].T)
        dr1, grads[p + "ln1_g"], grads[p + "ln1_b"] = layer_norm_backward(dh1, params[p + "ln1_g"], a["ln1"])

        dattended = _split_heads(dr1, heads)
        w = a["weights"]
        dw = dattended @ a["v"].transpose(0, 1, 3, 2)
        dv = w.transpose(0, 1, 3, 2) @ dattended
        dlogits = w * (dw - (dw * w).sum(axis=-1, keepdims=True))
        dlogits = np.where(allowed[:, :, rows], dlogits, 0.0) * a["scale"]
        dq = dlogits @ a["k"]
        dk = dlogits.transpose(0, 1, 3, 2) @ a["q"]
        dq, dk, dv = _merge_heads(dq), _merge_heads(dk), _merge_heads(dv)

        x = a["x"]
        grads[p + "W_Q"] = _outer(x[:, rows], dq)
        grads[p + "W_K"] = _outer(x, dk)
        grads[p + "W_V"] = _outer(x, dv)
        dx = _dense(dk, params[p + "W_K"].T) + _dense(dv, params[p + "W_V"].T)
        dx[:, rows] += dr1 + _dense(dq, params[p + "W_Q"].T)
        dout = dx

    dx = dout * fmask
    max_len = params["pos_embed"].shape[0]
    grads["pos_embed"][max_len - n :] = dx.sum(axis=0)
    grads["item_embed"] = scatter_rows(params["item_embed"].shape[0], inputs, dx)
    grads["item_embed"][0] = 0.0
    return grads


class AttnRec(NeuralModel):
    kind = "attn"

    @staticmethod
    def init_params(config: ModelConfig):
        return init_attn_params(config)

    def forward(self, inputs, positions="last"):
        return attn_forward(self.params, inputs, positions, self.config.num_heads)

    def backward(self, cache, grad_hidden):
        return attn_backward(self.params, cache, grad_hidden)
