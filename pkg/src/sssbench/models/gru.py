"""GruRec: single-layer gated recurrent scorer with backpropagation through time."""

from __future__ import annotations

import numpy as np

from sssbench.models.base import (
    ForwardCache,
    ModelConfig,
    NeuralModel,
    check_inputs,
    scatter_rows,
    sigmoid,
    uniform_init,
)

GATES = ("z", "r", "h")


def init_gru_params(config: ModelConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(config.seed)
    d, dt = config.d, np.dtype(config.dtype)
    params = {"item_embed": uniform_init(rng, (config.num_items + 1, d), d, dt)}
    params["item_embed"][0] = 0.0
    for g in GATES:
        params[f"U_{g}"] = uniform_init(rng, (d, d), d, dt)
        params[f"W_{g}"] = uniform_init(rng, (d, d), d, dt)
        params[f"b_{g}"] = np.zeros(d, dtype=dt)
    return params


def gru_forward(params, inputs, positions_needed: str = "last"):
    """Recurrence over embedded items; padded steps carry the state unchanged.

    z = sigmoid(x U_z + h W_z + b_z), r = sigmoid(x U_r + h W_r + b_r),
    cand = tanh(x U_h + (r * h) W_h + b_h), h' = (1 - z) * h + z * cand.
    """
    if positions_needed not in ("last", "all"):
        raise ValueError("positions_needed must be 'last' or 'all'")
    inputs = check_inputs(inputs)
    bsz, n = inputs.shape
    emb = params["item_embed"]
    d = emb.shape[1]
    x = emb[inputs]
    mask = (inputs != 0)[..., None]

    # input projections for all steps at once
    xz = x @ params["U_z"] + params["b_z"]
    xr = x @ params["U_r"] + params["b_r"]
    xh = x @ params["U_h"] + params["b_h"]

    h = np.zeros((bsz, d), dtype=emb.dtype)
    states = np.empty((bsz, n, d), dtype=emb.dtype)
    prev = np.empty_like(states)
    zs, rs, cands = np.empty_like(states), np.empty_like(states), np.empty_like(states)
    for t in range(n):
        prev[:, t] = h
        z = sigmoid(xz[:, t] + h @ params["W_z"])
        r = sigmoid(xr[:, t] + h @ params["W_r"])
        cand = np.tanh(xh[:, t] + (r * h) @ params["W_h"])
        h = np.where(mask[:, t], (1.0 - z) * h + z * cand, h)
        zs[:, t], rs[:, t], cands[:, t] = z, r, cand
        states[:, t] = h

    cache = ForwardCache(
        "gru", inputs, positions_needed,
        dict(x=x, mask=mask, prev=prev, z=zs, r=rs, cand=cands, states=states),
    )
    hidden = h if positions_needed == "last" else states
    return hidden, cache


def gru_backward(params, cache: ForwardCache, grad_hidden: np.ndarray) -> dict[str, np.ndarray]:
    if cache.kind != "gru":
        raise ValueError("cache was not produced by gru_forward")
    inputs = cache.inputs
    bsz, n = inputs.shape
    d = params["item_embed"].shape[1]
    expected = (bsz, d) if cache.positions == "last" else (bsz, n, d)
    if grad_hidden.shape != expected:
        raise ValueError(f"upstream gradient shape {grad_hidden.shape} != {expected}")

    a = cache.acts
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    dxz = np.zeros((bsz, n, d), dtype=grad_hidden.dtype)
    dxr = np.zeros_like(dxz)
    dxh = np.zeros_like(dxz)
    dh = np.zeros((bsz, d), dtype=grad_hidden.dtype)
    if cache.positions == "last":
        dh += grad_hidden
    for t in reversed(range(n)):
        if cache.positions == "all":
            dh = dh + grad_hidden[:, t]
        m = a["mask"][:, t]
        h, z, r, cand = a["prev"][:, t], a["z"][:, t], a["r"][:, t], a["cand"][:, t]
        dnew = dh * m
        dz = dnew * (cand - h)
        dcand = dnew * z
        dprev = dnew * (1.0 - z) + dh * ~m

        dah = dcand * (1.0 - cand * cand)
        grads["W_h"] += (r * h).T @ dah
        drh = dah @ params["W_h"].T
        dr = drh * h
        dprev += drh * r

        daz = dz * z * (1.0 - z)
        dar = dr * r * (1.0 - r)
        grads["W_z"] += h.T @ daz
        grads["W_r"] += h.T @ dar
        dprev += daz @ params["W_z"].T + dar @ params["W_r"].T

        dxz[:, t], dxr[:, t], dxh[:, t] = daz, dar, dah
        dh = dprev

    x = a["x"]
    dx = np.zeros_like(x)
    for g, dpre in (("z", dxz), ("r", dxr), ("h", dxh)):
        grads[f"U_{g}"] = x.reshape(-1, x.shape[-1]).T @ dpre.reshape(-1, dpre.shape[-1])
        grads[f"b_{g}"] = dpre.sum(axis=(0, 1))
        dx += dpre @ params[f"U_{g}"].T
    dx *= a["mask"]
    grads["item_embed"] = scatter_rows(params["item_embed"].shape[0], inputs, dx)
    grads["item_embed"][0] = 0.0
    return grads


class GruRec(NeuralModel):
    kind = "gru"

    @staticmethod
    def init_params(config: ModelConfig):
        return init_gru_params(config)

    def forward(self, inputs, positions="last"):
        return gru_forward(self.params, inputs, positions)

    def backward(self, cache, grad_hidden):
        return gru_backward(self.params, cache, grad_hidden)
