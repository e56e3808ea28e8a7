"""Straight numpy re-statement of the model's loss, by default in extended precision.

It shares no code with the torch path and serves as the finite-difference
oracle in gradient checks: with ~19 significant digits the central difference
at eps=1e-5 resolves gradients far below what float64 totals allow.

Any single parameter may carry one extra leading axis of length L (a stack of
perturbed copies); the loss is then returned as an array of L values.
"""

from __future__ import annotations

import numpy as np

from .model import ModelConfig

LD = np.longdouble
TERMS = ("fine", "coarse", "kl")
# parameter-name prefix feeding each loss term
TERM_PREFIX = {"fine": "fine.", "coarse": "coarse.", "kl": "encoder."}


def term_of(name: str) -> str | None:
    """The only loss term that depends on parameter ``name`` (None if unknown)."""
    return next((t for t, pre in TERM_PREFIX.items() if name.startswith(pre)), None)


def _lift(p, core_ndim, batch_ndim):
    """Insert broadcast axes after the stack axis of a stacked parameter."""
    if p.ndim == core_ndim:
        return p
    return p.reshape(p.shape[:1] + (1,) * batch_ndim + p.shape[1:])


def _conv(H, A, W, act):
    out = _lift(A, 2, H.ndim - 2) @ H
    out = out @ _lift(W, 2, out.ndim - 2)
    return np.tanh(out) if act == "tanh" else out


def _pono(concat, eps, variant):
    n = concat.shape[-2] // 2
    a, b = concat[..., :n, :], concat[..., n:, :]
    mu = a.mean(axis=-2, keepdims=True)
    s = np.sqrt(((a - mu) ** 2).mean(axis=-2, keepdims=True))
    a = (a - mu) / (s + eps) if variant == "standard" else a - mu / (s + eps)
    return a / (1 + np.exp(-b))


def _elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0)))


def _mlp(P, prefix, x, final_linear=False):
    h = x @ _lift(P[prefix + ".w1"], 2, x.ndim - 2)
    h = _elu(h + _lift(P[prefix + ".b1"], 1, h.ndim - 1))
    out = h @ _lift(P[prefix + ".w2"], 2, h.ndim - 2)
    out = out + _lift(P[prefix + ".b2"], 1, out.ndim - 1)
    return out if final_linear else _elu(out)


def _stage(P, cfg, prefix, H, i):
    G = H
    for l in range(6):
        G = _conv(G, P[f"{prefix}.blocks.{i}.layers.{l}.A"], P[f"{prefix}.blocks.{i}.layers.{l}.W"], "tanh")
    if cfg.use_pono:
        concat = np.concatenate(np.broadcast_arrays(H, G), axis=-2)
        return _pono(concat, H.dtype.type(cfg.pono_epsilon), cfg.pono_variant)
    return H + G


def reference_loss(params: dict[str, np.ndarray], cfg: ModelConfig, x0, y0, x1=None, y1=None,
                   noise=None, terms=TERMS, dtype=LD):
    """Negative-ELBO loss (batch mean).

    ``x1``/``y1`` are the already coarsened sequences for a frozen partition.
    ``noise`` is unused by the loss itself; grouping is taken as given.
    ``terms`` selects which of the fine, coarse and KL parts are summed.
    """
    prefixes = tuple(TERM_PREFIX[t] for t in terms)
    P = {k: np.asarray(v, dtype=dtype) for k, v in params.items() if k.startswith(prefixes)}
    x0 = np.asarray(x0, dtype=dtype)
    y0 = np.asarray(y0, dtype=dtype)
    B = x0.shape[0]
    c = cfg.chunk
    total = dtype(0)
    if "fine" in terms:
        total = total + _fine(P, cfg, x0, y0, c, dtype) / B
    if cfg.coarse_branch and "coarse" in terms:
        x1, y1 = np.asarray(x1, dtype=dtype), np.asarray(y1, dtype=dtype)
        total = total + _coarse(P, cfg, x1, y1, c, dtype) / B
    if cfg.learns_grouping and "kl" in terms:
        total = total + dtype(cfg.kl_weight) * _kl(P, cfg, x0, dtype) / B
    return total


def _sum3(x):
    return x.sum(axis=(-3, -2, -1))


def _fine(P, cfg, x0, y0, c, dtype):
    H = _conv(np.swapaxes(x0, -1, -2), P["fine.start.A"], P["fine.start.W"], "tanh")
    prev = x0[:, -c:, :]
    chunks = []
    for i in range(cfg.n_chunks):
        H = _stage(P, cfg, "fine", H, i)
        end = _conv(H, P[f"fine.ends.{i}.A"], P[f"fine.ends.{i}.W"], "identity")[..., -c:]
        prev = np.swapaxes(end, -1, -2) + prev
        chunks.append(prev)
    y0_hat = np.concatenate(np.broadcast_arrays(*chunks), axis=-2)
    return _sum3((y0 - y0_hat) ** 2) / (2 * dtype(cfg.sigma0) ** 2)


def _coarse(P, cfg, x1, y1, c, dtype):
    H = _conv(np.swapaxes(x1, -1, -2), P["coarse.start.A"], P["coarse.start.W"], "tanh")
    H = _stage(P, cfg, "coarse", H, 0)
    out = np.swapaxes(_conv(H, P["coarse.ends.0.A"], P["coarse.ends.0.W"], "identity"), -1, -2)
    y1_hat = out + np.tile(x1[:, -c:, :], (1, cfg.n_chunks, 1))
    return _sum3((y1 - y1_hat) ** 2) / (2 * dtype(cfg.sigma1) ** 2)


def _kl(P, cfg, x0, dtype):
    B = x0.shape[0]
    J, D, T = cfg.J, cfg.D, cfg.T
    r = np.swapaxes(x0.reshape(B, T, J, D), 1, 2).reshape(B, J, T * D)
    h1 = _mlp(P, "encoder.node_embed", r)
    e1 = _mlp(P, "encoder.edge_embed", _pairs(h1))
    mask = 1 - np.eye(J, dtype=dtype)
    h2 = _mlp(P, "encoder.node_update", (e1 * mask[..., None]).sum(axis=-3))
    logits = _mlp(P, "encoder.edge_logits", _pairs(h2), final_linear=True)
    logits = logits - logits.max(axis=-1, keepdims=True)
    q = np.exp(logits) / np.exp(logits).sum(axis=-1, keepdims=True)
    C = q.shape[-1]
    plogq = np.where(q > 0, q * np.log(np.where(q > 0, q, 1)), 0)
    return _sum3((plogq + q * np.log(dtype(C))).sum(-1) * mask)


def _pairs(h):
    J = h.shape[-2]
    send = np.broadcast_to(h[..., :, None, :], h.shape[:-2] + (J, J, h.shape[-1]))
    recv = np.broadcast_to(h[..., None, :, :], h.shape[:-2] + (J, J, h.shape[-1]))
    return np.concatenate([send, recv], axis=-1)
