"""Graph convolution with a learnable adjacency, the six-layer GCN block and
the position-normalization (PONO) gate.

All layers run in float64. ``record``/``backward`` give explicit reverse-mode
access to a single layer, which is what the gradient tests use; the full model
just relies on autograd.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

DTYPE = torch.float64
ACTIVATIONS = ("tanh", "identity")
PONO_VARIANTS = ("standard", "as_printed")


class LayerShapeError(ValueError):
    pass


class GradientStateError(RuntimeError):
    pass


def uniform(rng: np.random.Generator, shape, bound: float) -> torch.Tensor:
    return torch.from_numpy(rng.uniform(-bound, bound, size=shape))


def graph_conv(H: torch.Tensor, A: torch.Tensor, W: torch.Tensor, activation: str = "tanh") -> torch.Tensor:
    """sigma(A @ H @ W) over the last two axes of H ([..., N, F_in])."""
    if H.shape[-2] != A.shape[-1] or A.shape[-2] != A.shape[-1]:
        raise LayerShapeError(f"adjacency {tuple(A.shape)} does not fit {H.shape[-2]} nodes")
    if H.shape[-1] != W.shape[0]:
        raise LayerShapeError(f"weight {tuple(W.shape)} does not fit {H.shape[-1]} input features")
    out = A @ H @ W
    if activation == "tanh":
        return torch.tanh(out)
    if activation == "identity":
        return out
    raise ValueError(f"unknown activation {activation!r}")


def pono(concat: torch.Tensor, epsilon: float = 1e-5, variant: str = "standard") -> torch.Tensor:
    """Split ``concat`` ([..., 2N, F]) into halves a, b along the node axis,
    normalize each feature column of a over its N rows, gate with sigmoid(b)."""
    if concat.shape[-2] % 2:
        raise LayerShapeError(f"PONO needs an even row count, got {concat.shape[-2]}")
    a, b = torch.chunk(concat, 2, dim=-2)
    mu = a.mean(dim=-2, keepdim=True)
    var = ((a - mu) ** 2).mean(dim=-2, keepdim=True)
    # clamp keeps the sqrt gradient finite on constant columns
    s = torch.sqrt(var.clamp_min(1e-300))
    if variant == "standard":
        a = (a - mu) / (s + epsilon)
    elif variant == "as_printed":
        a = a - mu / (s + epsilon)
    else:
        raise ValueError(f"unknown PONO variant {variant!r}")
    return a * torch.sigmoid(b)


class Recordable:
    """Mixin: ``record`` runs forward and keeps the graph, ``backward`` returns
    gradients of <upstream, output> for the recorded inputs and every parameter."""

    _tape = None

    def record(self, *inputs: torch.Tensor) -> torch.Tensor:
        leaves = [x.detach().clone().requires_grad_(True) for x in inputs]
        with torch.enable_grad():
            out = self(*leaves)
        self._tape = (leaves, out)
        return out.detach()

    def backward(self, upstream: torch.Tensor):
        if self._tape is None:
            raise GradientStateError("backward called before a recorded forward pass")
        leaves, out = self._tape
        named = list(self.named_parameters())
        grads = torch.autograd.grad(out, leaves + [p for _, p in named], upstream,
                                    allow_unused=True, retain_graph=True)
        grads = [torch.zeros_like(t) if g is None else g
                 for t, g in zip(leaves + [p for _, p in named], grads)]
        n = len(leaves)
        return grads[:n], {name: g for (name, _), g in zip(named, grads[n:])}


class GraphConv(Recordable, nn.Module):
    def __init__(self, n_nodes: int, f_in: int, f_out: int, activation: str = "tanh",
                 rng: np.random.Generator | None = None):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.activation = activation
        # near-identity adjacency keeps early tanh activations in the linear range
        self.A = nn.Parameter(torch.eye(n_nodes, dtype=DTYPE) + uniform(rng, (n_nodes, n_nodes), 0.01))
        self.W = nn.Parameter(uniform(rng, (f_in, f_out), 1.0 / np.sqrt(f_in)))

    def forward(self, H):
        return graph_conv(H, self.A, self.W, self.activation)


class GcnBlock(Recordable, nn.Module):
    def __init__(self, n_nodes: int, width: int, n_layers: int = 6, activation: str = "tanh",
                 rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.layers = nn.ModuleList(
            GraphConv(n_nodes, width, width, activation, rng) for _ in range(n_layers))

    def forward(self, H):
        for layer in self.layers:
            H = layer(H)
        return H


class Pono(Recordable, nn.Module):
    def __init__(self, epsilon: float = 1e-5, variant: str = "standard"):
        super().__init__()
        if not epsilon > 0:
            raise ValueError("PONO epsilon must be positive")
        if variant not in PONO_VARIANTS:
            raise ValueError(f"unknown PONO variant {variant!r}")
        self.epsilon = epsilon
        self.variant = variant

    def forward(self, concat):
        return pono(concat, self.epsilon, self.variant)
