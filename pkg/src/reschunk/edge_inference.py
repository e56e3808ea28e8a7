"""Per-sequence joint grouping: a fully connected message-passing encoder
produces edge logits, concrete (Gumbel-softmax) samples turn them into a
correlation matrix, and average-linkage clustering groups the joints."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .graph_layers import DTYPE, uniform

ON = 0  # edge class whose probability is read as the correlation weight
TIE_TOL = 1e-12


class EdgeDomainError(ValueError):
    pass


class PartitionShapeError(ValueError):
    pass


@dataclass
class EdgePosterior:
    logits: torch.Tensor  # [..., J, J, C], diagonal unused

    @property
    def probabilities(self) -> torch.Tensor:
        return torch.softmax(self.logits, dim=-1)

    @property
    def n_classes(self) -> int:
        return self.logits.shape[-1]


@dataclass
class JointPartition:
    group_id: list[int]

    def __post_init__(self):
        ids = [int(g) for g in self.group_id]
        if not ids:
            raise PartitionShapeError("partition needs at least one joint")
        if sorted(set(ids)) != list(range(max(ids) + 1)):
            raise PartitionShapeError(f"group ids {ids} are not a contiguous range from 0")
        self.group_id = ids

    @property
    def group_count(self) -> int:
        return max(self.group_id) + 1

    @property
    def groups(self) -> list[list[int]]:
        out = [[] for _ in range(self.group_count)]
        for j, g in enumerate(self.group_id):
            out[g].append(j)
        return out

    @classmethod
    def from_groups(cls, groups, J: int) -> "JointPartition":
        labels = [-1] * J
        for g, members in enumerate(groups):
            for j in members:
                labels[j] = g
        if -1 in labels:
            raise PartitionShapeError("groups do not cover every joint")
        return cls(canonical_labels(labels))

    @classmethod
    def singletons(cls, J: int) -> "JointPartition":
        return cls(list(range(J)))


def canonical_labels(labels) -> list[int]:
    mapping: dict = {}
    return [mapping.setdefault(lab, len(mapping)) for lab in labels]


# --- encoder -----------------------------------------------------------------

class Mlp(nn.Module):
    """Linear -> ELU -> Linear, with ELU on the output unless ``final_linear``."""

    def __init__(self, n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator,
                 final_linear: bool = False):
        super().__init__()
        self.final_linear = final_linear
        self.w1 = nn.Parameter(uniform(rng, (n_in, n_hidden), 1 / np.sqrt(n_in)))
        self.b1 = nn.Parameter(torch.zeros(n_hidden, dtype=DTYPE))
        self.w2 = nn.Parameter(uniform(rng, (n_hidden, n_out), 1 / np.sqrt(n_hidden)))
        self.b2 = nn.Parameter(torch.zeros(n_out, dtype=DTYPE))

    def forward(self, x):
        h = F.elu(x @ self.w1 + self.b1)
        out = h @ self.w2 + self.b2
        return out if self.final_linear else F.elu(out)


class EdgeEncoder(nn.Module):
    """Two rounds of node->edge->node->edge message passing on the complete
    graph without self loops. Node features are joint trajectories r_j, the
    T*D values of joint j over the observed frames."""

    def __init__(self, J: int, D: int, T: int, hidden: int = 256, n_classes: int = 2,
                 rng: np.random.Generator | None = None):
        super().__init__()
        if J < 2:
            raise EdgeDomainError("edge inference needs at least two joints")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.J, self.D = J, D
        self.node_embed = Mlp(T * D, hidden, hidden, rng)
        self.edge_embed = Mlp(2 * hidden, hidden, hidden, rng)
        self.node_update = Mlp(hidden, hidden, hidden, rng)
        self.edge_logits = Mlp(2 * hidden, hidden, n_classes, rng, final_linear=True)
        self.register_buffer("offdiag", 1.0 - torch.eye(J, dtype=DTYPE))

    def _pairs(self, h):
        J = h.shape[-2]
        senders = h.unsqueeze(-2).expand(*h.shape[:-2], J, J, h.shape[-1])    # h_i at [i, j]
        receivers = h.unsqueeze(-3).expand(*h.shape[:-2], J, J, h.shape[-1])  # h_j at [i, j]
        return torch.cat([senders, receivers], dim=-1)

    def forward(self, x0: torch.Tensor) -> EdgePosterior:
        *batch, T, K = x0.shape
        if K != self.J * self.D:
            raise EdgeDomainError(f"input has K={K}, encoder expects {self.J}x{self.D}")
        r = x0.reshape(*batch, T, self.J, self.D).transpose(-3, -2).reshape(*batch, self.J, T * self.D)
        h1 = self.node_embed(r)
        e1 = self.edge_embed(self._pairs(h1))
        incoming = (e1 * self.offdiag[..., None]).sum(dim=-3)  # sum over senders i != j
        h2 = self.node_update(incoming)
        logits = self.edge_logits(self._pairs(h2))
        return EdgePosterior(logits * self.offdiag[..., None])


def encode_edges(x0, encoder: EdgeEncoder) -> EdgePosterior:
    x0 = torch.as_tensor(x0, dtype=DTYPE)
    return encoder(x0)


# --- sampling ----------------------------------------------------------------

def gumbel_noise(rng: np.random.Generator, shape) -> torch.Tensor:
    return torch.from_numpy(rng.gumbel(size=shape))


def sample_edges(posterior: EdgePosterior | torch.Tensor, tau: float,
                 rng: np.random.Generator | None = None, mode: str = "train",
                 noise: torch.Tensor | None = None) -> torch.Tensor:
    """Concrete relaxation of the edge posterior.

    ``train`` adds Gumbel(0, 1) noise (fresh from ``rng`` unless ``noise`` is
    given) before the tempered softmax; ``infer`` uses the noise-free logits.
    """
    if not tau > 0:
        raise EdgeDomainError(f"temperature must be positive, got {tau}")
    logits = posterior.logits if isinstance(posterior, EdgePosterior) else posterior
    if mode == "train":
        if noise is None:
            if rng is None:
                raise EdgeDomainError("train-mode sampling needs an rng or explicit noise")
            noise = gumbel_noise(rng, tuple(logits.shape))
        logits = logits + noise.to(logits.dtype)
    elif mode != "infer":
        raise ValueError(f"unknown sampling mode {mode!r}")
    return torch.softmax(logits / tau, dim=-1)


def correlation_matrix(z) -> np.ndarray:
    """Symmetric [J, J] matrix of averaged "on" weights with a unit diagonal."""
    z = z.detach().cpu().numpy() if isinstance(z, torch.Tensor) else np.asarray(z, dtype=np.float64)
    on = z[..., ON]
    C = 0.5 * (on + np.swapaxes(on, -1, -2))
    idx = np.arange(C.shape[-1])
    C[..., idx, idx] = 1.0
    return C


# --- clustering --------------------------------------------------------------

def agglomerate(C, threshold: float = 0.5):
    """Average-linkage agglomeration on distances 1 - C.

    Merges while the closest pair of clusters is no farther than
    ``1 - threshold``. Clusters are named by their lowest joint; among pairs
    within ``TIE_TOL`` of the minimum distance the lexicographically smallest
    (lowest, lowest) pair wins. Returns the partition and the list of
    ``(cluster_a, cluster_b, distance)`` merges in order.
    """
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise EdgeDomainError("correlation matrix must be square")
    if np.max(np.abs(C - C.T), initial=0.0) > 1e-9:
        raise EdgeDomainError("correlation matrix is not symmetric")
    J = C.shape[0]
    dist = 1.0 - C
    # running sums of pairwise distances between clusters (Lance-Williams for average linkage)
    sums = dist.copy()
    members = {j: [j] for j in range(J)}
    stop = 1.0 - threshold
    merges = []
    while len(members) > 1:
        keys = sorted(members)
        best = None
        cands = []
        for ai, a in enumerate(keys):
            for b in keys[ai + 1:]:
                d = sums[a, b] / (len(members[a]) * len(members[b]))
                cands.append((a, b, d))
                if best is None or d < best:
                    best = d
        if best > stop + TIE_TOL:
            break
        a, b, d = next(c for c in cands if c[2] <= best + TIE_TOL)
        sums[a, :] += sums[b, :]
        sums[:, a] += sums[:, b]
        members[a] = sorted(members[a] + members.pop(b))
        merges.append((a, b, d))
    labels = [0] * J
    for g, key in enumerate(sorted(members)):
        for j in members[key]:
            labels[j] = g
    return JointPartition(labels), merges


def group_joints(C, threshold: float = 0.5) -> JointPartition:
    return agglomerate(C, threshold)[0]


def coarsen_matrix(partition: JointPartition) -> np.ndarray:
    """[J, J] row-stochastic averaging operator of the partition."""
    J = len(partition.group_id)
    M = np.zeros((J, J))
    for members in partition.groups:
        M[np.ix_(members, members)] = 1.0 / len(members)
    return M


def coarsen(seq, partition: JointPartition, D: int) -> np.ndarray:
    """Replace every joint's D-vector by its group mean, frame by frame."""
    seq = np.asarray(seq, dtype=np.float64)
    J = len(partition.group_id)
    if seq.shape[-1] != J * D:
        raise PartitionShapeError(f"sequence has {seq.shape[-1]} columns, partition covers {J}x{D}")
    x = seq.reshape(*seq.shape[:-1], J, D)
    out = x.copy()
    for members in partition.groups:
        vals = x[..., members, :]
        # mean as offset from the first member: exact when members already agree
        ref = vals[..., :1, :]
        out[..., members, :] = ref + (vals - ref).sum(axis=-2, keepdims=True) / len(members)
    return out.reshape(seq.shape)


def format_partitions(partitions, labels=None) -> str:
    """Diagnostic dump, one line per window: optional label, then the group ids."""
    lines = []
    for k, P in enumerate(partitions):
        ids = " ".join(str(g) for g in P.group_id)
        lines.append(f"{labels[k]} {ids}" if labels is not None else ids)
    return "".join(line + "\n" for line in lines)
