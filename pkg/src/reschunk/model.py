"""The two-scale residual-chunk predictor.

Fine branch: start layer S, then per chunk a GCN block whose input and output
are concatenated and PONO-gated, and an end layer whose last c columns are the
residual added to the previous chunk. Coarse branch: the same pieces once, on
the group-averaged sequence, with one global input-to-output residual.
"""

from __future__ import annotations

import dataclasses
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .edge_inference import (EdgeEncoder, EdgePosterior, JointPartition, coarsen,
                             correlation_matrix, gumbel_noise, group_joints, sample_edges)
from .graph_layers import DTYPE, GcnBlock, GraphConv, Pono, PONO_VARIANTS
from .motion_data import ConfigurationError

GROUPING_MODES = ("learned", "fixed", "none")
CHECKPOINT_MAGIC = "RESCHUNK-CHECKPOINT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class ModelConfig:
    J: int
    D: int
    T: int
    p: int
    n_chunks: int = 6
    F: int = 256
    tau: float = 0.5
    sigma0: float = 1.0
    sigma1: float = 1.0
    kl_weight: float = 1.0
    pono_variant: str = "standard"
    pono_epsilon: float = 1e-5
    use_pono: bool = True
    grouping_threshold: float = 0.5
    encoder_hidden: int = 256
    edge_classes: int = 2
    coarse_branch: bool = True
    grouping: str = "learned"
    fixed_partition: list[int] | None = None
    inference_z: str = "posterior"  # or "prior": uniform edge distribution at inference

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("J", "D", "T", "p", "n_chunks", "F", "encoder_hidden", "edge_classes"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.p % self.n_chunks:
            raise ConfigurationError(f"p={self.p} is not divisible by n_chunks={self.n_chunks}")
        if self.T < self.chunk:
            raise ConfigurationError(f"T={self.T} is shorter than one chunk ({self.chunk} frames)")
        if not (self.tau > 0 and self.sigma0 > 0 and self.sigma1 > 0):
            raise ConfigurationError("tau, sigma0 and sigma1 must be positive")
        if self.pono_variant not in PONO_VARIANTS:
            raise ConfigurationError(f"unknown pono_variant {self.pono_variant!r}")
        if self.grouping not in GROUPING_MODES:
            raise ConfigurationError(f"unknown grouping {self.grouping!r}")
        if self.inference_z not in ("posterior", "prior"):
            raise ConfigurationError(f"unknown inference_z {self.inference_z!r}")
        if self.grouping == "learned" and self.coarse_branch and self.J < 2:
            raise ConfigurationError("learned grouping needs J >= 2")
        if self.grouping == "fixed":
            if self.fixed_partition is None or len(self.fixed_partition) != self.J:
                raise ConfigurationError("fixed grouping needs a fixed_partition of length J")

    @property
    def K(self) -> int:
        return self.J * self.D

    @property
    def chunk(self) -> int:
        return self.p // self.n_chunks

    @property
    def learns_grouping(self) -> bool:
        return self.coarse_branch and self.grouping == "learned"

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class ForwardResult:
    y0_hat: torch.Tensor            # [B, p, K]
    y1_hat: torch.Tensor | None     # [B, p, K]
    x1: np.ndarray | None           # [B, T, K]
    partitions: list[JointPartition]
    posterior: EdgePosterior | None
    chunk_boundaries: list[range]
    chunks: list[torch.Tensor] = field(default_factory=list)

    @property
    def partition(self) -> JointPartition:
        return self.partitions[0]


def component_rng(seed: int, name: str) -> np.random.Generator:
    """Independent stream per named component, stable across model variants."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(zlib.crc32(name.encode()),)))


class Branch(nn.Module):
    def __init__(self, cfg: ModelConfig, n_blocks: int, out_frames: int, rng):
        super().__init__()
        K, F = cfg.K, cfg.F
        self.start = GraphConv(K, cfg.T, F, "tanh", rng)
        self.blocks = nn.ModuleList(GcnBlock(K, F, 6, "tanh", rng) for _ in range(n_blocks))
        self.ends = nn.ModuleList(GraphConv(K, F, out_frames, "identity", rng) for _ in range(n_blocks))
        # residual outputs start at zero: the untrained model repeats the last chunk
        for end in self.ends:
            nn.init.zeros_(end.W)
        self.pono = Pono(cfg.pono_epsilon, cfg.pono_variant)
        self.use_pono = cfg.use_pono

    def stage(self, H, i):
        G = self.blocks[i](H)
        if self.use_pono:
            return self.pono(torch.cat([H, G], dim=-2))
        return H + G


class ResChunk(nn.Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.fine = Branch(cfg, cfg.n_chunks, cfg.T, component_rng(seed, "fine"))
        self.coarse = Branch(cfg, 1, cfg.p, component_rng(seed, "coarse")) if cfg.coarse_branch else None
        if cfg.learns_grouping:
            self.encoder = EdgeEncoder(cfg.J, cfg.D, cfg.T, cfg.encoder_hidden, cfg.edge_classes,
                                       component_rng(seed, "encoder"))
        else:
            self.encoder = None
        # data normalization, per coordinate; identity until fitted
        self.register_buffer("norm_mean", torch.zeros(cfg.K, dtype=DTYPE))
        self.register_buffer("norm_std", torch.ones(cfg.K, dtype=DTYPE))

    # --- normalization ---
    def set_normalizer(self, mean, std):
        self.norm_mean.copy_(torch.as_tensor(mean, dtype=DTYPE))
        self.norm_std.copy_(torch.as_tensor(std, dtype=DTYPE))

    def normalize(self, x):
        return (np.asarray(x, dtype=np.float64) - self.norm_mean.numpy()) / self.norm_std.numpy()

    def denormalize(self, x):
        return np.asarray(x, dtype=np.float64) * self.norm_std.numpy() + self.norm_mean.numpy()

    def chunk_boundaries(self) -> list[range]:
        c = self.cfg.chunk
        return [range(i * c, (i + 1) * c) for i in range(self.cfg.n_chunks)]

    # --- forward ---
    def forward(self, x0, rng: np.random.Generator | None = None, mode: str = "train",
                noise: torch.Tensor | None = None,
                partitions: list[JointPartition] | None = None) -> ForwardResult:
        """Run both branches on normalized inputs ``x0`` ([T, K] or [B, T, K]).

        ``noise`` freezes the Gumbel draws and ``partitions`` freezes the
        grouping (both used by gradient checking).
        """
        cfg = self.cfg
        x0 = np.asarray(x0.detach().numpy() if isinstance(x0, torch.Tensor) else x0, dtype=np.float64)
        if x0.ndim == 2:
            x0 = x0[None]
        if x0.shape[1:] != (cfg.T, cfg.K):
            raise ConfigurationError(f"x0 has shape {x0.shape[1:]}, model expects ({cfg.T}, {cfg.K})")
        B = x0.shape[0]
        xt = torch.from_numpy(x0)

        y0_hat, chunks = self._fine(xt)

        posterior = None
        y1_hat = x1 = None
        if cfg.coarse_branch:
            if cfg.grouping == "learned":
                posterior = self.encoder(xt)
                if partitions is None:
                    partitions = self._group(posterior, rng, mode, noise)
            elif cfg.grouping == "fixed":
                partitions = [JointPartition(list(cfg.fixed_partition))] * B
            else:
                partitions = [JointPartition.singletons(cfg.J)] * B
            x1 = np.stack([coarsen(x, P, cfg.D) for x, P in zip(x0, partitions)])
            y1_hat = self._coarse(torch.from_numpy(x1))
        elif partitions is None:
            partitions = [JointPartition.singletons(cfg.J)] * B
        return ForwardResult(y0_hat, y1_hat, x1, list(partitions), posterior,
                             self.chunk_boundaries(), chunks)

    def _fine(self, xt):
        cfg, br = self.cfg, self.fine
        c = cfg.chunk
        H = br.start(xt.transpose(-1, -2))
        prev = xt[:, -c:, :]
        chunks = []
        for i in range(cfg.n_chunks):
            H = br.stage(H, i)
            end = br.ends[i](H)[..., -c:].transpose(-1, -2)
            prev = end + prev
            chunks.append(prev)
        return torch.cat(chunks, dim=1), chunks

    def _coarse(self, x1):
        cfg, br = self.cfg, self.coarse
        H = br.stage(br.start(x1.transpose(-1, -2)), 0)
        out = br.ends[0](H).transpose(-1, -2)
        residual = x1[:, -cfg.chunk:, :].repeat(1, cfg.n_chunks, 1)
        return out + residual

    def _group(self, posterior, rng, mode, noise):
        cfg = self.cfg
        logits = posterior.logits.detach()
        if mode == "infer" and cfg.inference_z == "prior":
            logits = torch.zeros_like(logits)
        if mode == "train" and noise is None:
            if rng is None:
                raise ConfigurationError("train-mode forward needs an rng for Gumbel noise")
            noise = gumbel_noise(rng, tuple(logits.shape))
        z = sample_edges(logits, cfg.tau, mode=mode, noise=noise)
        C = correlation_matrix(z)
        return [group_joints(Ci, cfg.grouping_threshold) for Ci in C]

    # --- inference ---
    @torch.no_grad()
    def predict(self, x0):
        """Deterministic prediction from raw ``x0`` ([T, K] or [B, T, K]).
        Returns raw-unit predictions and the inferred partitions."""
        x0 = np.asarray(x0, dtype=np.float64)
        single = x0.ndim == 2
        res = self.forward(self.normalize(x0), mode="infer")
        y = self.denormalize(res.y0_hat.numpy())
        return (y[0], res.partitions[0]) if single else (y, res.partitions)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def predict(x0, model: ResChunk):
    return model.predict(x0)


def closed_form_parameter_count(cfg: ModelConfig) -> int:
    K, F, T, p = cfg.K, cfg.F, cfg.T, cfg.p
    conv = lambda f_in, f_out: K * K + f_in * f_out  # noqa: E731
    fine = conv(T, F) + cfg.n_chunks * (6 * conv(F, F) + conv(F, T))
    total = fine
    if cfg.coarse_branch:
        total += conv(T, F) + 6 * conv(F, F) + conv(F, p)
    if cfg.learns_grouping:
        h, C = cfg.encoder_hidden, cfg.edge_classes
        mlp = lambda i, o: i * h + h + h * o + o  # noqa: E731
        total += mlp(T * cfg.D, h) + mlp(2 * h, h) + mlp(h, h) + mlp(2 * h, C)
    return total


# --- parameter tree and checkpoints --------------------------------------------

def parameter_tree(model: ResChunk) -> dict[str, np.ndarray]:
    """Ordered name -> float64 array map of every parameter and buffer."""
    return {name: t.detach().numpy().copy() for name, t in model.state_dict().items()
            if name != "encoder.offdiag"}


def load_parameter_tree(model: ResChunk, tree: dict[str, np.ndarray]) -> ResChunk:
    expected = parameter_tree(model)
    for name in expected:
        if name not in tree:
            raise CheckpointError(f"missing parameter {name!r}")
    for name in tree:
        if name not in expected:
            raise CheckpointError(f"unknown parameter {name!r}")
    state = model.state_dict()
    with torch.no_grad():
        for name, arr in tree.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != expected[name].shape:
                raise CheckpointError(f"parameter {name!r} has shape {arr.shape}, expected {expected[name].shape}")
            state[name].copy_(torch.from_numpy(arr))
    return model


def save_checkpoint(model: ResChunk, path, extra: dict | None = None) -> None:
    """Write a JSON header line (config, manifest, version) followed by every
    array in manifest order as little-endian float64."""
    tree = parameter_tree(model)
    header = {
        "format": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "config": model.cfg.to_dict(),
        "parameter_count": closed_form_parameter_count(model.cfg),
        "manifest": [{"name": k, "shape": list(v.shape), "dtype": "<f8"} for k, v in tree.items()],
        "extra": extra or {},
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for arr in tree.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0:
        raise CheckpointError(f"{path}: missing header line")
    try:
        header = json.loads(data[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from None
    if header.get("format") != CHECKPOINT_MAGIC or header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
    body = memoryview(data)[nl + 1:]
    tree, offset = {}, 0
    for entry in header["manifest"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        nbytes = 8 * n
        if offset + nbytes > len(body):
            raise CheckpointError(f"{path}: truncated at parameter {entry['name']!r}")
        tree[entry["name"]] = np.frombuffer(body[offset:offset + nbytes], dtype="<f8").reshape(entry["shape"]).copy()
        offset += nbytes
    if offset != len(body):
        raise CheckpointError(f"{path}: {len(body) - offset} trailing bytes")
    return header, tree


def load_checkpoint(path) -> tuple[ResChunk, dict]:
    header, tree = read_checkpoint(path)
    cfg = ModelConfig(**header["config"])
    model = ResChunk(cfg)
    load_parameter_tree(model, tree)
    return model, header
