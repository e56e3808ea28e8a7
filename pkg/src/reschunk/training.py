"""Negative-ELBO objective, Adam with decoupled weight decay, the training loop
and a finite-difference gradient checker."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .edge_inference import EdgePosterior, JointPartition, coarsen, gumbel_noise
from .evaluation import HorizonSpec, mpjpe_curve
from .graph_layers import uniform
from .model import ForwardResult, ModelConfig, ResChunk, component_rng, parameter_tree, load_parameter_tree
from .reference import TERMS, reference_loss, term_of
from .motion_data import (ConfigurationError, MotionSequence, WindowingConfig, crop_sample,
                          fixed_crop, slide_windows)

log = logging.getLogger(__name__)


class OptimizerStateError(ValueError):
    pass


# --- losses ------------------------------------------------------------------

@dataclass
class LossBreakdown:
    kl: torch.Tensor
    recon_fine: torch.Tensor
    recon_coarse: torch.Tensor
    total: torch.Tensor

    def values(self) -> tuple[float, float, float, float]:
        parts = (self.kl, self.recon_fine, self.recon_coarse, self.total)
        return tuple(float(torch.as_tensor(v).detach()) for v in parts)


def kl_loss(posterior: EdgePosterior) -> torch.Tensor:
    """KL to the uniform edge prior, summed over ordered pairs i != j:
    sum q log(q C) = log C - H(q). Averaged over leading batch axes."""
    q = posterior.probabilities
    C = q.shape[-1]
    J = q.shape[-2]
    per_pair = (torch.xlogy(q, q) + q * math.log(C)).sum(-1)
    offdiag = 1.0 - torch.eye(J, dtype=q.dtype)
    per_window = (per_pair * offdiag).sum((-1, -2))
    return per_window.mean() if per_window.ndim else per_window


def recon_loss(y_hat, y, sigma: float) -> torch.Tensor:
    """sum ||y - y_hat||^2 / (2 sigma^2) over frames and coordinates, averaged
    over a leading batch axis if present."""
    y_hat = torch.as_tensor(y_hat, dtype=torch.float64)
    y = torch.as_tensor(y, dtype=torch.float64)
    if y_hat.shape != y.shape:
        raise ValueError(f"prediction {tuple(y_hat.shape)} and target {tuple(y.shape)} differ")
    per_window = ((y - y_hat) ** 2).sum((-1, -2)) / (2.0 * sigma ** 2)
    return per_window.mean() if per_window.ndim else per_window


def coarse_targets(y0, partitions: list[JointPartition], D: int) -> np.ndarray:
    y0 = np.asarray(y0, dtype=np.float64)
    if y0.ndim == 2:
        return coarsen(y0, partitions[0], D)
    return np.stack([coarsen(y, P, D) for y, P in zip(y0, partitions)])


def total_loss(result: ForwardResult, y0, y1, cfg: ModelConfig) -> LossBreakdown:
    y0 = torch.as_tensor(np.asarray(y0, dtype=np.float64).reshape(result.y0_hat.shape))
    zero = torch.zeros((), dtype=torch.float64)
    fine = recon_loss(result.y0_hat, y0, cfg.sigma0)
    coarse = zero
    if result.y1_hat is not None:
        y1 = torch.as_tensor(np.asarray(y1, dtype=np.float64).reshape(result.y1_hat.shape))
        coarse = recon_loss(result.y1_hat, y1, cfg.sigma1)
    kl = kl_loss(result.posterior) if result.posterior is not None else zero
    return LossBreakdown(kl, fine, coarse, cfg.kl_weight * kl + fine + coarse)


# --- optimizer -----------------------------------------------------------------

@dataclass
class OptimizerConfig:
    learning_rate: float = 2e-4
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    max_steps: int = 1000
    patience: int | None = 10

    def __post_init__(self):
        if not (self.learning_rate > 0 and self.weight_decay >= 0 and self.batch_size > 0
                and self.max_steps > 0 and 0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigurationError("invalid optimizer configuration")
        if self.patience is not None and self.patience < 0:
            raise ConfigurationError("patience must be nonnegative")


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@torch.no_grad()
def adam_step(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor],
              state: AdamState, cfg: OptimizerConfig) -> AdamState:
    """In-place Adam update. Weight decay is decoupled: each parameter is first
    scaled by (1 - lr * wd), then moved by the bias-corrected Adam step."""
    if set(params) != set(grads):
        raise OptimizerStateError("parameter and gradient trees differ: "
                                  f"{sorted(set(params) ^ set(grads))}")
    if state.m and set(state.m) != set(params):
        raise OptimizerStateError("optimizer state does not match the parameter tree")
    state.step += 1
    t = state.step
    lr = cfg.learning_rate
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = torch.zeros_like(p)
            state.v[name] = torch.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m.mul_(cfg.beta1).add_(g, alpha=1.0 - cfg.beta1)
        v.mul_(cfg.beta2).addcmul_(g, g, value=1.0 - cfg.beta2)
        if cfg.weight_decay:
            p.mul_(1.0 - lr * cfg.weight_decay)
        p.sub_(lr * (m / c1) / ((v / c2).sqrt() + cfg.eps))
    return state


# --- data ----------------------------------------------------------------------

@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, sequences: list[MotionSequence], floor: float = 1e-3) -> "Normalizer":
        frames = np.concatenate([s.frames for s in sequences])
        mean = frames.mean(axis=0)
        std = frames.std(axis=0)
        # constant coordinates (pinned root, zero-amplitude data) keep unit scale
        std = np.where(std < floor * max(float(std.max()), 1.0), 1.0, std)
        return cls(mean, std)


class WindowDataset:
    """Sliding windows over a set of sequences; training crops are random,
    evaluation crops are anchored at the window start."""

    def __init__(self, sequences: list[MotionSequence], windowing: WindowingConfig,
                 max_windows: int | None = None):
        if not sequences:
            raise ConfigurationError("empty dataset split")
        self.sequences = sequences
        self.windowing = windowing
        self.index = [(k, r) for k, s in enumerate(sequences) for r in slide_windows(s, windowing)]
        if max_windows is not None:
            self.index = self.index[:max_windows]
        if not self.index:
            raise ConfigurationError("dataset split has no complete window")
        self.skeleton = sequences[0].skeleton

    def __len__(self):
        return len(self.index)

    def crop(self, i, rng=None):
        k, r = self.index[i]
        seq = self.sequences[k]
        return crop_sample(seq, r, self.windowing, rng) if rng is not None else fixed_crop(seq, r, self.windowing)

    def eval_samples(self):
        return [self.crop(i) for i in range(len(self))]

    def stacked(self, samples):
        return np.stack([s.x0 for s in samples]), np.stack([s.y0 for s in samples])


def window_lengths(windowing: WindowingConfig, fps: float) -> tuple[int, int]:
    T = windowing.input_frames(fps)
    return T, windowing.crop_frames(fps) - T


# --- evaluation helper -----------------------------------------------------------

def evaluate_model(model: ResChunk, samples, skeleton, frames: list[int]) -> np.ndarray:
    """Per-window MPJPE at each horizon frame, shape [n_windows, n_horizons]."""
    x0 = np.stack([s.x0 for s in samples])
    y0 = np.stack([s.y0 for s in samples])
    pred, _ = model.predict(x0)
    return mpjpe_curve(pred, y0, skeleton, frames)


# --- training ------------------------------------------------------------------

@dataclass
class TrainResult:
    model: ResChunk
    log_lines: list[str]
    step_losses: list[tuple[float, float, float, float]]
    val_history: list[np.ndarray]
    best_epoch: int
    epochs: int
    steps: int


def format_step(step: int, values) -> str:
    return f"step {step} " + " ".join(repr(float(v)) for v in values)


def format_epoch(epoch: int, values) -> str:
    return f"epoch {epoch} val_mpjpe " + " ".join(repr(float(v)) for v in values)


def train_step(model: ResChunk, x0, y0, noise_rng, opt_state: AdamState, opt_cfg: OptimizerConfig):
    cfg = model.cfg
    res = model(x0, rng=noise_rng, mode="train")
    y1 = coarse_targets(y0, res.partitions, cfg.D) if res.y1_hat is not None else None
    losses = total_loss(res, y0, y1, cfg)
    named = dict(model.named_parameters())
    grads = torch.autograd.grad(losses.total, list(named.values()), allow_unused=True)
    grads = {k: torch.zeros_like(p) if g is None else g for (k, p), g in zip(named.items(), grads)}
    adam_step({k: p.data for k, p in named.items()}, grads, opt_state, opt_cfg)
    return losses.values()


def train(train_set: WindowDataset, val_set: WindowDataset, cfg: ModelConfig,
          opt_cfg: OptimizerConfig, seed: int = 0, horizons: HorizonSpec | None = None,
          log_file=None, restore_best: bool = True) -> TrainResult:
    """Minibatch Adam on the negative ELBO with per-epoch validation MPJPE.

    Stops after ``opt_cfg.max_steps`` steps or once validation MPJPE (mean over
    horizons) has not improved for ``patience`` epochs, and returns the model
    restored to its best-validation parameters (or as last updated when
    ``restore_best`` is false).
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ConfigurationError("train and validation splits must be nonempty")
    fps = train_set.sequences[0].fps
    horizons = horizons or HorizonSpec(fps)
    frames = horizons.frame_indices(cfg.p)
    model = ResChunk(cfg, seed)
    norm = Normalizer.fit(train_set.sequences)
    model.set_normalizer(norm.mean, norm.std)
    data_rng = component_rng(seed, "data")
    noise_rng = component_rng(seed, "noise")
    state = AdamState()
    val_samples = val_set.eval_samples()

    lines, losses, history = [], [], []
    best, best_epoch, best_tree, since_best = math.inf, 0, None, 0
    step = epoch = 0

    def emit(line):
        lines.append(line)
        if log_file is not None:
            log_file.write(line + "\n")

    while step < opt_cfg.max_steps:
        epoch += 1
        order = data_rng.permutation(len(train_set))
        for b in range(0, len(order), opt_cfg.batch_size):
            if step >= opt_cfg.max_steps:
                break
            batch = [train_set.crop(int(i), data_rng) for i in order[b:b + opt_cfg.batch_size]]
            x0, y0 = train_set.stacked(batch)
            values = train_step(model, model.normalize(x0), model.normalize(y0), noise_rng, state, opt_cfg)
            step += 1
            losses.append(values)
            emit(format_step(step, values))
        val = evaluate_model(model, val_samples, val_set.skeleton, frames).mean(axis=0)
        history.append(val)
        emit(format_epoch(epoch, val))
        score = float(val.mean())
        if score < best:
            best, best_epoch, best_tree, since_best = score, epoch, parameter_tree(model), 0
        else:
            since_best += 1
        log.debug("epoch %d step %d val %.4f", epoch, step, score)
        if opt_cfg.patience is not None and since_best >= opt_cfg.patience:
            break
    if restore_best:
        load_parameter_tree(model, best_tree)
    return TrainResult(model, lines, losses, history, best_epoch, epoch, step)


# --- gradient checking -----------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    checked_entries: dict[str, int]
    tolerance: float

    @property
    def failed(self) -> list[str]:
        return [k for k, v in self.max_rel_error.items() if not v < self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failed

    def summary(self) -> str:
        worst = max(self.max_rel_error.values(), default=0.0)
        lines = [f"{name}: {err:.3e} ({self.checked_entries[name]} entries)"
                 for name, err in self.max_rel_error.items()]
        lines.append(f"worst {worst:.3e} tolerance {self.tolerance:.1e} "
                     f"{'PASS' if self.passed else 'FAIL: ' + ', '.join(self.failed)}")
        return "\n".join(lines)


def relative_error(analytic: float, numeric: float, abs_floor: float = 1e-6, abs_tol: float = 1e-7,
                   tolerance: float = 1e-4) -> float:
    """Relative error, except where both gradients are below ``abs_floor``: then
    the absolute error is rescaled so that ``abs_tol`` maps onto ``tolerance``."""
    scale = max(abs(analytic), abs(numeric))
    if scale < abs_floor:
        return abs(analytic - numeric) / abs_tol * tolerance
    return abs(analytic - numeric) / scale


# perturbed entries evaluated per reference-loss call
FD_BATCH = 16


def grad_check(cfg: ModelConfig, tolerance: float = 1e-4, seed: int = 0, eps: float = 1e-5,
               n_windows: int = 2, max_entries: int | None = 16,
               corrupt: dict[str, float] | None = None,
               model: ResChunk | None = None) -> GradCheckReport:
    """Compare autograd gradients of the total loss with central differences.

    The numeric side differentiates :func:`reference.reference_loss`, an
    independent numpy evaluation of the same objective, restricted to the one
    loss term each tensor feeds: extended precision for the branch terms,
    float64 for the KL term. Gumbel noise and the resulting partitions are
    drawn once and frozen, so the branches do not depend on the encoder. Every
    parameter tensor is checked; tensors larger than ``max_entries`` on a random
    subset of entries. ``corrupt`` scales the analytic gradient of the named
    tensors (harness self-test). Without an explicit ``model`` the default
    initialization is used with end-layer weights re-drawn at random.
    """
    rng = component_rng(seed, "gradcheck")
    if model is None:
        model = ResChunk(cfg, seed)
        # zero-initialized end layers would block every upstream gradient
        with torch.no_grad():
            for branch in (model.fine, model.coarse):
                for end in branch.ends if branch is not None else ():
                    end.W.copy_(uniform(rng, tuple(end.W.shape), 1.0 / math.sqrt(end.W.shape[0])))
    x0 = rng.normal(size=(n_windows, cfg.T, cfg.K))
    y0 = rng.normal(size=(n_windows, cfg.p, cfg.K))
    noise = None
    if cfg.learns_grouping:
        noise = gumbel_noise(rng, (n_windows, cfg.J, cfg.J, cfg.edge_classes))
    with torch.no_grad():
        partitions = model(x0, mode="train", noise=noise).partitions
    x1 = np.stack([coarsen(x, P, cfg.D) for x, P in zip(x0, partitions)])
    y1 = coarse_targets(y0, partitions, cfg.D)

    res = model(x0, mode="train", noise=noise, partitions=partitions)
    loss = total_loss(res, y0, y1 if res.y1_hat is not None else None, cfg).total
    named = dict(model.named_parameters())
    analytic = torch.autograd.grad(loss, list(named.values()), allow_unused=True)

    tree = {k: v.astype(np.longdouble) for k, v in parameter_tree(model).items()}
    ref = reference_loss(tree, cfg, x0, y0, x1, y1)
    if abs(float(ref) - loss.item()) > 1e-9 * max(1.0, abs(loss.item())):
        raise AssertionError(f"reference loss {float(ref)!r} disagrees with model loss {loss.item()!r}")

    h = np.longdouble(eps)
    errors, counts = {}, {}
    for (name, p), g in zip(named.items(), analytic):
        g = (torch.zeros_like(p) if g is None else g).detach().numpy().ravel()
        if corrupt and name in corrupt:
            g = g * corrupt[name]
        n = tree[name].size
        idx = np.arange(n) if max_entries is None or n <= max_entries else \
            np.sort(rng.choice(n, size=max_entries, replace=False))
        term = term_of(name)
        kw = dict(terms=(term,) if term else TERMS,
                  dtype=np.float64 if term == "kl" else np.longdouble)
        worst = 0.0
        for start in range(0, len(idx), FD_BATCH):
            part = idx[start:start + FD_BATCH]
            # rows 2k and 2k + 1 hold the +h and -h copies for entry part[k]
            stacked = np.repeat(tree[name][None], 2 * len(part), axis=0)
            rows = stacked.reshape(len(stacked), -1)
            rows[0::2][np.arange(len(part)), part] += h
            rows[1::2][np.arange(len(part)), part] -= h
            losses = reference_loss({**tree, name: stacked}, cfg, x0, y0, x1, y1, **kw)
            numeric = ((losses[0::2] - losses[1::2]) / (2 * h)).astype(np.float64)
            for i, num in zip(part, numeric):
                worst = max(worst, relative_error(float(g[i]), float(num), tolerance=tolerance))
        errors[name] = worst
        counts[name] = len(idx)
    return GradCheckReport(errors, counts, tolerance)
