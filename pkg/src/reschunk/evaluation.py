"""MPJPE at fixed horizons, the zero-velocity baseline and results tables."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .motion_data import ConfigurationError, SkeletonSpec, frames_to_positions

DEFAULT_HORIZONS_MS = (80, 160, 320, 400, 1000)


class HorizonError(ValueError):
    pass


@dataclass
class HorizonSpec:
    fps: float
    horizons_ms: list[int] = field(default_factory=lambda: list(DEFAULT_HORIZONS_MS))
    clamp_to_output: bool = True

    def frame_indices(self, p: int) -> list[int]:
        """1-based predicted-frame index per horizon: ceil(r * fps / 1000).

        Horizons past the last predicted frame are clamped to ``p`` when
        ``clamp_to_output`` is set, otherwise they raise.
        """
        out = []
        for r in sorted(self.horizons_ms):
            h = max(1, math.ceil(round(r * self.fps / 1000.0, 9)))
            if h > p:
                if not self.clamp_to_output:
                    raise HorizonError(f"{r} ms maps to frame {h}, beyond p={p}")
                h = p
            out.append(h)
        return out


def mpjpe(pred, gt, skeleton: SkeletonSpec, h: int) -> float:
    """Mean over joints of the Euclidean error (mm) at predicted frame ``h`` (1-based)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise HorizonError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    if not 1 <= h <= pred.shape[0]:
        raise HorizonError(f"horizon frame {h} outside 1..{pred.shape[0]}")
    P = frames_to_positions(pred[h - 1:h], skeleton)[0]
    G = frames_to_positions(gt[h - 1:h], skeleton)[0]
    return float(np.linalg.norm(P - G, axis=-1).mean())


def mpjpe_curve(pred, gt, skeleton: SkeletonSpec, frames: list[int]) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if max(frames) > pred.shape[-2]:
        raise HorizonError(f"horizon frame {max(frames)} outside 1..{pred.shape[-2]}")
    idx = np.asarray(frames) - 1
    P = frames_to_positions(pred.reshape(-1, pred.shape[-1])[_rows(pred, idx)], skeleton)
    G = frames_to_positions(gt.reshape(-1, gt.shape[-1])[_rows(gt, idx)], skeleton)
    err = np.linalg.norm(P - G, axis=-1).mean(axis=-1)
    return err.reshape(pred.shape[:-2] + (len(frames),))


def _rows(x, idx):
    # row indices into x.reshape(-1, K) of frames idx in every leading window
    p = x.shape[-2]
    n = int(np.prod(x.shape[:-2], dtype=np.int64))
    return (np.arange(n)[:, None] * p + idx[None, :]).ravel()


def zero_velocity_baseline(x0, p: int) -> np.ndarray:
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape[-2] < 1:
        raise ConfigurationError("x0 must contain at least one frame")
    last = x0[..., -1:, :]
    return np.repeat(last, p, axis=-2)


@dataclass
class ResultsTable:
    horizons_ms: list[int]
    rows: dict[tuple[str, str], list[float]] = field(default_factory=dict)

    def add(self, model: str, action: str, values) -> None:
        values = [float(v) for v in values]
        if len(values) != len(self.horizons_ms):
            raise ValueError(f"row has {len(values)} cells for {len(self.horizons_ms)} horizons")
        if not all(math.isfinite(v) and v >= 0 for v in values):
            raise ValueError("MPJPE cells must be finite and nonnegative")
        self.rows[(model, action)] = values

    def get(self, model: str, action: str, horizon_ms: int) -> float:
        return self.rows[(model, action)][self.horizons_ms.index(horizon_ms)]


def emit_table(table: ResultsTable, fmt: str = "markdown") -> str:
    """Render with horizons ascending and cells to two decimals.

    Cells use Python's ``format(v, '.2f')``: the exact binary value is rounded
    half-to-even, so 5.744999 renders as 5.74.
    """
    order = sorted(range(len(table.horizons_ms)), key=lambda i: table.horizons_ms[i])
    header = ["model", "action"] + [str(table.horizons_ms[i]) for i in order]
    body = [[m, a] + [format(vals[i], ".2f") for i in order] for (m, a), vals in table.rows.items()]
    buf = io.StringIO()
    if fmt == "csv":
        for row in [header] + body:
            buf.write(",".join(row) + "\n")
    elif fmt == "markdown":
        buf.write("| " + " | ".join(header) + " |\n")
        buf.write("|" + "|".join(["---"] * 2 + ["---:"] * len(order)) + "|\n")
        for row in body:
            buf.write("| " + " | ".join(row) + " |\n")
    else:
        raise ValueError(f"unknown table format {fmt!r}")
    return buf.getvalue()
