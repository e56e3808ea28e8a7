"""Motion sequences: MTF file I/O, windowing, forward kinematics and a
synthetic generator with planted joint groups."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MotionFormatError(ValueError):
    pass


class MotionShapeError(ValueError):
    pass


class MotionDataError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


REPRESENTATIONS = ("positions3d", "angle_axis")


@dataclass
class SkeletonSpec:
    joint_names: list[str]
    per_joint_dim: int = 3
    parent_index: list[int] | None = None
    bone_offsets: np.ndarray | None = None  # [J, 3] millimeters
    representation: str = "positions3d"

    def __post_init__(self):
        if self.representation not in REPRESENTATIONS:
            raise ConfigurationError(f"unknown representation {self.representation!r}")
        if self.per_joint_dim < 1 or not self.joint_names:
            raise ConfigurationError("skeleton needs at least one joint and D >= 1")
        if self.bone_offsets is not None:
            self.bone_offsets = np.asarray(self.bone_offsets, dtype=np.float64).reshape(self.J, 3)
        if self.parent_index is not None:
            self.parent_index = [int(p) for p in self.parent_index]
            _check_tree(self.parent_index)
        if self.representation == "angle_axis":
            if self.parent_index is None or self.bone_offsets is None:
                raise ConfigurationError("angle_axis skeleton requires parents and offsets")
            if self.per_joint_dim != 3:
                raise ConfigurationError("angle_axis skeleton requires D = 3")

    @property
    def J(self) -> int:
        return len(self.joint_names)

    @property
    def D(self) -> int:
        return self.per_joint_dim

    @property
    def K(self) -> int:
        return self.J * self.per_joint_dim

    @property
    def has_tree(self) -> bool:
        return self.parent_index is not None


def _check_tree(parents: list[int]) -> None:
    J = len(parents)
    roots = [j for j, p in enumerate(parents) if p == -1]
    if len(roots) != 1:
        raise ConfigurationError(f"parent graph needs exactly one root, found {len(roots)}")
    for j, p in enumerate(parents):
        if p != -1 and not 0 <= p < J:
            raise ConfigurationError(f"joint {j} has out-of-range parent {p}")
    for j in range(J):
        seen = set()
        k = j
        while k != -1:
            if k in seen:
                raise ConfigurationError(f"parent graph has a cycle through joint {j}")
            seen.add(k)
            k = parents[k]


@dataclass
class MotionSequence:
    skeleton: SkeletonSpec
    fps: float
    frames: np.ndarray  # [T_total, K]
    name: str = "sequence"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise MotionShapeError("frames must be a non-empty [T, K] matrix")
        if self.frames.shape[1] != self.skeleton.K:
            raise MotionShapeError(
                f"frames have {self.frames.shape[1]} columns, skeleton K = {self.skeleton.K}")
        if not np.all(np.isfinite(self.frames)):
            raise MotionDataError("frames contain non-finite values")
        if not self.fps > 0:
            raise ConfigurationError("fps must be positive")

    def __len__(self):
        return self.frames.shape[0]


@dataclass
class WindowSample:
    x0: np.ndarray  # [T, K]
    y0: np.ndarray  # [p, K]
    source_id: str
    start_frame: int


@dataclass
class WindowingConfig:
    window_seconds: float = 3.0
    stride_frames: int = 10
    crop_seconds: float = 2.0
    input_fraction: float = 0.5

    def window_frames(self, fps: float) -> int:
        return _frames(self.window_seconds, fps, "window_seconds")

    def crop_frames(self, fps: float) -> int:
        return _frames(self.crop_seconds, fps, "crop_seconds")

    def input_frames(self, fps: float) -> int:
        if not 0 < self.input_fraction < 1:
            raise ConfigurationError("input_fraction must lie in (0, 1)")
        n = self.crop_frames(fps)
        t = int(round(self.input_fraction * n))
        if not 1 <= t < n:
            raise ConfigurationError("input_fraction leaves an empty input or target")
        return t


def _frames(seconds: float, fps: float, what: str) -> int:
    n = seconds * fps
    if abs(n - round(n)) > 1e-6 or round(n) < 2:
        raise ConfigurationError(f"{what}*fps = {n} must round to an integer >= 2")
    return int(round(n))


# --- MTF I/O ---------------------------------------------------------------

def _parse_header(line: str) -> dict:
    try:
        header = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MotionFormatError(f"malformed MTF header: {exc}") from None
    if not isinstance(header, dict):
        raise MotionFormatError("MTF header must be a JSON object")
    for key in ("name", "fps", "J", "D", "representation", "joint_names"):
        if key not in header:
            raise MotionFormatError(f"MTF header missing key {key!r}")
    return header


def skeleton_from_header(header: dict) -> SkeletonSpec:
    return SkeletonSpec(
        joint_names=list(header["joint_names"]),
        per_joint_dim=int(header["D"]),
        parent_index=header.get("parents"),
        bone_offsets=header.get("offsets"),
        representation=header["representation"],
    )


def read_header(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return _parse_header(fh.readline())


def load_sequence(path, skeleton: SkeletonSpec | None = None) -> MotionSequence:
    """Read an MTF file. If ``skeleton`` is None it is rebuilt from the header."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = _parse_header(fh.readline())
        J, D = int(header["J"]), int(header["D"])
        if skeleton is None:
            skeleton = skeleton_from_header(header)
        if J != skeleton.J or D != skeleton.D:
            raise MotionShapeError(
                f"{path}: header declares J={J}, D={D}; skeleton has J={skeleton.J}, D={skeleton.D}")
        if len(header["joint_names"]) != J:
            raise MotionFormatError(f"{path}: joint_names has {len(header['joint_names'])} entries, J={J}")
        K = J * D
        rows = []
        for row_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            tokens = line.split()
            if len(tokens) != K:
                raise MotionShapeError(f"{path}: row {row_no} has {len(tokens)} values, expected K={K}")
            try:
                values = [float(t) for t in tokens]
            except ValueError:
                raise MotionFormatError(f"{path}: row {row_no} has a non-numeric token") from None
            if not all(math.isfinite(v) for v in values):
                raise MotionDataError(f"{path}: row {row_no} contains a non-finite value")
            rows.append(values)
    if not rows:
        raise MotionFormatError(f"{path}: no frames")
    meta = {k: v for k, v in header.items()
            if k not in ("name", "fps", "J", "D", "representation", "joint_names", "parents", "offsets")}
    return MotionSequence(skeleton, float(header["fps"]), np.array(rows, dtype=np.float64),
                          name=str(header["name"]), metadata=meta)


def save_sequence(seq: MotionSequence, path) -> None:
    sk = seq.skeleton
    header = {
        "name": seq.name,
        "fps": seq.fps,
        "J": sk.J,
        "D": sk.D,
        "representation": sk.representation,
        "joint_names": list(sk.joint_names),
    }
    if sk.parent_index is not None:
        header["parents"] = list(sk.parent_index)
    if sk.bone_offsets is not None:
        header["offsets"] = sk.bone_offsets.tolist()
    header.update(seq.metadata)
    # repr() round-trips float64 exactly
    lines = [json.dumps(header, separators=(", ", ": "))]
    lines.extend(" ".join(repr(float(v)) for v in row) for row in seq.frames)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# --- windowing ---------------------------------------------------------------

def slide_windows(seq: MotionSequence, cfg: WindowingConfig) -> list[range]:
    W = cfg.window_frames(seq.fps)
    n = len(seq)
    if n < W:
        return []
    return [range(s, s + W) for s in range(0, n - W + 1, cfg.stride_frames)]


def crop_sample(seq: MotionSequence, window: range, cfg: WindowingConfig,
                rng: np.random.Generator) -> WindowSample:
    n_crop = cfg.crop_frames(seq.fps)
    n_in = cfg.input_frames(seq.fps)
    if n_crop > len(window):
        raise ConfigurationError(f"crop of {n_crop} frames exceeds window of {len(window)}")
    start = window.start + int(rng.integers(0, len(window) - n_crop + 1))
    return _split(seq, start, n_crop, n_in)


def fixed_crop(seq: MotionSequence, window: range, cfg: WindowingConfig) -> WindowSample:
    """Deterministic crop anchored at the window start (used for evaluation)."""
    n_crop = cfg.crop_frames(seq.fps)
    if n_crop > len(window):
        raise ConfigurationError(f"crop of {n_crop} frames exceeds window of {len(window)}")
    return _split(seq, window.start, n_crop, cfg.input_frames(seq.fps))


def _split(seq, start, n_crop, n_in):
    crop = seq.frames[start:start + n_crop]
    return WindowSample(crop[:n_in].copy(), crop[n_in:].copy(), seq.name, start)


# --- forward kinematics ------------------------------------------------------

def axis_angle_to_matrix(aa: np.ndarray) -> np.ndarray:
    """Rodrigues' formula for [..., 3] angle-axis vectors -> [..., 3, 3]."""
    aa = np.asarray(aa, dtype=np.float64)
    theta = np.linalg.norm(aa, axis=-1, keepdims=True)
    small = theta[..., 0] < 1e-12
    axis = aa / np.where(theta < 1e-12, 1.0, theta)
    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    zero = np.zeros_like(x)
    Kx = np.stack([zero, -z, y, z, zero, -x, -y, x, zero], axis=-1).reshape(aa.shape[:-1] + (3, 3))
    s = np.sin(theta)[..., None]
    c = np.cos(theta)[..., None]
    eye = np.broadcast_to(np.eye(3), Kx.shape)
    R = eye + s * Kx + (1.0 - c) * (Kx @ Kx)
    R[small] = np.eye(3)
    return R


def to_positions(seq: MotionSequence) -> np.ndarray:
    """[T, J, 3] joint positions in millimeters. Angle-axis data goes through
    forward kinematics with the root at the origin; positions3d passes through."""
    return frames_to_positions(seq.frames, seq.skeleton)


def frames_to_positions(frames: np.ndarray, skeleton: SkeletonSpec) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    T = frames.shape[0]
    if skeleton.representation == "positions3d":
        if skeleton.D != 3:
            raise ConfigurationError("positions3d requires D = 3")
        return frames.reshape(T, skeleton.J, 3)
    if skeleton.parent_index is None or skeleton.bone_offsets is None:
        raise ConfigurationError("angle_axis conversion needs parents and offsets")
    local = axis_angle_to_matrix(frames.reshape(T, skeleton.J, 3))
    parents = skeleton.parent_index
    offsets = skeleton.bone_offsets
    glob = np.empty_like(local)
    pos = np.zeros((T, skeleton.J, 3))
    for j in _topological_order(parents):
        p = parents[j]
        if p == -1:
            glob[:, j] = local[:, j]
        else:
            glob[:, j] = glob[:, p] @ local[:, j]
            pos[:, j] = pos[:, p] + glob[:, p] @ offsets[j]
    return pos


def _topological_order(parents: list[int]) -> list[int]:
    depth = []
    for j in range(len(parents)):
        d, k = 0, parents[j]
        while k != -1:
            d, k = d + 1, parents[k]
        depth.append(d)
    return sorted(range(len(parents)), key=lambda j: (depth[j], j))


# --- synthetic data ----------------------------------------------------------

LIMBS = ("torso", "left_arm", "right_arm", "left_leg", "right_leg")


def synthetic_skeleton(J: int) -> SkeletonSpec:
    """A positions3d skeleton of J joints: root plus five limb chains.

    Joints 1.. are dealt round-robin onto the chains torso, arms, legs; arms
    hang off the top torso joint, legs off the root.
    """
    if J < 1:
        raise ConfigurationError("J must be positive")
    chains = {name: [] for name in LIMBS}
    for j in range(1, J):
        chains[LIMBS[(j - 1) % len(LIMBS)]].append(j)
    parents = [-1] * J
    offsets = np.zeros((J, 3))
    names = ["root"] + [""] * (J - 1)
    directions = {"torso": (0, 1, 0), "left_arm": (-1, 0, 0), "right_arm": (1, 0, 0),
                  "left_leg": (-0.3, -1, 0), "right_leg": (0.3, -1, 0)}
    for limb, members in chains.items():
        if limb in ("left_arm", "right_arm") and chains["torso"]:
            prev = chains["torso"][-1]
        else:
            prev = 0
        for k, j in enumerate(members):
            parents[j] = prev
            offsets[j] = np.array(directions[limb]) * 120.0
            names[j] = f"{limb}_{k}"
            prev = j
    return SkeletonSpec(names, 3, parents, offsets, "positions3d")


def limb_partition(skeleton: SkeletonSpec) -> list[int]:
    """Default five-part grouping (torso with root, two arms, two legs) derived
    from joint names of :func:`synthetic_skeleton`; empty limbs are dropped."""
    labels = []
    for name in skeleton.joint_names:
        limb = "torso" if name == "root" else name.rsplit("_", 1)[0]
        labels.append(LIMBS.index(limb) if limb in LIMBS else 0)
    return relabel(labels)


def relabel(labels) -> list[int]:
    """Renumber group labels so ids follow the lowest member joint index."""
    mapping: dict = {}
    out = []
    for lab in labels:
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out.append(mapping[lab])
    return out


def planted_groups(J: int, n_groups: int) -> list[int]:
    """Contiguous index blocks, as equal as possible."""
    if not 1 <= n_groups <= J:
        raise ConfigurationError("need 1 <= n_groups <= J")
    return [int(g) for g in np.arange(J) * n_groups // J]


def synth_dataset(n_sequences: int, skeleton_size: int, fps: float, seconds: float,
                  rng: np.random.Generator, n_groups: int = 2, amplitude: float = 60.0,
                  n_harmonics: int = 2, noise: float = 0.0,
                  name: str = "synthetic") -> list[MotionSequence]:
    """Joints oscillate around a rest pose; every joint in a planted group shares
    the group's frequencies and phases, joints in different groups do not.
    Frequencies are drawn once per call, phases once per sequence.

    Each joint j in group g moves as
    ``rest_j + amplitude * sum_k u_{j,k} * sin(2 pi f_{g,k} t + phase_{g,k})``
    with its own unit direction ``u_{j,k}``.
    """
    if min(n_sequences, skeleton_size) < 1 or not (fps > 0 and seconds > 0):
        raise ConfigurationError("synth_dataset arguments must be positive")
    skeleton = synthetic_skeleton(skeleton_size)
    groups = planted_groups(skeleton_size, n_groups)
    rest = np.zeros((skeleton_size, 3))
    for j in _topological_order(skeleton.parent_index):
        p = skeleton.parent_index[j]
        if p != -1:
            rest[j] = rest[p] + skeleton.bone_offsets[j]
    n_frames = max(1, int(round(seconds * fps)))
    t = np.arange(n_frames) / fps
    # frequencies are shared by the whole dataset, phases and directions vary per sequence
    freqs = rng.uniform(0.4, 1.2, size=(n_groups, n_harmonics))
    out = []
    for s in range(n_sequences):
        phases = rng.uniform(0, 2 * np.pi, size=(n_groups, n_harmonics))
        dirs = rng.normal(size=(skeleton_size, n_harmonics, 3))
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        pos = np.broadcast_to(rest, (n_frames, skeleton_size, 3)).copy()
        for j in range(skeleton_size):
            g = groups[j]
            for k in range(n_harmonics):
                wave = np.sin(2 * np.pi * freqs[g, k] * t + phases[g, k]) / n_harmonics
                pos[:, j] += amplitude * wave[:, None] * dirs[j, k]
        if noise > 0:
            pos += rng.normal(scale=noise, size=pos.shape)
        out.append(MotionSequence(skeleton, fps, pos.reshape(n_frames, -1),
                                  name=f"{name}_{s:03d}",
                                  metadata={"planted_groups": groups, "action": name}))
    return out


def split_by_index(sequences: list[MotionSequence]):
    """(train, validation, test) for synthetic data: index mod 10 == 8 goes to
    validation, == 9 to test, the rest to training."""
    train, val, test = [], [], []
    for i, seq in enumerate(sequences):
        {8: val, 9: test}.get(i % 10, train).append(seq)
    return train, val, test


def load_split_manifest(path) -> dict[str, list[str]]:
    """Split manifest: lines ``<split> <sequence name>`` with split in
    train/validation/test; ``#`` starts a comment."""
    splits: dict[str, list[str]] = {"train": [], "validation": [], "test": []}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        split, name = line.split(None, 1)
        if split not in splits:
            raise MotionFormatError(f"unknown split {split!r} in {path}")
        splits[split].append(name)
    return splits
