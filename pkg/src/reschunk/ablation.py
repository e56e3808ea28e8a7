"""Architecture ablations: each variant is a transformation of a base config,
trained and evaluated on the same data with the same seed schedule."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .evaluation import HorizonSpec, ResultsTable
from .model import ModelConfig
from .motion_data import ConfigurationError, limb_partition
from .training import OptimizerConfig, WindowDataset, evaluate_model, train

VARIANTS = ("full", "1L", "Fixed", "1ch", "4ch", "7ch", "NoPONO")


@dataclass(frozen=True)
class AblationVariant:
    name: str

    def __post_init__(self):
        if self.name not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.name!r}; choose from {', '.join(VARIANTS)}")

    def apply(self, cfg: ModelConfig, fixed_partition: list[int] | None = None) -> ModelConfig:
        """The variant's config. ``fixed_partition`` is required by ``Fixed``."""
        changes: dict = {}
        if self.name == "1L":
            changes = dict(coarse_branch=False, grouping="none")
        elif self.name == "Fixed":
            if fixed_partition is None:
                raise ConfigurationError("variant Fixed needs a fixed partition")
            changes = dict(grouping="fixed", fixed_partition=list(fixed_partition))
        elif self.name.endswith("ch"):
            n = int(self.name[:-2])
            if cfg.p % n:
                raise ConfigurationError(f"variant {self.name}: p={cfg.p} is not divisible by {n} chunks")
            changes = dict(n_chunks=n)
        elif self.name == "NoPONO":
            changes = dict(use_pono=False)
        try:
            return cfg.replace(**changes)
        except ConfigurationError as exc:
            raise ConfigurationError(f"variant {self.name}: {exc}") from None


def parse_variants(text: str) -> list[AblationVariant]:
    names = [v.strip() for v in text.split(",") if v.strip()]
    if not names:
        raise ConfigurationError("no variants given")
    return [AblationVariant(n) for n in names]


def evaluate_by_action(model, samples_by_action: dict, skeleton, frames) -> dict[str, np.ndarray]:
    """Per-window mean MPJPE at each horizon frame, per action."""
    return {a: evaluate_model(model, s, skeleton, frames).mean(axis=0)
            for a, s in samples_by_action.items()}


def samples_by_action(dataset: WindowDataset) -> dict[str, list]:
    out = defaultdict(list)
    for i, (k, _) in enumerate(dataset.index):
        action = dataset.sequences[k].metadata.get("action", dataset.sequences[k].name)
        out[action].append(dataset.crop(i))
    return dict(out)


def run_ablation(train_set: WindowDataset, val_set: WindowDataset, test_set: WindowDataset,
                 base: ModelConfig, variants, opt_cfg: OptimizerConfig, seed: int = 0,
                 horizons: HorizonSpec | None = None,
                 fixed_partition: list[int] | None = None) -> ResultsTable:
    """Train every variant from ``seed`` and tabulate test MPJPE per (variant, action).

    ``Fixed`` uses ``fixed_partition``, else the base config's, else the limb
    partition of the skeleton. All configs are resolved before any training so
    a bad variant fails fast.
    Components draw from named seed streams, so switching variants leaves the
    data order and the draws of shared components unchanged.
    """
    variants = [v if isinstance(v, AblationVariant) else AblationVariant(v) for v in variants]
    if not variants:
        raise ConfigurationError("no variants given")
    fixed_partition = fixed_partition or base.fixed_partition or limb_partition(train_set.skeleton)
    configs = [(v.name, v.apply(base, fixed_partition)) for v in variants]
    horizons = horizons or HorizonSpec(train_set.sequences[0].fps)
    table = ResultsTable(sorted(horizons.horizons_ms))
    by_action = samples_by_action(test_set)
    for name, cfg in configs:
        frames = horizons.frame_indices(cfg.p)
        result = train(train_set, val_set, cfg, opt_cfg, seed=seed, horizons=horizons)
        for action, row in evaluate_by_action(result.model, by_action, test_set.skeleton, frames).items():
            table.add(name, action, row)
    return table
