"""Flat ``key = value`` run configuration.

Keys are the field names of :class:`ModelConfig`, :class:`OptimizerConfig`,
:class:`HorizonSpec` and :class:`WindowingConfig`. Blank lines and text after
``#`` are ignored. Lists are comma separated; ``none`` is Python's None.
``J``/``D`` come from the data; ``T``/``p`` default to the windowing split.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from pathlib import Path

from .evaluation import HorizonSpec
from .model import ModelConfig
from .motion_data import ConfigurationError, WindowingConfig
from .training import OptimizerConfig

SECTIONS = {"model": ModelConfig, "optimizer": OptimizerConfig,
            "horizons": HorizonSpec, "windowing": WindowingConfig}


class ConfigSyntaxError(ValueError):
    """Malformed line or unknown key in a config file."""


def field_types() -> dict[str, tuple[str, object]]:
    out = {}
    for section, cls in SECTIONS.items():
        hints = typing.get_type_hints(cls)
        for f in dataclasses.fields(cls):
            out.setdefault(f.name, (section, hints[f.name]))
    return out


def _convert(text: str, tp):
    text = text.strip()
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if text.lower() == "none" and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(text, inner[0])
    if origin is list:
        return [_convert(t, args[0]) for t in text.split(",") if t.strip()]
    if tp is bool:
        if text.lower() in ("true", "yes", "1"):
            return True
        if text.lower() in ("false", "no", "0"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    return tp(text)


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """``{key: typed value}`` for every assignment in ``text``."""
    types_ = field_types()
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigSyntaxError(f"{source}:{n}: expected key = value")
        if key not in types_:
            raise ConfigSyntaxError(f"{source}:{n}: unknown key {key!r}")
        try:
            out[key] = _convert(value, types_[key][1])
        except (TypeError, ValueError) as exc:
            raise ConfigSyntaxError(f"{source}:{n}: bad value for {key}: {exc}") from None
    return out


def load_config(path) -> dict:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), str(path))


@dataclasses.dataclass
class RunConfig:
    model: ModelConfig
    optimizer: OptimizerConfig
    horizons: HorizonSpec
    windowing: WindowingConfig

    def items(self):
        for section in SECTIONS:
            for key, value in dataclasses.asdict(getattr(self, section)).items():
                yield key, value

    def render(self) -> str:
        return "".join(f"{k} = {format_value(v)}\n" for k, v in self.items())


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, (list, tuple)):
        return ",".join(format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v).lower() if isinstance(v, bool) else str(v)


def resolve(values: dict, J: int, D: int, fps: float) -> RunConfig:
    """Build all config objects from flat ``values`` and data dimensions.

    When ``T`` and ``p`` are given they fix the crop (``(T + p) / fps`` seconds,
    input fraction ``T / (T + p)``); otherwise they follow from the windowing.
    """
    values = dict(values)
    for key, actual in (("J", J), ("D", D), ("fps", fps)):
        if key in values and values.pop(key) != actual:
            raise ConfigurationError(f"config sets {key}, which the data fixes at {actual}")
    by_section: dict[str, dict] = {s: {} for s in SECTIONS}
    types_ = field_types()
    for key, value in values.items():
        if key in ("T", "p"):
            continue
        by_section[types_[key][0]][key] = value
    if ("T" in values) != ("p" in values):
        raise ConfigurationError("set both T and p, or neither")
    win = by_section["windowing"]
    if "T" in values:
        T, p = int(values["T"]), int(values["p"])
        win["crop_seconds"] = (T + p) / fps
        win["input_fraction"] = T / (T + p)
        win.setdefault("window_seconds", max(WindowingConfig.window_seconds, (T + p) / fps))
    windowing = WindowingConfig(**win)
    T = windowing.input_frames(fps)
    p = windowing.crop_frames(fps) - T
    if windowing.window_frames(fps) < T + p:
        raise ConfigurationError("window_seconds is shorter than the crop")
    model = by_section["model"]
    model.update(J=J, D=D, T=T, p=p)
    return RunConfig(ModelConfig(**model), OptimizerConfig(**by_section["optimizer"]),
                     HorizonSpec(fps=fps, **by_section["horizons"]), windowing)
