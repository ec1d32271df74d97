"""Model parameter containers and the plain-text key-value config format."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, Iterable, Mapping, Union


@dataclass(frozen=True)
class HyperParams:
    """Population prior and noise parameters, on the points-per-100-possessions scale."""

    mu_alpha: float
    sigma_alpha: float
    mu_beta: float
    sigma_beta: float
    gamma: float
    sigma: float

    def __post_init__(self):
        for name in ("mu_alpha", "mu_beta", "gamma"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        for name in ("sigma_alpha", "sigma_beta", "sigma"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be non-negative and finite, got {value}")

    def require_positive(self) -> "HyperParams":
        """Inference needs strictly positive scales; zero is only meaningful for simulation."""
        for name in ("sigma_alpha", "sigma_beta", "sigma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive for inference")
        return self

    @property
    def home_points_per_possession(self) -> float:
        """Expected points for a home possession by average players."""
        return (5 * self.mu_alpha - 5 * self.mu_beta + self.gamma) / 100.0

    @property
    def matched_game_level(self) -> float:
        """(5 mu_alpha - 5 mu_beta + 2 gamma) / 100, the per-possession headline figure."""
        return (5 * self.mu_alpha - 5 * self.mu_beta + 2 * self.gamma) / 100.0

    def replace(self, **changes) -> "HyperParams":
        values = asdict(self)
        values.update(changes)
        return HyperParams(**values)


@dataclass(frozen=True)
class TransitionParams:
    """Between-season shrinkage ``p`` and innovation scales."""

    p: float
    s_alpha: float
    s_beta: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {self.p}")
        if self.s_alpha < 0 or self.s_beta < 0:
            raise ValueError("s_alpha and s_beta must be non-negative")

    def replace(self, **changes) -> "TransitionParams":
        values = asdict(self)
        values.update(changes)
        return TransitionParams(**values)


# Published maximum-likelihood estimates, used as defaults and simulation truth.
REFERENCE_HYPER = HyperParams(
    mu_alpha=9.82, sigma_alpha=2.55, mu_beta=-9.12, sigma_beta=1.82, gamma=1.43, sigma=106.8
)
REFERENCE_TRANSITION = TransitionParams(p=0.83, s_alpha=1.23, s_beta=0.59)


ConfigValue = Union[str, int, float, bool]


def _coerce(raw: str) -> ConfigValue:
    text = raw.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def parse_config(text: str) -> Dict[str, ConfigValue]:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are ignored."""
    out: Dict[str, ConfigValue] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if not key:
            raise ValueError(f"config line {lineno}: empty key")
        out[key] = _coerce(value)
    return out


def read_config(path: Union[str, Path]) -> Dict[str, ConfigValue]:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def format_config(values: Mapping[str, object], header: str = "") -> str:
    lines = [f"# {line}" for line in header.splitlines()] if header else []
    for key, value in values.items():
        if isinstance(value, float):
            lines.append(f"{key} = {value!r}")
        else:
            lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def _pick(cls, values: Mapping[str, object], defaults):
    names = [f.name for f in fields(cls)]
    kwargs = {}
    for name in names:
        if name in values:
            kwargs[name] = float(values[name])
        elif defaults is not None:
            kwargs[name] = getattr(defaults, name)
        else:
            raise KeyError(f"missing config key {name!r}")
    return cls(**kwargs)


def hyper_from_config(values: Mapping[str, object], defaults: HyperParams = REFERENCE_HYPER) -> HyperParams:
    return _pick(HyperParams, values, defaults)


def transition_from_config(
    values: Mapping[str, object], defaults: TransitionParams = REFERENCE_TRANSITION
) -> TransitionParams:
    return _pick(TransitionParams, values, defaults)


def config_items(*objs: object) -> Iterable[tuple]:
    for obj in objs:
        yield from asdict(obj).items()
