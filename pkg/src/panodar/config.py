"""Pipeline configuration: defaults, JSON loading and validation."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

from .boundary import RefineConfig
from .errors import ConfigError, InvalidInputError
from .fusion import FusionConfig
from .grid import CITYSCAPES_CLASSES, ClassCatalog
from .io import read_json
from .losses import REDUCTIONS

log = logging.getLogger(__name__)

KNOWN_KEYS = {
    "window", "alpha", "theta_default", "theta_medium", "medium_area",
    "lambda", "classes", "ce_reduction", "mse_reduction",
}
WINDOW_KEYS = {"width", "height", "stride"}


@dataclass(frozen=True)
class PipelineConfig:
    window_width: int = 512
    window_height: int = 400
    stride: int = 256
    alpha: float = 0.3
    theta_default: float = 0.5
    theta_medium: float = 0.7
    medium_area: tuple[int, int] = (100, 1000)
    lam: float = 0.2
    classes: tuple[str, ...] = CITYSCAPES_CLASSES
    ce_reduction: str = "sum"
    mse_reduction: str = "mean"
    unknown_keys: tuple[str, ...] = field(default=(), compare=False)

    @property
    def fusion(self) -> FusionConfig:
        return FusionConfig(self.theta_default, self.theta_medium, *self.medium_area)

    @property
    def refine(self) -> RefineConfig:
        return RefineConfig(self.alpha)

    @property
    def catalog(self) -> ClassCatalog:
        return ClassCatalog(self.classes)

    def to_dict(self) -> dict:
        return {
            "window": {"width": self.window_width, "height": self.window_height, "stride": self.stride},
            "alpha": self.alpha,
            "theta_default": self.theta_default,
            "theta_medium": self.theta_medium,
            "medium_area": list(self.medium_area),
            "lambda": self.lam,
            "classes": list(self.classes),
            "ce_reduction": self.ce_reduction,
            "mse_reduction": self.mse_reduction,
        }


def _int(value, key: str, minimum: int = 1) -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        raise ConfigError(key, f"expected an integer, got {type(value).__name__}")
    if value < minimum:
        raise ConfigError(key, f"must be >= {minimum}, got {value}")
    return value


def _fraction(value, key: str) -> float:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(key, f"expected a number, got {type(value).__name__}")
    if not 0 <= value <= 1:
        raise ConfigError(key, f"must lie in [0, 1], got {value}")
    return float(value)


def config_from_dict(doc: dict) -> PipelineConfig:
    """Build a config from a parsed JSON document; absent keys keep defaults.

    Unknown keys are reported with a warning. Wrong types and out-of-range
    values raise :class:`ConfigError` naming the key.
    """
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    d = PipelineConfig()
    unknown = sorted(set(doc) - KNOWN_KEYS)

    window = doc.get("window", {})
    if not isinstance(window, dict):
        raise ConfigError("window", "expected an object with width/height/stride")
    unknown += sorted(f"window.{k}" for k in set(window) - WINDOW_KEYS)
    width = _int(window.get("width", d.window_width), "window.width")
    height = _int(window.get("height", d.window_height), "window.height")
    stride = _int(window.get("stride", d.stride), "window.stride")
    if stride > width:
        raise ConfigError("window.stride", f"stride {stride} exceeds window width {width}")

    alpha = _fraction(doc.get("alpha", d.alpha), "alpha")
    theta_default = _fraction(doc.get("theta_default", d.theta_default), "theta_default")
    theta_medium = _fraction(doc.get("theta_medium", d.theta_medium), "theta_medium")
    if theta_default > theta_medium:
        raise ConfigError("theta_default", "must not exceed theta_medium")

    medium = doc.get("medium_area", list(d.medium_area))
    if not isinstance(medium, list) or len(medium) != 2:
        raise ConfigError("medium_area", "expected a two-element list [min, max]")
    lo = _int(medium[0], "medium_area", 0)
    hi = _int(medium[1], "medium_area", 0)
    if lo >= hi:
        raise ConfigError("medium_area", f"min {lo} must be below max {hi}")

    lam = doc.get("lambda", d.lam)
    if not isinstance(lam, (int, float)) or isinstance(lam, bool):
        raise ConfigError("lambda", f"expected a number, got {type(lam).__name__}")
    if lam < 0:
        raise ConfigError("lambda", f"must be non-negative, got {lam}")

    classes = doc.get("classes", list(d.classes))
    if not isinstance(classes, list) or not all(isinstance(c, str) for c in classes):
        raise ConfigError("classes", "expected a list of class names")
    try:
        ClassCatalog(tuple(classes))
    except InvalidInputError as exc:
        raise ConfigError("classes", str(exc)) from exc

    reductions = {}
    for key, default in (("ce_reduction", d.ce_reduction), ("mse_reduction", d.mse_reduction)):
        value = doc.get(key, default)
        if value not in REDUCTIONS:
            raise ConfigError(key, f"must be one of {REDUCTIONS}, got {value!r}")
        reductions[key] = value

    if unknown:
        msg = f"ignoring unknown config keys: {', '.join(unknown)}"
        log.warning(msg)
        warnings.warn(msg, stacklevel=2)

    return PipelineConfig(
        window_width=width, window_height=height, stride=stride, alpha=alpha,
        theta_default=theta_default, theta_medium=theta_medium, medium_area=(lo, hi),
        lam=float(lam), classes=tuple(classes), unknown_keys=tuple(unknown), **reductions,
    )


def read_config(path) -> PipelineConfig:
    return config_from_dict(read_json(path))
