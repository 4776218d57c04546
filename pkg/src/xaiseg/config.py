"""Run configuration: nested dataclasses loaded from strict JSON.

Unknown keys anywhere in the file are rejected. Every command writes the
resolved configuration next to its outputs, and that file alone rebuilds
the run.
"""

from __future__ import annotations

import dataclasses
import json
import os
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .explainer import ExplainerLossWeights
from .postproc import PostprocConfig
from .synthdata import SynthConfig
from .train import TrainConfig

SEED_ENV = "XAISEG_SEED"


class ConfigError(ValueError):
    pass


METHODS = ("input_x_gradient", "integrated_gradients", "deeplift", "deeplift_shap", "gradient_shap", "lrp",
           "explainer", "raw")


@dataclass
class BaselineConfig:
    kind: str = "mean_damage_free"
    n_samples: int = 10
    sigma: float = 1.0


@dataclass
class LrpConfig:
    first: dict = field(default_factory=lambda: {"rule": "zb", "low": 0.0, "high": 1.0})
    lower: dict = field(default_factory=lambda: {"rule": "alphabeta", "alpha": 1.0, "beta": 0.0})
    upper: dict = field(default_factory=lambda: {"rule": "gamma", "gamma": 0.25})
    dense: dict = field(default_factory=lambda: {"rule": "epsilon", "epsilon": 1e-6})
    n_lower: int = 2
    lower_includes_first: bool = False


@dataclass
class AugConfig:
    enabled: bool = False
    flips: tuple = ((False, False), (True, False), (False, True), (True, True))
    intensity_factors: tuple = (0.9, 1.0, 1.1)
    n_augmentations: int | None = 6


@dataclass
class MethodConfig:
    name: str = "lrp"
    steps: int = 50
    n_samples: int = 10
    noise_sigma: float = 0.0
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    lrp: LrpConfig = field(default_factory=LrpConfig)
    aug_smooth: AugConfig = field(default_factory=AugConfig)

    def __post_init__(self):
        if self.name not in METHODS:
            raise ConfigError(f"unknown method {self.name!r}; choose from {', '.join(METHODS)}")


def _explainer_train_defaults() -> TrainConfig:
    return TrainConfig(learning_rate=3e-3, max_epochs=25, batch_size=16, flip_probability=0.0)


@dataclass
class GrowthConfig:
    n_trajectories: int = 100
    n_steps: int = 5
    r_dilate: int = 1


@dataclass
class BenchmarkConfig:
    methods: tuple = ("input_x_gradient", "integrated_gradients", "deeplift", "deeplift_shap", "gradient_shap",
                      "lrp", "raw")
    max_images: int | None = None

    def __post_init__(self):
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown benchmark methods {bad}")


@dataclass
class RunConfig:
    seed: int = 0
    dataset: str | None = None
    model: str | None = None
    explainer_model: str | None = None
    output_dir: str | None = None
    jobs: int = 1
    calibration: float = 0.43
    data: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    explainer_train: TrainConfig = field(default_factory=_explainer_train_defaults)
    explainer_loss: ExplainerLossWeights = field(default_factory=ExplainerLossWeights)
    method: MethodConfig = field(default_factory=MethodConfig)
    postproc: PostprocConfig = field(default_factory=lambda: PostprocConfig.for_patch_size(64))
    growth: GrowthConfig = field(default_factory=GrowthConfig)
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)

    def __post_init__(self):
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.calibration <= 0:
            raise ConfigError("calibration must be positive")


# ---------------------------------------------------------------------------
# (de)serialisation


def _strip_optional(tp):
    if typing.get_origin(tp) in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return args[0]
    return tp


def _tuplify(v):
    return tuple(_tuplify(x) for x in v) if isinstance(v, list) else v


def _field_default(f):
    if f.default_factory is not dataclasses.MISSING:
        return f.default_factory()
    return None if f.default is dataclasses.MISSING else f.default


def from_dict(cls, data: dict, where: str = "config", base=None):
    """Build ``cls`` from ``data``, overlaying the values of ``base`` (or the
    field defaults). Nested sections overlay their own field defaults, so a
    partial section only changes the keys it names."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kw = {}
    for k, v in data.items():
        tp = _strip_optional(hints[k])
        if dataclasses.is_dataclass(tp) and v is not None:
            inner = getattr(base, k) if base is not None else _field_default(fields[k])
            kw[k] = from_dict(tp, v, f"{where}.{k}", inner)
        elif tp is tuple or typing.get_origin(tp) is tuple:
            kw[k] = _tuplify(v)
        else:
            kw[k] = v
    try:
        if base is not None:
            return dataclasses.replace(base, **kw)
        return cls(**kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def to_dict(cfg) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(cfg)))


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read ``path`` (defaults when ``None``), apply top-level ``overrides``
    and the seed environment variable. Stage seeds are set from the
    top-level ``seed``."""
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    data = dict(data)
    for k, v in (overrides or {}).items():
        if v is not None:
            data[k] = v
    if os.environ.get(SEED_ENV):
        try:
            data["seed"] = int(os.environ[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    cfg = from_dict(RunConfig, data)
    # the top-level seed drives every stage
    return dataclasses.replace(cfg, data=dataclasses.replace(cfg.data, seed=cfg.seed),
                               train=dataclasses.replace(cfg.train, seed=cfg.seed),
                               explainer_train=dataclasses.replace(cfg.explainer_train, seed=cfg.seed))


def write_resolved(cfg: RunConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "resolved_config.json"
    path.write_text(json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n")
    return path
