"""Run configuration and its flat ``key = value`` file format.

Keys (defaults in brackets):

    connection        residual_baseline | sequential          [sequential]
    nonroi_removal    on | off                                 [on]
    widths            five comma-separated ints, coarse->fine  [16,16,16,16,8]
    dataset           dataset directory                        []
    height, width     training resolution                      [96, 64]
    batch_size                                                 [8]
    learning_rate                                              [0.0002]
    iterations                                                 [2000]
    seed                                                       [0]
    lambda_ce, lambda_l1, lambda_tv                            [10, 10, 2]
    lambda_zdist      only valid with nonroi_removal = on      [unset -> 1]
    z0, z1            depth anchors                            [-1, 1]
    log_every, ckpt_every                                      [10, 500]
    out_dir           relative paths resolve under $SDWARP_OUT_DIR when set [runs/default]
    image_widths      four ints for the image generator        [16,32,48,64]
    composition       on | off, composition mask in the image stage [on]
    condition_checkpoint  condition model used by train-image   []
    teacher_forced    on | off, train-image from ground truth  [off]

Blank lines and ``#`` comments are ignored.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .condition import TopologyConfig
from .errors import ConfigurationError
from .losses import LossWeights

OUT_DIR_ENV = "SDWARP_OUT_DIR"
DESK_WIDTHS = (16, 16, 16, 16, 8)


@dataclass(frozen=True)
class RunConfig:
    connection: str = "sequential"
    nonroi_removal: bool = True
    widths: tuple[int, ...] = DESK_WIDTHS
    dataset: str = ""
    height: int = 96
    width: int = 64
    batch_size: int = 8
    learning_rate: float = 0.0002
    iterations: int = 2000
    seed: int = 0
    lambda_ce: float = 10.0
    lambda_l1: float = 10.0
    lambda_tv: float = 2.0
    lambda_zdist: float | None = None
    z0: float = -1.0
    z1: float = 1.0
    log_every: int = 10
    ckpt_every: int = 500
    out_dir: str = "runs/default"
    image_widths: tuple[int, ...] = (16, 32, 48, 64)
    composition: bool = True
    condition_checkpoint: str = ""
    teacher_forced: bool = False

    def __post_init__(self):
        if self.lambda_zdist is not None and not self.nonroi_removal:
            raise ConfigurationError("lambda_zdist is set but the z-distance term requires nonroi_removal = on")
        for name in ("batch_size", "iterations", "log_every", "ckpt_every", "height", "width"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be positive, got {self.learning_rate}")
        if len(self.image_widths) != 4:
            raise ConfigurationError(f"image_widths needs 4 values, got {self.image_widths}")
        self.topology
        self.weights

    @property
    def topology(self) -> TopologyConfig:
        return TopologyConfig(connection=self.connection, nonroi_removal=self.nonroi_removal,
                              widths=tuple(self.widths))

    @property
    def weights(self) -> LossWeights:
        zd = 1.0 if self.lambda_zdist is None else self.lambda_zdist
        return LossWeights(lambda_ce=self.lambda_ce, lambda_l1=self.lambda_l1, lambda_tv=self.lambda_tv,
                           lambda_zdist=zd, z0=self.z0, z1=self.z1)

    @property
    def resolution(self) -> tuple[int, int]:
        return (self.height, self.width)

    @classmethod
    def reference_scale(cls, **kw) -> "RunConfig":
        """Reference-scale preset: full widths, 1024x768, 100k iterations."""
        base = dict(widths=(32, 64, 96, 128, 128), height=1024, width=768, iterations=100000)
        base.update(kw)
        return cls(**base)

    def with_(self, **kw) -> "RunConfig":
        return replace(self, **kw)


_BOOL = {"on": True, "true": True, "yes": True, "1": True, "off": False, "false": False, "no": False, "0": False}
_FIELDS = {f.name: f for f in fields(RunConfig)}


def _parse_value(key: str, raw: str):
    default = getattr(RunConfig, key, None)
    try:
        if key in ("widths", "image_widths"):
            return tuple(int(v) for v in raw.split(","))
        if key == "lambda_zdist":
            return None if raw in ("", "none", "unset") else float(raw)
        if isinstance(default, bool):
            return _BOOL[raw.lower()]
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except (KeyError, ValueError):
        raise ConfigurationError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_config(text: str) -> RunConfig:
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {n}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigurationError(f"line {n}: unknown key {key!r}")
        if key in values:
            raise ConfigurationError(f"line {n}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw)
    return RunConfig(**values)


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "on" if v else "off"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if v is None:
        return "unset"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize_config(cfg: RunConfig) -> str:
    return "".join(f"{f.name} = {_format_value(getattr(cfg, f.name))}\n" for f in fields(RunConfig))


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"config file not found: {p}")
    return parse_config(p.read_text(encoding="utf-8"))


def resolve_out(path: str | Path) -> Path:
    """Relative output paths live under $SDWARP_OUT_DIR when it is set."""
    p = Path(path)
    root = os.environ.get(OUT_DIR_ENV)
    if root and not p.is_absolute():
        return Path(root) / p
    return p
