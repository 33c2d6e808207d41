"""Run configuration: one JSON document covering every stage.

Unknown keys, wrong types and violated invariants are reported as
``ConfigError`` carrying the JSON pointer of the offending value.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field

from .errors import ConfigError
from .render import CameraRig
from .rmc import GridConfig
from .scenario import ScenarioConfig
from .stereo import SgmParams


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 30
    batch_size: int = 10
    val_every: int = 10
    val_subsample: int = 64
    init_seed: int = 1
    shuffle_seed: int = 2

    def validate(self) -> None:
        if self.lr < 0:
            raise ValueError("lr: must be >= 0")
        if not 0 <= self.beta1 < 1:
            raise ValueError("beta1: must lie in [0, 1)")
        if not 0 <= self.beta2 < 1:
            raise ValueError("beta2: must lie in [0, 1)")
        if not self.eps > 0:
            raise ValueError("eps: must be positive")
        if self.epochs < 1:
            raise ValueError("epochs: must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size: must be >= 1")
        if self.val_every < 1:
            raise ValueError("val_every: must be >= 1")
        if self.val_subsample < 1:
            raise ValueError("val_subsample: must be >= 1")


@dataclass(frozen=True)
class DatasetConfig:
    n_samples: int = 2000
    master_seed: int = 20180601
    split_seed: int = 7

    def validate(self) -> None:
        if self.n_samples < 1:
            raise ValueError("n_samples: must be >= 1")
        if self.master_seed < 0:
            raise ValueError("master_seed: must be >= 0")
        if self.split_seed < 0:
            raise ValueError("split_seed: must be >= 0")


@dataclass(frozen=True)
class EvalConfig:
    threshold_headway: float = 1.5

    def validate(self) -> None:
        if not self.threshold_headway > 0:
            raise ValueError("threshold_headway: must be positive")


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    rig: CameraRig = field(default_factory=CameraRig)
    sgm: SgmParams = field(default_factory=SgmParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    def generation_digest(self) -> str:
        """Digest of everything that shapes generated samples."""
        d = self.to_dict()
        keep = {k: d[k] for k in ("scenario", "grid", "rig", "sgm", "dataset")}
        blob = json.dumps(keep, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_number(v) -> bool:
    return (isinstance(v, (int, float))) and not isinstance(v, bool)


def _coerce(value, tp, pointer: str):
    origin = typing.get_origin(tp)
    if tp is int:
        if not _is_int(value):
            raise ConfigError(pointer, f"expected integer, got {type(value).__name__}")
        return value
    if tp is float:
        if not _is_number(value):
            raise ConfigError(pointer, f"expected number, got {type(value).__name__}")
        return float(value)
    if origin is tuple:
        args = typing.get_args(tp)
        if not isinstance(value, list):
            raise ConfigError(pointer, f"expected array, got {type(value).__name__}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{pointer}/{i}") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(pointer, f"expected array of length {len(args)}, got {len(value)}")
        return tuple(_coerce(v, a, f"{pointer}/{i}") for i, (v, a) in enumerate(zip(value, args)))
    raise ConfigError(pointer, f"unsupported field type {tp}")


def _build_section(cls, data, pointer: str):
    if not isinstance(data, dict):
        raise ConfigError(pointer, f"expected object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"{pointer}/{key}", "unknown key")
        kwargs[key] = _coerce(value, hints[key], f"{pointer}/{key}")
    obj = cls(**kwargs)
    try:
        obj.validate()
    except ValueError as exc:
        msg = str(exc)
        head = msg.split(":", 1)[0].split("/")[0].strip()
        where = f"{pointer}/{head}" if head in names else pointer
        raise ConfigError(where, msg) from None
    return obj


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("", "config must be a JSON object")
    hints = typing.get_type_hints(RunConfig)
    sections = {}
    for key, value in data.items():
        if key not in hints:
            raise ConfigError(f"/{key}", "unknown key")
        sections[key] = _build_section(hints[key], value, f"/{key}")
    for key, tp in hints.items():
        if key not in sections:
            sections[key] = _build_section(tp, {}, f"/{key}")
    return RunConfig(**sections)


def parse_config(path) -> RunConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("", f"invalid JSON: {exc}") from None
    return config_from_dict(data)
