"""Run configuration: nested dataclasses with a JSON round trip."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .cnn1d import BranchConfig
from .errors import ConfigError
from .model import NetConfig, check_ablation
from .mtf import MtfConfig
from .ssa import SsaConfig


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.0
    batch_size: int = 32
    epochs: int = 100
    patience: int = 10
    val_fraction: float = 0.2
    seed: int = 0
    ablation: tuple = ()
    beta_search: bool = True
    normalize: bool = True
    f1_average: str = "macro"

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.batch_size < 1 or self.epochs < 1 or self.patience < 1:
            raise ConfigError("batch_size, epochs and patience must be >= 1")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in [0, 1)")
        if self.f1_average not in ("macro", "micro", "binary"):
            raise ConfigError(f"unknown f1 average {self.f1_average!r}")
        object.__setattr__(self, "ablation", tuple(sorted(check_ablation(self.ablation))))


@dataclass
class RunConfig:
    input: str | None = None
    test_input: str | None = None
    out: str = "out"
    ssa: SsaConfig = field(default_factory=SsaConfig)
    mtf: MtfConfig = field(default_factory=MtfConfig)
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    threads: int | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf8") as fh:
            fh.write(self.to_json() + "\n")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        try:
            ssa = _build(SsaConfig, data.pop("ssa", {}))
            mtf = _build(MtfConfig, data.pop("mtf", {}))
            net_data = dict(data.pop("net", {}))
            branch = _build(BranchConfig, net_data.pop("branch", {}))
            net = _build(NetConfig, net_data, branch=branch)
            train = _build(TrainConfig, data.pop("train", {}))
            return _build(cls, data, ssa=ssa, mtf=mtf, net=net, train=train)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf8") as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)


def _tuplify(value):
    if isinstance(value, list):
        return tuple(_tuplify(v) for v in value)
    return value


def _build(kind, data, **fixed):
    if not isinstance(data, dict):
        raise ConfigError(f"{kind.__name__} section must be an object")
    names = {f.name for f in dataclasses.fields(kind)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {kind.__name__} key(s): {sorted(unknown)}")
    values = {k: _tuplify(v) for k, v in data.items()}
    values.update(fixed)
    return kind(**values)
