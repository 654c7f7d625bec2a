"""Flat experiment records: ``net.*``, ``loss.*``, ``train.*`` and ``kalman.*`` keys."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

from taylor_aec.config import format_kv, read_kv_file
from taylor_aec.kalman import PbfdkfConfig
from taylor_aec.losses import LossConfig
from taylor_aec.model import NetConfig
from taylor_aec.train import TrainConfig

SECTIONS = ("net", "loss", "train", "kalman")


def _kalman_from_flat(record: dict) -> PbfdkfConfig:
    kwargs = {}
    for f in fields(PbfdkfConfig):
        if f.name in record:
            kwargs[f.name] = int(record[f.name]) if isinstance(f.default, int) else float(record[f.name])
    return PbfdkfConfig(**kwargs)


@dataclass(frozen=True)
class ExperimentConfig:
    net: NetConfig = field(default_factory=NetConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    kalman: PbfdkfConfig = field(default_factory=PbfdkfConfig)

    @classmethod
    def from_flat(cls, record: dict) -> "ExperimentConfig":
        parts = {s: {} for s in SECTIONS}
        known = {
            "net": {f.name for f in fields(NetConfig)},
            "loss": {f.name for f in fields(LossConfig)},
            "train": {f.name for f in fields(TrainConfig)},
            "kalman": {f.name for f in fields(PbfdkfConfig)},
        }
        for key, value in record.items():
            section, _, name = key.partition(".")
            if section not in parts or name not in known[section]:
                raise ValueError(f"unknown config key {key!r}")
            parts[section][name] = value
        return cls(
            NetConfig.from_flat(parts["net"]),
            LossConfig.from_flat(parts["loss"]),
            TrainConfig.from_flat(parts["train"]),
            _kalman_from_flat(parts["kalman"]),
        )

    @classmethod
    def load(cls, path=None, overrides=()) -> "ExperimentConfig":
        from taylor_aec.config import apply_overrides

        record = read_kv_file(path) if path else {}
        return cls.from_flat(apply_overrides(record, overrides))

    def to_flat(self) -> dict:
        out = {}
        for section, record in (("net", self.net.to_flat()), ("loss", asdict(self.loss)),
                                ("train", asdict(self.train)), ("kalman", asdict(self.kalman))):
            out.update({f"{section}.{k}": v for k, v in record.items()})
        return out

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(format_kv(self.to_flat()) + "\n")
