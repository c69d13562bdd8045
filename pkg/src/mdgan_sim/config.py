"""Experiment configuration. Defaults follow the 5-benign-client, 100-round setup."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

PROTOCOLS = ("simple", "swap")
DEFENSES = ("none", "dfg", "dfg_plus", "dfg_adj")
AGGREGATIONS = ("mean", "sum")


class ConfigError(ValueError):
    """A configuration value is missing, mistyped, or violates an invariant."""


@dataclass(frozen=True)
class ExperimentConfig:
    # federation
    n_benign: int = 5
    n_freeriders: int = 0
    protocol: str = "simple"
    defense: str = "none"
    freerider_reinit_every_round: bool = False
    # schedule
    rounds: int = 100
    swap_period: int = 5
    probe_period: int = 10
    probe_size: int = 500
    batch_size: int = 160
    d_steps_per_g_step: int = 5
    metrics_period: int = 5
    eval_samples: int = 10_000
    # training
    loss: str = "nsgan"
    clip: float = 0.01
    gp_weight: float = 10.0
    aggregation: str = "mean"
    optimizer: str = "adam"
    g_lr: float = 1e-3
    d_lr: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.999
    latent_dim: int = 4
    g_hidden: tuple[int, ...] = (64, 64)
    d_hidden: tuple[int, ...] = (64, 64)
    # data
    n_modes: int = 8
    radius: float = 2.0
    noise_std: float = 0.05
    shard_size: int = 1600
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(cond, fld, msg):
            if not cond:
                raise ConfigError(f"{fld}: {msg}")

        need(self.protocol in PROTOCOLS, "protocol", f"must be one of {PROTOCOLS}, got {self.protocol!r}")
        need(self.defense in DEFENSES, "defense", f"must be one of {DEFENSES}, got {self.defense!r}")
        need(self.aggregation in AGGREGATIONS, "aggregation", f"must be one of {AGGREGATIONS}")
        need(self.loss in ("nsgan", "wgan_clip", "wgan_gp"), "loss", f"unknown loss {self.loss!r}")
        need(self.optimizer in ("adam", "sgd"), "optimizer", f"unknown optimizer {self.optimizer!r}")
        need(not (self.defense == "dfg_plus" and self.protocol != "swap"), "defense",
             "dfg_plus requires protocol=swap (the swap gate only exists when clients swap)")
        need(self.n_benign >= 1, "n_benign", "must be >= 1")
        need(self.n_freeriders >= 0, "n_freeriders", "must be >= 0")
        need(self.rounds >= 0, "rounds", "must be >= 0")
        for name in ("swap_period", "probe_period", "probe_size", "batch_size",
                     "d_steps_per_g_step", "metrics_period", "latent_dim", "n_modes", "shard_size"):
            need(getattr(self, name) >= 1, name, "must be >= 1")
        need(self.rounds == 0 or self.probe_period <= self.rounds or self.defense == "none",
             "probe_period", "must not exceed rounds when a defense is enabled")
        need(self.eval_samples >= 3, "eval_samples", "must be >= 3")
        need(self.batch_size <= self.shard_size, "batch_size", "must not exceed shard_size")
        need(self.shard_size % self.n_modes == 0, "shard_size", "must be divisible by n_modes")
        need(self.radius >= 0, "radius", "must be >= 0")
        need(self.noise_std > 0, "noise_std", "must be > 0")
        need(self.g_lr > 0 and self.d_lr > 0, "g_lr/d_lr", "must be > 0")
        need(self.clip > 0, "clip", "must be > 0")
        need(self.gp_weight >= 0, "gp_weight", "must be >= 0")
        need(all(h >= 1 for h in self.g_hidden + self.d_hidden), "g_hidden/d_hidden",
             "layer widths must be >= 1")

    @property
    def n_clients(self) -> int:
        return self.n_benign + self.n_freeriders

    @property
    def d_shape(self) -> tuple[int, ...]:
        return (2, *self.d_hidden, 1)

    @property
    def g_shape(self) -> tuple[int, ...]:
        return (self.latent_dim, *self.g_hidden, 2)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["g_hidden"] = list(self.g_hidden)
        d["d_hidden"] = list(self.d_hidden)
        return d


FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def coerce(name: str, value):
    """Convert a raw (string or parsed) value to the declared type of ``name``."""
    if name not in FIELD_TYPES:
        raise ConfigError(f"{name}: unknown configuration key")
    kind = FIELD_TYPES[name]
    try:
        if kind == "bool":
            if isinstance(value, bool):
                return value
            s = str(value).strip().lower()
            if s in ("1", "true", "yes", "on"):
                return True
            if s in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            return int(str(value).strip()) if isinstance(value, str) else int(value)
        if kind == "float":
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        if kind.startswith("tuple"):
            if isinstance(value, str):
                parts = [p for p in value.replace("(", "").replace(")", "").split(",") if p.strip()]
                return tuple(int(p) for p in parts)
            return tuple(int(v) for v in value)
        if not isinstance(value, str):
            raise ValueError(value)
        return value.strip()
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: expected {kind}, got {value!r}") from None


# shown next to each flag in --help
FIELD_NOTES = {
    "n_benign": "5 benign clients, as in the reference setup",
    "rounds": "100 training rounds",
    "swap_period": "swap every E rounds (swap protocol)",
    "probe_period": "defense runs every L=10 rounds",
    "probe_size": "probe set of 500 generated samples",
    "batch_size": "160 so a 1600-point shard gives 10 mini-batches per round",
    "d_steps_per_g_step": "one generator step per 5 discriminator steps",
    "aggregation": "mean over included clients (sum available)",
}
