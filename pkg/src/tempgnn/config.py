"""Model/training configuration files.

The format is INI-style key/value text (read with :mod:`configparser`)::

    [model]
    version = 1
    name = tgn

    [sampling]
    layers = 1
    fanout = 10
    strategy = most_recent
    snapshots = 1
    snapshot_length = inf
    timestamp_mode = neighbor_time

    [memory]
    type = gru            ; none | rnn | gru | apan
    dim = 100
    mailbox_size = 1
    comb = most_recent    ; most_recent | mean
    delivery = endpoints  ; endpoints | hop1_neighbors
    time_projection = false
    mail_dt = as_printed  ; as_printed | per_endpoint

    [gnn]
    layers = 1            ; 0 = embeddings straight from memory
    heads = 2
    dim = 100
    time_dim = 100
    combiner = false
    decoder = concat      ; concat | product

    [train]
    batch_size = 600
    chunk_size = 600
    epochs = 10
    lr = 0.001
    dropout = 0.1
    seed = 0
    eval_batch_size = 600
    eval_protocol = replay ; replay | continue
    reset_memory_each_epoch = true
    threads = 1
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .sampler import SamplingConfig
from .state import COMB_MEAN, COMB_RECENT, ENDPOINTS, HOP1

CONFIG_VERSION = 1
MEMORY_TYPES = ("none", "rnn", "gru", "apan")
_MAILBOX_KEYS = ("mailbox_size", "comb", "delivery", "mail_dt")


@dataclass
class MemoryConfig:
    type: str = "none"
    dim: int = 100
    mailbox_size: int = 1
    comb: str = COMB_RECENT
    delivery: str = ENDPOINTS
    time_projection: bool = False
    mail_dt: str = "as_printed"

    @property
    def enabled(self):
        return self.type != "none"


@dataclass
class GNNConfig:
    layers: int = 1
    heads: int = 2
    dim: int = 100
    time_dim: int = 100
    combiner: bool = False
    decoder: str = "concat"


@dataclass
class TrainConfig:
    batch_size: int = 600
    chunk_size: int = 600
    epochs: int = 10
    lr: float = 1e-3
    dropout: float = 0.1
    seed: int = 0
    eval_batch_size: int = 600
    eval_protocol: str = "replay"
    reset_memory_each_epoch: bool = True
    threads: int = 1


@dataclass
class ModelConfig:
    name: str = "custom"
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    gnn: GNNConfig = field(default_factory=GNNConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        self.validate()

    @property
    def needs_sampling(self) -> bool:
        return self.gnn.layers > 0 or (self.memory.enabled and self.memory.delivery == HOP1)

    def validate(self):
        m, g, s, t = self.memory, self.gnn, self.sampling, self.train
        if m.type not in MEMORY_TYPES:
            raise ConfigError(f"memory.type must be one of {MEMORY_TYPES}, got {m.type!r}")
        if m.comb not in (COMB_RECENT, COMB_MEAN):
            raise ConfigError(f"unknown memory.comb {m.comb!r}")
        if m.delivery not in (ENDPOINTS, HOP1):
            raise ConfigError(f"unknown memory.delivery {m.delivery!r}")
        if m.mail_dt not in ("as_printed", "per_endpoint"):
            raise ConfigError(f"unknown memory.mail_dt {m.mail_dt!r}")
        if m.mailbox_size < 1:
            raise ConfigError("memory.mailbox_size must be >= 1")
        if g.layers < 0:
            raise ConfigError("gnn.layers must be >= 0")
        if g.layers > 0 and g.layers != s.num_layers:
            raise ConfigError(f"gnn.layers ({g.layers}) must equal sampling.layers ({s.num_layers})")
        if g.layers == 0 and not m.enabled:
            raise ConfigError("a model needs message passing layers, node memory, or both")
        if g.layers == 0 and s.n_snapshots > 1:
            raise ConfigError("snapshots require message passing layers")
        if s.n_snapshots > 1 and not g.combiner:
            raise ConfigError("more than one snapshot requires gnn.combiner = true")
        if g.layers > 0 and g.dim % g.heads:
            raise ConfigError(f"gnn.heads ({g.heads}) must divide gnn.dim ({g.dim})")
        if m.type == "apan" and m.dim % g.heads:
            raise ConfigError("gnn.heads must divide memory.dim for the attention updater")
        if g.decoder not in ("concat", "product"):
            raise ConfigError(f"unknown gnn.decoder {g.decoder!r}")
        if t.batch_size < 1 or t.chunk_size < 1 or t.batch_size % t.chunk_size:
            raise ConfigError("train.chunk_size must divide train.batch_size")
        if t.eval_protocol not in ("replay", "continue"):
            raise ConfigError(f"unknown train.eval_protocol {t.eval_protocol!r}")
        if not 0 <= t.dropout < 1:
            raise ConfigError("train.dropout must be in [0, 1)")

    # -- text round trip ---------------------------------------------------------
    def to_text(self) -> str:
        s = self.sampling
        cp = configparser.ConfigParser()
        cp["model"] = {"version": str(CONFIG_VERSION), "name": self.name}
        cp["sampling"] = {
            "layers": str(s.num_layers),
            "fanout": ",".join(str(k) for k in s.fanouts),
            "strategy": s.strategy,
            "snapshots": str(s.n_snapshots),
            "snapshot_length": repr(s.snapshot_length) if not math.isinf(s.snapshot_length) else "inf",
            "timestamp_mode": s.neighbor_timestamp_mode,
        }
        for section, obj in (("memory", self.memory), ("gnn", self.gnn), ("train", self.train)):
            cp[section] = {f.name: _fmt(getattr(obj, f.name)) for f in fields(obj)}
        if not self.memory.enabled:
            cp["memory"] = {"type": "none"}
        lines = []
        for sec in cp.sections():
            lines.append(f"[{sec}]")
            lines += [f"{k} = {v}" for k, v in cp[sec].items()]
            lines.append("")
        return "\n".join(lines)

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        version = cp.getint("model", "version", fallback=CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {version}")
        known = {"model", "sampling", "memory", "gnn", "train"}
        unknown = set(cp.sections()) - known
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        sampling = _sampling_from(cp["sampling"] if cp.has_section("sampling") else {})
        memory = _section(MemoryConfig, cp, "memory")
        if memory.type == "none":
            given = [k for k in _MAILBOX_KEYS if cp.has_option("memory", k)]
            if given:
                raise ConfigError(f"memory.type = none does not take mailbox settings: {given}")
        return cls(
            name=cp.get("model", "name", fallback="custom"),
            sampling=sampling,
            memory=memory,
            gnn=_section(GNNConfig, cp, "gnn"),
            train=_section(TrainConfig, cp, "train"),
        )

    @classmethod
    def load(cls, path) -> "ModelConfig":
        return cls.from_text(Path(path).read_text())

    def save(self, path):
        Path(path).write_text(self.to_text())

    def with_train(self, **kw) -> "ModelConfig":
        return replace(self, train=replace(self.train, **kw))


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _section(cls, cp, name):
    if not cp.has_section(name):
        return cls()
    kw = {}
    sec = cp[name]
    valid = {f.name: f for f in fields(cls)}
    for key in sec:
        if key not in valid:
            raise ConfigError(f"unknown key {name}.{key}")
        typ = type(getattr(cls(), key))
        try:
            if typ is bool:
                kw[key] = sec.getboolean(key)
            elif typ is int:
                kw[key] = sec.getint(key)
            elif typ is float:
                kw[key] = sec.getfloat(key)
            else:
                kw[key] = sec[key]
        except ValueError as exc:
            raise ConfigError(f"bad value for {name}.{key}: {exc}") from exc
    return cls(**kw)


def _sampling_from(sec) -> SamplingConfig:
    allowed = {"layers", "fanout", "strategy", "snapshots", "snapshot_length", "timestamp_mode"}
    extra = set(sec) - allowed
    if extra:
        raise ConfigError(f"unknown sampling keys: {sorted(extra)}")
    try:
        layers = int(sec.get("layers", 1))
        fan = [int(x) for x in str(sec.get("fanout", "10")).split(",") if x.strip()]
        if len(fan) == 1 and layers > 1:
            fan = fan * layers
        return SamplingConfig(
            num_layers=layers,
            fanouts=fan,
            strategy=sec.get("strategy", "most_recent"),
            n_snapshots=int(sec.get("snapshots", 1)),
            snapshot_length=float(sec.get("snapshot_length", "inf")),
            neighbor_timestamp_mode=sec.get("timestamp_mode", "neighbor_time"),
        )
    except ValueError as exc:
        raise ConfigError(f"bad sampling value: {exc}") from exc


# -- presets for the five reference compositions ---------------------------------

def preset(name: str, dim: int = 100, time_dim: int = 100, **train) -> ModelConfig:
    """JODIE, DySAT, TGAT, TGN and APAN skeletons with the default hyperparameters."""
    name = name.lower()
    tr = TrainConfig(**train)
    if name == "jodie":
        return ModelConfig("jodie", SamplingConfig(1, (10,), "most_recent"),
                           MemoryConfig("rnn", dim, 1, time_projection=True),
                           GNNConfig(0, 2, dim, time_dim), tr)
    if name == "dysat":
        return ModelConfig("dysat", SamplingConfig(2, (10, 10), "uniform", 3, 10000.0, "root_time"),
                           MemoryConfig("none"), GNNConfig(2, 2, dim, time_dim, combiner=True), tr)
    if name == "tgat":
        return ModelConfig("tgat", SamplingConfig(2, (10, 10), "uniform"),
                           MemoryConfig("none"), GNNConfig(2, 2, dim, time_dim), tr)
    if name == "tgn":
        return ModelConfig("tgn", SamplingConfig(1, (10,), "most_recent"),
                           MemoryConfig("gru", dim, 1), GNNConfig(1, 2, dim, time_dim), tr)
    if name == "apan":
        return ModelConfig("apan", SamplingConfig(1, (10,), "most_recent"),
                           MemoryConfig("apan", dim, 10, delivery=HOP1),
                           GNNConfig(0, 2, dim, time_dim), tr)
    raise ConfigError(f"unknown preset {name!r}")
