"""Training configuration and its ``key = value`` file format.

Example::

    [train]
    rounds = 30
    batch = 128
    lr = 0.9

    [he]
    ring_dim = 2048
    ct_size = 1024
    slot_size = 32
    level_budget = 30
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace

from .cipher import HEParams
from .errors import ParameterError
from .henn.model import NetworkSpec

CONFIG_ENV = "HETRAIN_CONFIG"


@dataclass(frozen=True)
class TrainConfig:
    rounds: int = 30
    batch_size: int = 128
    lr: float = 0.9
    workers: int = 1
    local_epochs: int = 1
    dims: tuple = (21, 32, 16, 5)
    act_degree: int = 15
    act_domain: tuple = (-8.0, 8.0)
    he: HEParams = field(default_factory=HEParams)
    init_seed: int = 0
    shuffle_seed: int = 0
    partition_seed: int = 0
    key_seed: int | None = None
    noise_seed: int = 0
    split_seed: int = 0
    synth_seed: int = 7
    per_class: int = 200
    round_deadline: float = 4600.0

    def __post_init__(self):
        if self.rounds < 0:
            raise ParameterError("rounds must be >= 0")
        if self.batch_size < 1:
            raise ParameterError("batch must be >= 1")
        if not self.lr > 0:
            raise ParameterError("lr must be > 0")
        if self.workers < 1:
            raise ParameterError("workers must be >= 1")
        if self.local_epochs < 1:
            raise ParameterError("local_epochs must be >= 1")
        if self.round_deadline <= 0:
            raise ParameterError("round_deadline must be > 0")

    @property
    def spec(self) -> NetworkSpec:
        return NetworkSpec(self.dims, self.act_degree, self.act_domain)

    @property
    def local_batch_size(self) -> int:
        return max(1, self.batch_size // self.workers)

    def replace(self, **kw) -> TrainConfig:
        return replace(self, **kw)

    def to_text(self) -> str:
        p = self.he
        seeds = {f.name: getattr(self, f.name) for f in fields(self) if f.name.endswith("_seed")}
        lines = [
            "[train]",
            f"rounds = {self.rounds}",
            f"batch = {self.batch_size}",
            f"lr = {self.lr!r}",
            f"local_epochs = {self.local_epochs}",
            "",
            "[model]",
            "dims = " + ",".join(str(d) for d in self.dims),
            f"act_degree = {self.act_degree}",
            f"act_domain = {self.act_domain[0]!r},{self.act_domain[1]!r}",
            "",
            "[he]",
            f"ring_dim = {p.ring_dim}",
            f"ct_size = {p.ct_size}",
            f"slot_size = {p.slot_size}",
            f"level_budget = {p.level_budget}",
            f"noise_sigma = {p.noise_sigma!r}",
            "",
            "[fed]",
            f"workers = {self.workers}",
            f"round_deadline = {self.round_deadline!r}",
            "",
            "[data]",
            f"per_class = {self.per_class}",
            "",
            "[seeds]",
        ]
        lines += [f"{k[:-5]} = {'' if v is None else v}" for k, v in seeds.items()]
        return "\n".join(lines) + "\n"


_KEYS = {
    ("train", "rounds"): ("rounds", int),
    ("train", "batch"): ("batch_size", int),
    ("train", "lr"): ("lr", float),
    ("train", "local_epochs"): ("local_epochs", int),
    ("model", "dims"): ("dims", lambda s: tuple(int(v) for v in s.split(","))),
    ("model", "act_degree"): ("act_degree", int),
    ("model", "act_domain"): ("act_domain", lambda s: tuple(float(v) for v in s.split(","))),
    ("fed", "workers"): ("workers", int),
    ("fed", "round_deadline"): ("round_deadline", float),
    ("data", "per_class"): ("per_class", int),
}
_HE_KEYS = {"ring_dim": int, "ct_size": int, "slot_size": int, "level_budget": int, "noise_sigma": float}


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ParameterError(f"malformed config: {e}") from None
    kw = {}
    he = {}
    for section in cp.sections():
        for key, raw in cp.items(section):
            if section == "he":
                if key not in _HE_KEYS:
                    raise ParameterError(f"unknown config key [he] {key}")
                conv = _HE_KEYS[key]
                target = he
                name = key
            elif section == "seeds":
                name, conv, target = f"{key}_seed", (lambda s: int(s) if s.strip() else None), kw
            elif (section, key) in _KEYS:
                name, conv = _KEYS[(section, key)]
                target = kw
            else:
                raise ParameterError(f"unknown config key [{section}] {key}")
            try:
                target[name] = conv(raw)
            except ValueError:
                raise ParameterError(f"bad value for [{section}] {key}: {raw!r}") from None
    base = base or TrainConfig()
    valid = {f.name for f in fields(TrainConfig)}
    for name in kw:
        if name not in valid:
            raise ParameterError(f"unknown config key {name}")
    if he:
        b = base.he
        merged = dict(ring_dim=b.ring_dim, ct_size=b.ct_size, slot_size=b.slot_size,
                      level_budget=b.level_budget, noise_sigma=b.noise_sigma)
        merged.update(he)
        kw["he"] = HEParams(**merged)
    return replace(base, **kw)


def load_config(path=None) -> TrainConfig:
    """Read ``path``, else ``$HETRAIN_CONFIG``, else the defaults."""
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return TrainConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as e:
        raise ParameterError(f"cannot read config {path}: {e}") from None
