"""Run configuration and the plain-text ``key = value`` file format.

Keys are ``seed`` or ``section.field`` (``data.ids = 20``, ``train.lr = 0.01``).
Blank lines and ``#`` comments are ignored; unknown keys are rejected with the
offending line number.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .encoder import EncoderConfig
from .errors import ConfigurationError
from .fdm import FdmConfig


@dataclass
class DataConfig:
    ids: int = 20  # training identities
    eval_ids: int = 10  # held-out identities for query/gallery
    per_id: int = 16  # 8 queries + 8 gallery images per held-out identity
    patches: int = 30


@dataclass
class TrainConfig:
    p_ids: int = 4  # identities per batch
    s_per_id: int = 4  # samples per identity
    epochs: int = 20
    lr: float = 0.008
    min_lr: float = 0.0
    momentum: float = 0.9
    weight_decay: float = 1e-4
    tau: float = 0.05
    bank_momentum: float = 0.2
    contrastive_norm: bool = True  # cosine logits; raw inner products diverge at tau 0.05
    mse: bool = True
    loss_norm: str = "half"  # "half" or "mean"
    use_npo: bool = True
    use_oem: bool = True
    use_fdm: bool = True
    random_erase: bool = False
    triplet: bool = False
    triplet_margin: float = 0.3

    @property
    def batch_size(self) -> int:
        return self.p_ids * self.s_per_id


@dataclass
class EvalConfig:
    occlude_queries: bool = True
    cross_camera_only: bool = False


@dataclass
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    fdm: FdmConfig = field(default_factory=FdmConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "RunConfig":
        self.encoder.validate()
        t = self.train
        if t.s_per_id < 2:
            raise ConfigurationError("train.s_per_id must be >= 2")
        if t.p_ids < 2 and t.triplet:
            raise ConfigurationError("triplet loss needs train.p_ids >= 2")
        if t.loss_norm not in ("half", "mean"):
            raise ConfigurationError(f"train.loss_norm must be 'half' or 'mean', got {t.loss_norm!r}")
        if self.data.per_id < t.s_per_id:
            raise ConfigurationError(
                f"data.per_id={self.data.per_id} < train.s_per_id={t.s_per_id}")
        if t.use_fdm and not 1 <= self.fdm.k < self.data.ids:
            raise ConfigurationError(f"fdm.k={self.fdm.k} must lie in [1, data.ids={self.data.ids})")
        if (4 * self.encoder.channels) % self.fdm.heads:
            raise ConfigurationError(f"FDM dim {4 * self.encoder.channels} not divisible by fdm.heads")
        if t.tau <= 0:
            raise ConfigurationError("train.tau must be positive")
        return self

    def replace(self, **sections) -> "RunConfig":
        """Copy with overrides, e.g. ``cfg.replace(train={"use_fdm": False}, seed=3)``."""
        new = dataclasses.replace(self)
        for name, value in sections.items():
            if isinstance(value, dict):
                setattr(new, name, dataclasses.replace(getattr(self, name), **value))
            else:
                setattr(new, name, value)
        return new

    def dumps(self) -> str:
        lines = [f"seed = {self.seed}"]
        for sec in ("data", "encoder", "fdm", "train", "eval"):
            obj = getattr(self, sec)
            for f in dataclasses.fields(obj):
                v = getattr(obj, f.name)
                lines.append(f"{sec}.{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"

    def run_id(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:12]


_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _convert(raw: str, typ, where: str):
    typ = typ if isinstance(typ, type) else {"int": int, "float": float, "bool": bool, "str": str}[typ]
    if typ is bool:
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigurationError(f"{where}: expected a boolean, got {raw!r}")
    try:
        return typ(raw)
    except ValueError:
        raise ConfigurationError(f"{where}: expected {typ.__name__}, got {raw!r}") from None


def parse_config(text: str, source: str = "<config>", base: RunConfig | None = None) -> RunConfig:
    cfg = dataclasses.replace(base) if base is not None else RunConfig()
    sections = {f.name for f in dataclasses.fields(RunConfig)} - {"seed"}
    for name in sections:
        setattr(cfg, name, dataclasses.replace(getattr(cfg, name)))
    for lineno, line in enumerate(text.splitlines(), 1):
        where = f"{source}:{lineno}"
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{where}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key == "seed":
            cfg.seed = _convert(raw, int, where)
            continue
        sec, _, name = key.partition(".")
        if sec not in sections:
            raise ConfigurationError(f"{where}: unknown key {key!r}")
        obj = getattr(cfg, sec)
        fields = {f.name: f for f in dataclasses.fields(obj)}
        if name not in fields:
            raise ConfigurationError(f"{where}: unknown key {key!r}")
        setattr(obj, name, _convert(raw, fields[name].type, where))
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    return parse_config(text, str(path))
