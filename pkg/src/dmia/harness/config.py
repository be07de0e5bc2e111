"""Experiment configuration: flat ``key = value`` text with ``#`` comments.

Every run is described by one config. Serialization is canonical (fixed key
order, repr-stable values) so configs round-trip losslessly and hash stably;
the 12-hex-digit hash names the run's output directory and is stamped into
every CSV the run produces.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

from ..errors import ConfigError

MODEL_KINDS = ("ddim", "gan")
SCHEDULE_KINDS = ("linear", "cosine")
ARCH_CHOICES = ("auto", "mlp", "small_unet")
ATTACK_KINDS = ("whitebox", "blackbox", "logan")
VARIANCE_CHOICES = ("eta0", "eta1", "hat")


@dataclass(frozen=True)
class ExperimentConfig:
    """Declarative description of one run.

    ``epochs = 0`` means "derive from the reference pair": the epoch count
    becomes round(ref_epochs * ref_size / train_size), aligning the number
    of images seen across training sizes. ``attack_t = 0`` means "use the
    step whose signal product is closest to 0.7". ``lr = 0`` picks the
    model-kind default (1e-3 for ddim, 2e-4 for gan).
    """

    dataset: str = "synth:bars?n=3600&size=16&seed=1"
    model: str = "ddim"
    arch: str = "auto"
    schedule: str = "cosine"
    T: int = 1000
    train_size: int = 600
    epochs: int = 0
    ref_size: int = 0
    ref_epochs: int = 0
    batch_size: int = 64
    lr: float = 0.0
    sample_steps: int = 20
    variance: str = "eta0"
    attack: str = "whitebox"
    attack_t: int = 0
    attack_k: int = 8
    gen_count: int = 2000
    eval_count: int = 200
    seed_data: int = 1
    seed_train: int = 2
    seed_attack: int = 3
    latent_dim: int = 100
    out: str = "runs"

    def validate(self) -> "ExperimentConfig":
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {MODEL_KINDS}, got '{self.model}'")
        if self.schedule not in SCHEDULE_KINDS:
            raise ConfigError(f"schedule must be one of {SCHEDULE_KINDS}, got '{self.schedule}'")
        if self.arch not in ARCH_CHOICES:
            raise ConfigError(f"arch must be one of {ARCH_CHOICES}, got '{self.arch}'")
        if self.attack not in ATTACK_KINDS:
            raise ConfigError(f"attack must be one of {ATTACK_KINDS}, got '{self.attack}'")
        if not (self.variance in VARIANCE_CHOICES or self.variance.startswith("eta:")):
            raise ConfigError(f"variance must be eta0|eta1|hat|eta:<float>, got '{self.variance}'")
        if self.epochs == 0 and (self.ref_size <= 0 or self.ref_epochs <= 0):
            raise ConfigError("either epochs or the (ref_size, ref_epochs) pair must be set")
        for name in ("T", "train_size", "batch_size", "sample_steps", "attack_k", "gen_count", "eval_count", "latent_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        return self

    def variance_params(self) -> tuple[str, float]:
        """(variance_mode, eta) for the sampler spec."""
        if self.variance == "hat":
            return "hat", 0.0
        if self.variance == "eta0":
            return "eta", 0.0
        if self.variance == "eta1":
            return "eta", 1.0
        return "eta", float(self.variance.split(":", 1)[1])

    def effective_lr(self) -> float:
        if self.lr > 0:
            return self.lr
        return 1e-3 if self.model == "ddim" else 2e-4


_FIELDS = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(name: str, raw: str, line_no: int):
    kind = _FIELDS[name]
    try:
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
        return raw
    except ValueError as e:
        raise ConfigError(f"line {line_no}: cannot parse '{name} = {raw}': {e}") from None


def parse_config(text: str) -> ExperimentConfig:
    """Parse flat key = value text; unknown keys are errors naming key and line."""
    values = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {line_no}: expected 'key = value', got '{line.strip()}'")
        key, _, raw = body.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in _FIELDS:
            raise ConfigError(f"line {line_no}: unknown config key '{key}'")
        if key in values:
            raise ConfigError(f"line {line_no}: duplicate config key '{key}'")
        values[key] = _coerce(key, raw, line_no)
    return ExperimentConfig(**values).validate()


def load_config(path: str | Path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def serialize_config(cfg: ExperimentConfig) -> str:
    lines = []
    for f in fields(ExperimentConfig):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {v!r}" if isinstance(v, float) else f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    """12 hex digits identifying the run (output dir independent)."""
    canonical = serialize_config(replace(cfg, out=""))
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]
