"""Run configuration: defaults, profiles, ``key = value`` files, flag overrides."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .autograd import ContractViolation
from .model import AttentionConfig, ModelConfig, canonical_variant


@dataclass(frozen=True)
class RunConfig:
    manifest: str | None = None
    eval_manifest: str | None = None
    checkpoint: str | None = None
    out: str = "."
    crop: int = 384
    crops_per_image: int = 100
    batch: int = 3
    epochs: int = 10
    max_iters: int | None = None
    lr: float = 1e-4
    context_m: int = 1
    heads: int = 12
    width: int = 240
    variant: str = "full-ctn"
    sigma: float = 4.0
    tile: int = 384
    max_dim: int = 1920
    seed: int = 0
    init_std: float = 0.001
    init_scheme: str = "he"
    folds: int = 5

    def model_config(self, **overrides) -> ModelConfig:
        cfg = ModelConfig(
            height=self.crop,
            width=self.crop,
            attention=AttentionConfig(d=self.width, h=self.heads, m=self.context_m),
            variant=self.variant,
            init_std=self.init_std,
            init_scheme=self.init_scheme,
        )
        return replace(cfg, **overrides) if overrides else cfg


# Desk-scale profile for synthetic fixtures; widths stay at the full plan.
PROFILES = {
    "full": {},
    "smoke": {"crop": 64, "batch": 2, "epochs": 2, "crops_per_image": 100, "tile": 64},
}

_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(key: str, value: str):
    if key not in _FIELDS:
        raise ContractViolation(f"unknown config key {key!r}")
    kind = str(_FIELDS[key].type)
    if value in ("", "none", "None") and "None" in kind:
        return None
    try:
        if kind.startswith("int"):
            return int(value)
        if kind.startswith("float"):
            return float(value)
    except ValueError as exc:
        raise ContractViolation(f"config key {key!r}: cannot parse {value!r}") from exc
    if key == "variant":
        return canonical_variant(value)
    return value


def parse_config_file(path) -> dict:
    """Read ``key = value`` lines; ``#`` starts a comment, dashes in keys become underscores."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractViolation(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve(config_file=None, flags: dict | None = None, profile: str | None = None) -> RunConfig:
    """Defaults < profile < config file < flags."""
    file_values = parse_config_file(config_file) if config_file else {}
    profile = (flags or {}).get("profile") or profile or file_values.pop("profile", None) or "full"
    file_values.pop("profile", None)
    if profile not in PROFILES:
        raise ContractViolation(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    merged = dict(PROFILES[profile])
    merged.update({k: _coerce(k, v) for k, v in file_values.items()})
    for key, value in (flags or {}).items():
        if key == "profile" or value is None:
            continue
        merged[key] = _coerce(key, str(value)) if isinstance(value, str) else value
    if "variant" in merged:
        merged["variant"] = canonical_variant(merged["variant"])
    cfg = RunConfig(**merged)
    if cfg.crop % 8:
        raise ContractViolation(f"crop size must be divisible by 8, got {cfg.crop}")
    if cfg.tile % 8:
        raise ContractViolation(f"tile size must be divisible by 8, got {cfg.tile}")
    if cfg.batch < 1 or cfg.epochs < 1 or cfg.crops_per_image < 1:
        raise ContractViolation("batch, epochs and crops_per_image must be positive")
    return cfg
