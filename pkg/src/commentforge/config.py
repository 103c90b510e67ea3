"""Pipeline configuration: defaults, file loading, CLI override precedence.

The config file is a flat TOML-like key/value format: one ``key = value`` per
line, ``#`` comments, quoted or bare strings, ints, floats and true/false.
Precedence when a command resolves its settings: CLI flag, then config file,
then the COMMENTFORGE_SEED environment variable (seed only), then defaults.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass

SEED_ENV_VAR = "COMMENTFORGE_SEED"


@dataclass
class PipelineConfig:
    tokenizer: str = "cjk-char"
    vocab_cap: int = 50000
    hash_seed: int = 0  # recorded for provenance; the hashing layer pins seed 0
    top_k: int = 5
    alpha: float = 0.2
    upvote_threshold: int = 10
    emb_dim: int = 128
    enc_hidden: int = 256
    dec_hidden: int = 512
    us_emb_dim: int = 64
    us_hidden: int = 32
    lr: float = 1e-3
    lr_decay: float = 0.5
    lambda_cov: float = 1.0
    cov_from_epoch: int = 1
    epochs: int = 10
    batch_size: int = 16
    val_fraction: float = 0.1
    seed: int = 13
    max_src_len: int = 400
    max_tgt_len: int = 50
    beam_size: int = 4
    use_pointer: bool = True

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _parse_value(raw: str):
    raw = raw.strip()
    if raw.startswith('"') and raw.endswith('"') and len(raw) >= 2:
        return raw[1:-1]
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        values[key.strip()] = _parse_value(raw)
    return values


def load_config(path=None, overrides: dict | None = None) -> tuple[PipelineConfig, set[str]]:
    """Build a config from file plus overrides; returns it and the set keys."""
    fields = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}
    cfg = PipelineConfig()
    provided: set[str] = set()
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            values = parse_config_text(fh.read())
        for key, value in values.items():
            if key not in fields:
                raise ValueError(f"{path}: unknown config key {key!r}")
            setattr(cfg, key, _coerce(key, value, getattr(cfg, key)))
            provided.add(key)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        setattr(cfg, key, _coerce(key, value, getattr(cfg, key)))
        provided.add(key)
    if "seed" not in provided and os.environ.get(SEED_ENV_VAR):
        cfg.seed = int(os.environ[SEED_ENV_VAR])
    return cfg, provided


def _coerce(key, value, default):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        raise ValueError(f"config key {key!r} expects true/false, got {value!r}")
    if isinstance(default, int) and not isinstance(value, int):
        raise ValueError(f"config key {key!r} expects an integer, got {value!r}")
    if isinstance(default, float):
        return float(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ValueError(f"config key {key!r} expects a string, got {value!r}")
    return value


def config_hash(cfg: PipelineConfig | dict) -> str:
    payload = cfg.as_dict() if isinstance(cfg, PipelineConfig) else dict(cfg)
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]
