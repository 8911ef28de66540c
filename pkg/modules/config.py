"""
Flat key=value run configuration.

Lines are `key=value`; `#` starts a comment; blank lines are ignored. Unknown
keys, malformed lines and out-of-range values raise ConfigError with the line
number. Keys that are absent keep their defaults.
"""

import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional, Tuple

DEFAULT_OUTPUT_DIR = "icb-output"
_TRUE = {"on", "true", "1", "yes"}
_FALSE = {"off", "false", "0", "no"}


class ConfigError(ValueError):
    def __init__(self, message, line=None, key=None, related=()):
        self.message = message
        self.line = line
        self.key = key
        # keys whose assignment line can locate a cross-key error
        self.related = (key,) + tuple(related) if key is not None else tuple(related)
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


@dataclass(frozen=True)
class RunConfig:
    # model dims
    model_dim: int = 64
    heads: int = 4
    blocks: int = 4
    ffn_mult: int = 4
    channels: int = 16
    attention_scale: Optional[float] = None  # None -> 1/sqrt(head_dim)
    # layout dims
    prompt_len: int = 8
    ref_height: int = 8
    ref_width: int = 8
    target_height: int = 8
    target_width: int = 8
    # sampler
    steps: int = 10
    seed: int = 0
    # mechanisms; alpha2 = 0.5 while alpha1 is swept and vice versa
    alpha1: float = 0.5
    alpha2: float = 0.5
    shift: bool = True
    reweight: bool = True
    blend: bool = True
    literal_blend: bool = False
    enabled_blocks: Optional[Tuple[int, ...]] = None
    enabled_steps: Optional[Tuple[int, ...]] = None
    # I/O; empty input paths mean seeded synthesis
    prompt_path: str = ""
    reference_path: str = ""
    reference_mask_path: str = ""
    target_path: str = ""
    mask_path: str = ""
    weights_dir: str = ""
    output_dir: str = DEFAULT_OUTPUT_DIR

    def replace(self, **changes):
        cfg = replace(self, **changes)
        validate(cfg)
        return cfg

    @property
    def head_dim(self):
        return self.model_dim // self.heads


_INT_KEYS = {
    "model_dim", "heads", "blocks", "ffn_mult", "channels", "prompt_len",
    "ref_height", "ref_width", "target_height", "target_width", "steps",
}
_BOOL_KEYS = {"shift", "reweight", "blend", "literal_blend"}
_FLOAT_KEYS = {"alpha1", "alpha2"}
_PATH_KEYS = {"prompt_path", "reference_path", "reference_mask_path", "target_path", "mask_path", "weights_dir", "output_dir"}
KNOWN_KEYS = {f.name for f in fields(RunConfig)}


def _parse_bool(key, raw, line):
    value = raw.lower()
    if value in _TRUE:
        return True
    if value in _FALSE:
        return False
    raise ConfigError(f"{key} must be on/off, got {raw!r}", line, key)


def _parse_index_list(key, raw, line):
    if raw.lower() == "all":
        return None
    try:
        return tuple(sorted({int(item) for item in raw.split(",") if item.strip() != ""}))
    except ValueError:
        raise ConfigError(f"{key} must be 'all' or a comma list of integers, got {raw!r}", line, key)


def parse_value(key, raw, line=None):
    """Convert the raw text of one key to its typed value"""
    try:
        if key in _INT_KEYS:
            value = int(raw)
            if value < 1:
                raise ConfigError(f"{key} must be >= 1, got {value}", line, key)
            return value
        if key == "seed":
            value = int(raw)
            if not 0 <= value < 2**64:
                raise ConfigError(f"seed must fit an unsigned 64-bit integer, got {value}", line, key)
            return value
        if key in _FLOAT_KEYS:
            value = float(raw)
            if not value >= 0 or value == float("inf"):
                raise ConfigError(f"{key} must be a finite value >= 0, got {raw}", line, key)
            return value
        if key == "attention_scale":
            if raw.lower() == "auto":
                return None
            value = float(raw)
            if not value > 0 or value == float("inf"):
                raise ConfigError(f"attention_scale must be 'auto' or a positive number, got {raw}", line, key)
            return value
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"{key}: cannot parse {raw!r}", line, key)
    if key in _BOOL_KEYS:
        return _parse_bool(key, raw, line)
    if key in ("enabled_blocks", "enabled_steps"):
        return _parse_index_list(key, raw, line)
    return raw


def validate(cfg):
    if cfg.model_dim % cfg.heads != 0:
        raise ConfigError(f"model_dim {cfg.model_dim} is not divisible by heads {cfg.heads}", key="heads", related=("model_dim",))
    if cfg.ref_height != cfg.target_height:
        raise ConfigError(
            f"ref_height {cfg.ref_height} must equal target_height {cfg.target_height} for side-by-side input",
            key="ref_height",
            related=("target_height",),
        )
    if cfg.alpha1 < 0 or cfg.alpha2 < 0:
        raise ConfigError("alpha1 and alpha2 must be >= 0", key="alpha1" if cfg.alpha1 < 0 else "alpha2")
    if cfg.enabled_blocks is not None and any(not 0 <= b < cfg.blocks for b in cfg.enabled_blocks):
        raise ConfigError(f"enabled_blocks {cfg.enabled_blocks} outside [0, {cfg.blocks})", key="enabled_blocks", related=("blocks",))
    if cfg.enabled_steps is not None and any(not 0 <= s < cfg.steps for s in cfg.enabled_steps):
        raise ConfigError(f"enabled_steps {cfg.enabled_steps} outside [0, {cfg.steps})", key="enabled_steps", related=("steps",))
    if not cfg.output_dir:
        raise ConfigError("output_dir must not be empty", key="output_dir")
    return cfg


def parse_config_text(text, env=None):
    env = os.environ if env is None else env
    values = {}
    key_lines = {}
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key=value, got {raw_line.strip()!r}", line_no)
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown key {key!r}", line_no, key)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", line_no, key)
        if raw == "" and key not in _PATH_KEYS:
            raise ConfigError(f"{key} has no value", line_no, key)
        values[key] = parse_value(key, raw, line_no)
        key_lines[key] = line_no

    if "output_dir" not in values and env.get("ICB_OUTPUT_DIR"):
        values["output_dir"] = env["ICB_OUTPUT_DIR"]
    try:
        return validate(RunConfig(**values))
    except ConfigError as e:
        line = next((key_lines[k] for k in e.related if k in key_lines), None)
        if e.line is not None or line is None:
            raise
        raise ConfigError(e.message, line, e.key, e.related[1:]) from None


def parse_config(path, env=None):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), env=env)
