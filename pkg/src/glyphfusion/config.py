"""Run configuration: flat ``key = value`` text files with ``#`` comments.

Every key is optional; unknown keys are rejected.  Lists (``fonts``,
``unet_widths``) are comma-separated.  The training weight is spelled
``lambda`` in files and ``lam`` in code.
"""

from __future__ import annotations

import os
from contextlib import contextmanager
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import get_type_hints

import numpy as np

from .adversary import FusionTrainConfig
from .errors import ConfigurationError
from .io import atomic_write_text

DETERMINISTIC_ENV = "DSF_DETERMINISTIC"
_FILE_KEYS = {"lam": "lambda"}
_CODE_KEYS = {v: k for k, v in _FILE_KEYS.items()}


@dataclass
class RunConfig(FusionTrainConfig):
    text: str = "A"
    fonts: tuple[str, ...] = ("mono-a",)
    style_dir: str | None = None
    output_dir: str = "run"
    codec_path: str | None = None
    codec_epochs: int = 20
    codec_renders: int = 192
    base_steps: int = 2000
    base_lr: float = 1e-3
    base_path: str | None = None
    sampler: str = "ddim"
    sampler_steps: int = 50
    eta: float = 0.0
    n_candidates: int = 4
    blur_sigma: float = 1.0
    classifier_epochs: int = 12
    dtype: str = "float32"
    deterministic: bool = False

    def __post_init__(self):
        super().__post_init__()
        self.fonts = tuple(self.fonts)
        checks = [
            ("text", len(self.text) >= 1, "must be non-empty"),
            ("fonts", len(self.fonts) >= 1, "must name at least one font"),
            ("codec_epochs", self.codec_epochs >= 1, "must be >= 1"),
            ("codec_renders", self.codec_renders >= 0, "must be >= 0"),
            ("base_steps", self.base_steps >= 0, "must be >= 0"),
            ("base_lr", self.base_lr > 0, "must be > 0"),
            ("sampler", self.sampler in ("ddim", "ddpm"), "must be ddim or ddpm"),
            ("sampler_steps", 1 <= self.sampler_steps <= self.timesteps,
             "must be between 1 and timesteps"),
            ("eta", self.eta >= 0, "must be >= 0"),
            ("n_candidates", self.n_candidates >= 1, "must be >= 1"),
            ("blur_sigma", self.blur_sigma >= 0, "must be >= 0"),
            ("classifier_epochs", self.classifier_epochs >= 1, "must be >= 1"),
            ("dtype", self.dtype in ("float32", "float64"), "must be float32 or float64"),
        ]
        for key, ok, msg in checks:
            if not ok:
                raise ConfigurationError(f"{_FILE_KEYS.get(key, key)} {msg}", key=key)
        if self.mode == "multi_font" and len(self.fonts) < 2:
            raise ConfigurationError("fonts: multi_font mode needs at least two fonts", key="fonts")

    @property
    def is_deterministic(self) -> bool:
        return self.deterministic or os.environ.get(DETERMINISTIC_ENV, "") == "1"

    @property
    def numpy_dtype(self) -> np.dtype:
        return np.dtype(self.dtype)

    def train_config(self) -> FusionTrainConfig:
        names = {f.name for f in fields(FusionTrainConfig)}
        return FusionTrainConfig(**{k: getattr(self, k) for k in names})

    def with_overrides(self, **changes) -> "RunConfig":
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update(changes)
        return RunConfig(**data)


def _parse_value(key: str, raw: str, hint, line: int):
    text = raw.strip()
    base = str(hint)
    try:
        if "None" in base and text.lower() in ("", "none"):
            return None
        if base.startswith("tuple[int"):
            return tuple(int(v) for v in text.split(",") if v.strip())
        if base.startswith("tuple[str"):
            return tuple(v.strip() for v in text.split(",") if v.strip())
        if hint is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if hint is int or base.startswith("int"):
            return int(text)
        if hint is float or base.startswith("float"):
            return float(text)
        return text
    except ValueError:
        raise ConfigurationError(f"line {line}: {key}: cannot parse {text!r}", key=key) from None


def parse_config(text: str, base_dir: Path | None = None) -> RunConfig:
    hints = get_type_hints(RunConfig)
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        name = _CODE_KEYS.get(key, key)
        if name not in hints or name in _FILE_KEYS.values() or key in _FILE_KEYS:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}", key=key)
        if name in values:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}", key=key)
        values[name] = _parse_value(key, value, hints[name], lineno)
    cfg = RunConfig(**values)
    validate_paths(cfg, base_dir)
    return cfg


def _resolve(path: str, base_dir: Path | None) -> Path:
    p = Path(path).expanduser()
    return p if p.is_absolute() or base_dir is None else base_dir / p


def validate_paths(cfg: RunConfig, base_dir: Path | None = None) -> None:
    """Check referenced paths exist; relative paths are anchored at ``base_dir``."""
    from .glyphs import bundled_font_names

    if cfg.style_dir is not None:
        p = _resolve(cfg.style_dir, base_dir)
        if not p.is_dir():
            raise ConfigurationError(f"style_dir {p} is not a directory", key="style_dir")
        cfg.style_dir = str(p)
    if cfg.codec_path is not None:
        p = _resolve(cfg.codec_path, base_dir)
        if not p.is_file():
            raise ConfigurationError(f"codec_path {p} does not exist", key="codec_path")
        cfg.codec_path = str(p)
    if cfg.base_path is not None:
        p = _resolve(cfg.base_path, base_dir)
        if not p.is_file():
            raise ConfigurationError(f"base_path {p} does not exist", key="base_path")
        cfg.base_path = str(p)
    bundled = set(bundled_font_names())
    resolved = []
    for ref in cfg.fonts:
        if ref in bundled:
            resolved.append(ref)
            continue
        p = _resolve(ref, base_dir)
        if not p.is_file():
            raise ConfigurationError(f"font {ref!r} is neither bundled nor a file", key="fonts")
        resolved.append(str(p))
    cfg.fonts = tuple(resolved)


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {p}: {exc.strerror}", key="config") from None
    return parse_config(text, p.parent)


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_text(cfg: RunConfig) -> str:
    lines = [f"{_FILE_KEYS.get(f.name, f.name)} = {_format_value(getattr(cfg, f.name))}"
             for f in fields(cfg)]
    return "\n".join(lines) + "\n"


def save_config(cfg: RunConfig, path) -> None:
    atomic_write_text(path, config_text(cfg))


@contextmanager
def deterministic_mode(enabled: bool = True):
    """Pin BLAS/OpenMP pools to one thread so reductions run in a fixed order."""
    if not enabled:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield
