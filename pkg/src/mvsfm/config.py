"""Flat ``key = value`` pipeline configuration."""

from __future__ import annotations

import dataclasses
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Mapping

from .errors import ConfigTypeError, MissingInput, UnknownKey
from .trajectory import TrackParams

EMIT_CHOICES = ("features", "matches", "trajectories", "ply")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")
_DEFAULT_TRACK = TrackParams()


@dataclass(frozen=True)
class PipelineConfig:
    tau: float = _DEFAULT_TRACK.cos_diff_threshold
    min_frames: int = _DEFAULT_TRACK.min_span_frames
    link_radius: float = _DEFAULT_TRACK.link_radius
    pair_span: int | None = _DEFAULT_TRACK.pair_span_cap  # None = unlimited
    min_mv: float = _DEFAULT_TRACK.min_mv_magnitude_px
    mvf_path: str | None = None
    ivf_path: str | None = None
    scene_path: str | None = None
    output_dir: str = "out"
    name_manifest: str | None = None
    emit: frozenset[str] = field(default_factory=lambda: frozenset(EMIT_CHOICES))
    log_level: str = "WARNING"

    def track_params(self) -> TrackParams:
        return TrackParams(
            cos_diff_threshold=self.tau,
            min_span_frames=self.min_frames,
            link_radius=self.link_radius,
            pair_span_cap=self.pair_span,
            min_mv_magnitude_px=self.min_mv,
        )

    def snapshot(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["emit"] = sorted(self.emit)
        d["pair_span"] = "unlimited" if self.pair_span is None else self.pair_span
        return d


KEYS = tuple(f.name for f in dataclasses.fields(PipelineConfig))


def _parse_pair_span(v):
    if v is None or (isinstance(v, str) and v.strip().lower() in ("unlimited", "none")):
        return None
    n = int(v)
    if n < 1:
        raise ValueError("pair_span must be >= 1 or 'unlimited'")
    return n


def _parse_emit(v):
    if isinstance(v, str):
        items = [s.strip() for s in v.replace(",", " ").split() if s.strip()]
    else:
        items = list(v)
    bad = [s for s in items if s not in EMIT_CHOICES]
    if bad:
        raise ValueError(f"unknown emit item(s) {bad}; choose from {EMIT_CHOICES}")
    return frozenset(items)


def _parse_level(v):
    s = str(v).strip().upper()
    if s not in LOG_LEVELS:
        raise ValueError(f"log level must be one of {LOG_LEVELS}")
    return s


def _opt_str(v):
    return None if v is None or str(v).strip() == "" else str(v).strip()


_PARSERS = {
    "tau": float,
    "min_frames": int,
    "link_radius": float,
    "pair_span": _parse_pair_span,
    "min_mv": float,
    "mvf_path": _opt_str,
    "ivf_path": _opt_str,
    "scene_path": _opt_str,
    "output_dir": str,
    "name_manifest": _opt_str,
    "emit": _parse_emit,
    "log_level": _parse_level,
}


def _coerce(key: str, value, where: str = ""):
    try:
        return _PARSERS[key](value)
    except (TypeError, ValueError) as exc:
        raise ConfigTypeError(f"cannot parse {key} = {value!r}{where}: {exc}") from exc


def parse_config_text(text: str) -> dict[str, Any]:
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigTypeError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _PARSERS:
            raise UnknownKey(key, raw, lineno)
        values[key] = _coerce(key, value, f" (line {lineno})")
    return values


def load_config(path=None, overrides: Mapping[str, Any] | None = None) -> PipelineConfig:
    """Resolve a config: defaults, then the file at ``path``, then ``overrides``.

    Override entries whose value is ``None`` are treated as absent.
    """
    values: dict[str, Any] = {}
    if path is not None:
        if not os.path.exists(path):
            raise MissingInput(f"config file {path} does not exist")
        with open(path) as fh:
            values.update(parse_config_text(fh.read()))
    for key, value in (overrides or {}).items():
        if key not in _PARSERS:
            raise UnknownKey(key)
        if value is not None:
            values[key] = _coerce(key, value)
    cfg = PipelineConfig(**values)
    try:
        cfg.track_params()
    except Exception as exc:
        raise ConfigTypeError(str(exc)) from exc
    return cfg


def configure_logging(level: str) -> None:
    logging.basicConfig(level=getattr(logging, level.upper()), format="%(levelname)s %(name)s: %(message)s",
                        force=True)
