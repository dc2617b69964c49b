"""Pipeline configuration: one JSON document with a section per stage.

Every knob has an explicit default (``PipelineConfig().to_dict()``); unknown
keys and wrongly typed values are rejected. ``SCN_THREADS`` overrides the
configured worker count.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

from .errors import ConfigError
from .graph_dtw import DTWConfig
from .ingest import IngestConfig
from .labeling import LabelConfig
from .slicing import SliceConfig
from .tree_metric import MetricConfig

_SECTIONS = {
    "ingest": IngestConfig,
    "slice": SliceConfig,
    "metric": MetricConfig,
    "label": LabelConfig,
}
_DTW_KEYS = ("window", "stride")


def _check_type(section, key, value, default):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, (int, float)):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        if ok and isinstance(default, int) and not isinstance(default, bool) and isinstance(value, float):
            ok = value.is_integer()
            value = int(value)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, (dict, tuple, list)):
        ok = isinstance(value, type(default)) or (isinstance(default, tuple) and isinstance(value, list))
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{section}.{key}: expected {type(default).__name__}, got {type(value).__name__}")
    return value


def _section(name, cls, doc):
    if not isinstance(doc, dict):
        raise ConfigError(f"section {name!r} must be an object")
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {unknown}")
    kw = {}
    for k, v in doc.items():
        v = _check_type(name, k, v, getattr(defaults, k))
        if k == "layer_weights" and v is not None:
            v = tuple(v)
        kw[k] = v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


@dataclass
class PipelineConfig:
    ingest: IngestConfig = field(default_factory=IngestConfig)
    slice: SliceConfig = field(default_factory=SliceConfig)
    metric: MetricConfig = field(default_factory=MetricConfig)
    dtw: dict = field(default_factory=lambda: {"window": DTWConfig.window, "stride": DTWConfig.stride})
    label: LabelConfig = field(default_factory=LabelConfig)
    paths: dict = field(default_factory=dict)
    threads: int = 1

    def __post_init__(self):
        outs = [v for k, v in self.paths.items() if k.startswith("out")]
        if len(set(outs)) != len(outs):
            raise ConfigError("output paths must be distinct")
        if not isinstance(self.threads, int) or self.threads < 1:
            raise ConfigError("threads must be a positive integer")

    @property
    def dtw_config(self):
        return DTWConfig(window=self.dtw["window"], stride=self.dtw["stride"], metric=self.metric)

    def worker_count(self):
        """Configured threads, overridden by ``SCN_THREADS`` when set."""
        env = os.environ.get("SCN_THREADS")
        if env:
            try:
                n = int(env)
            except ValueError:
                raise ConfigError(f"SCN_THREADS must be an integer, got {env!r}") from None
            if n < 1:
                raise ConfigError("SCN_THREADS must be >= 1")
            return n
        return self.threads

    def to_dict(self):
        return _plain(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        allowed = set(_SECTIONS) | {"dtw", "paths", "threads"}
        unknown = sorted(set(doc) - allowed)
        if unknown:
            raise ConfigError(f"unknown top-level keys: {unknown}")
        kw = {name: _section(name, c, doc[name]) for name, c in _SECTIONS.items() if name in doc}
        if "dtw" in doc:
            d = doc["dtw"]
            if not isinstance(d, dict):
                raise ConfigError("section 'dtw' must be an object")
            bad = sorted(set(d) - set(_DTW_KEYS))
            if bad:
                raise ConfigError(f"unknown keys in 'dtw': {bad}")
            merged = {"window": DTWConfig.window, "stride": DTWConfig.stride, **d}
            try:
                DTWConfig(window=merged["window"], stride=merged["stride"])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"dtw: {exc}") from None
            kw["dtw"] = merged
        if "paths" in doc:
            if not isinstance(doc["paths"], dict) or not all(isinstance(v, str) for v in doc["paths"].values()):
                raise ConfigError("paths must map names to strings")
            kw["paths"] = dict(doc["paths"])
        if "threads" in doc:
            kw["threads"] = doc["threads"]
        return cls(**kw)

    @classmethod
    def load(cls, path):
        if path is None:
            return cls()
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(doc)
