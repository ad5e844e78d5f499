"""Full parameter set of a reconstruction run, loadable from an INI-style key = value file.

Every key is addressed as ``section.key`` (e.g. ``detect.epsilon``) and can be
overridden from the command line.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields, replace

from .extrude import ExtrudeParams
from .kinetic import KineticParams
from .labeling import EnergyWeights
from .lines import LineExtractionParams
from .planes import DetectionParams
from .regularize import Regularize2DParams


@dataclass(frozen=True)
class MetricOptions:
    enabled: bool = True
    samples: int = 100_000
    edge_threshold: float = 0.5
    ref_to_rec: bool = False
    seed: int = 0


@dataclass(frozen=True)
class RunOptions:
    dilation: float = 1.0  # meters; points within the dilated footprint belong to the building
    min_height: float = 1.0  # unclassified clouds: roof points lie this far above the ground
    regularize: bool = True  # False disables both the 2D regularization and the vertical merge
    check_intersections: bool = True
    timeout: float = 0.0  # seconds per building, 0 disables the watchdog


SECTIONS = {
    "detect": DetectionParams,
    "lines": LineExtractionParams,
    "kinetic": KineticParams,
    "energy": EnergyWeights,
    "regularize": Regularize2DParams,
    "extrude": ExtrudeParams,
    "metrics": MetricOptions,
    "run": RunOptions,
}


@dataclass(frozen=True)
class PipelineConfig:
    detect: DetectionParams = field(default_factory=DetectionParams)
    lines: LineExtractionParams = field(default_factory=LineExtractionParams)
    kinetic: KineticParams = field(default_factory=KineticParams)
    energy: EnergyWeights = field(default_factory=EnergyWeights)
    regularize: Regularize2DParams = field(default_factory=Regularize2DParams)
    extrude: ExtrudeParams = field(default_factory=ExtrudeParams)
    metrics: MetricOptions = field(default_factory=MetricOptions)
    run: RunOptions = field(default_factory=RunOptions)

    def keys(self):
        for sec in SECTIONS:
            for f in fields(getattr(self, sec)):
                yield f"{sec}.{f.name}"

    def get(self, key):
        sec, name = key.split(".", 1)
        return getattr(getattr(self, sec), name)

    def with_overrides(self, values: dict) -> "PipelineConfig":
        """New config with ``{"section.key": value}`` applied; string values are parsed."""
        per = {}
        for key, raw in values.items():
            if "." not in key:
                raise KeyError(f"config key {key!r} must be 'section.key'")
            sec, name = key.split(".", 1)
            if sec not in SECTIONS:
                raise KeyError(f"unknown config section {sec!r}")
            ftypes = {f.name: f.type for f in fields(SECTIONS[sec])}
            if name not in ftypes:
                raise KeyError(f"unknown config key {key!r}")
            per.setdefault(sec, {})[name] = _parse(raw, ftypes[name]) if isinstance(raw, str) else raw
        return replace(self, **{sec: replace(getattr(self, sec), **kw) for sec, kw in per.items()})

    def to_text(self) -> str:
        out = []
        for sec in SECTIONS:
            out.append(f"[{sec}]")
            for f in fields(getattr(self, sec)):
                out.append(f"{f.name} = {_format(getattr(getattr(self, sec), f.name))}")
            out.append("")
        return "\n".join(out)


def _parse(text: str, ftype):
    t = str(ftype)
    s = text.strip()
    if s.lower() in ("none", "auto", "") and "None" in t:
        return None
    if t.startswith("bool"):
        if s.lower() in ("1", "true", "yes", "on"):
            return True
        if s.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if t.startswith("int"):
        return int(s)
    if s.lower() in ("inf", "infinity"):
        return math.inf
    return float(s)


def _format(v):
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v)


def load_config(path=None, overrides=None) -> PipelineConfig:
    cfg = PipelineConfig()
    values = {}
    if path is not None:
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        with open(path) as fh:
            cp.read_file(fh)
        for sec in cp.sections():
            for name, raw in cp.items(sec):
                values[f"{sec}.{name}"] = raw
    values.update(overrides or {})
    return cfg.with_overrides(values)
