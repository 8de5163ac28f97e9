"""Experiment configuration files.

A configuration is a YAML mapping::

    scenario:
      domain: {kind: circle, radius: 1.0}
      inclusions:
        - {kind: superconducting, shape: circle, center: [0.2, 0.0], radius: 0.3}
      p: 2.0
      background_sigma: 1.0
    method: enclosure          # enclosure | probe | forward-only | bem-crosscheck
    seed: 0
    threads: 1
    output: {dir: out, svg: true}
    enclosure: {directions: 32, tau_grid: [8, 12, 16, 24, 32, 40], h_max: 0.1}

Every problem found is reported, each with the line it was found on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .geometry import GeometryError, Scenario, build_scenario

METHODS = ("enclosure", "probe", "forward-only", "bem-crosscheck")


@dataclass(frozen=True)
class ConfigIssue:
    line: int | None
    key: str
    message: str
    code: str = "Invalid"

    def __str__(self) -> str:
        where = f"line {self.line}" if self.line is not None else "config"
        return f"{where}: {self.key}: {self.message} [{self.code}]"


class ConfigError(ValueError):
    def __init__(self, issues: list[ConfigIssue]):
        self.issues = list(issues)
        super().__init__("\n".join(str(i) for i in self.issues))


class ParseError(ConfigError):
    """Malformed YAML, wrong structure or unknown keys."""


class ValidationError(ConfigError):
    """Well-formed file with out-of-range values."""

    @property
    def codes(self) -> list[str]:
        return [i.code for i in self.issues]


# section -> {key: default}
_SCHEMA = {
    "enclosure": {
        "directions": 32,
        "tau_grid": [8.0, 12.0, 16.0, 24.0, 32.0, 40.0],
        "h_max": 0.1,
        "fine_factor": 0.35,
        "band_factor": 3.0,
        "noise": 0.0,
    },
    "probe": {
        "needles": 64,
        "t_points": 60,
        "t_max": 0.98,
        "k": 20,
        "factor": 10.0,
        "tube_radius": 0.4,
        "taper_deg": 55.0,
        "h_max": 0.02,
        "far_fraction": 0.1,
    },
    "forward": {
        "h_max": 0.05,
        "modes": [1, 2, 3],
    },
    "bem": {
        "panels": 256,
        "h_max": 0.02,
        "modes": [1, 2, 3],
    },
    "output": {
        "dir": "out",
        "svg": False,
    },
}
_TOP = {"scenario", "method", "seed", "threads", *_SCHEMA}
_SCENARIO_KEYS = {"domain", "inclusions", "p", "background_sigma", "clearance"}


@dataclass
class ExperimentConfig:
    scenario: Scenario
    method: str
    seed: int = 0
    threads: int = 1
    enclosure: dict = field(default_factory=lambda: dict(_SCHEMA["enclosure"]))
    probe: dict = field(default_factory=lambda: dict(_SCHEMA["probe"]))
    forward: dict = field(default_factory=lambda: dict(_SCHEMA["forward"]))
    bem: dict = field(default_factory=lambda: dict(_SCHEMA["bem"]))
    output: dict = field(default_factory=lambda: dict(_SCHEMA["output"]))
    source: str | None = None

    @property
    def out_dir(self) -> Path:
        return Path(self.output["dir"])


# ---------------------------------------------------------------------------
# YAML with line numbers


def _to_python(node, lines: dict, path: str, issues: list):
    """Convert a composed YAML node, recording the 1-based line of every key path."""
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for knode, vnode in node.value:
            key = str(knode.value)
            sub = f"{path}.{key}" if path else key
            if key in out:
                issues.append(ConfigIssue(knode.start_mark.line + 1, sub, "duplicate key", "DuplicateKey"))
            lines[sub] = knode.start_mark.line + 1
            out[key] = _to_python(vnode, lines, sub, issues)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_to_python(v, lines, f"{path}[{i}]", issues) for i, v in enumerate(node.value)]
    return yaml.SafeLoader("").construct_object(node, deep=True)


def _load(text: str) -> tuple[dict, dict]:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ParseError([ConfigIssue(line, "<file>", str(getattr(exc, "problem", exc)), "YAMLSyntax")]) from None
    if node is None:
        raise ParseError([ConfigIssue(None, "<file>", "empty configuration", "Empty")])
    lines: dict = {}
    issues: list = []
    data = _to_python(node, lines, "", issues)
    if not isinstance(data, dict):
        raise ParseError([ConfigIssue(lines.get(""), "<file>", "top level must be a mapping", "Structure")])
    if issues:
        raise ParseError(issues)
    return data, lines


# ---------------------------------------------------------------------------
# validation


def _num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _ranges(section: str, vals: dict, where, issues: list) -> None:
    def bad(key, msg, code="OutOfRange"):
        issues.append(ConfigIssue(where(f"{section}.{key}"), f"{section}.{key}", msg, code))

    def positive(key, integer=False):
        v = vals[key]
        ok = _int(v) if integer else _num(v)
        if not ok or v <= 0:
            bad(key, f"must be a positive {'integer' if integer else 'number'}, got {v!r}")
            return False
        return True

    if section == "enclosure":
        if positive("directions", True) and vals["directions"] < 3:
            bad("directions", "at least 3 directions are needed for a bounded polygon")
        g = vals["tau_grid"]
        if not (isinstance(g, list) and len(g) >= 4 and all(_num(x) and x > 0 for x in g)
                and all(b > a for a, b in zip(g, g[1:]))):
            bad("tau_grid", "must be an increasing list of at least 4 positive frequencies")
        for key in ("h_max", "fine_factor", "band_factor"):
            positive(key)
        if not (_num(vals["noise"]) and 0 <= vals["noise"] < 1):
            bad("noise", "relative noise level must lie in [0, 1)")
    elif section == "probe":
        for key in ("needles", "t_points", "k"):
            positive(key, True)
        for key in ("factor", "tube_radius", "h_max"):
            positive(key)
        if not (_num(vals["t_max"]) and 0 < vals["t_max"] < 1):
            bad("t_max", "must lie in (0, 1)")
        if not (_num(vals["taper_deg"]) and 0 <= vals["taper_deg"] < 90):
            bad("taper_deg", "must lie in [0, 90)")
        if not (_num(vals["far_fraction"]) and 0 < vals["far_fraction"] < 1):
            bad("far_fraction", "must lie in (0, 1)")
        if _int(vals["t_points"]) and _num(vals["far_fraction"]) and vals["t_points"] * vals["far_fraction"] < 2:
            bad("t_points", "the far-field prefix of the t-grid needs at least 2 points")
    elif section in ("forward", "bem"):
        positive("h_max")
        m = vals["modes"]
        if not (isinstance(m, list) and m and all(_int(x) and x >= 1 for x in m)):
            bad("modes", "must be a non-empty list of positive integers")
        if section == "bem" and positive("panels", True) and vals["panels"] < 16:
            bad("panels", "at least 16 panels are needed")
    elif section == "output":
        if not isinstance(vals["dir"], str) or not vals["dir"]:
            bad("dir", "must be a non-empty path")
        if not isinstance(vals["svg"], bool):
            bad("svg", "must be true or false")


def _scenario(spec, where, issues: list) -> Scenario | None:
    if not isinstance(spec, dict):
        issues.append(ConfigIssue(where("scenario"), "scenario", "must be a mapping", "Structure"))
        return None
    ok = True
    if "domain" not in spec:
        issues.append(ConfigIssue(where("scenario"), "scenario.domain", "required", "Missing"))
        ok = False
    p = spec.get("p", 2.0)
    if not (_num(p) and p > 1):
        issues.append(ConfigIssue(where("scenario.p"), "scenario.p", f"exponent must lie in (1, inf), got {p!r}",
                                  "BadExponent"))
        ok = False
    sigma = spec.get("background_sigma", 1.0)
    if not (_num(sigma) and sigma > 0):
        issues.append(ConfigIssue(where("scenario.background_sigma"), "scenario.background_sigma",
                                  "must be a positive number", "BadConductivity"))
        ok = False
    incl = spec.get("inclusions", []) or []
    if not isinstance(incl, list) or not all(isinstance(c, dict) for c in incl):
        issues.append(ConfigIssue(where("scenario.inclusions"), "scenario.inclusions",
                                  "must be a list of mappings", "Structure"))
        ok = False
    if not ok:
        return None
    try:
        return build_scenario(spec["domain"], incl, float(sigma), float(p), spec.get("clearance"))
    except GeometryError as exc:
        issues.append(ConfigIssue(where("scenario"), "scenario", str(exc), type(exc).__name__))
    except (KeyError, TypeError, ValueError) as exc:
        issues.append(ConfigIssue(where("scenario"), "scenario", f"malformed shape: {exc}", "BadShape"))
    return None


def parse_config_text(text: str, source: str | None = None) -> ExperimentConfig:
    data, lines = _load(text)

    def where(path: str):
        while path:
            if path in lines:
                return lines[path]
            path = path.rsplit(".", 1)[0] if "." in path else ""
        return None

    unknown = [ConfigIssue(where(k), k, "unknown key", "UnknownKey") for k in data if k not in _TOP]
    sections = {}
    for name, defaults in _SCHEMA.items():
        given = data.get(name, {}) or {}
        if not isinstance(given, dict):
            unknown.append(ConfigIssue(where(name), name, "must be a mapping", "Structure"))
            continue
        unknown += [ConfigIssue(where(f"{name}.{k}"), f"{name}.{k}", "unknown key", "UnknownKey")
                    for k in given if k not in defaults]
        sections[name] = {**defaults, **given}
    if isinstance(data.get("scenario"), dict):
        unknown += [ConfigIssue(where(f"scenario.{k}"), f"scenario.{k}", "unknown key", "UnknownKey")
                    for k in data["scenario"] if k not in _SCENARIO_KEYS]
    if "scenario" not in data:
        unknown.append(ConfigIssue(None, "scenario", "required", "Missing"))
    if "method" not in data:
        unknown.append(ConfigIssue(None, "method", "required", "Missing"))
    if unknown:
        raise ParseError(unknown)

    issues: list = []
    method = data["method"]
    if method not in METHODS:
        issues.append(ConfigIssue(where("method"), "method", f"must be one of {', '.join(METHODS)}", "BadMethod"))
    for key in ("seed", "threads"):
        v = data.get(key, 0 if key == "seed" else 1)
        if not _int(v) or v < (0 if key == "seed" else 1):
            issues.append(ConfigIssue(where(key), key, f"invalid value {v!r}", "OutOfRange"))
    for name, vals in sections.items():
        _ranges(name, vals, where, issues)
    scen = _scenario(data["scenario"], where, issues)
    if scen is not None and method == "probe":
        if scen.p != 2.0 or scen.has_insulators:
            issues.append(ConfigIssue(where("method"), "method",
                                      "needle probing needs p = 2 and superconducting inclusions only",
                                      "ProbeUnsupported"))
    if scen is not None and method == "bem-crosscheck":
        if scen.p != 2.0 or len(scen.inclusions) != 1 or scen.has_insulators or scen.background_sigma != 1.0:
            issues.append(ConfigIssue(where("method"), "method",
                                      "the layer-potential cross-check needs p = 2, unit background and one "
                                      "superconducting inclusion", "BemUnsupported"))
    if issues:
        raise ValidationError(issues)
    return ExperimentConfig(scen, method, int(data.get("seed", 0)), int(data.get("threads", 1)),
                            source=source, **sections)


def parse_config(path) -> ExperimentConfig:
    """Read and validate a configuration file; raises ParseError or ValidationError listing every problem."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"configuration file {path} not found")
    return parse_config_text(path.read_text(), str(path))
