"""YAML run configuration: parsing, validation and serialisation.

All quantities are SI except capacities (mAh/cm^2), matching the output
tables. A document has up to five top-level sections::

    design:    # required; either a preset, explicit layers, or both
      preset: default-bilayer
      overrides: {L_p1: 47.0e-6, eps_e_p2: 0.30}
    solver:    {nodes_per_region: 30}
    protocol:  {preset: 3c-01c-3c, I_1C: auto}
    study:     {kind: ratio, c_rate: 3.0, target: 4.71, fractions: [0.398, 0.5]}
    output:    {directory: results, snapshot_count: 20}

See ``docs/config.md`` for every key.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, fields, replace

import yaml

from . import presets
from .design import CellDesign, LayerSpec, SolverConfig, design_to_dict
from .electrochem import (
    ChemistrySpec,
    ConfigurationError,
    ElectrolyteSpec,
    KineticsContext,
    OcpCurve,
    unit_activity,
)
from .protocol import CYCLING, Protocol, ProtocolStep
from .studio import DesignSpace, apply_overrides, parse_parameter

SECTIONS = ("design", "solver", "protocol", "study", "output")
REQUIRED_SECTIONS = ("design",)
STUDY_KINDS = ("sensitivity", "thickness", "ratio", "mass", "optimize", "benchmark")
ACTIVITY = {"valoen-reimers": None, "unit": unit_activity}


class ConfigError(ConfigurationError):
    """Invalid configuration, with the offending field path and source line."""

    def __init__(self, message: str, path: tuple = (), line: int | None = None):
        self.path = tuple(path)
        self.line = line
        where = ".".join(str(p) for p in self.path)
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{where + ': ' if where else ''}{message}")


@dataclass(frozen=True)
class StudyConfig:
    kind: str
    c_rate: float = 3.0
    target: float | None = None  # mAh/cm^2
    cases: tuple = ()  # ((case_id, {override: value}), ...)
    totals: tuple = ()  # m
    ratio: float = 0.5
    fractions: tuple = ()
    designs: tuple = ()  # preset names
    grids: tuple = ()  # ((name, (values...)), ...)
    budget: int | None = None
    single_layer_fallback: bool = False


@dataclass(frozen=True)
class OutputConfig:
    directory: str | None = None
    snapshot_count: int = 20


@dataclass(frozen=True)
class RunConfig:
    design: CellDesign
    solver: SolverConfig = SolverConfig()
    protocol: Protocol | None = None
    study: StudyConfig | None = None
    output: OutputConfig = OutputConfig()
    protocol_preset: str | None = None

    def to_dict(self) -> dict:
        return config_to_dict(self)

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, default=float)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


# ---- line tracking ----------------------------------------------------------

def _line_index(text: str) -> dict:
    """Map key paths to 1-based source lines using the YAML node tree."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return {}
    index = {}

    def walk(node, path):
        index[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = k.value
                index[path + (key,)] = k.start_mark.line + 1
                walk(v, path + (key,))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, path + (i,))

    if root is not None:
        walk(root, ())
    return index


class _Reader:
    def __init__(self, lines: dict):
        self.lines = lines

    def error(self, message, path):
        path = tuple(path)
        line = None
        for n in range(len(path), -1, -1):
            if path[:n] in self.lines:
                line = self.lines[path[:n]]
                break
        return ConfigError(message, path, line)

    def mapping(self, value, path, allowed, required=()):
        if value is None:
            value = {}
        if not isinstance(value, dict):
            raise self.error(f"expected a mapping, got {type(value).__name__}", path)
        unknown = sorted(set(value) - set(allowed), key=str)
        if unknown:
            raise self.error(f"unknown key {unknown[0]!r}; allowed: {', '.join(allowed)}", tuple(path) + (unknown[0],))
        missing = [k for k in required if k not in value]
        if missing:
            raise self.error(f"missing required key(s): {', '.join(missing)}", path)
        return value

    def number(self, value, path, positive=False, integer=False):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.error(f"expected a number, got {value!r}", path)
        if integer and int(value) != value:
            raise self.error(f"expected an integer, got {value!r}", path)
        if not math.isfinite(value):
            raise self.error("must be finite", path)
        if positive and not value > 0:
            raise self.error(f"must be positive, got {value}", path)
        return int(value) if integer else float(value)

    def numbers(self, value, path, **kw):
        if not isinstance(value, list):
            raise self.error("expected a list of numbers", path)
        return tuple(self.number(v, tuple(path) + (i,), **kw) for i, v in enumerate(value))

    def string(self, value, path, choices=None):
        if not isinstance(value, str):
            raise self.error(f"expected a string, got {value!r}", path)
        if choices is not None and value not in choices:
            raise self.error(f"must be one of {', '.join(choices)}; got {value!r}", path)
        return value

    def build(self, cls, kwargs, path):
        try:
            return cls(**kwargs)
        except ConfigurationError as exc:
            raise self.error(f"constraint violated: {exc}", path) from None


# ---- sections ---------------------------------------------------------------

LAYER_KEYS = ("chemistry", "L", "eps_e", "b", "eps_cbd", "sigma_s", "c_s_init", "name")
CHEM_KEYS = ("name", "c_s_max", "D_s", "k_rate", "R_p", "capacity_share", "density", "ocp")
ELECTROLYTE_KEYS = ("name", "c_e0", "t_plus", "D_scale", "kappa_scale", "activity")
DESIGN_SCALARS = ("area", "R_contact", "i0_counter", "cutoff_upper", "cutoff_lower", "cbd_density", "T")
DESIGN_KEYS = ("preset", "name", "layers", "electrolyte", "overrides") + DESIGN_SCALARS


def _chemistry(r: _Reader, value, path):
    if isinstance(value, str):
        if value not in presets.CHEMISTRIES:
            raise r.error(f"unknown chemistry {value!r}; choose from {sorted(presets.CHEMISTRIES)} "
                          "or give a mapping", path)
        return presets.CHEMISTRIES[value]
    m = r.mapping(value, path, CHEM_KEYS, required=("name", "c_s_max", "D_s", "k_rate", "R_p", "ocp"))
    o = r.mapping(m["ocp"], tuple(path) + ("ocp",), ("variant", "coefficients", "window"),
                  required=("variant", "coefficients", "window"))
    ocp = r.build(OcpCurve, dict(
        variant=r.string(o["variant"], tuple(path) + ("ocp", "variant")),
        coefficients=r.numbers(o["coefficients"], tuple(path) + ("ocp", "coefficients")),
        window=r.numbers(o["window"], tuple(path) + ("ocp", "window"))), tuple(path) + ("ocp",))
    kw = {k: r.number(m[k], tuple(path) + (k,)) for k in ("c_s_max", "D_s", "k_rate", "R_p", "density") if k in m}
    share = m.get("capacity_share")
    kw["capacity_share"] = None if share is None else r.number(share, tuple(path) + ("capacity_share",))
    return r.build(ChemistrySpec, dict(name=r.string(m["name"], tuple(path) + ("name",)), ocp=ocp, **kw), path)


def _layer(r: _Reader, value, path):
    m = r.mapping(value, path, LAYER_KEYS, required=("L", "eps_e", "b"))
    kw = {k: r.number(m[k], tuple(path) + (k,)) for k in ("L", "eps_e", "b", "eps_cbd", "sigma_s") if k in m}
    if m.get("chemistry") is not None:
        kw["chemistry"] = _chemistry(r, m["chemistry"], tuple(path) + ("chemistry",))
    if "c_s_init" in m:
        init = r.numbers(m["c_s_init"], tuple(path) + ("c_s_init",))
        if len(init) != 2:
            raise r.error("c_s_init needs [charge_start, discharge_start]", tuple(path) + ("c_s_init",))
        kw["c_s_init"] = init
    if "name" in m:
        kw["name"] = r.string(m["name"], tuple(path) + ("name",))
    return r.build(LayerSpec, kw, path)


def _electrolyte(r: _Reader, value, path, base: ElectrolyteSpec):
    m = r.mapping(value, path, ELECTROLYTE_KEYS)
    kw = {k: r.number(m[k], tuple(path) + (k,)) for k in ("c_e0", "t_plus", "D_scale", "kappa_scale") if k in m}
    if "name" in m:
        kw["name"] = r.string(m["name"], tuple(path) + ("name",))
    if "activity" in m:
        kw["activity"] = ACTIVITY[r.string(m["activity"], tuple(path) + ("activity",), tuple(ACTIVITY))]
    return _replace(r, base, kw, path)


def _replace(r, obj, kw, path):
    try:
        return replace(obj, **kw)
    except ConfigurationError as exc:
        raise r.error(f"constraint violated: {exc}", path) from None


def _design(r: _Reader, value, path=("design",)) -> CellDesign:
    m = r.mapping(value, path, DESIGN_KEYS)
    if "preset" in m:
        name = r.string(m["preset"], path + ("preset",), tuple(presets.DESIGNS))
        design = presets.design_preset(name)
    elif "layers" in m:
        design = None
    else:
        raise r.error("give a preset, an explicit layers list, or both", path)
    kw = {}
    if "layers" in m:
        if not isinstance(m["layers"], list):
            raise r.error("expected a list of layers, separator first", path + ("layers",))
        kw["layers"] = tuple(_layer(r, v, path + ("layers", i)) for i, v in enumerate(m["layers"]))
    base_electrolyte = design.electrolyte if design is not None else presets.ELECTROLYTE
    if "electrolyte" in m:
        kw["electrolyte"] = _electrolyte(r, m["electrolyte"], path + ("electrolyte",), base_electrolyte)
    for k in DESIGN_SCALARS:
        if k in m:
            v = r.number(m[k], path + (k,))
            if k == "T":
                kw["kinetics"] = r.build(KineticsContext, {"T": v}, path + (k,))
            else:
                kw[k] = v
    if "name" in m:
        kw["name"] = r.string(m["name"], path + ("name",))
    if design is None:
        kw.setdefault("electrolyte", presets.ELECTROLYTE)
        kw.setdefault("i0_counter", presets.I0_COUNTER)
        kw.setdefault("name", "custom")
        design = r.build(CellDesign, kw, path)
    else:
        design = _replace(r, design, kw, path)
    if "overrides" in m:
        ov = r.mapping(m["overrides"], path + ("overrides",), tuple(m["overrides"] or ()))
        vals = {k: r.number(v, path + ("overrides", k)) for k, v in ov.items()}
        try:
            design = apply_overrides(design, vals)
        except ConfigurationError as exc:
            raise r.error(str(exc), path + ("overrides",)) from None
    return design


def _solver(r: _Reader, value, path=("solver",)) -> SolverConfig:
    names = tuple(f.name for f in fields(SolverConfig))
    m = r.mapping(value, path, names)
    ints = {"nodes_per_region", "radial_shells", "max_newton"}
    kw = {k: r.number(v, path + (k,), integer=k in ints) for k, v in m.items()}
    return r.build(SolverConfig, kw, path)


STEP_KEYS = ("mode", "c_rate", "cutoff_voltage", "time_limit")


def _protocol(r: _Reader, value, path=("protocol",)):
    m = r.mapping(value, path, ("preset", "steps", "I_1C"))
    I_1C = m.get("I_1C", "auto")
    if I_1C in ("auto", None):
        I_1C = None
    else:
        I_1C = r.number(I_1C, path + ("I_1C",), positive=True)
    preset = None
    if "preset" in m and "steps" in m:
        raise r.error("give either a preset or steps, not both", path)
    if "preset" in m:
        preset = r.string(m["preset"], path + ("preset",), tuple(CYCLING))
        steps = CYCLING[preset].steps
        name = preset
    elif "steps" in m:
        if not isinstance(m["steps"], list) or not m["steps"]:
            raise r.error("expected a non-empty list of steps", path + ("steps",))
        steps = []
        for i, s in enumerate(m["steps"]):
            p = path + ("steps", i)
            sm = r.mapping(s, p, STEP_KEYS, required=("mode",))
            kw = {"mode": r.string(sm["mode"], p + ("mode",), ("cc-charge", "cc-discharge", "rest"))}
            for k in ("c_rate", "cutoff_voltage", "time_limit"):
                if sm.get(k) is not None:
                    kw[k] = r.number(sm[k], p + (k,))
            steps.append(r.build(ProtocolStep, kw, p))
        name = "custom"
    else:
        raise r.error("give a preset or a steps list", path)
    return r.build(Protocol, dict(steps=tuple(steps), I_1C=I_1C, name=name), path), preset


STUDY_KEYS = ("kind", "c_rate", "target", "cases", "totals", "ratio", "fractions", "designs", "grids",
              "budget", "single_layer_fallback")


def _study(r: _Reader, value, path=("study",)) -> StudyConfig:
    m = r.mapping(value, path, STUDY_KEYS, required=("kind",))
    kw = {"kind": r.string(m["kind"], path + ("kind",), STUDY_KINDS)}
    if "c_rate" in m:
        kw["c_rate"] = r.number(m["c_rate"], path + ("c_rate",), positive=True)
    if m.get("target") is not None:
        kw["target"] = r.number(m["target"], path + ("target",), positive=True)
    if "ratio" in m:
        kw["ratio"] = r.number(m["ratio"], path + ("ratio",))
        if not 0 < kw["ratio"] < 1:
            raise r.error("ratio must lie in (0, 1)", path + ("ratio",))
    if "totals" in m:
        kw["totals"] = r.numbers(m["totals"], path + ("totals",), positive=True)
    if "fractions" in m:
        kw["fractions"] = r.numbers(m["fractions"], path + ("fractions",))
    if "budget" in m and m["budget"] is not None:
        kw["budget"] = r.number(m["budget"], path + ("budget",), positive=True, integer=True)
    if "single_layer_fallback" in m:
        if not isinstance(m["single_layer_fallback"], bool):
            raise r.error("expected true or false", path + ("single_layer_fallback",))
        kw["single_layer_fallback"] = m["single_layer_fallback"]
    if "designs" in m:
        if not isinstance(m["designs"], list):
            raise r.error("expected a list of design preset names", path + ("designs",))
        kw["designs"] = tuple(r.string(d, path + ("designs", i), tuple(presets.DESIGNS))
                              for i, d in enumerate(m["designs"]))
    if "cases" in m:
        if not isinstance(m["cases"], list):
            raise r.error("expected a list of cases", path + ("cases",))
        cases = []
        for i, c in enumerate(m["cases"]):
            p = path + ("cases", i)
            cm = r.mapping(c, p, ("id", "overrides"), required=("overrides",))
            om = r.mapping(cm["overrides"], p + ("overrides",), tuple(cm["overrides"] or ()))
            ov = {}
            for k, v in om.items():
                try:
                    parse_parameter(k)
                except ConfigurationError as exc:
                    raise r.error(str(exc), p + ("overrides", k)) from None
                ov[k] = r.number(v, p + ("overrides", k))
            cid = str(cm.get("id", f"case-{i + 1}"))
            cases.append((cid, ov))
        kw["cases"] = tuple(cases)
    if "grids" in m:
        gm = r.mapping(m["grids"], path + ("grids",), tuple(m["grids"] or ()))
        grids = []
        for k, v in gm.items():
            try:
                parse_parameter(k)
            except ConfigurationError as exc:
                raise r.error(str(exc), path + ("grids", k)) from None
            grids.append((k, r.numbers(v, path + ("grids", k))))
        kw["grids"] = tuple(grids)
    return StudyConfig(**kw)


def _output(r: _Reader, value, path=("output",)) -> OutputConfig:
    m = r.mapping(value, path, ("directory", "snapshot_count"))
    kw = {}
    if m.get("directory") is not None:
        kw["directory"] = r.string(m["directory"], path + ("directory",))
    if "snapshot_count" in m:
        kw["snapshot_count"] = r.number(m["snapshot_count"], path + ("snapshot_count",), integer=True)
        if kw["snapshot_count"] < 1:
            raise r.error("snapshot_count must be at least 1", path + ("snapshot_count",))
    return OutputConfig(**kw)


def config_from_dict(data, lines: dict | None = None) -> RunConfig:
    r = _Reader(lines or {})
    if data is None or data == {}:
        raise ConfigError(f"empty configuration; required section(s): {', '.join(REQUIRED_SECTIONS)}; "
                          f"optional: {', '.join(s for s in SECTIONS if s not in REQUIRED_SECTIONS)}")
    m = r.mapping(data, (), SECTIONS, required=REQUIRED_SECTIONS)
    protocol, preset = (None, None)
    if m.get("protocol") is not None:
        protocol, preset = _protocol(r, m["protocol"])
    cfg = RunConfig(
        design=_design(r, m["design"]),
        solver=_solver(r, m.get("solver")),
        protocol=protocol,
        study=_study(r, m["study"]) if m.get("study") is not None else None,
        output=_output(r, m.get("output")),
        protocol_preset=preset,
    )
    _check_study(r, cfg)
    return cfg


def _check_study(r: _Reader, cfg: RunConfig):
    s = cfg.study
    if s is None:
        return
    p = ("study",)
    n_el = len(cfg.design.electrodes)
    if s.kind in ("thickness", "ratio") and n_el != 2:
        raise r.error(f"{s.kind} study needs a two-layer electrode design, got {n_el} layer(s)", p + ("kind",))
    if s.kind == "ratio":
        if s.target is None:
            raise r.error("ratio study needs an equalisation target", p)
        if not s.fractions:
            raise r.error("ratio study needs a fractions list", p)
        bad = [f for f in s.fractions if not 0 < f < 1 and not (s.single_layer_fallback and f in (0.0, 1.0))]
        if bad:
            raise r.error(f"fraction {bad[0]} outside (0, 1)", p + ("fractions",))
    if s.kind == "thickness" and not s.totals:
        raise r.error("thickness study needs a totals list", p)
    if s.kind == "sensitivity" and not s.cases:
        raise r.error("sensitivity study needs a cases list", p)
    if s.kind == "optimize":
        try:
            DesignSpace(cfg.design, dict(s.grids), s.target)
        except ConfigurationError as exc:
            raise r.error(str(exc), p + ("grids",)) from None
    for cid, ov in s.cases:
        for k in ov:
            if int(k.rpartition("_p")[2]) > n_el:
                raise r.error(f"case {cid}: {k} refers to a layer the design does not have", p + ("cases",))


def parse_config(text: str) -> RunConfig:
    """Parse and validate a YAML document."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                          line=mark.line + 1 if mark else None) from None
    return config_from_dict(data, _line_index(text))


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except UnicodeDecodeError:
        raise ConfigError(f"{path} is not UTF-8 text") from None
    return parse_config(text)


def preset_config(name: str) -> RunConfig:
    if name not in presets.DESIGNS:
        raise ConfigError(f"unknown design preset {name!r}; choose from {', '.join(presets.DESIGNS)}")
    return RunConfig(design=presets.design_preset(name))


# ---- serialisation ----------------------------------------------------------

def _design_dict(design: CellDesign) -> dict:
    d = design_to_dict(design)
    layers = []
    for layer in d["layers"]:
        if "chemistry" not in layer:
            layer["chemistry"] = None
        layers.append(layer)
    d["layers"] = layers
    act = {v: k for k, v in ACTIVITY.items()}.get(design.electrolyte.activity)
    if act is None:
        raise ConfigurationError("electrolyte activity function has no configuration name")
    d["electrolyte"]["activity"] = act
    return d


def config_to_dict(cfg: RunConfig) -> dict:
    out = {"design": _design_dict(cfg.design), "solver": asdict(cfg.solver)}
    if cfg.protocol is not None:
        p = {"I_1C": "auto" if cfg.protocol.I_1C is None else cfg.protocol.I_1C}
        if cfg.protocol_preset is not None:
            p["preset"] = cfg.protocol_preset
        else:
            p["steps"] = [{k: v for k, v in asdict(s).items() if v is not None} for s in cfg.protocol.steps]
        out["protocol"] = p
    if cfg.study is not None:
        s = cfg.study
        out["study"] = {
            "kind": s.kind, "c_rate": s.c_rate, "target": s.target,
            "cases": [{"id": cid, "overrides": dict(ov)} for cid, ov in s.cases],
            "totals": list(s.totals), "ratio": s.ratio, "fractions": list(s.fractions),
            "designs": list(s.designs), "grids": {k: list(v) for k, v in s.grids},
            "budget": s.budget, "single_layer_fallback": s.single_layer_fallback,
        }
    out["output"] = {"directory": cfg.output.directory, "snapshot_count": cfg.output.snapshot_count}
    return out


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)
