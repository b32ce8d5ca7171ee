"""Benchmark equalisation, design sweeps and the staged optimiser.

Every comparison here is made at a common 0.05C specific capacity: designs
are first rescaled in thickness to hit the target, and the 1C current used
for the rate test is derived from that target.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

from .design import CellDesign, SolverConfig
from .electrochem import ConfigurationError
from .protocol import DesignMetrics, current_for_capacity, evaluate, specific_capacity
from .solver import SolverError

log = logging.getLogger(__name__)

UM = 1e-6
EQUALIZE_TOL = 0.005
POROSITY_BOUNDS = (0.25, 0.35)

_capacity_cache: dict = {}


class EqualizationError(RuntimeError):
    """No thickness in the allowed bracket reaches the target capacity."""


def cached_specific_capacity(design: CellDesign, config: SolverConfig = SolverConfig()) -> float:
    key = (design.digest(), config)
    if key not in _capacity_cache:
        _capacity_cache[key] = specific_capacity(design, config)
    return _capacity_cache[key]


def _scaled(design: CellDesign, layers, s: float) -> CellDesign:
    out = design
    for k in layers:
        out = out.with_layer(k, L=design.electrodes[k].L * s)
    return out


def equalize_specific_capacity(design: CellDesign, target: float, adjust=None,
                               config: SolverConfig = SolverConfig(), bounds=(0.2, 5.0),
                               tol: float = EQUALIZE_TOL, max_iter: int = 40) -> CellDesign:
    """Rescale electrode thicknesses until the 0.05C capacity hits ``target``.

    ``adjust`` selects electrode layers by index (0 next to the separator);
    the default scales all of them together, which keeps the sub-layer ratio.
    Bisection runs on the common scale factor, starting from a tight bracket
    around the linear estimate and widening it inside ``bounds``.
    """
    if not target > 0:
        raise ValueError("target capacity must be positive")
    layers = tuple(range(len(design.electrodes))) if adjust is None else tuple(
        [adjust] if isinstance(adjust, int) else adjust)
    if not layers:
        raise ValueError("no layer selected for adjustment")

    def cap(s):
        return cached_specific_capacity(_scaled(design, layers, s), config)

    c1 = cap(1.0)
    if abs(c1 / target - 1) <= tol:
        return design
    # capacity is close to affine in the adjusted thickness
    fixed = design.theoretical_capacity() - sum(design.electrodes[k].theoretical_capacity() for k in layers)
    moving = design.theoretical_capacity() - fixed
    guess = max(bounds[0], min(bounds[1], (target - fixed * c1 / design.theoretical_capacity())
                               / (moving * c1 / design.theoretical_capacity())))
    cg = cap(guess)
    if abs(cg / target - 1) <= tol:
        return _scaled(design, layers, guess)

    lo, hi = (guess, None) if cg < target else (None, guess)
    step = 0.02
    while lo is None or hi is None:
        probe = guess * (1 + step) if lo is not None else guess * (1 - step)
        if not bounds[0] <= probe <= bounds[1]:
            raise EqualizationError(
                f"target {target:.4g} mAh/cm^2 not bracketed within thickness scale {bounds}")
        cp = cap(probe)
        if abs(cp / target - 1) <= tol:
            return _scaled(design, layers, probe)
        if cp < target:
            lo = probe
        else:
            hi = probe
        step *= 2
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        cm = cap(mid)
        if abs(cm / target - 1) <= tol:
            return _scaled(design, layers, mid)
        if cm < target:
            lo = mid
        else:
            hi = mid
    raise EqualizationError(f"bisection did not reach {tol:.1%} of {target:.4g} mAh/cm^2")


# ---- design space ---------------------------------------------------------

_PARAM_FIELDS = {"L": "L", "eps_e": "eps_e", "eps_cbd": "eps_cbd", "b": "b"}


def parse_parameter(name: str) -> tuple[str, int]:
    """``"eps_e_p2"`` -> ``("eps_e", 1)``: attribute and electrode index."""
    field_, _, layer = name.rpartition("_")
    if field_ not in _PARAM_FIELDS or not layer.startswith("p") or not layer[1:].isdigit():
        raise ConfigurationError(
            f"unknown design parameter {name!r}; use <L|eps_e|eps_cbd|b>_p<k> with k from 1")
    return _PARAM_FIELDS[field_], int(layer[1:]) - 1


def apply_overrides(design: CellDesign, overrides: dict) -> CellDesign:
    """Apply ``{"eps_e_p2": 0.3, "L_p1": 47e-6, ...}``; p1 is next to the separator."""
    out = design
    for name, value in overrides.items():
        attr, k = parse_parameter(name)
        if k >= len(out.electrodes):
            raise ConfigurationError(f"{name}: design has only {len(out.electrodes)} electrode layers")
        out = out.with_layer(k, **{attr: float(value)})
    return out


def design_parameter(design: CellDesign, name: str) -> float:
    attr, k = parse_parameter(name)
    return getattr(design.electrodes[k], attr)


@dataclass(frozen=True)
class DesignSpace:
    """Free parameters with candidate grids; thickness handled by the sweeps."""

    base: CellDesign
    grids: dict = field(default_factory=dict)  # name -> tuple of candidate values
    target: float | None = None  # mAh/cm^2; None keeps the base thickness
    porosity_bounds: tuple = POROSITY_BOUNDS

    def __post_init__(self):
        lo, hi = self.porosity_bounds
        for name, values in self.grids.items():
            attr, k = parse_parameter(name)
            if k >= len(self.base.electrodes):
                raise ConfigurationError(f"{name}: base design has no such layer")
            if not values:
                raise ConfigurationError(f"{name}: empty candidate grid")
            if attr == "eps_e" and any(not lo <= v <= hi for v in values):
                raise ConfigurationError(f"{name}: porosity outside the allowed window [{lo}, {hi}]")

    @property
    def free(self) -> tuple:
        return tuple(self.grids)


@dataclass
class SweepCase:
    case_id: str
    overrides: dict
    design: CellDesign | None = None
    I_1C: float = math.nan  # A
    specific_capacity: float = math.nan  # mAh/cm^2
    metrics: DesignMetrics | None = None
    status: str = "pending"  # ok | failed | infeasible
    message: str = ""

    @property
    def retention(self) -> float:
        return self.metrics.retention if self.metrics else math.nan

    @property
    def capacity(self) -> float:
        return self.metrics.achieved_capacity if self.metrics else math.nan

    def row(self) -> dict:
        out = {"case_id": self.case_id, "status": self.status, "message": self.message,
               "I_1C_A": self.I_1C, "specific_capacity_mAh_cm2": self.specific_capacity}
        # layer thicknesses are given in metres; other design parameters are pure numbers
        out.update({f"override_{k}_m" if k.startswith("L_p") else f"override_{k}": v
                    for k, v in self.overrides.items()})
        if self.design is not None:
            out.update({f"L_p{k + 1}_um": layer.L / UM for k, layer in enumerate(self.design.electrodes)})
        if self.metrics is not None:
            m = self.metrics
            out.update({"achieved_capacity_mAh_cm2": m.achieved_capacity, "retention": m.retention,
                        "energy_density_Wh_g": m.energy_density, "cathode_mass_g": m.cathode_mass,
                        "time_to_cutoff_min": m.time_to_cutoff, "termination": m.termination,
                        "min_c_e_mol_m3": m.min_c_e})
        return out


def _run_case(job):
    case_id, overrides, design, target, adjust, c_rate, config = job
    case = SweepCase(case_id, dict(overrides))
    try:
        if target is not None:
            design = equalize_specific_capacity(design, target, adjust, config)
        case.design = design
        spec = cached_specific_capacity(design, config)
        case.specific_capacity = spec
        case.I_1C = current_for_capacity(spec, design.area)
        case.metrics = evaluate(design, c_rate, config, specific=spec, snapshot_count=1)
        if case.metrics.failure:
            case.status, case.message = "failed", case.metrics.failure
        else:
            case.status = "ok"
    except EqualizationError as exc:
        case.design = case.design or design
        case.status, case.message = "infeasible", str(exc)
    except (SolverError, ConfigurationError, ValueError) as exc:
        case.design = case.design or design
        case.status, case.message = "failed", str(exc)
    return case


def run_cases(jobs, workers: int = 1) -> list[SweepCase]:
    """Evaluate case jobs, returning them in job order whatever the pool does."""
    jobs = list(jobs)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_case, jobs))
    return [_run_case(j) for j in jobs]


def _rank_key(case: SweepCase):
    """Higher retention, then higher capacity, then thinner electrode."""
    if case.status != "ok":
        return (1, 0.0, 0.0, 0.0)
    return (0, -round(case.retention, 6), -round(case.capacity, 6), case.design.electrode_thickness)


def _capacity_key(case: SweepCase):
    if case.status != "ok":
        return (1, 0.0, 0.0)
    return (0, -round(case.capacity, 6), case.design.electrode_thickness)


def best_case(cases, by: str = "retention") -> SweepCase | None:
    ok = [c for c in cases if c.status == "ok"]
    if not ok:
        return None
    return min(ok, key=_rank_key if by == "retention" else _capacity_key)


# ---- sweeps -----------------------------------------------------------------

def sensitivity_sweep(space: DesignSpace, cases, c_rate: float = 3.0,
                      config: SolverConfig = SolverConfig(), workers: int = 1) -> list[SweepCase]:
    """Each override set applied to the base, equalised when a target is set.

    ``cases`` is a list of ``(case_id, overrides)`` pairs or bare override
    dicts. Returns cases ranked by retention; failures sort last.
    """
    jobs = []
    for k, item in enumerate(cases):
        case_id, ov = item if isinstance(item, tuple) else (f"case-{k + 1}", item)
        jobs.append((case_id, ov, apply_overrides(space.base, ov), space.target, None, c_rate, config))
    out = run_cases(jobs, workers)
    return sorted(out, key=_rank_key)


@dataclass
class SweepResult:
    cases: list
    best: SweepCase | None
    by: str

    def rows(self) -> list[dict]:
        return [c.row() for c in self.cases]


def thickness_sweep(design: CellDesign, totals, ratio: float = 0.5, c_rate: float = 3.0,
                    config: SolverConfig = SolverConfig(), workers: int = 1) -> SweepResult:
    """Total electrode thickness (m) at a fixed p1 fraction; best by achieved capacity."""
    if len(design.electrodes) != 2:
        raise ConfigurationError("thickness sweep needs a two-layer electrode")
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    jobs = []
    for total in totals:
        if not total > 0:
            raise ValueError("thicknesses must be positive")
        d = design.with_layer(0, L=total * ratio).with_layer(1, L=total * (1 - ratio))
        jobs.append((f"L{total / UM:g}um", {"L_total_um": total / UM}, d, None, None, c_rate, config))
    cases = run_cases(jobs, workers)
    return SweepResult(cases, best_case(cases, "capacity"), "capacity")


def ratio_sweep(design: CellDesign, fractions, target: float, c_rate: float = 3.0,
                config: SolverConfig = SolverConfig(), workers: int = 1,
                single_layer_fallback: bool = False) -> SweepResult:
    """p1 thickness fraction sweep, each case equalised to ``target``; best by retention."""
    if len(design.electrodes) != 2:
        raise ConfigurationError("ratio sweep needs a two-layer electrode")
    total = design.electrode_thickness
    jobs = []
    for f in fractions:
        case_id = f"nmc{100 * f:.1f}pct"
        if not 0 < f < 1:
            if not single_layer_fallback or f not in (0.0, 1.0):
                raise ValueError(f"fraction {f} outside (0, 1)")
            keep = design.electrodes[0 if f == 1.0 else 1]
            d = replace(design, layers=(design.separator, replace(keep, L=total)))
        else:
            d = design.with_layer(0, L=total * f).with_layer(1, L=total * (1 - f))
        jobs.append((case_id, {"nmc_fraction": f}, d, target, None, c_rate, config))
    cases = run_cases(jobs, workers)
    return SweepResult(cases, best_case(cases, "retention"), "retention")


def mass_sweep(designs, c_rate: float = 3.0, config: SolverConfig = SolverConfig(),
               workers: int = 1) -> list[SweepCase]:
    """Rate capacity against cathode mass, sorted by mass."""
    jobs = [(d.name or f"design-{k + 1}", {"cathode_mass_g": d.cathode_mass()}, d, None, None, c_rate, config)
            for k, d in enumerate(designs)]
    cases = run_cases(jobs, workers)
    return sorted(cases, key=lambda c: c.overrides["cathode_mass_g"])


# ---- optimiser --------------------------------------------------------------

@dataclass
class TraceEntry:
    stage: str
    case: SweepCase
    accepted: bool = False

    def row(self) -> dict:
        return {"stage": self.stage, "accepted": self.accepted, **self.case.row()}


@dataclass
class OptimizationResult:
    design: CellDesign
    metrics: DesignMetrics | None
    trace: list
    warnings: list = field(default_factory=list)

    @property
    def objective(self) -> float:
        return self.metrics.retention if self.metrics else math.nan

    def rows(self) -> list[dict]:
        return [t.row() for t in self.trace]


def optimize(space: DesignSpace, c_rate: float = 3.0, config: SolverConfig = SolverConfig(),
             thickness_totals=None, ratio_fractions=None, workers: int = 1,
             budget: int | None = None) -> OptimizationResult:
    """Staged coordinate search.

    1. One parameter at a time over its grid, at the space's target capacity;
       a move is kept only when it raises retention.
    2. Thickness sweep at the current sub-layer ratio; keeps the capacity
       maximiser.
    3. Ratio sweep equalised to the capacity of that maximiser; keeps the
       retention maximiser.

    Stages 2 and 3 default to the reference candidate grids
    (``THICKNESS_GRID``, ``RATIO_GRID``). The returned objective is the
    retention of the final design. ``budget``
    caps the number of simulated cases; when it runs out the best design so
    far is returned with a warning.
    """
    trace: list[TraceEntry] = []
    warnings: list[str] = []
    spent = 0
    current = space.base
    target = space.target if space.target is not None else cached_specific_capacity(current, config)

    def remaining():
        return math.inf if budget is None else budget - spent

    def record(stage, cases, chosen):
        nonlocal spent
        spent += len(cases)
        for c in cases:
            trace.append(TraceEntry(stage, c, c is chosen))

    base_case = run_cases([("base", {}, current, target, None, c_rate, config)])[0]
    record("base", [base_case], base_case)
    if base_case.status != "ok":
        raise SolverError(f"base design failed: {base_case.message}")
    best = base_case
    current = best.design

    for name in space.free:
        values = [v for v in space.grids[name] if v != design_parameter(current, name)]
        if not values:
            continue
        if remaining() < len(values):
            warnings.append(f"budget exhausted before parameter {name}")
            break
        jobs = [(f"{name}={v:g}", {name: v}, apply_overrides(current, {name: v}), target, None, c_rate, config)
                for v in values]
        cases = run_cases(jobs, workers)
        challenger = best_case([best] + cases, "retention")  # incumbent wins ties
        record(f"sensitivity:{name}", cases, challenger if challenger is not best else None)
        if challenger is not best:
            best = challenger
            current = best.design

    if space.free and len(current.electrodes) == 2 and not warnings:
        totals = list(THICKNESS_GRID if thickness_totals is None else thickness_totals)
        ratio = current.electrodes[0].L / current.electrode_thickness
        if remaining() >= len(totals):
            sweep = thickness_sweep(current, totals, ratio, c_rate, config, workers)
            record("thickness", sweep.cases, sweep.best)
            if sweep.best is not None:
                current = sweep.best.design
                target = sweep.best.specific_capacity
        else:
            warnings.append("budget exhausted before the thickness sweep")
        fractions = list(RATIO_GRID if ratio_fractions is None else ratio_fractions)
        if fractions and remaining() >= len(fractions):
            sweep = ratio_sweep(current, fractions, target, c_rate, config, workers)
            record("ratio", sweep.cases, sweep.best)
            if sweep.best is not None:
                best = sweep.best
                current = best.design
        elif fractions:
            warnings.append("budget exhausted before the ratio sweep")
        if best.design is not current:
            final = run_cases([("final", {}, current, None, None, c_rate, config)])[0]
            record("final", [final], final)
            best = final

    for w in warnings:
        log.warning(w)
    return OptimizationResult(best.design, best.metrics, trace, warnings)


# ---- reference grids --------------------------------------------------------

THICKNESS_GRID = tuple(t * UM for t in (60, 88, 104, 112, 140, 150))
RATIO_PAIRS = ((13.5, 127.0), (47.0, 71.0), (52.25, 62.0), (56.0, 56.0), (57.25, 54.0), (68.5, 35.0), (84.0, 9.0))
RATIO_GRID = tuple(n / (n + l) for n, l in RATIO_PAIRS)
RATIO_TARGET = 4.71
DEFAULT_GRIDS = {
    "eps_e_p1": (0.25, 0.30),
    "eps_e_p2": (0.25, 0.30),
    "eps_cbd_p1": (0.04, 0.07),
    "eps_cbd_p2": (0.07,),
    "b_p2": (1.8, 1.9),
}
