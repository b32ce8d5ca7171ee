"""Multi-step protocols and derived performance metrics."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .design import CellDesign, SolverConfig, build_mesh
from .electrochem import ConfigurationError
from .results import COULOMB_PER_M2_PER_MAH_CM2, SimulationResult, StepRecord
from .solver import Discretisation, SolverError, initial_state, run_constant_current

log = logging.getLogger(__name__)

MODES = ("cc-charge", "cc-discharge", "rest")
SPECIFIC_RATE = 0.05
ANCHOR_RATE = 0.5


@dataclass(frozen=True)
class ProtocolStep:
    mode: str
    c_rate: float = 0.0
    cutoff_voltage: float | None = None  # None: the design's cutoff for the direction
    time_limit: float | None = None  # s

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"step mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "rest":
            if self.time_limit is None or not self.time_limit > 0:
                raise ConfigurationError("rest step needs a positive time_limit")
        elif not self.c_rate > 0:
            raise ConfigurationError(f"cc step needs c_rate > 0, got {self.c_rate}")
        if self.cutoff_voltage is not None and math.isnan(self.cutoff_voltage) and self.time_limit is None:
            raise ConfigurationError("cc step with the voltage stop disabled needs a time_limit")

    @property
    def sign(self) -> float:
        return {"cc-charge": 1.0, "cc-discharge": -1.0, "rest": 0.0}[self.mode]


@dataclass(frozen=True)
class Protocol:
    steps: tuple
    I_1C: float | None = None  # A; None derives it from the 0.05C specific capacity
    name: str = "custom"

    def __post_init__(self):
        if not self.steps:
            raise ConfigurationError("protocol has no steps")
        if self.I_1C is not None and not self.I_1C > 0:
            raise ConfigurationError("I_1C must be positive")
        object.__setattr__(self, "steps", tuple(self.steps))

    @property
    def start_direction(self) -> str:
        for s in self.steps:
            if s.mode == "cc-discharge":
                return "discharge"
            if s.mode == "cc-charge":
                return "charge"
        return "charge"


def charge(c_rate, **kw) -> ProtocolStep:
    return ProtocolStep("cc-charge", c_rate, **kw)


def discharge(c_rate, **kw) -> ProtocolStep:
    return ProtocolStep("cc-discharge", c_rate, **kw)


CYCLING = {
    "3c-3c": Protocol((charge(3), discharge(3), charge(3), discharge(3)), name="3c-3c"),
    "3c-01c-3c": Protocol((charge(3), discharge(0.1), charge(3)), name="3c-01c-3c"),
}


def cycling_protocol(name: str, I_1C: float | None = None) -> Protocol:
    try:
        p = CYCLING[name]
    except KeyError:
        raise KeyError(f"unknown cycling preset {name!r}; choose from {sorted(CYCLING)}") from None
    return Protocol(p.steps, I_1C, p.name)


def current_for_capacity(capacity: float, area: float) -> float:
    """1C current (A) of an areal capacity in mAh/cm^2 over ``area`` m^2."""
    return capacity * area * 10.0


def nominal_1c_current(design: CellDesign) -> float:
    return current_for_capacity(design.theoretical_capacity(), design.area)


def run_protocol(design: CellDesign, protocol: Protocol, config: SolverConfig = SolverConfig(),
                 snapshot_count: int = 20, state=None) -> SimulationResult:
    """Run the steps back to back, each from the previous terminal state.

    A failed step ends the run; the result keeps the completed steps plus the
    failed one and carries the failure cause.
    """
    I_1C = protocol.I_1C
    if I_1C is None:
        I_1C = current_for_capacity(specific_capacity(design, config), design.area)
    mesh = build_mesh(design, config)
    disc = Discretisation(design, mesh)
    if state is None:
        state = initial_state(design, protocol.start_direction, mesh, config)
    result = SimulationResult(design_name=design.name)
    for k, st in enumerate(protocol.steps):
        cutoff = st.cutoff_voltage
        if st.mode == "rest":
            cutoff = float("nan")
        try:
            rec = run_constant_current(disc, config, state, st.sign * st.c_rate * I_1C, cutoff,
                                       st.time_limit, snapshot_count, st.mode, st.c_rate or None)
        except SolverError as exc:
            rec = StepRecord(mode=st.mode, current=st.sign * st.c_rate * I_1C, c_rate=st.c_rate,
                             area=design.area)
            rec.finish_failure(state, "solver-failure", None)
            log.warning("step %d failed: %s", k, exc)
        rec.step_index = k
        result.steps.append(rec)
        if not rec.ok:
            result.failure = f"step {k} ({st.mode}): {rec.failure}"
            break
        state = rec.final_state
    return result


def charge_once(design: CellDesign, c_rate: float, I_1C: float, config: SolverConfig = SolverConfig(),
                snapshot_count: int = 20) -> SimulationResult:
    return run_protocol(design, Protocol((charge(c_rate),), I_1C), config, snapshot_count)


def specific_capacity(design: CellDesign, config: SolverConfig = SolverConfig()) -> float:
    """Areal capacity (mAh/cm^2) of a 0.05C charge to the upper cutoff.

    The rate is referred to the design's theoretical capacity, which is all
    that is known before the run.
    """
    res = charge_once(design, SPECIFIC_RATE, nominal_1c_current(design), config, snapshot_count=1)
    if res.failure:
        raise SolverError(f"specific-capacity run failed: {res.failure}")
    return res.capacity


def capacity_retention(achieved: float, specific: float) -> float:
    if specific == 0:
        raise ValueError("specific capacity is zero")
    return achieved / specific


def normalized_reaction_current(J, L: float, a_p, I: float):
    """J * L * a_p / I; equals one everywhere for perfectly uniform utilisation."""
    if I == 0:
        raise ValueError("applied current density is zero")
    return np.asarray(J, dtype=float) * L * np.asarray(a_p, dtype=float) / I


def energy_density(step: StepRecord, mass: float) -> float:
    """Wh/g delivered or absorbed during a constant-current step."""
    if not mass > 0:
        raise ValueError("mass must be positive")
    if len(step.t) < 2:
        raise ValueError("time series too short to integrate")
    t_h = np.asarray(step.t) / 3600.0
    return abs(step.current) / mass * float(np.trapezoid(step.V, t_h))


def integrated_capacity(step: StepRecord) -> float:
    """Trapezoidal integral of the recorded current, mAh/cm^2."""
    I = np.abs(np.asarray(step.I)) / step.area
    return float(np.trapezoid(I, step.t)) / COULOMB_PER_M2_PER_MAH_CM2


def time_and_soc_at_cutoff(step: StepRecord, specific: float) -> tuple[float, float]:
    return step.duration / 60.0, step.capacity / specific


@dataclass
class DesignMetrics:
    design_name: str
    c_rate: float
    specific_capacity: float  # mAh/cm^2 at 0.05C
    I_1C: float  # A
    achieved_capacity: float  # mAh/cm^2
    retention: float
    energy_density: float  # Wh/g
    cathode_mass: float  # g
    time_to_cutoff: float  # min
    soc_at_cutoff: float
    termination: str | None = None
    min_c_e: float = float("nan")
    min_c_e_x: float = float("nan")
    peak_phi_e: float = float("nan")
    failure: str | None = None
    extra: dict = field(default_factory=dict)

    def row(self) -> dict:
        """Flat record with unit-suffixed keys, as written to CSV."""
        d = {_UNIT_KEYS.get(k, k): v for k, v in self.__dict__.items() if k != "extra"}
        d.update(self.extra)
        return d


_UNIT_KEYS = {
    "specific_capacity": "specific_capacity_mAh_cm2", "I_1C": "I_1C_A",
    "achieved_capacity": "achieved_capacity_mAh_cm2", "energy_density": "energy_density_Wh_g",
    "cathode_mass": "cathode_mass_g", "time_to_cutoff": "time_to_cutoff_min",
    "min_c_e": "min_c_e_mol_m3", "min_c_e_x": "min_c_e_x_m", "peak_phi_e": "peak_phi_e_V",
}


def evaluate(design: CellDesign, c_rate: float, config: SolverConfig = SolverConfig(),
             specific: float | None = None, snapshot_count: int = 20,
             keep_result: bool = False) -> DesignMetrics:
    """Specific capacity, then a charge at ``c_rate`` of that 1C current."""
    if specific is None:
        specific = specific_capacity(design, config)
    I_1C = current_for_capacity(specific, design.area)
    res = charge_once(design, c_rate, I_1C, config, snapshot_count)
    step = res.last
    mass = design.cathode_mass()
    minutes, soc = time_and_soc_at_cutoff(step, specific)
    m = DesignMetrics(
        design_name=design.name, c_rate=c_rate, specific_capacity=specific, I_1C=I_1C,
        achieved_capacity=step.capacity, retention=capacity_retention(step.capacity, specific),
        energy_density=energy_density(step, mass) if len(step.t) > 1 else 0.0,
        cathode_mass=mass, time_to_cutoff=minutes, soc_at_cutoff=soc, termination=step.termination,
        min_c_e=step.min_c_e, min_c_e_x=step.min_c_e_x, peak_phi_e=step.peak_phi_e,
        failure=res.failure,
    )
    if keep_result:
        m.extra["result"] = res
    return m


def _curve_point(args):
    design, rate, I_1C, config = args
    res = charge_once(design, rate, I_1C, config, snapshot_count=1)
    return rate, res.capacity, res.failure


def crate_curve(design: CellDesign, rates, config: SolverConfig = SolverConfig(),
                specific: float | None = None, normalize: bool = True, workers: int = 1):
    """Achieved capacity per C-rate, normalised to the 0.5C entry.

    Returns ``[(rate, capacity, normalised), ...]`` in the order of ``rates``.
    """
    rates = [float(r) for r in rates]
    if not rates or any(r <= 0 for r in rates):
        raise ValueError("rates must be a non-empty list of positive C-rates")
    if normalize and ANCHOR_RATE not in rates:
        raise ValueError("normalisation needs a 0.5C entry")
    if specific is None:
        specific = specific_capacity(design, config)
    I_1C = current_for_capacity(specific, design.area)
    jobs = [(design, r, I_1C, config) for r in rates]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(_curve_point, jobs))
    else:
        points = [_curve_point(j) for j in jobs]
    for rate, _, failure in points:
        if failure:
            log.warning("%.3gC run failed: %s", rate, failure)
    anchor = dict((r, c) for r, c, _ in points).get(ANCHOR_RATE) if normalize else None
    return [(r, c, c / anchor if anchor else float("nan")) for r, c, _ in points]
