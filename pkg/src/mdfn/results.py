"""Containers for simulation output."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# 1 mAh/cm^2 = 36000 C/m^2
COULOMB_PER_M2_PER_MAH_CM2 = 36000.0


@dataclass(frozen=True)
class DepletionEvent:
    time: float
    node: int
    x: float
    region: int
    c_e: float


@dataclass
class StepRecord:
    """Time series and diagnostics of one protocol step."""

    mode: str
    current: float  # A, charge positive
    c_rate: float | None
    area: float
    t: list = field(default_factory=list)
    V: list = field(default_factory=list)
    I: list = field(default_factory=list)
    q: list = field(default_factory=list)
    probes: dict = field(default_factory=dict)
    snapshots: list = field(default_factory=list)
    termination: str | None = None
    failure: str | None = None
    depletion: DepletionEvent | None = None
    min_c_e: float = np.inf
    min_c_e_x: float = np.nan
    min_c_e_time: float = np.nan
    peak_phi_e: float = -np.inf
    final_state: object = None
    step_index: int = 0
    _probe_nodes: dict = field(default_factory=dict, repr=False)

    @property
    def current_density(self) -> float:
        return self.current / self.area

    @property
    def capacity(self) -> float:
        """Charge passed in this step, mAh/cm^2."""
        return float(self.q[-1]) if self.q else 0.0

    @property
    def duration(self) -> float:
        return float(self.t[-1]) if self.t else 0.0

    @property
    def ok(self) -> bool:
        return self.failure is None

    def start(self, state, probe_nodes, disc):
        self._probe_nodes = dict(probe_nodes)
        self.probes = {"c_e_CE": [], "phi_e_CC": []}
        self.probes.update({f"Jbar_{k}": [] for k in probe_nodes})
        self.append(state, probe_nodes, disc)

    def append(self, state, probe_nodes, disc):
        I = self.current_density
        self.t.append(float(state.time))
        self.V.append(float(state.voltage))
        self.I.append(float(self.current))
        self.q.append(abs(I) * float(state.time) / COULOMB_PER_M2_PER_MAH_CM2)
        self.probes["c_e_CE"].append(float(state.c_e[0]))
        self.probes["phi_e_CC"].append(float(state.phi_e[-1]))
        L = disc.design.electrode_thickness
        for k, node in probe_nodes.items():
            val = state.J[node] * L * disc.a[node] / I if I != 0 else np.nan
            self.probes[f"Jbar_{k}"].append(float(val))
        i = int(np.argmin(state.c_e))
        if state.c_e[i] < self.min_c_e:
            self.min_c_e = float(state.c_e[i])
            self.min_c_e_x = float(disc.mesh.x[i])
            self.min_c_e_time = float(state.time)
        self.peak_phi_e = max(self.peak_phi_e, float(np.max(state.phi_e)))

    def snapshot(self, state, disc):
        self.snapshots.append({
            "t": float(state.time),
            "x": disc.mesh.x.copy(),
            "c_e": state.c_e.copy(),
            "phi_e": state.phi_e.copy(),
            "phi_s": state.phi_s.copy(),
            "c_surf": disc.surface_concentration(state.c_s, state.J),
            "Jbar": (state.J * disc.design.electrode_thickness * disc.a / self.current_density
                     if self.current != 0 else np.full(state.J.size, np.nan)),
        })

    def finish(self, state, termination, disc):
        self.termination = termination
        self.final_state = state
        if not self.snapshots or self.snapshots[-1]["t"] != state.time:
            self.snapshot(state, disc)

    def thin_snapshots(self, count: int):
        """Keep the snapshots nearest ``count`` evenly spaced times, then the last one."""
        snaps = self.snapshots
        if len(snaps) <= count + 1:
            return
        t = np.array([s["t"] for s in snaps])
        targets = np.linspace(0.0, t[-1], count, endpoint=False)
        keep = sorted({int(np.argmin(np.abs(t[:-1] - x))) for x in targets} | {len(snaps) - 1})
        self.snapshots = [snaps[i] for i in keep]

    def finish_failure(self, state, cause, event):
        self.termination = cause
        self.failure = cause
        if event is not None and self.depletion is None:
            self.depletion = event
        self.final_state = state


@dataclass
class SimulationResult:
    design_name: str
    steps: list = field(default_factory=list)
    failure: str | None = None

    @property
    def capacities(self) -> list[float]:
        return [s.capacity for s in self.steps]

    @property
    def last(self) -> StepRecord:
        return self.steps[-1]

    @property
    def capacity(self) -> float:
        return self.steps[-1].capacity

    @property
    def depletion(self) -> DepletionEvent | None:
        for s in self.steps:
            if s.depletion is not None:
                return s.depletion
        return None

    @property
    def final_state(self):
        return self.steps[-1].final_state if self.steps else None
