"""Finite-volume M-DFN discretisation and implicit time integration.

Unknowns per through-thickness cell are (c_e, phi_e, phi_s, J). Particle
concentrations are linear in the surface flux for a backward-Euler step, so
they are condensed out: each Newton iteration only sees the surface
concentration as an affine function of J, and the full radial profile is
recovered after convergence. Separator cells carry dummy phi_s = J = 0 rows
so every cell has the same 4x4 block structure (bandwidth 7).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .design import CellDesign, Mesh, SolverConfig, build_mesh
from .electrochem import ConfigurationError
from .results import DepletionEvent, SimulationResult, StepRecord

log = logging.getLogger(__name__)

C_MIN = 1e-3  # mol/m^3, clip for property evaluation only


class SolverError(RuntimeError):
    """Newton failed to converge even at the minimum time step."""


class DepletionError(SolverError):
    """Electrolyte concentration driven to zero; the step cannot be completed."""

    def __init__(self, message, event: DepletionEvent):
        super().__init__(message)
        self.event = event


@dataclass
class CellState:
    c_e: np.ndarray
    phi_e: np.ndarray
    phi_s: np.ndarray
    J: np.ndarray
    c_s: np.ndarray  # (cells, shells); zero rows in the separator
    time: float = 0.0
    voltage: float = float("nan")
    current_density: float = 0.0  # A/m^2 the state was solved at

    def copy(self) -> "CellState":
        return CellState(self.c_e.copy(), self.phi_e.copy(), self.phi_s.copy(), self.J.copy(),
                         self.c_s.copy(), self.time, self.voltage, self.current_density)


class Discretisation:
    """Immutable per-node coefficients for one (design, mesh) pair."""

    def __init__(self, design: CellDesign, mesh: Mesh):
        self.design = design
        self.mesh = mesh
        n = mesh.n
        M = mesh.radial_shells
        kin = design.kinetics
        self.F = kin.F
        self.Vt = kin.thermal_voltage
        self.T = kin.T
        self.t_plus = design.electrolyte.t_plus
        self.dx = mesh.dx.astype(float)
        self.eps = np.empty(n)
        self.brug = np.empty(n)
        self.a = np.zeros(n)
        self.sig = np.ones(n)
        self.elec = mesh.electrode.astype(np.int64)
        self.kF = np.ones(n)
        self.cmax = np.ones(n)
        self.eps_act = np.zeros(n)
        self.regions = []
        for k, layer in enumerate(design.layers):
            sl = mesh.region_slice(k)
            self.eps[sl] = layer.eps_e
            self.brug[sl] = layer.eps_e ** layer.b
            if not layer.is_electrode:
                continue
            chem = layer.chemistry
            a_p = layer.surface_area
            self.a[sl] = a_p
            self.sig[sl] = layer.sigma_s * (1.0 - layer.eps_e) ** layer.b
            self.kF[sl] = kin.F * chem.k_rate
            self.cmax[sl] = chem.c_s_max
            self.eps_act[sl] = layer.eps_active
            R = chem.R_p
            r = np.linspace(0.0, R, M + 1)
            vol = (r[1:] ** 3 - r[:-1] ** 3) / 3.0
            area = r**2
            ratio = a_p * R / (3.0 * layer.eps_active)
            self.regions.append(_Particle(k, sl, chem, vol, area, R / M, ratio))
        self.sig[~mesh.electrode] = 1.0

    def particle_inventory(self, c_s: np.ndarray) -> float:
        """Lithium held in particles, mol per m^2 of electrode."""
        total = 0.0
        for p in self.regions:
            mean = c_s[p.sl] @ p.vol / p.vol.sum()
            total += float(np.sum(self.dx[p.sl] * self.eps_act[p.sl] * mean))
        return total

    def electrolyte_inventory(self, c_e: np.ndarray) -> float:
        return float(np.sum(self.dx * self.eps * c_e))

    def surface_concentration(self, c_s: np.ndarray, J: np.ndarray) -> np.ndarray:
        out = np.zeros(self.mesh.n)
        for p in self.regions:
            out[p.sl] = c_s[p.sl, -1] - p.ratio * J[p.sl] * p.dr / (2.0 * self.F * p.chem.D_s)
        return out


@dataclass
class _Particle:
    region: int
    sl: slice
    chem: object
    vol: np.ndarray
    area: np.ndarray
    dr: float
    ratio: float

    def operator(self, dt: float, F: float):
        """Inverse of the backward-Euler matrix and the unit-flux response."""
        M = self.vol.size
        D = self.chem.D_s
        A = np.diag(self.vol / dt)
        for k in range(M - 1):
            g = D * self.area[k + 1] / self.dr
            A[k, k] += g
            A[k + 1, k + 1] += g
            A[k, k + 1] -= g
            A[k + 1, k] -= g
        inv = np.linalg.inv(A)
        resp = inv[:, -1] * self.area[-1] * self.ratio / F
        gamma = resp[-1] + self.ratio * self.dr / (2.0 * F * D)
        return inv, resp, gamma


def initial_state(design: CellDesign, direction: str = "charge", mesh: Mesh | None = None,
                  config: SolverConfig = SolverConfig()) -> CellState:
    """Uniform rest state; the cell voltage is the OCP of the layer next to the separator."""
    if direction not in ("charge", "discharge"):
        raise ValueError(f"direction must be 'charge' or 'discharge', got {direction!r}")
    mesh = mesh or build_mesh(design, config)
    n, M = mesh.n, mesh.radial_shells
    which = 0 if direction == "charge" else 1
    c_s = np.zeros((n, M))
    for k, layer in enumerate(design.layers):
        if layer.is_electrode:
            c_s[mesh.region_slice(k)] = layer.c_s_init[which]
    first = design.electrodes[0]
    u0 = float(first.chemistry.ocp_value(first.c_s_init[which] / first.chemistry.c_s_max))
    phi_s = np.where(mesh.electrode, u0, 0.0)
    return CellState(
        c_e=np.full(n, design.electrolyte.c_e0),
        phi_e=np.zeros(n),
        phi_s=phi_s,
        J=np.zeros(n),
        c_s=c_s,
        time=0.0,
        voltage=u0,
    )


def total_lithium(disc: Discretisation, state: CellState) -> float:
    """Electrolyte salt plus particle lithium, mol per m^2."""
    return disc.electrolyte_inventory(state.c_e) + disc.particle_inventory(state.c_s)


class _Stepper:
    def __init__(self, disc: Discretisation, config: SolverConfig):
        self.d = disc
        self.cfg = config
        self._ops = {}

    def _particle_ops(self, dt):
        key = round(dt, 15)
        ops = self._ops.get(key)
        if ops is None:
            ops = [p.operator(dt, self.d.F) for p in self.d.regions]
            if len(self._ops) > 64:
                self._ops.clear()
            self._ops[key] = ops
        return ops

    def ocp(self, cs):
        d = self.d
        U = np.zeros(cs.size)
        dU = np.zeros(cs.size)
        for p in d.regions:
            cmax = p.chem.c_s_max
            u, du = p.chem.ocp.value_and_slope(cs[p.sl] / cmax)
            U[p.sl] = u
            dU[p.sl] = du / cmax
        return U, dU

    def electrolyte(self, c):
        d = self.d
        spec = d.design.electrolyte
        cc = np.maximum(c, C_MIN)
        live = (c > C_MIN).astype(float)
        (D, kap, act), (dD, dkap, dact) = spec.properties_with_slopes(cc, d.T)
        coef = 2.0 * d.Vt * (1.0 - d.t_plus)
        kD = coef * act * kap
        dkD = coef * (dact * kap + act * dkap)
        b = d.brug
        return (D * b, dD * b * live, kap * b, dkap * b * live, kD * b, dkD * b * live,
                np.log(cc), live / cc)

    def step(self, state: CellState, current_density: float, dt: float):
        """One backward-Euler step. Returns (new_state, newton_iterations).

        When the current changes and Newton fails from the shifted guess, the
        same step is solved along a ramp of intermediate currents (each solution
        seeding the next). Raises SolverError when that fails too.
        """
        d = self.d
        I = current_density
        ops = self._particle_ops(dt)
        bases = [(state.c_s[p.sl] * (p.vol / dt)) @ inv.T for p, (inv, _, _) in zip(d.regions, ops)]
        u = np.empty(4 * d.mesh.n)
        u[0::4] = state.c_e
        u[1::4] = state.phi_e
        u[2::4] = state.phi_s
        u[3::4] = state.J
        I0 = state.current_density
        if I == I0:
            u, it = self._newton(state, I, dt, ops, bases, u)
        else:
            try:
                u, it = self._newton(state, I, dt, ops, bases, self._shift(u, I0, I))
            except SolverError:
                for stages in (4, 16):
                    try:
                        v, it = u.copy(), 0
                        for k in range(1, stages + 1):
                            Ik = I0 + (I - I0) * k / stages
                            v, n_it = self._newton(state, Ik, dt, ops, bases, v)
                            it += n_it
                        u = v
                        break
                    except SolverError:
                        continue
                else:
                    raise
        J = u[3::4].copy()
        c_s = state.c_s.copy()
        for p, (inv, resp, gam), base in zip(d.regions, ops, bases):
            c_s[p.sl] = base - J[p.sl, None] * resp[None, :]
        new = CellState(u[0::4].copy(), u[1::4].copy(), u[2::4].copy(), J, c_s, state.time + dt,
                        current_density=I)
        new.voltage = self.voltage(new, I)
        return new, it

    def _counter_overpotential(self, I):
        return 2.0 * self.d.Vt * math.asinh(I / (2.0 * self.d.design.i0_counter))

    def _shift(self, u, I0, I):
        """Move the guess toward the operating point of a new current."""
        d = self.d
        u = u.copy()
        dphi = self._counter_overpotential(I) - self._counter_overpotential(I0)
        u[1::4] += dphi
        u[2::4] += dphi
        u[3::4] += np.where(d.elec > 0, (I - I0) / max(float(np.sum(d.a * d.dx)), 1e-30), 0.0)
        return u

    def _newton(self, state, I, dt, ops, bases, u):
        d = self.d
        cfg = self.cfg
        n = d.mesh.n
        u = u.copy()
        c_ref = d.design.electrolyte.c_e0
        I_ref = max(abs(I), 1.0)
        phi_ce = self._counter_overpotential(I)
        scalars = np.array([dt, I, d.t_plus, d.F, d.Vt, phi_ce, c_ref, I_ref, C_MIN])
        j_ref = I_ref / max(float(np.sum(d.a * d.dx)), 1e-30)
        base_last = np.zeros(n)
        gamma = np.zeros(n)
        for p, (_, _, gam), base in zip(d.regions, ops, bases):
            base_last[p.sl] = base[:, -1]
            gamma[p.sl] = gam

        for it in range(1, cfg.max_newton + 1):
            c = u[0::4]
            J = u[3::4]
            cs = base_last - gamma * J
            U, dU = self.ocp(cs)
            De, dDe, ke, dke, kDe, dkDe, lnc, dlnc = self.electrolyte(c)
            res, ab = kernels.assemble(
                u, state.c_e, d.dx, d.eps, d.a, d.sig, d.elec, De, dDe, ke, dke, kDe, dkDe,
                lnc, dlnc, d.kF, d.cmax, cs, -gamma, U, dU, scalars)
            if not np.all(np.isfinite(res)):
                break
            try:
                delta = kernels.solve_banded(ab, -res)
            except (ZeroDivisionError, np.linalg.LinAlgError, ValueError):
                break
            if not np.all(np.isfinite(delta)):
                break
            dc = delta[0::4]
            alpha = 1.0
            shrink = dc < 0
            if np.any(shrink):
                alpha = min(1.0, float(np.min(0.8 * np.maximum(c[shrink], 0.0) / -dc[shrink])))
                alpha = max(alpha, 1e-3)
            u += alpha * delta
            err = max(
                float(np.max(np.abs(dc))) / c_ref,
                float(np.max(np.abs(delta[1::4]))),
                float(np.max(np.abs(delta[2::4]))),
                float(np.max(np.abs(delta[3::4]) / (np.abs(u[3::4]) + j_ref))),
            )
            if alpha == 1.0 and err < cfg.newton_tol:
                return u, it
        raise SolverError(f"Newton did not converge (dt={dt:.3g} s, t={state.time:.6g} s, I={I:.4g} A/m^2)")

    def voltage(self, state: CellState, I: float) -> float:
        d = self.d
        return float(state.phi_s[-1] + I * 0.5 * d.dx[-1] / d.sig[-1] + I * d.design.R_contact)


def step(state: CellState, applied_current: float, dt: float, design: CellDesign, mesh: Mesh,
         config: SolverConfig = SolverConfig()) -> CellState:
    """Advance ``state`` by one implicit step at ``applied_current`` (A, charge positive)."""
    if not config.dt_min <= dt <= max(config.dt_max, config.dt_min):
        raise ConfigurationError(f"dt={dt} outside [{config.dt_min}, {config.dt_max}]")
    stepper = _Stepper(Discretisation(design, mesh), config)
    new, _ = stepper.step(state, applied_current / design.area, dt)
    return new


def simulate_cc(design: CellDesign, mesh: Mesh | None = None, config: SolverConfig = SolverConfig(),
                current: float = 0.0, cutoff: float | None = None, time_limit: float | None = None,
                state: CellState | None = None, snapshot_count: int = 20, mode: str | None = None,
                c_rate: float | None = None) -> SimulationResult:
    """Constant-current run until the voltage cutoff or the time limit.

    ``current`` is in amperes, positive for charge (cathode delithiation).
    When ``cutoff`` is None the design's upper (charge) or lower (discharge)
    cutoff is used; pass ``float('nan')`` to disable the voltage stop.
    """
    mesh = mesh or build_mesh(design, config)
    if state is None:
        state = initial_state(design, "charge" if current >= 0 else "discharge", mesh, config)
    rec = run_constant_current(Discretisation(design, mesh), config, state, current, cutoff,
                               time_limit, snapshot_count, mode, c_rate)
    return SimulationResult(design_name=design.name, steps=[rec])


def run_constant_current(disc: Discretisation, config: SolverConfig, state: CellState,
                         current: float, cutoff: float | None, time_limit: float | None,
                         snapshot_count: int = 20, mode: str | None = None,
                         c_rate: float | None = None) -> StepRecord:
    design = disc.design
    I = current / design.area
    if mode is None:
        mode = "rest" if current == 0 else ("cc-charge" if current > 0 else "cc-discharge")
    if cutoff is None and current != 0:
        cutoff = design.cutoff_upper if current > 0 else design.cutoff_lower
    if cutoff is not None and math.isnan(cutoff):
        cutoff = None
    if cutoff is None and time_limit is None:
        raise ConfigurationError("constant-current run needs a voltage cutoff or a time limit")
    sign = 1.0 if current >= 0 else -1.0
    stepper = _Stepper(disc, config)

    state = state.copy()
    state.time = 0.0
    state.voltage = stepper.voltage(state, 0.0) if current == 0 else state.voltage
    rec = StepRecord(mode=mode, current=current, c_rate=c_rate, area=design.area)
    probes = _probe_nodes(disc)
    rec.start(state, probes, disc)

    if time_limit is not None:
        horizon = time_limit
    else:
        q_theo = design.theoretical_capacity() * 36000.0
        horizon = q_theo / max(abs(I), 1e-12)
    # the cutoff time is unknown up front, so sample densely and thin at the end
    snapshot_count = max(snapshot_count, 1)
    snap_every = horizon / (8 * snapshot_count)
    next_snap = snap_every
    rec.snapshot(state, disc)

    dt = config.dt_initial
    floor = config.depletion_floor
    t_end = time_limit if time_limit is not None else math.inf
    termination = None
    first = True
    while termination is None:
        dt = min(dt, config.dt_max, t_end - state.time)
        try:
            new, iters = stepper.step(state, I, dt)
            ok = _acceptable(new, state, config, first)
        except SolverError:
            new, iters, ok = None, config.max_newton, False
        if not ok:
            if dt <= config.dt_min * (1 + 1e-12):
                if new is None or np.min(new.c_e) <= 0.0:
                    ev = _depletion_event(state, disc)
                    rec.finish_failure(state, "depletion" if np.min(state.c_e) < floor * 10 else "solver-failure", ev)
                    rec.thin_snapshots(snapshot_count)
                    return rec
                ok = True  # accept at minimum step despite accuracy limits
            else:
                dt = max(dt * 0.5, config.dt_min)
                continue
        first = False
        if cutoff is not None and sign * (new.voltage - cutoff) > 0:
            new = _locate_cutoff(stepper, state, I, dt, cutoff, sign, config)
            termination = "cutoff"
        elif time_limit is not None and new.time >= time_limit - 1e-9:
            termination = "time-limit"
        state = new
        rec.append(state, probes, disc)
        if np.min(state.c_e) < floor and rec.depletion is None:
            rec.depletion = _depletion_event(state, disc)
            log.info("electrolyte depletion at t=%.1f s, x=%.3g m", state.time, rec.depletion.x)
        if state.time >= next_snap - 1e-9:
            rec.snapshot(state, disc)
            while next_snap <= state.time + 1e-9:
                next_snap += snap_every
        if iters <= 4:
            dt *= 1.5
        elif iters > 8:
            dt *= 0.7
        dt = max(dt, config.dt_min)
    if termination == "cutoff" and rec.depletion is not None:
        termination = "depletion-assisted-cutoff"
    rec.finish(state, termination, disc)
    rec.thin_snapshots(snapshot_count)
    return rec


def _acceptable(new, old, config, first):
    if np.min(new.c_e) <= 0.0:
        return False
    if first:
        return True
    if abs(new.voltage - old.voltage) > config.max_dv:
        return False
    if np.max(np.abs(new.c_e - old.c_e)) > config.max_dc * max(np.max(old.c_e), 1.0):
        return False
    return True


def _locate_cutoff(stepper, state, I, dt, cutoff, sign, config):
    """Bisect the step length so the end-of-step voltage meets the cutoff."""
    lo, hi = 0.0, dt
    best = None
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        try:
            trial, _ = stepper.step(state, I, mid)
        except SolverError:
            hi = mid
            continue
        gap = sign * (trial.voltage - cutoff)
        if gap > 0:
            hi = mid
            if best is None or abs(gap) < abs(sign * (best.voltage - cutoff)):
                best = trial if gap <= config.cutoff_tol else best
        else:
            lo = mid
            best = trial
            if -gap <= config.cutoff_tol:
                break
        if hi - lo < 1e-9:
            break
    if best is None:
        best, _ = stepper.step(state, I, max(hi, 1e-9))
    return best


def _probe_nodes(disc: Discretisation):
    out = {}
    for p in disc.regions:
        for label, node in disc.mesh.probe_nodes(p.region).items():
            out[f"L{p.region}_{label}"] = node
    return out


def _depletion_event(state: CellState, disc: Discretisation) -> DepletionEvent:
    i = int(np.argmin(state.c_e))
    return DepletionEvent(time=state.time, node=i, x=float(disc.mesh.x[i]),
                          region=int(disc.mesh.region[i]), c_e=float(state.c_e[i]))
