from dataclasses import replace

import numpy as np
import pytest

from mdfn import presets
from mdfn.design import SolverConfig, build_mesh
from mdfn.electrochem import FARADAY, ConfigurationError
from mdfn.protocol import current_for_capacity, evaluate, nominal_1c_current
from mdfn.solver import (
    Discretisation,
    SolverError,
    initial_state,
    run_constant_current,
    simulate_cc,
    step,
    total_lithium,
)

CFG = SolverConfig()


@pytest.fixture(scope="module")
def bilayer():
    d = presets.default_bilayer()
    mesh = build_mesh(d, CFG)
    return d, mesh, Discretisation(d, mesh)


@pytest.fixture(scope="module")
def charge_1c(bilayer):
    d, mesh, disc = bilayer
    s0 = initial_state(d, "charge", mesh, CFG)
    rec = run_constant_current(disc, CFG, s0, nominal_1c_current(d), None, None, snapshot_count=5)
    return s0, rec


class TestInitialState:
    def test_charge_rest_voltage(self, bilayer):
        d, mesh, _ = bilayer
        s = initial_state(d, "charge", mesh)
        assert s.voltage == pytest.approx(3.0, abs=0.05)
        assert np.all(s.c_e == 1000.0)

    def test_discharge_rest_voltage(self, bilayer):
        d, mesh, _ = bilayer
        assert initial_state(d, "discharge", mesh).voltage == pytest.approx(4.19, abs=0.02)

    def test_particle_values(self, bilayer):
        d, mesh, _ = bilayer
        s = initial_state(d, "discharge", mesh)
        assert np.all(s.c_s[mesh.region_slice(1)] == 13366.0)
        assert np.all(s.c_s[mesh.region_slice(2)] == 29.0)
        assert np.all(s.c_s[mesh.region_slice(0)] == 0.0)

    def test_bad_direction(self, bilayer):
        with pytest.raises(ValueError):
            initial_state(bilayer[0], "sideways")


class TestStep:
    def test_charge_raises_voltage_above_rest(self, bilayer):
        d, mesh, _ = bilayer
        s0 = initial_state(d, "charge", mesh)
        s1 = step(s0, nominal_1c_current(d), 1.0, d, mesh, CFG)
        assert s1.voltage > s0.voltage

    def test_zero_current_conserves_exactly(self, bilayer, charge_1c):
        d, mesh, disc = bilayer
        s = charge_1c[1].final_state
        before = total_lithium(disc, s)
        after = total_lithium(disc, step(s, 0.0, 10.0, d, mesh, CFG))
        assert abs(after - before) / before < 1e-8

    def test_dt_bounds(self, bilayer):
        d, mesh, _ = bilayer
        with pytest.raises(ConfigurationError):
            step(initial_state(d, "charge", mesh), 0.0, 1e3, d, mesh, CFG)

    def test_newton_failure_signalled(self, bilayer):
        d, mesh, _ = bilayer
        with pytest.raises(SolverError, match="Newton"):
            step(initial_state(d, "charge", mesh), 10 * nominal_1c_current(d), 30.0, d, mesh,
                 replace(CFG, max_newton=1))


class TestConservation:
    def test_charge_inventory_change_matches_current(self, bilayer, charge_1c):
        _, _, disc = bilayer
        s0, rec = charge_1c
        s1 = rec.final_state
        d = disc.design
        moved = disc.particle_inventory(s0.c_s) - disc.particle_inventory(s1.c_s)
        expected = rec.current / d.area * s1.time / FARADAY
        assert abs(moved - expected) / expected < 1e-6
        salt0, salt1 = disc.electrolyte_inventory(s0.c_e), disc.electrolyte_inventory(s1.c_e)
        assert abs(salt1 - salt0) / salt0 < 1e-8

    def test_rest_relaxes_to_ocp(self, bilayer, charge_1c):
        d, mesh, disc = bilayer
        s1 = charge_1c[1].final_state
        rec = run_constant_current(disc, CFG, s1, 0.0, float("nan"), 3600.0, snapshot_count=1)
        s2 = rec.final_state
        assert abs(total_lithium(disc, s2) - total_lithium(disc, s1)) / total_lithium(disc, s1) < 1e-8
        node = mesh.region_slice(1).start
        cs = disc.surface_concentration(s2.c_s, s2.J)[node]
        assert s2.voltage == pytest.approx(float(presets.NMC622.ocp_value(cs / 48700.0)), abs=1e-4)
        assert np.ptp(s2.c_e) < np.ptp(s1.c_e)
        assert rec.capacity == 0.0


class TestConstantCurrent:
    def test_series_and_cutoff(self, charge_1c, bilayer):
        d = bilayer[0]
        rec = charge_1c[1]
        assert rec.termination == "cutoff"
        assert rec.V[-1] == pytest.approx(d.cutoff_upper, abs=CFG.cutoff_tol)
        assert np.all(np.diff(rec.q) >= 0)
        V = np.asarray(rec.V[:-1])
        assert np.all((V >= d.cutoff_lower) & (V <= d.cutoff_upper))
        assert len(rec.snapshots) >= 5
        assert {"t", "x", "c_e", "phi_e", "c_surf", "Jbar"} <= set(rec.snapshots[0])

    def test_reaction_balances_applied_current(self, charge_1c, bilayer):
        d = bilayer[0]
        rec = charge_1c[1]
        for snap in rec.snapshots[1:]:
            mesh = build_mesh(d, CFG)
            total = np.sum(snap["Jbar"][mesh.electrode] * mesh.dx[mesh.electrode]) / d.electrode_thickness
            assert total == pytest.approx(1.0, abs=1e-3)

    def test_time_limit(self, bilayer):
        d, mesh, _ = bilayer
        res = simulate_cc(d, mesh, CFG, current=nominal_1c_current(d), cutoff=float("nan"), time_limit=60.0)
        assert res.last.termination == "time-limit"
        assert res.last.duration == pytest.approx(60.0)

    def test_needs_a_stop_condition(self, bilayer):
        d, mesh, _ = bilayer
        with pytest.raises(ConfigurationError):
            simulate_cc(d, mesh, CFG, current=1e-3, cutoff=float("nan"))

    def test_discharge_from_discharge_init(self, bilayer):
        d, mesh, _ = bilayer
        res = simulate_cc(d, mesh, CFG, current=-nominal_1c_current(d), snapshot_count=1)
        assert res.last.termination == "cutoff"
        assert res.last.V[-1] == pytest.approx(d.cutoff_lower, abs=CFG.cutoff_tol)

    def test_depletion_is_reported(self):
        d = presets.lfp_only_113()
        I = current_for_capacity(3.74, d.area)
        rec = simulate_cc(d, None, CFG, current=3 * I, snapshot_count=1).last
        assert rec.depletion is not None
        assert rec.depletion.c_e < CFG.depletion_floor
        assert 0 < rec.depletion.time < rec.duration
        assert rec.termination == "depletion-assisted-cutoff"
        assert rec.capacity > 0


class TestProperties:
    def test_symmetric_bilayer_equals_single_layer(self):
        single = presets.nmc_only(88 * 1e-6)
        split = presets.cell((presets.separator(), presets.nmc_layer(L=44e-6), presets.nmc_layer(L=44e-6)), "split")
        a = evaluate(single, 3.0, CFG, snapshot_count=1)
        b = evaluate(split, 3.0, CFG, snapshot_count=1)
        assert abs(a.specific_capacity / b.specific_capacity - 1) < 1e-3
        assert abs(a.achieved_capacity / b.achieved_capacity - 1) < 1e-3

    def test_deterministic_bit_identical(self):
        d = presets.default_bilayer()
        runs = [simulate_cc(d, None, CFG, current=3 * nominal_1c_current(d), snapshot_count=3).last
                for _ in range(2)]
        assert runs[0].t == runs[1].t and runs[0].V == runs[1].V
        for s0, s1 in zip(runs[0].snapshots, runs[1].snapshots):
            assert all(np.array_equal(s0[k], s1[k]) for k in s0)

    def test_capacity_non_increasing_in_lfp_tortuosity(self):
        base = presets.default_bilayer()
        caps = [evaluate(base.with_layer(1, b=b), 3.0, CFG, snapshot_count=1).achieved_capacity
                for b in (1.7, 1.8, 1.9, 2.1)]
        assert all(later <= earlier for earlier, later in zip(caps, caps[1:]))

    def test_lower_tortuosity_helps_more_at_high_rate(self):
        base = presets.default_bilayer()
        lo = evaluate(base.with_layer(1, b=1.7), 5.6, CFG, snapshot_count=1).achieved_capacity
        hi = evaluate(base.with_layer(1, b=1.9), 5.6, CFG, snapshot_count=1).achieved_capacity
        assert lo > 1.03 * hi
