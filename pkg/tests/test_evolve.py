"""Split-step driver: substep hooks, convergence, guards, and resume."""

import math

import numpy as np
import pytest

from nlslab.evolve import (
    BLOW_UP_SUSPECTED,
    BOUNDARY_CONTAMINATION,
    COMPLETED,
    STEP_UNDERFLOW,
    EvolveControls,
    center_of_quartic_density,
    evolve,
    resume,
    step_strang,
)
from nlslab.spectral import Field, free_propagate, make_grid, translate

from conftest import random_bumps


def gaussian(grid, width=2.0, xi=(0.3, 0.0, 0.0), amp=1.0):
    X, Y, Z = grid.coordinates()
    r2 = X**2 + Y**2 + Z**2
    v = amp * np.exp(-r2 / (2 * width**2)) * np.exp(
        1j * (xi[0] * X + xi[1] * Y + xi[2] * Z)
    )
    return Field(grid, v)


@pytest.fixture(scope="module")
def g32():
    return make_grid(32, 32.0)


def fixed_dt(dt, T, **kw):
    base = dict(
        dt_initial=dt,
        dt_min=1e-9,
        t_final=T,
        sample_every=T,
        energy_step_tol=1.0,
    )
    base.update(kw)
    return EvolveControls(**base)


class TestStepHooks:
    def test_nonlinearity_off_is_free_propagation(self, g32):
        u = gaussian(g32)
        a = step_strang(u, 0.0125, nonlinear=False)
        b = free_propagate(u, 0.0125)
        assert np.max(np.abs(a.values - b.values)) < 1e-12

    def test_kinetic_off_is_pure_phase(self, g32):
        u = gaussian(g32)
        a = step_strang(u, 0.0125, kinetic=False)
        b = u.values * np.exp(1j * 0.0125 * np.abs(u.values) ** 2)
        assert np.max(np.abs(a.values - b)) < 1e-12

    def test_defocusing_phase_sign(self, g32):
        u = gaussian(g32)
        a = step_strang(u, 0.0125, sign="defocusing", kinetic=False)
        b = u.values * np.exp(-1j * 0.0125 * np.abs(u.values) ** 2)
        assert np.max(np.abs(a.values - b)) < 1e-12

    def test_rejects_nonpositive_dt(self, g32):
        with pytest.raises(ValueError):
            step_strang(gaussian(g32), 0.0)


class TestConvergence:
    def test_second_order_against_fine_reference(self, g32):
        u = gaussian(g32)
        T = 0.25

        def final(dt):
            traj, stop = evolve(u, fixed_dt(dt, T))
            assert stop.kind == COMPLETED
            return traj.final_state().values

        ref = final(T / 4096)
        errors = [np.max(np.abs(final(dt) - ref)) for dt in (2e-3, 1e-3, 5e-4)]
        orders = [math.log2(errors[i] / errors[i + 1]) for i in range(2)]
        for p in orders:
            assert abs(p - 2.0) < 0.1

    def test_time_reversibility(self, g32):
        u = gaussian(g32)
        ctrl = fixed_dt(1e-3, 1.0)
        fwd, _ = evolve(u, ctrl)
        flipped = fwd.final_state()
        flipped = flipped.with_values(np.conj(flipped.values))
        back, _ = evolve(flipped, ctrl)
        recovered = np.conj(back.final_state().values)
        scale = np.max(np.abs(u.values))
        assert np.max(np.abs(recovered - u.values)) / scale < 1e-8


class TestConservation:
    def test_mass_energy_over_run(self):
        # Weak amplitude: the cubic cascade then stays inside the resolved
        # band for the whole window, so the run probes the discrete
        # conservation identities rather than the resolution limit (the
        # full-strength configuration self-focuses by t ~ 0.6).
        g = make_grid(48, 24.0)
        u = random_bumps(
            g,
            np.random.default_rng(13),
            center_max=1.0,
            width_min=1.6,
            width_max=2.2,
        )
        u = Field(g, 0.25 * u.values)
        ctrl = EvolveControls(
            dt_initial=1e-3,
            dt_min=1e-6,
            t_final=1.0,
            sample_every=0.2,
            boundary_mass_cap=np.inf,
        )
        traj, stop = evolve(u, ctrl)
        assert stop.kind == COMPLETED
        e0 = traj.rows[0].conserved.energy
        p0 = traj.rows[0].conserved.momentum
        scale = math.sqrt(
            2.0 * traj.rows[0].conserved.mass * traj.rows[0].conserved.kinetic
        )
        for row in traj.rows:
            assert abs(row.mass_drift) < 1e-11
            assert abs(row.conserved.energy - e0) / abs(e0) < 1e-7
            assert (
                np.max(np.abs(row.conserved.momentum - p0)) / scale < 1e-10
            )

    def test_sample_times_and_rows(self, g32):
        u = gaussian(g32)
        ctrl = fixed_dt(1e-3, 0.5, sample_every=0.1)
        traj, _ = evolve(u, ctrl)
        assert len(traj.rows) == 6
        assert np.allclose(traj.times, np.arange(6) * 0.1, atol=1e-9)


class TestGuards:
    def test_gradient_cap_trips(self, g32):
        u = gaussian(g32, amp=2.0)
        ctrl = EvolveControls(
            dt_initial=1e-3,
            dt_min=1e-9,
            t_final=1.0,
            sample_every=0.5,
            gradient_cap=1e-6,
            energy_step_tol=1.0,
        )
        traj, stop = evolve(u, ctrl)
        assert stop.kind == BLOW_UP_SUSPECTED
        assert stop.t_stop < 0.5
        assert "gradient" in stop.detail

    def test_boundary_guard_trips(self):
        g = make_grid(32, 16.0)
        u = gaussian(g, width=2.0, xi=(1.5, 0.0, 0.0))
        ctrl = EvolveControls(
            dt_initial=2e-3,
            dt_min=1e-9,
            t_final=10.0,
            sample_every=0.25,
            energy_step_tol=1.0,
        )
        traj, stop = evolve(u, ctrl)
        assert stop.kind == BOUNDARY_CONTAMINATION
        assert traj.rows[-1].boundary_mass > 1e-6 * traj.rows[0].conserved.mass
        # the stopped run still carries its final snapshot
        assert traj.final_state().grid == g

    def test_step_underflow(self, g32):
        u = gaussian(g32, amp=1.5)
        ctrl = EvolveControls(
            dt_initial=2e-3,
            dt_min=1.9e-3,
            t_final=1.0,
            sample_every=0.5,
            energy_step_tol=1e-12,
        )
        traj, stop = evolve(u, ctrl)
        assert stop.kind == STEP_UNDERFLOW

    def test_halving_recorded_in_rows(self, g32):
        u = gaussian(g32, amp=1.5)
        ctrl = EvolveControls(
            dt_initial=4e-3,
            dt_min=1e-6,
            t_final=0.6,
            sample_every=0.2,
            energy_step_tol=1e-9,
        )
        traj, stop = evolve(u, ctrl)
        dts = [row.dt for row in traj.rows]
        assert dts[-1] < dts[0]
        assert all(b <= a for a, b in zip(dts, dts[1:]))


class TestTrajectory:
    def test_snapshot_stride_and_freeze(self, g32):
        u = gaussian(g32)
        ctrl = fixed_dt(2e-3, 0.4, sample_every=0.1)
        traj, _ = evolve(u, ctrl, snapshot_stride=2)
        assert 0 in traj.snapshots
        assert 2 in traj.snapshots
        assert len(traj.rows) - 1 in traj.snapshots
        with pytest.raises(RuntimeError):
            traj._append(traj.rows[0], None)

    def test_center_tracks_translation(self, g32):
        u = gaussian(g32, width=1.5, xi=(0.0, 0.0, 0.0))
        c0 = center_of_quartic_density(u)
        assert np.max(np.abs(c0)) < 1e-10
        moved = translate(u, (2.0, -1.0, 0.5))
        c1 = center_of_quartic_density(moved)
        assert np.max(np.abs(c1 - np.array([2.0, -1.0, 0.5]))) < 1e-9

    def test_extras_from_hooks(self, g32):
        u = gaussian(g32)
        seen = []

        def hook(t, state):
            seen.append(t)
            return {"peak": float(np.max(np.abs(state.values)))}

        ctrl = fixed_dt(2e-3, 0.2, sample_every=0.1)
        traj, _ = evolve(u, ctrl, sample_hooks=[hook])
        assert len(seen) == len(traj.rows)
        assert all("peak" in row.extras for row in traj.rows)


class TestResume:
    def test_bit_compatible_continuation(self, g32):
        u = gaussian(g32, xi=(0.2, -0.1, 0.0))
        full, _ = evolve(u, fixed_dt(1e-3, 1.0, sample_every=0.5))
        part, _ = evolve(u, fixed_dt(1e-3, 0.5, sample_every=0.5))
        cont, stop = resume(part, fixed_dt(1e-3, 1.0, sample_every=0.5))
        assert stop.kind == COMPLETED
        a = cont.final_state().values
        b = full.final_state().values
        assert np.array_equal(a, b)

    def test_refuses_blowup_and_unfinished(self, g32):
        u = gaussian(g32, amp=2.0)
        ctrl = EvolveControls(
            dt_initial=1e-3,
            dt_min=1e-9,
            t_final=1.0,
            sample_every=0.5,
            gradient_cap=1e-6,
            energy_step_tol=1.0,
        )
        traj, stop = evolve(u, ctrl)
        assert stop.kind == BLOW_UP_SUSPECTED
        with pytest.raises(ValueError):
            resume(traj, ctrl)
