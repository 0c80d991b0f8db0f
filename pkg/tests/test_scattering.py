"""Classification evidence: space-time norms, wave probe, verdicts."""

import json
import math

import numpy as np
import pytest

from conftest import random_bumps
from nlslab.evolve import (
    BLOW_UP_SUSPECTED,
    COMPLETED,
    EvolveControls,
    SampleRow,
    StopReason,
    Trajectory,
    evolve,
)
from nlslab.ground_state import petviashvili
from nlslab.invariants import (
    DEFOCUSING,
    conserved_set,
    galilean_boost,
    threshold_report,
)
from nlslab.scattering import (
    ADEQUATE_CADENCE,
    BLOW_UP,
    DEFAULT_PAIRS,
    SCATTER,
    UNDECIDED,
    AdmissiblePair,
    AdmissiblePairSet,
    ClassifyControls,
    StrichartzSeries,
    _run_controls,
    classify,
    evidence_as_dict,
    lebesgue_norm_hook,
    rescale_to_unit_mass,
    scatter_consistency,
    strichartz_accumulator,
    wave_operator_probe,
)
from nlslab.spectral import (
    Field,
    free_propagate,
    make_grid,
    norm_report,
    translate,
)


def gaussian(grid, amp=1.0, width=1.5):
    x, y, z = grid.coordinates()
    v = amp * np.exp(-(x * x + y * y + z * z) / (2.0 * width**2))
    return Field(grid, v.astype(np.complex128))


def synthetic_trajectory(states, times, sign="focusing", frozen=COMPLETED):
    """Trajectory built directly from prepared states (linear-flow data
    and edge cases that the nonlinear stepper cannot produce)."""
    g = states[0].grid
    dt = times[1] - times[0] if len(times) > 1 else 1e-3
    controls = EvolveControls(
        dt_initial=dt,
        dt_min=dt,
        t_final=max(times[-1], dt),
        sample_every=dt,
        sign=sign,
        energy_step_tol=np.inf,
        boundary_mass_cap=np.inf,
    )
    hook = lebesgue_norm_hook((5.0,))
    traj = Trajectory(g, controls)
    for t, u in zip(times, states):
        row = SampleRow(
            t=float(t),
            conserved=conserved_set(u, sign),
            norms=norm_report(u),
            center=np.zeros(3),
            dt=dt,
            boundary_mass=0.0,
            mass_drift=0.0,
            extras=hook(float(t), u),
        )
        traj._append(row, u)
    traj._freeze(StopReason(frozen, float(times[-1]), "synthetic"))
    return traj


def free_gaussian_l4(amp, width, t):
    """Closed-form ||e^{it Laplacian} A exp(-|x|^2/2w^2)||_4 on R^3."""
    return (
        amp
        * (math.pi / 2.0) ** 0.375
        * width**2.25
        * (width**4 + 4.0 * t * t) ** -0.375
    )


class TestAdmissiblePairs:
    def test_default_family(self):
        labels = {p.label for p in DEFAULT_PAIRS.all_pairs()}
        assert labels == {"Linf_L3", "L8_L4", "L5_L5", "Linf_L2"}
        for p in DEFAULT_PAIRS.all_pairs():
            lhs = (0.0 if math.isinf(p.q) else 2.0 / p.q) + 3.0 / p.r
            assert lhs == pytest.approx(1.5 - p.s, abs=1e-12)

    def test_scaling_violation_rejected(self):
        with pytest.raises(ValueError, match="violates"):
            AdmissiblePair(8.0, 4.0, 0.0)
        with pytest.raises(ValueError, match="violates"):
            AdmissiblePair(6.0, 4.0, 0.5)

    def test_set_level_validation(self):
        anchor = AdmissiblePair(math.inf, 2.0, 0.0)
        good = AdmissiblePair(8.0, 4.0, 0.5)
        with pytest.raises(ValueError, match="level 1/2"):
            AdmissiblePairSet(pairs=(anchor,), anchor=anchor)
        with pytest.raises(ValueError, match="level 0"):
            AdmissiblePairSet(pairs=(good,), anchor=good)
        with pytest.raises(ValueError, match="at least one"):
            AdmissiblePairSet(pairs=(), anchor=anchor)


class TestStrichartzAccumulator:
    def test_constant_norms_accumulate_linearly(self):
        g = make_grid(16, 16.0)
        u0 = gaussian(g, amp=0.8, width=2.0)
        times = np.arange(21) * 0.1
        states = [Field(g, np.exp(0.3j * t) * u0.values) for t in times]
        series = strichartz_accumulator(synthetic_trajectory(states, times))
        n0 = norm_report(u0)
        s84 = np.asarray(series.running["L8_L4"])
        assert s84[-1] ** 8 == pytest.approx(n0.l4**8 * times[-1], rel=1e-10)
        assert s84[10] ** 8 == pytest.approx(n0.l4**8 * times[10], rel=1e-10)
        sup3 = np.asarray(series.running["Linf_L3"])
        assert sup3[0] == sup3[-1] == pytest.approx(n0.l3, rel=1e-12)
        assert np.asarray(series.running["Linf_L2"])[-1] == pytest.approx(
            n0.l2, rel=1e-12
        )
        assert not series.coarse_cadence

    def test_free_gaussian_matches_closed_form(self):
        g = make_grid(48, 24.0)
        amp, width = 0.7, 1.5
        u0 = gaussian(g, amp=amp, width=width)
        for t in (0.0, 0.4, 0.8):
            got = norm_report(free_propagate(u0, t)).l4
            assert got == pytest.approx(free_gaussian_l4(amp, width, t), rel=1e-6)

    def test_accumulator_mechanics_on_free_flow(self):
        g = make_grid(48, 24.0)
        amp, width = 0.7, 1.5
        u0 = gaussian(g, amp=amp, width=width)
        times = np.arange(21) * 0.05
        states = [free_propagate(u0, t) for t in times]
        series = strichartz_accumulator(synthetic_trajectory(states, times))
        # The same trapezoid from the closed-form norms must match the
        # accumulated series: this isolates the quadrature mechanics from
        # the norm sampling checked above.
        powers = np.array([free_gaussian_l4(amp, width, t) ** 8 for t in times])
        expected = np.concatenate(
            ([0.0], np.cumsum(0.5 * (powers[1:] + powers[:-1]) * np.diff(times)))
        ) ** (1.0 / 8.0)
        got = np.asarray(series.running["L8_L4"])
        assert got[1:] == pytest.approx(expected[1:], rel=1e-5)
        # Dispersing flow: accumulation increments shrink.
        inc = np.diff(np.asarray(series.running["L5_L5"]))
        assert inc[-1] > 0.0
        assert inc[-1] < 0.5 * inc[0]

    def test_missing_hook_norm_reported(self):
        g = make_grid(16, 16.0)
        u0 = gaussian(g)
        traj = synthetic_trajectory([u0, u0], [0.0, 0.1])
        for row in traj.rows:
            row.extras.clear()
        with pytest.raises(ValueError, match="hook"):
            strichartz_accumulator(traj)

    def test_coarse_cadence_flagged(self):
        g = make_grid(16, 16.0)
        u0 = gaussian(g)
        times = np.arange(4) * 0.2
        traj = synthetic_trajectory([u0] * 4, times)
        assert strichartz_accumulator(traj).coarse_cadence

    def test_decreasing_series_rejected(self):
        with pytest.raises(ValueError, match="non-decreasing"):
            StrichartzSeries(
                times=(0.0, 1.0),
                running={"L8_L4": (1.0, 0.5)},
                coarse_cadence=False,
            )

    def test_zero_field_run_is_identically_zero(self):
        g = make_grid(16, 16.0)
        zero = Field(g, np.zeros(g.shape(), dtype=np.complex128))
        controls = EvolveControls(
            dt_initial=1e-2,
            dt_min=1e-2,
            t_final=0.3,
            sample_every=0.1,
            energy_step_tol=np.inf,
            boundary_mass_cap=np.inf,
        )
        traj, stop = evolve(
            zero, controls, snapshot_stride=1,
            sample_hooks=[lebesgue_norm_hook((5.0,))],
        )
        assert stop.kind == COMPLETED
        series = strichartz_accumulator(traj)
        for run in series.running.values():
            assert max(run) == 0.0


@pytest.fixture(scope="module")
def linear_data():
    g = make_grid(32, 16.0)
    rng = np.random.default_rng(7)
    u0 = random_bumps(g, rng, n_bumps=2, center_max=2.0, velocity_max=0.5)
    times = np.arange(9) * 0.25
    states = [free_propagate(u0, t) for t in times]
    return u0, synthetic_trajectory(states, times)


class TestWaveProbe:
    def test_linear_flow_is_cauchy_null(self, linear_data):
        u0, traj = linear_data
        probe = wave_operator_probe(traj, mean_phase=0.0)
        h1 = norm_report(u0).h1
        assert max(probe.increments) <= 1e-10 * h1
        diff = norm_report(
            Field(u0.grid, probe.phi_plus.values - u0.values)
        ).h1
        assert diff <= 1e-10 * h1

    def test_default_rate_is_mean_density(self, linear_data):
        u0, traj = linear_data
        probe = wave_operator_probe(traj)
        g = u0.grid
        mu = 2.0 * conserved_set(u0).mass / g.box_length**3
        assert probe.mean_phase == pytest.approx(mu, rel=1e-12)
        # On purely linear data the removed phase is a real mismatch.
        assert probe.increments[0] > 0.0

    def test_phase_convention_removes_prepared_rotation(self):
        g = make_grid(32, 16.0)
        u0 = gaussian(g, amp=0.6)
        mu = 0.37
        times = np.arange(6) * 0.3
        states = [
            Field(
                g,
                complex(math.cos(mu * t), math.sin(mu * t))
                * free_propagate(u0, t).values,
            )
            for t in times
        ]
        traj = synthetic_trajectory(states, times)
        probe = wave_operator_probe(traj, mean_phase=mu)
        assert max(probe.increments) <= 1e-10 * norm_report(u0).h1

    def test_window_limits_snapshots(self, linear_data):
        _, traj = linear_data
        probe = wave_operator_probe(traj, window=3, mean_phase=0.0)
        assert len(probe.times) == 3
        assert len(probe.increments) == 2

    def test_early_stop_rejected(self):
        g = make_grid(16, 16.0)
        u0 = gaussian(g)
        traj = synthetic_trajectory(
            [u0, u0], [0.0, 0.1], frozen=BLOW_UP_SUSPECTED
        )
        with pytest.raises(ValueError, match="stopped early"):
            wave_operator_probe(traj)

    def test_single_snapshot_rejected(self):
        g = make_grid(16, 16.0)
        traj = synthetic_trajectory([gaussian(g)], [0.0])
        with pytest.raises(ValueError, match="two snapshots"):
            wave_operator_probe(traj)


class TestRescale:
    def test_unit_mass_and_factor(self):
        g = make_grid(24, 16.0)
        rng = np.random.default_rng(11)
        u = random_bumps(g, rng)
        mass = conserved_set(u).mass
        v, lam = rescale_to_unit_mass(u)
        assert lam == pytest.approx(mass, rel=1e-12)
        assert norm_report(v).l2 == pytest.approx(1.0, abs=1e-12)
        assert v.grid.box_length == pytest.approx(g.box_length / lam, rel=1e-12)

    def test_idempotent(self):
        g = make_grid(24, 16.0)
        u = gaussian(g, amp=1.3)
        v, _ = rescale_to_unit_mass(u)
        w, lam2 = rescale_to_unit_mass(v)
        assert lam2 == pytest.approx(1.0, rel=1e-12)
        assert np.allclose(w.values, v.values, rtol=1e-12, atol=0.0)

    def test_threshold_ratios_invariant(self, cert_report):
        g = make_grid(24, 16.0)
        rng = np.random.default_rng(29)
        for _ in range(5):
            u = random_bumps(g, rng)
            v, _ = rescale_to_unit_mass(u)
            a = threshold_report(u, cert_report)
            b = threshold_report(v, cert_report)
            assert b.me_ratio == pytest.approx(a.me_ratio, rel=1e-10)
            assert b.mass_grad_ratio == pytest.approx(a.mass_grad_ratio, rel=1e-10)

    def test_zero_rejected(self):
        g = make_grid(16, 16.0)
        zero = Field(g, np.zeros(g.shape(), dtype=np.complex128))
        with pytest.raises(ValueError, match="zero"):
            rescale_to_unit_mass(zero)


@pytest.fixture(scope="module")
def q48(certification):
    """Discrete soliton on the classification test grid."""
    return petviashvili(make_grid(48, 24.0), seed=certification.profile)


def classify_controls(t_final, sign="focusing"):
    return ClassifyControls(
        evolve=EvolveControls(
            dt_initial=2e-3,
            dt_min=1e-6,
            t_final=t_final,
            sample_every=0.1,
            sign=sign,
        )
    )


@pytest.fixture(scope="module")
def scatter_evidence(q48, cert_report):
    u0 = Field(q48.grid, 0.8 * q48.values)
    return classify(u0, cert_report, classify_controls(8.0))


class TestClassify:
    def test_subcritical_soliton_scatters(self, scatter_evidence):
        ev = scatter_evidence
        assert ev.verdict == SCATTER
        assert ev.below_threshold is True
        assert ev.stop_kind == COMPLETED
        assert ev.final_cauchy_rel <= 1e-3
        assert ev.l4_decay_ratio >= 5.0
        assert ev.mean_phase > 0.0
        assert "below ground-state threshold" in ev.confidence_note

    def test_evidence_serializes(self, scatter_evidence):
        blob = json.dumps(evidence_as_dict(scatter_evidence))
        back = json.loads(blob)
        assert back["verdict"] == SCATTER
        assert len(back["strichartz_times"]) == len(
            scatter_evidence.strichartz.times
        )

    def test_supercritical_soliton_blows_up(self, q48, cert_report):
        u0 = Field(q48.grid, 1.3 * q48.values)
        # The analytic precondition for the focusing blow-up run.
        assert conserved_set(u0).energy < 0.0
        ev = classify(u0, cert_report, classify_controls(8.0))
        assert ev.verdict == BLOW_UP
        assert ev.stop_kind == BLOW_UP_SUSPECTED
        assert ev.below_threshold is False
        assert "blow-up trigger" in ev.confidence_note

    def test_defocusing_supercritical_scatters(self, q48, cert_report):
        u0 = Field(q48.grid, 1.3 * q48.values)
        ev = classify(u0, cert_report, classify_controls(8.0, sign=DEFOCUSING))
        assert ev.verdict == SCATTER
        assert ev.below_threshold is None
        assert "defocusing" in ev.confidence_note

    def test_verdict_invariant_under_symmetries(
        self, q48, cert_report, scatter_evidence
    ):
        # Translate, rotate the phase, boost along the momentum lattice,
        # and classify backward in time: every one of these maps orbits
        # to orbits, so the verdict must survive the combination.
        g = q48.grid
        h = g.spacing
        xi = 2.0 * math.pi / g.box_length
        u0 = Field(g, 0.8 * q48.values)
        moved = translate(u0, (3 * h, -2 * h, h))
        phased = Field(g, np.exp(0.7j) * moved.values)
        boosted = galilean_boost(phased, (xi, 0.0, 0.0))
        controls = ClassifyControls(
            evolve=classify_controls(8.0).evolve, negative_time=True
        )
        ev = classify(boosted, cert_report, controls)
        assert ev.verdict == scatter_evidence.verdict == SCATTER

    def test_scatter_consistency_is_null_by_construction(self, cert_report):
        g = make_grid(32, 16.0)
        u0 = gaussian(g, amp=0.5)
        ctrl = ClassifyControls(
            evolve=EvolveControls(
                dt_initial=2e-3,
                dt_min=1e-6,
                t_final=2.0,
                sample_every=0.1,
                sign=DEFOCUSING,
            )
        )
        ev = classify(u0, cert_report, ctrl)
        rc = _run_controls(ctrl, cert_report, norm_report(u0).l2 ** 2,
                           norm_report(u0).grad_l2)
        n_samples = int(round(rc.t_final / rc.sample_every))
        stride = max(1, (n_samples + 1) // ctrl.trailing_window)
        traj, stop = evolve(
            u0, rc, snapshot_stride=stride,
            sample_hooks=[lebesgue_norm_hook((5.0,))],
        )
        assert stop.kind == COMPLETED
        assert scatter_consistency(ev, traj) <= 1e-10 * norm_report(u0).h1

    def test_zero_field_rejected(self, cert_report):
        g = make_grid(16, 16.0)
        zero = Field(g, np.zeros(g.shape(), dtype=np.complex128))
        with pytest.raises(ValueError, match="zero"):
            classify(zero, cert_report, classify_controls(1.0))

    def test_controls_validation(self):
        ev = classify_controls(1.0).evolve
        with pytest.raises(ValueError, match="scatter_tol"):
            ClassifyControls(evolve=ev, scatter_tol=0.0)
        with pytest.raises(ValueError, match="decay_factor"):
            ClassifyControls(evolve=ev, decay_factor=0.5)
        with pytest.raises(ValueError, match="trailing window"):
            ClassifyControls(evolve=ev, trailing_window=1)
