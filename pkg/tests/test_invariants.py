"""Conserved quantities, Galilean boosts, and the threshold report."""

import math

import numpy as np
import pytest

from nlslab.invariants import (
    DEFOCUSING,
    FOCUSING,
    conserved_set,
    gagliardo_nirenberg_defect,
    galilean_boost,
    threshold_report,
    zero_momentum_boost,
)
from nlslab.ground_state import CertificationError, GroundStateReport
from nlslab.spectral import Field, lebesgue_norm, make_grid, translate

from conftest import random_bumps


def plane_wave(grid, index=(2, 0, 0)):
    k = [grid.wavenumbers[i] for i in index]
    X, Y, Z = grid.coordinates()
    return (
        Field(grid, np.exp(1j * (k[0] * X + k[1] * Y + k[2] * Z))),
        np.array(k),
    )


class TestConservedSet:
    def test_plane_wave_momentum(self):
        g = make_grid(16, 16.0)
        u, k = plane_wave(g, (3, 1, 0))
        c = conserved_set(u)
        assert np.max(np.abs(c.momentum - k * c.mass)) < 1e-12 * c.mass
        assert math.isclose(c.kinetic, 0.5 * float(k @ k) * c.mass, rel_tol=1e-12)

    def test_energy_is_kinetic_plus_potential(self):
        g = make_grid(32, 16.0)
        u = random_bumps(g, np.random.default_rng(0))
        for sign in (FOCUSING, DEFOCUSING):
            c = conserved_set(u, sign)
            assert math.isclose(
                c.energy, c.kinetic + c.potential, rel_tol=1e-14
            )
        cf = conserved_set(u, FOCUSING)
        cd = conserved_set(u, DEFOCUSING)
        assert cf.potential < 0 < cd.potential
        assert math.isclose(cf.potential, -cd.potential, rel_tol=1e-14)

    def test_sign_validation(self):
        g = make_grid(16, 16.0)
        u, _ = plane_wave(g)
        with pytest.raises(ValueError):
            conserved_set(u, "attractive")


class TestGalileanBoost:
    def test_lattice_boost_identities(self):
        g = make_grid(64, 32.0)
        rng = np.random.default_rng(42)
        base = 2 * np.pi / g.box_length
        for trial in range(5):
            u = random_bumps(g, rng)
            xi0 = base * rng.integers(-4, 5, size=3).astype(float)
            w = galilean_boost(u, xi0)
            cu = conserved_set(u)
            cw = conserved_set(w)
            scale = cu.mass
            assert abs(cw.mass - cu.mass) < 1e-13 * scale
            expect_p = cu.momentum + cu.mass * xi0
            assert np.max(np.abs(cw.momentum - expect_p)) < 1e-12 * scale
            expect_e = (
                cu.energy
                + float(xi0 @ cu.momentum)
                + 0.5 * float(xi0 @ xi0) * cu.mass
            )
            assert abs(cw.energy - expect_e) < 1e-10 * max(1.0, abs(cu.energy))

    def test_time_shifted_boost_consistency(self):
        g = make_grid(32, 16.0)
        u = random_bumps(g, np.random.default_rng(5), center_max=1.0)
        xi0 = np.array([0.4, -0.2, 0.15])
        t = 0.7
        direct = galilean_boost(u, xi0, t=t)
        manual = galilean_boost(translate(u, 2 * t * xi0), xi0)
        manual = manual.with_values(
            manual.values * np.exp(-1j * t * float(xi0 @ xi0))
        )
        assert np.max(np.abs(direct.values - manual.values)) < 1e-12

    def test_boost_composes(self):
        g = make_grid(32, 16.0)
        u = random_bumps(g, np.random.default_rng(9), center_max=1.0)
        a = np.array([0.3, 0.0, -0.1])
        b = np.array([-0.2, 0.5, 0.0])
        two = galilean_boost(galilean_boost(u, a), b)
        one = galilean_boost(u, a + b)
        assert np.max(np.abs(two.values - one.values)) < 1e-12


class TestZeroMomentumBoost:
    def test_kills_momentum_and_minimizes_energy(self):
        g = make_grid(64, 32.0)
        rng = np.random.default_rng(7)
        for trial in range(5):
            u = random_bumps(g, rng)
            w, xi0 = zero_momentum_boost(u)
            cu = conserved_set(u)
            cw = conserved_set(w)
            scale = math.sqrt(2.0 * cw.mass * cw.kinetic)
            assert float(np.linalg.norm(cw.momentum)) < 1e-12 * scale
            assert np.allclose(xi0, -cu.momentum / cu.mass, atol=1e-14)
            assert cw.energy <= cu.energy + 1e-12 * abs(cu.energy)
            for delta in np.eye(3) * 0.05:
                probe = conserved_set(galilean_boost(w, delta))
                assert probe.energy >= cw.energy - 1e-11

    def test_zero_field_rejected(self):
        g = make_grid(16, 16.0)
        z = Field(g, np.zeros((16,) * 3, dtype=complex))
        with pytest.raises(ValueError):
            zero_momentum_boost(z)


class TestThresholdReport:
    def test_scaled_ground_state_ratios(self, cert_q, cert_report):
        for lam in (0.8, 1.3):
            u = cert_q.with_values(lam * cert_q.values)
            rep = threshold_report(u, cert_report)
            eta = lam**4 * (3.0 - 2.0 * lam**2)
            g_expect = lam**2
            assert math.isclose(rep.me_ratio, eta, rel_tol=0, abs_tol=1e-8)
            assert math.isclose(
                rep.mass_grad_ratio, g_expect, rel_tol=0, abs_tol=1e-8
            )
        below = threshold_report(
            cert_q.with_values(0.8 * cert_q.values), cert_report
        )
        assert below.below_threshold
        assert math.isclose(below.omega**2, below.me_ratio, rel_tol=1e-12)
        above = threshold_report(
            cert_q.with_values(1.3 * cert_q.values), cert_report
        )
        assert not above.below_threshold
        assert math.isnan(above.omega)

    def test_rejects_uncertified_report(self, cert_q):
        fake = GroundStateReport(
            q_field=cert_q,
            mass_q=10.0,
            grad_q=5.0,
            l4_q=2.0,
            energy_q=4.0,
            me_product=100.0,
            mass_grad_product=30.0,
            c_gn=0.04,
        )
        with pytest.raises(CertificationError):
            threshold_report(cert_q, fake)


class TestGagliardoNirenberg:
    def test_random_fields_never_exceed(self, cert_report):
        g = make_grid(48, 24.0)
        rng = np.random.default_rng(21)
        for trial in range(20):
            u = random_bumps(g, rng)
            defect = gagliardo_nirenberg_defect(u, cert_report.c_gn)
            assert defect <= 1e-10

    def test_equality_at_ground_state(self, cert_q, cert_report):
        defect = gagliardo_nirenberg_defect(cert_q, cert_report.c_gn)
        assert abs(defect) < 1e-6
