"""Localized virial identities and truncated center-of-mass machinery.

Two cutoff families, both with every derivative field evaluated from closed
forms (never by numerical differentiation):

* a radial weight W = R^2 p(|x|/R) with p(s) = s^2 on [0, 1], a fixed C^2
  quintic on [1, 2], and 0 beyond, entering the scalar virial z_R and its
  time derivatives;
* a componentwise vector weight built from a compactly supported odd theta
  with theta(x) = x on [-1, 1], support |x| <= 2^{1/3}, |theta| <= |x|,
  ||theta'||_inf <= 4 and ||theta||_inf <= 2, entering the truncated center
  of mass and the factor-5 derivative bound.

The remainder A_R in z_R'' = (8||grad u||^2 -/+ 6||u||_4^4) + A_R is
assembled from its four-term expression (diagonal Hessian excess,
off-diagonal Hessian, bilaplacian, Laplacian excess), and the identity with
the directly assembled z_R'' is asserted to 1e-10: the two computations
share only the cutoff fields, so the check catches assembly mistakes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .ground_state import GroundStateReport
from .invariants import conserved_set, equation_sign, threshold_report, FOCUSING
from .spectral import Field, Grid, fft3, ifft3, norm_report

logger = logging.getLogger(__name__)

_trapezoid = getattr(np, "trapezoid", None) or np.trapz

# Sup-norms of the frozen quintic transition profile over s >= 1, computed
# once from the closed forms on a dense grid and frozen.  The remainder
# bound |A_R| <= C_MAX * int_{|x|>=R} (|grad u|^2 + R^{-2}|u|^2 + |u|^4)
# uses the largest of the three coefficients below.
C_DIAG_SUP = 16.094379461372824  # sup |p''-2|, |p'/s-2|
C_OFFDIAG_SUP = 7.059992602717299  # sup |p''-p'/s| / 2
C_BILAPLACIAN_SUP = 972.0  # sup |p'''' + 4 p'''/s|, attained at s = 2
C_LAPLACIAN_SUP = 20.8791357062358  # sup |p'' + 2 p'/s - 6|
GRADIENT_COEFF = 4 * C_DIAG_SUP + 8 * C_OFFDIAG_SUP
C_MAX = max(GRADIENT_COEFF, C_BILAPLACIAN_SUP, C_LAPLACIAN_SUP)

# theta transition geometry: annulus [1, 2^{1/3}] with smoothstep corners of
# width (4 ell - 1) / 4.5 around a plateau at slope -4; the corner width is
# the unique choice making theta land exactly at 0.
THETA_EDGE = 2.0 ** (1.0 / 3.0)
_ELL = THETA_EDGE - 1.0
_CORNER = (4.0 * _ELL - 1.0) / 4.5


def _quintic(tau: np.ndarray, order: int) -> np.ndarray:
    """Derivatives of p(1 + tau) = 1 + 2t + t^2 - 25t^3 + 34t^4 - 13t^5."""
    if order == 0:
        return 1 + tau * (2 + tau * (1 + tau * (-25 + tau * (34 - 13 * tau))))
    if order == 1:
        return 2 + tau * (2 + tau * (-75 + tau * (136 - 65 * tau)))
    if order == 2:
        return 2 + tau * (-150 + tau * (408 - 260 * tau))
    if order == 3:
        return -150 + tau * (816 - 780 * tau)
    if order == 4:
        return 816 - 1560 * tau
    raise ValueError(f"no derivative of order {order}")


def _smoothstep(t: np.ndarray) -> np.ndarray:
    return t * t * (3.0 - 2.0 * t)


def _smoothstep_integral(t: np.ndarray) -> np.ndarray:
    return t**3 - 0.5 * t**4


def theta_profile(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(theta(y), theta'(y)) for the frozen odd cutoff, vectorized.

    theta(y) = y on [-1, 1], 0 beyond |y| = 2^{1/3}; on the annulus theta'
    descends from 1 to a -4 plateau and back to 0 through smoothstep corners,
    and theta is the exact antiderivative (so theta(2^{1/3}) = 0 to rounding).
    """
    y = np.asarray(y, dtype=float)
    a = _CORNER
    mag = np.abs(y)
    sign = np.sign(y)
    t_in = np.clip((mag - 1.0) / a, 0.0, 1.0)
    t_out = np.clip((mag - (THETA_EDGE - a)) / a, 0.0, 1.0)

    dcore = np.ones_like(mag)
    dinner = 1.0 - 5.0 * _smoothstep(t_in)
    dplateau = np.full_like(mag, -4.0)
    douter = -4.0 + 4.0 * _smoothstep(t_out)

    vcore = mag
    vinner = 1.0 + (mag - 1.0) - 5.0 * a * _smoothstep_integral(t_in)
    v_ic = 1.0 - 1.5 * a
    vplateau = v_ic - 4.0 * (mag - 1.0 - a)
    v_pl = 2.0 * a
    vouter = (
        v_pl
        - 4.0 * (mag - (THETA_EDGE - a))
        + 4.0 * a * _smoothstep_integral(t_out)
    )

    inner = mag <= 1.0 + a
    plateau = mag <= THETA_EDGE - a
    outside = mag >= THETA_EDGE
    core = mag <= 1.0

    dval = np.where(
        core, dcore, np.where(inner, dinner, np.where(plateau, dplateau, douter))
    )
    val = np.where(
        core, vcore, np.where(inner, vinner, np.where(plateau, vplateau, vouter))
    )
    dval = np.where(outside, 0.0, dval)
    val = np.where(outside, 0.0, val)
    return sign * val, dval


@dataclass(frozen=True)
class RadialCutoff:
    """Radial virial weight W = R^2 p(|x|/R) with analytic derivative fields.

    weight equals |x|^2 for |x| <= R and 0 for |x| >= 2R; the Hessian is
    2*identity and the bilaplacian 0 on the interior, so the remainder A_R
    vanishes for interior-supported states.  hessian_weights holds the six
    distinct second partials in the order xx, yy, zz, xy, xz, yz.
    """

    big_r: float
    weight: Field
    laplacian_weight: Field
    hessian_weights: tuple[Field, ...]
    bilaplacian_weight: Field


def make_radial_cutoff(grid: Grid, big_r: float) -> RadialCutoff:
    """Build the radial cutoff; requires the support 2R to fit in L/2."""
    if big_r <= 0:
        raise ValueError("R must be positive")
    if 2.0 * big_r > 0.5 * grid.box_length + 1e-12:
        raise ValueError(
            f"cutoff support 2R = {2 * big_r} exceeds half the box "
            f"{0.5 * grid.box_length}"
        )
    X, Y, Z = grid.coordinates()
    r2 = X * X + Y * Y + Z * Z
    r = np.sqrt(r2)
    s = r / big_r
    tau = np.clip(s - 1.0, 0.0, 1.0)
    core = s <= 1.0
    outside = s >= 2.0
    annulus = ~core & ~outside

    p = _quintic(tau, 0)
    p1 = _quintic(tau, 1)
    p2 = _quintic(tau, 2)
    p3 = _quintic(tau, 3)
    p4 = _quintic(tau, 4)

    # p'/s with the exact interior value 2 (p = s^2 there)
    safe_s = np.where(annulus, s, 1.0)
    p1_over_s = np.where(annulus, p1 / safe_s, 2.0)
    p2_eff = np.where(annulus, p2, 2.0)

    weight = np.where(core, r2, np.where(outside, 0.0, big_r**2 * p))
    lap = np.where(annulus, p2 + 2.0 * p1 / safe_s, np.where(core, 6.0, 0.0))
    bilap = np.where(annulus, (p4 + 4.0 * p3 / safe_s) / big_r**2, 0.0)

    # unit direction components, zero-safe at the origin
    safe_r = np.where(r > 0, r, 1.0)
    xh = X / safe_r
    yh = Y / safe_r
    zh = Z / safe_r

    def diag(h2):
        out = p2_eff * h2 + p1_over_s * (1.0 - h2)
        return np.where(outside, 0.0, out)

    def offdiag(ha, hb):
        out = (p2_eff - p1_over_s) * ha * hb
        return np.where(outside, 0.0, np.where(core, 0.0, out))

    fields = (
        diag(xh * xh),
        diag(yh * yh),
        diag(zh * zh),
        offdiag(xh, yh),
        offdiag(xh, zh),
        offdiag(yh, zh),
    )
    as_field = lambda arr: Field(grid, arr.astype(complex))
    return RadialCutoff(
        big_r=float(big_r),
        weight=as_field(weight),
        laplacian_weight=as_field(lap),
        hessian_weights=tuple(as_field(f) for f in fields),
        bilaplacian_weight=as_field(bilap),
    )


@dataclass(frozen=True)
class ComponentCutoff:
    """Componentwise weight phi_R = (R theta(x_j/R))_j for the center of mass."""

    big_r: float
    theta_prime_fields: tuple[Field, ...]
    phi_vector: tuple[Field, ...]


def make_component_cutoff(grid: Grid, big_r: float) -> ComponentCutoff:
    """Build the componentwise cutoff; support 2^{1/3} R must fit in L/2."""
    if big_r <= 0:
        raise ValueError("R must be positive")
    if THETA_EDGE * big_r > 0.5 * grid.box_length + 1e-12:
        raise ValueError(
            f"cutoff support {THETA_EDGE * big_r:.3f} exceeds half the box "
            f"{0.5 * grid.box_length}"
        )
    axis = grid.axis
    theta, theta_p = theta_profile(axis / big_r)
    n = grid.n
    shapes = [(n, 1, 1), (1, n, 1), (1, 1, n)]
    tp_fields = []
    phi_fields = []
    for j, shape in enumerate(shapes):
        line_p = theta_p.reshape(shape)
        line_v = (big_r * theta).reshape(shape)
        tp_fields.append(
            Field(grid, np.broadcast_to(line_p, (n, n, n)).astype(complex))
        )
        phi_fields.append(
            Field(grid, np.broadcast_to(line_v, (n, n, n)).astype(complex))
        )
    return ComponentCutoff(
        big_r=float(big_r),
        theta_prime_fields=tuple(tp_fields),
        phi_vector=tuple(phi_fields),
    )


@dataclass(frozen=True)
class VirialSample:
    """Virial scalars of one state: the split z_r_second = interior + a_r
    holds to 1e-10 by construction and is asserted at build time."""

    t: float
    z_r: float
    z_r_prime: float
    z_r_second: float
    a_r: float
    interior_virial: float
    com_truncated: np.ndarray
    com_prime_bound_rhs: float

    def __post_init__(self):
        scale = max(abs(self.interior_virial), abs(self.a_r), 1.0)
        if abs(self.z_r_second - self.interior_virial - self.a_r) > 1e-10 * scale:
            raise ValueError("virial split identity violated; assembly bug")


def _gradient_fields(
    u: Field, odd: bool = False
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Spectral partial derivatives of u.

    odd=True applies the odd-derivative quadrature (the unpaired highest
    mode of an even grid is weighted zero, as in the conserved momentum):
    use it for Im(conj(u) du) momentum-type integrands, where the
    one-sided plane would hand real fields a spurious contribution far
    above rounding.  Squared-gradient (even) integrands keep the full
    wavenumbers so they stay consistent with the kinetic energy.
    """
    uh = fft3(u.values)
    g = u.grid
    k = g.wavenumbers
    if odd and g.n % 2 == 0:
        k = k.copy()
        k[g.n // 2] = 0.0
    kx = k.reshape(-1, 1, 1)
    ky = k.reshape(1, -1, 1)
    kz = k.reshape(1, 1, -1)
    return (
        ifft3(1j * kx * uh),
        ifft3(1j * ky * uh),
        ifft3(1j * kz * uh),
    )


def local_virial(
    u: Field, cutoff: RadialCutoff, sign: str = FOCUSING
) -> tuple[float, float, float, float]:
    """(z_R, z_R', z_R'', A_R) for one state by spectral quadrature.

    z_R'' is assembled directly from the Hessian/bilaplacian/Laplacian
    weight fields; A_R independently from its four-term expression; the
    defining split against the interior virial 8||grad u||^2 -/+ 6||u||_4^4
    is asserted to 1e-10.
    """
    if cutoff.weight.grid != u.grid:
        raise ValueError("cutoff built for a different grid")
    sigma = equation_sign(sign)
    g = u.grid
    cell = g.cell_volume
    v = u.values
    mag2 = v.real**2 + v.imag**2
    mag4 = mag2 * mag2
    dx, dy, dz = _gradient_fields(u)
    grads = (dx, dy, dz)

    W = cutoff.weight.values.real
    lap = cutoff.laplacian_weight.values.real
    bilap = cutoff.bilaplacian_weight.values.real
    hess = [f.values.real for f in cutoff.hessian_weights]

    z_r = cell * float(np.sum(W * mag2))

    # z_R' = 2 Im int grad W . grad u conj(u), with grad W = (p'(s)/s) x
    X, Y, Z = g.coordinates()
    pps = _radial_slope_over_s(g, cutoff.big_r)
    zp = 0.0
    for coord, du in zip((X, Y, Z), _gradient_fields(u, odd=True)):
        zp += float(np.sum(pps * coord * (du * np.conj(v)).imag))
    z_r_prime = 2.0 * cell * zp

    # direct z_R'' assembly
    hess_term = 0.0
    for j in range(3):
        hess_term += float(np.sum(hess[j] * np.abs(grads[j]) ** 2))
    pairs = ((3, 0, 1), (4, 0, 2), (5, 1, 2))
    for idx, a, b in pairs:
        cross = (grads[a] * np.conj(grads[b])).real
        hess_term += 2.0 * float(np.sum(hess[idx] * cross))
    z_r_second = cell * (
        4.0 * hess_term
        - float(np.sum(bilap * mag2))
        - sigma * float(np.sum(lap * mag4))
    )

    rep = norm_report(u)
    interior = 8.0 * rep.grad_l2**2 - sigma * 6.0 * rep.l4**4

    # four-term remainder
    a_term = 0.0
    for j in range(3):
        a_term += 4.0 * float(np.sum((hess[j] - 2.0) * np.abs(grads[j]) ** 2))
    for idx, a, b in pairs:
        cross = (grads[a] * np.conj(grads[b])).real
        a_term += 8.0 * float(np.sum(hess[idx] * cross))
    a_r = cell * (
        a_term
        - float(np.sum(bilap * mag2))
        - sigma * float(np.sum((lap - 6.0) * mag4))
    )

    scale = max(abs(interior), abs(a_r), 1.0)
    if abs(z_r_second - interior - a_r) > 1e-10 * scale:
        raise RuntimeError(
            f"virial split off by {abs(z_r_second - interior - a_r):.3e}; "
            "assembly bug"
        )
    return z_r, z_r_prime, z_r_second, a_r


def _radial_slope_over_s(grid: Grid, big_r: float) -> np.ndarray:
    """p'(s)/s on the grid (2 in the core, 0 outside), so that
    grad W = (p'(s)/s) x componentwise."""
    X, Y, Z = grid.coordinates()
    r = np.sqrt(X * X + Y * Y + Z * Z)
    s = r / big_r
    tau = np.clip(s - 1.0, 0.0, 1.0)
    p1 = _quintic(tau, 1)
    core = s <= 1.0
    outside = s >= 2.0
    safe_s = np.where(core | outside, 1.0, s)
    return np.where(core, 2.0, np.where(outside, 0.0, p1 / safe_s))


def a_r_bound_check(u: Field, cutoff: RadialCutoff) -> tuple[float, float, float]:
    """(a_r, bound, constant_estimate) for the remainder estimate.

    bound = int_{|x| >= R} (|grad u|^2 + R^{-2} |u|^2 + |u|^4); the ratio
    |a_r| / bound is asserted against the frozen C_MAX derived from the
    cutoff profile's sup-norms.  A zero bound with nonzero a_r would mean
    the quadrature itself is broken and raises.
    """
    _, _, _, a_r = local_virial(u, cutoff)
    g = u.grid
    X, Y, Z = g.coordinates()
    ext = np.sqrt(X * X + Y * Y + Z * Z) >= cutoff.big_r
    v = u.values
    mag2 = v.real**2 + v.imag**2
    dx, dy, dz = _gradient_fields(u)
    grad2 = np.abs(dx) ** 2 + np.abs(dy) ** 2 + np.abs(dz) ** 2
    integrand = grad2 + mag2 / cutoff.big_r**2 + mag2 * mag2
    bound = g.cell_volume * float(np.sum(integrand[ext]))
    if bound == 0.0:
        if abs(a_r) > 0.0:
            raise RuntimeError("zero exterior bound with nonzero remainder")
        return a_r, 0.0, 0.0
    estimate = abs(a_r) / bound
    if estimate > C_MAX:
        raise RuntimeError(
            f"remainder ratio {estimate:.3e} exceeds the frozen constant "
            f"{C_MAX}; cutoff fields are inconsistent"
        )
    return a_r, bound, estimate


@dataclass(frozen=True)
class CoercivityReport:
    """Interior virial against its two coercive floors.

    applicable is False when the state is not below threshold (the bounds
    assume omega < 1); then nothing is checked and holds is None.  margin
    is the smaller of the two floor margins relative to the interior scale;
    below threshold a margin under -1e-8 raises.
    """

    interior: float
    gradient_floor: float
    energy_floor: float
    omega: float
    margin: float
    applicable: bool
    holds: bool | None


def coercivity_check(
    u: Field, gs: GroundStateReport, sign: str = FOCUSING
) -> CoercivityReport:
    """Check 8||grad u||^2 - 6||u||_4^4 >= 8(1-w)||grad u||^2 and
    >= 16(1-w)E[u] for below-threshold states, to 1e-8 relative slack."""
    thr = threshold_report(u, gs, sign)
    rep = norm_report(u)
    cons = conserved_set(u, sign)
    sigma = equation_sign(sign)
    interior = 8.0 * rep.grad_l2**2 - sigma * 6.0 * rep.l4**4
    if not thr.below_threshold:
        return CoercivityReport(
            interior=interior,
            gradient_floor=math.nan,
            energy_floor=math.nan,
            omega=thr.omega,
            margin=math.nan,
            applicable=False,
            holds=None,
        )
    omega = thr.omega
    gradient_floor = 8.0 * (1.0 - omega) * rep.grad_l2**2
    energy_floor = 16.0 * (1.0 - omega) * cons.energy
    scale = max(abs(interior), 8.0 * rep.grad_l2**2, abs(energy_floor))
    margin = min(interior - gradient_floor, interior - energy_floor) / scale
    if margin < -1e-8:
        raise RuntimeError(
            f"coercivity violated by {margin:.3e} relative: interior "
            f"{interior:.6e} under floors ({gradient_floor:.6e}, "
            f"{energy_floor:.6e})"
        )
    return CoercivityReport(
        interior=interior,
        gradient_floor=gradient_floor,
        energy_floor=energy_floor,
        omega=omega,
        margin=margin,
        applicable=True,
        holds=True,
    )


def truncated_center_of_mass(
    u: Field, cutoff: ComponentCutoff
) -> tuple[np.ndarray, np.ndarray, float]:
    """(z, z', rhs_bound): the truncated center of mass, its derivative,
    and the factor-5 bound 5 int_{|x| >= R} (|grad u|^2 + |u|^2).

    For zero-momentum states the componentwise bound |z'_j| <= rhs_bound
    holds rigorously (the region {|x_j| >= R} sits inside {|x| >= R}) and
    is asserted with 1e-10 slack.
    """
    if cutoff.phi_vector[0].grid != u.grid:
        raise ValueError("cutoff built for a different grid")
    g = u.grid
    cell = g.cell_volume
    v = u.values
    mag2 = v.real**2 + v.imag**2
    grads = _gradient_fields(u)

    z = np.array(
        [
            cell * float(np.sum(cutoff.phi_vector[j].values.real * mag2))
            for j in range(3)
        ]
    )
    ograds = _gradient_fields(u, odd=True)
    z_prime = np.array(
        [
            2.0
            * cell
            * float(
                np.sum(
                    cutoff.theta_prime_fields[j].values.real
                    * (ograds[j] * np.conj(v)).imag
                )
            )
            for j in range(3)
        ]
    )

    X, Y, Z = g.coordinates()
    ext = np.sqrt(X * X + Y * Y + Z * Z) >= cutoff.big_r
    grad2 = sum(np.abs(d) ** 2 for d in grads)
    rhs_bound = 5.0 * cell * float(np.sum((grad2 + mag2)[ext]))

    cons = conserved_set(u)
    p_scale = math.sqrt(2.0 * cons.mass * cons.kinetic) or 1.0
    if float(np.max(np.abs(cons.momentum))) <= 1e-10 * p_scale:
        if float(np.max(np.abs(z_prime))) > rhs_bound + 1e-10:
            raise RuntimeError(
                f"center-of-mass derivative {np.max(np.abs(z_prime)):.3e} "
                f"exceeds the factor-5 bound {rhs_bound:.3e}"
            )
    return z, z_prime, rhs_bound


def virial_sample(
    t: float,
    u: Field,
    radial: RadialCutoff,
    component: ComponentCutoff | None = None,
    sign: str = FOCUSING,
) -> VirialSample:
    """All virial scalars of one state bundled with the split identity."""
    z_r, zp, zpp, a_r = local_virial(u, radial, sign)
    rep = norm_report(u)
    sigma = equation_sign(sign)
    interior = 8.0 * rep.grad_l2**2 - sigma * 6.0 * rep.l4**4
    if component is not None:
        com, _, rhs = truncated_center_of_mass(u, component)
    else:
        com, rhs = np.full(3, math.nan), math.nan
    return VirialSample(
        t=t,
        z_r=z_r,
        z_r_prime=zp,
        z_r_second=zpp,
        a_r=a_r,
        interior_virial=interior,
        com_truncated=com,
        com_prime_bound_rhs=rhs,
    )


def trajectory_virial_hook(radial: RadialCutoff, sign: str = FOCUSING):
    """Sample hook for evolve() adding this cutoff's virial scalars per row."""
    tag = f"R{radial.big_r:g}"

    def hook(t: float, state: Field) -> dict:
        z_r, zp, zpp, a_r = local_virial(state, radial, sign)
        return {
            f"z_{tag}": z_r,
            f"zp_{tag}": zp,
            f"zpp_{tag}": zpp,
            f"ar_{tag}": a_r,
        }

    return hook


def center_path(trajectory) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(times, x(t), x(t)/t for t >= 1) from a trajectory's stored centroids.

    The |u|^4-weighted centroid rides the soliton core and ignores weak
    radiation.  Component jumps larger than half the box are unwrapped as
    periodic wrap-arounds.  Degenerate rows (vanishing quartic density)
    raise.
    """
    rows = trajectory.rows
    if not rows:
        raise ValueError("empty trajectory")
    times = np.array([r.t for r in rows])
    raw = np.stack([r.center for r in rows])
    if np.any(~np.isfinite(raw)):
        raise ValueError("degenerate quartic density along the trajectory")
    L = trajectory.grid.box_length
    x = raw.copy()
    for i in range(1, len(x)):
        jump = x[i] - x[i - 1]
        x[i] -= L * np.round(jump / L)
    late = times >= 1.0 - 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(late[:, None], x / times[:, None], np.nan)
    return times, x, ratio


@dataclass(frozen=True)
class RigidityEntry:
    t0: float
    t1: float
    big_r: float
    convexity_integral: float
    endpoint_bound: float
    ratio: float
    rig3_min_margin: float
    rig3_ok: bool
    r_admissible: bool


@dataclass(frozen=True)
class RigidityReport:
    applicable: bool
    reason: str
    omega: float
    entries: tuple[RigidityEntry, ...]


def rigidity_probe(
    trajectory,
    gs: GroundStateReport,
    r_schedule,
    r0: float = 0.0,
    sign: str = FOCUSING,
) -> RigidityReport:
    """Convexity-versus-endpoint audit of the rigidity argument.

    For each (t0, t1, R) in r_schedule, integrates z_R'' over the window,
    compares against the endpoint bound 2 max |z_R'|, and checks the
    pointwise floor z_R'' >= 8(1-omega) E[u] at every sample to 1e-6
    relative.  R is flagged admissible when R >= r0 + sup |x(t)| over the
    window.  Preconditions (below threshold, zero momentum, snapshots at
    every sample) are reported, not asserted: an inapplicable probe returns
    a flagged report with no entries.
    """
    rows = trajectory.rows
    if not rows:
        return RigidityReport(False, "empty trajectory", math.nan, ())
    missing = [i for i in range(len(rows)) if i not in trajectory.snapshots]
    if missing:
        return RigidityReport(
            False,
            f"snapshots missing at {len(missing)} samples (need stride 1)",
            math.nan,
            (),
        )
    u0 = trajectory.snapshots[0]
    thr = threshold_report(u0, gs, sign)
    if sign == FOCUSING and not thr.below_threshold:
        return RigidityReport(False, "not below threshold", thr.omega, ())
    cons0 = rows[0].conserved
    p_scale = math.sqrt(2.0 * cons0.mass * cons0.kinetic) or 1.0
    if float(np.max(np.abs(cons0.momentum))) > 1e-8 * p_scale:
        return RigidityReport(False, "nonzero momentum", thr.omega, ())

    omega = thr.omega if sign == FOCUSING else 0.0
    energy = cons0.energy
    floor = 8.0 * (1.0 - omega) * energy if sign == FOCUSING else 0.0
    try:
        times, x_path, _ = center_path(trajectory)
    except ValueError:
        # degenerate quartic density (e.g. the zero state): no core to
        # track, so the admissibility sup |x(t)| is zero
        x_path = np.zeros((len(rows), 3))

    cutoffs: dict[float, RadialCutoff] = {}
    virials: dict[tuple[float, int], tuple[float, float, float, float]] = {}
    entries = []
    for t0, t1, big_r in r_schedule:
        if big_r not in cutoffs:
            cutoffs[big_r] = make_radial_cutoff(trajectory.grid, big_r)
        sel = [
            i
            for i in range(len(rows))
            if t0 - 1e-9 <= rows[i].t <= t1 + 1e-9
        ]
        if len(sel) < 2:
            continue
        vals = []
        for i in sel:
            key = (big_r, i)
            if key not in virials:
                virials[key] = local_virial(
                    trajectory.snapshots[i], cutoffs[big_r], sign
                )
            vals.append(virials[key])
        ts = np.array([rows[i].t for i in sel])
        zpp = np.array([v[2] for v in vals])
        zp = np.array([v[1] for v in vals])
        convexity = float(_trapezoid(zpp, ts))
        endpoint = 2.0 * float(np.max(np.abs(zp)))
        if endpoint > 0:
            ratio = convexity / endpoint
        else:
            ratio = 0.0 if convexity == 0 else math.inf
        margin_scale = max(abs(floor), 1e-12)
        margins = (zpp - floor) / margin_scale
        rig3_ok = bool(np.all(zpp >= floor - 1e-6 * margin_scale))
        sup_x = float(
            np.max(np.linalg.norm(x_path[sel], axis=1))
        )
        entries.append(
            RigidityEntry(
                t0=t0,
                t1=t1,
                big_r=big_r,
                convexity_integral=convexity,
                endpoint_bound=endpoint,
                ratio=ratio,
                rig3_min_margin=float(np.min(margins)),
                rig3_ok=rig3_ok,
                r_admissible=big_r >= r0 + sup_x,
            )
        )
    return RigidityReport(True, "ok", omega, tuple(entries))
