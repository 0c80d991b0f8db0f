"""nlslab: pseudo-spectral toolbox for the cubic Schrodinger equation on a periodic box.

The package discretizes i u_t + Delta u + sign |u|^2 u = 0 (sign = +1 focusing,
sign = -1 defocusing) on [-L/2, L/2)^3 with a Fourier collocation grid and
provides ground-state computation, conserved-quantity bookkeeping, symplectic
time stepping, localized virial identities, profile-decomposition surrogates,
and scattering diagnostics on top of that core.
"""

from .spectral import (
    Grid,
    Field,
    NormReport,
    make_grid,
    norm_report,
    lebesgue_norm,
    sobolev_seminorm,
    h1_norm,
    translate,
    free_propagate,
    frequency_annulus_filter,
    exterior_box_mass,
)
from .fieldio import save_field, load_field

__version__ = "0.1.0"

__all__ = [
    "Grid",
    "Field",
    "NormReport",
    "make_grid",
    "norm_report",
    "lebesgue_norm",
    "sobolev_seminorm",
    "h1_norm",
    "translate",
    "free_propagate",
    "frequency_annulus_filter",
    "exterior_box_mass",
    "save_field",
    "load_field",
    "__version__",
]
