"""Initial-data construction from small JSON specs.

A spec is a one-key dict naming the family and its parameters:

    {"gaussian": {"amplitude": 1.0, "width": 2.0, "center": [0, 0, 0],
                  "phase_velocity": [0.5, 0, 0]}}
    {"ground_state_multiple": {"lambda": 0.8}}
    {"boosted_ground_state": {"velocity": [0.5, 0, 0]}}
    {"sum": [spec, spec, ...]}
    {"file": "path/to/state.bin"}

Velocity-like parameters are phase gradients: the field is multiplied by
exp(i xi.x), so the bulk translates at twice the given vector under the
free dispersion relation.  Ground-state families need a reference field
supplied by the caller (the CLI samples it from a certified radial
profile); the plain families do not.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .fieldio import load_field
from .spectral import Field, Grid

_FAMILIES = (
    "gaussian",
    "ground_state_multiple",
    "boosted_ground_state",
    "sum",
    "file",
)


def load_spec(path) -> dict:
    """Read a spec dict from a JSON file (no validation beyond parsing)."""
    with open(path, "r", encoding="utf-8") as fh:
        spec = json.load(fh)
    if not isinstance(spec, dict):
        raise ValueError(f"initial-data spec must be a JSON object, got {type(spec).__name__}")
    return spec


def _phase_ramp(grid: Grid, xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (3,):
        raise ValueError(f"velocity must be a 3-vector, got shape {xi.shape}")
    X, Y, Z = grid.coordinates()
    return np.exp(1j * (xi[0] * X + xi[1] * Y + xi[2] * Z))


def _build_gaussian(grid: Grid, params: dict) -> Field:
    known = {"amplitude", "width", "center", "phase_velocity"}
    unknown = set(params) - known
    if unknown:
        raise ValueError(f"unknown gaussian parameters: {sorted(unknown)}")
    amp = complex(params.get("amplitude", 1.0))
    width = float(params.get("width", 1.0))
    if width <= 0:
        raise ValueError(f"gaussian width must be positive, got {width}")
    center = np.asarray(params.get("center", (0.0, 0.0, 0.0)), dtype=float)
    if center.shape != (3,):
        raise ValueError(f"center must be a 3-vector, got shape {center.shape}")
    X, Y, Z = grid.coordinates()
    r2 = (X - center[0]) ** 2 + (Y - center[1]) ** 2 + (Z - center[2]) ** 2
    values = amp * np.exp(-r2 / (2.0 * width**2))
    xi = params.get("phase_velocity")
    if xi is not None:
        values = values * _phase_ramp(grid, xi)
    return Field(grid, values)


def build_initial_data(spec: dict, grid: Grid, ground: Field | None = None) -> Field:
    """Construct the initial field described by ``spec`` on ``grid``.

    Parameters
    ----------
    spec : dict
        One-key dict from the grammar in the module docstring.
    grid : Grid
        Target grid; file-based specs must match it exactly.
    ground : Field, optional
        Reference ground state on ``grid``, required by the
        ground-state families.

    Returns
    -------
    Field
        The assembled initial condition.
    """
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ValueError(
            "initial-data spec must be a dict with exactly one of "
            f"{_FAMILIES}, got {spec!r}"
        )
    (family, params), = spec.items()
    if family not in _FAMILIES:
        raise ValueError(f"unknown initial-data family {family!r}; expected one of {_FAMILIES}")

    if family == "gaussian":
        return _build_gaussian(grid, dict(params))

    if family == "ground_state_multiple":
        extra = set(params) - {"lambda"}
        if extra:
            raise ValueError(f"unknown ground_state_multiple parameters: {sorted(extra)}")
        if ground is None:
            raise ValueError("ground_state_multiple needs a ground-state field")
        if ground.grid != grid:
            raise ValueError("ground-state field lives on a different grid")
        lam = float(params["lambda"])
        return ground.with_values(lam * ground.values)

    if family == "boosted_ground_state":
        extra = set(params) - {"velocity"}
        if extra:
            raise ValueError(f"unknown boosted_ground_state parameters: {sorted(extra)}")
        if ground is None:
            raise ValueError("boosted_ground_state needs a ground-state field")
        if ground.grid != grid:
            raise ValueError("ground-state field lives on a different grid")
        ramp = _phase_ramp(grid, params["velocity"])
        return ground.with_values(ground.values * ramp)

    if family == "sum":
        if not isinstance(params, (list, tuple)) or not params:
            raise ValueError("sum takes a non-empty list of specs")
        total = None
        for part in params:
            piece = build_initial_data(part, grid, ground)
            total = piece.values if total is None else total + piece.values
        return Field(grid, total)

    # family == "file"
    path = Path(params)
    field = load_field(path)
    if field.grid != grid:
        raise ValueError(
            f"field in {path} is {field.grid.n}^3 / L={field.grid.box_length}, "
            f"expected {grid.n}^3 / L={grid.box_length}"
        )
    return field
