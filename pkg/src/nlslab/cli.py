"""Experiment runner: configuration, run directories, and artifact emission.

Subcommands
-----------
ground-state   certify the soliton profile and sample it on a working grid
evolve         integrate an initial state and record the diagnostic series
thresholds     compare a state against the scattering thresholds
virial         localized virial scalars for the snapshots of a stored run
profiles       profile extraction on a family built from initial-data specs
classify       long-time verdict with evidence; exit 0 / 10 / 20
plot           static SVG figures from a run directory

Artifacts are plain files in a run directory: JSON for reports, CSV for
series, the binary container for fields.  Every command that writes files
puts a manifest there before any other artifact; the manifest carries the
fully expanded configuration (presets resolved to explicit numbers),
package versions, and, once the command finishes, the wall time plus
SHA-256 checksums of everything emitted.  Feeding a manifest back through
--config reproduces the run bit-exactly at the same build.  The manifest
is named manifest.json unless the directory already holds one written by
a different command, in which case <command>-manifest.json is used so
post-hoc commands (virial, plot) never clobber the original run record.

--out names the run directory; a value ending in .json or .csv is taken
as directory plus primary-artifact name, so report and series files can
be addressed directly.  Configuration precedence: flags, then --controls
(stepper fields only), then --config, later layers winning key by key.
A --config file holding {"runs": [{...}, ...]} fans the overlay list out
across worker processes with one isolated run directory per entry; the
NLSLAB_THREADS variable caps the worker count (the same variable caps
FFT threads, so the two never oversubscribe each other).

Exit codes: 0 success (classify: Scatter), 10 classify BlowUp, 20
classify Undecided, 64 usage, 65 malformed configuration or data, 66
missing input, 70 internal failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import multiprocessing
import os
import platform
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import scipy

from . import __version__
from .evolve import EvolveControls, evolve
from .fieldio import load_field, save_field
from .ground_state import (
    CERT_BOX,
    CERT_N,
    CertificationError,
    certified_ground_state,
    equation_residual,
    GroundStateReport,
    petviashvili,
)
from .initial_data import build_initial_data, load_spec
from .invariants import (
    DEFOCUSING,
    FOCUSING,
    gagliardo_nirenberg_defect,
    threshold_report,
)
from .profiles import (
    SearchParams,
    make_family,
    member_residuals,
    profile_decompose,
)
from .scattering import (
    BLOW_UP,
    ClassifyControls,
    SCATTER,
    UNDECIDED,
    classify,
    evidence_as_dict,
)
from .spectral import Field, lebesgue_norm, make_grid
from .virial import (
    make_component_cutoff,
    make_radial_cutoff,
    trajectory_virial_hook,
    virial_sample,
)

logger = logging.getLogger(__name__)

EX_OK = 0
EX_BLOW_UP = 10
EX_UNDECIDED = 20
EX_USAGE = 64
EX_DATA = 65
EX_NOINPUT = 66
EX_INTERNAL = 70

_PRESETS = {"desk": (64, 32.0), "reference": (128, 48.0)}

_CONTROL_KEYS = (
    "dt_initial",
    "dt_min",
    "t_final",
    "sample_every",
    "gradient_cap",
    "boundary_mass_cap",
    "sign",
    "energy_step_tol",
)
_CLASSIFY_KEYS = ("scatter_tol", "decay_factor", "trailing_window", "negative_time")


# ---------------------------------------------------------------------------
# small shared helpers


def _fmt(x) -> str:
    """17-significant-digit decimal, enough to round-trip any double."""
    return format(float(x), ".17g")


def _write_json(path: Path, payload: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _load_json(path: Path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed JSON in {path}: {exc}") from exc


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_csv(path: Path, header: list[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def _read_csv(path: Path) -> dict[str, np.ndarray]:
    """Numeric CSV as column arrays; empty series are an error."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"empty series in {path}") from None
        rows = [[float(v) for v in row] for row in reader if row]
    if not rows:
        raise ValueError(f"empty series in {path}")
    data = np.array(rows)
    return {name: data[:, j] for j, name in enumerate(header)}


def _worker_cap() -> int:
    env = os.environ.get("NLSLAB_THREADS", "").strip()
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# configuration plumbing


def _resolve_grid(args) -> tuple[int, float]:
    n, box = _PRESETS[args.preset]
    if args.n is not None:
        n = args.n
    if args.box is not None:
        box = args.box
    return n, float(box)


def _load_init_spec(text: str) -> dict:
    """Inline JSON object or a path to one (the initial-data grammar)."""
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            spec = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ValueError(f"malformed inline init spec: {exc}") from exc
        if not isinstance(spec, dict):
            raise ValueError("inline init spec must be a JSON object")
        return spec
    return load_spec(stripped)


def _merge_controls(base: dict, overlay: dict, extra_keys=()) -> dict:
    allowed = set(_CONTROL_KEYS) | set(extra_keys)
    unknown = set(overlay) - allowed
    if unknown:
        raise ValueError(
            f"unknown control keys {sorted(unknown)}; expected a subset of "
            f"{sorted(allowed)}"
        )
    merged = dict(base)
    merged.update(overlay)
    return merged


def _overlay_config(command: str, config: dict, overlay: dict) -> dict:
    """Apply a --config overlay (possibly a manifest) onto the flag config."""
    if "command" in overlay and "config" in overlay:
        if overlay["command"] != command:
            raise ValueError(
                f"config file was written by {overlay['command']!r}, "
                f"not {command!r}"
            )
        overlay = overlay["config"]
    unknown = set(overlay) - set(config)
    if unknown:
        raise ValueError(
            f"unknown config keys {sorted(unknown)}; expected a subset of "
            f"{sorted(config)}"
        )
    merged = dict(config)
    for key, value in overlay.items():
        if key == "controls" and isinstance(value, dict):
            merged["controls"] = _merge_controls(
                merged.get("controls", {}), value, _CLASSIFY_KEYS
            )
        else:
            merged[key] = value
    return merged


def _resolve_out(out: str, default_primary: str | None) -> tuple[Path, str | None]:
    path = Path(out)
    if path.suffix in (".json", ".csv"):
        parent = path.parent if str(path.parent) else Path(".")
        return parent, path.name
    return path, default_primary


def _manifest_path(run_dir: Path, command: str) -> Path:
    plain = run_dir / "manifest.json"
    if plain.exists():
        try:
            owner = _load_json(plain).get("command")
        except ValueError:
            owner = None
        if owner is not None and owner != command:
            return run_dir / f"{command}-manifest.json"
    return plain


def _versions(command: str) -> dict:
    versions = {
        "nlslab": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }
    if command == "plot":
        import matplotlib

        versions["matplotlib"] = matplotlib.__version__
    return versions


def _manifest_payload(command: str, config: dict) -> dict:
    return {
        "command": command,
        "config": config,
        "versions": _versions(command),
        "wall_time_s": None,
        "artifacts": {},
    }


def _execute(command: str, config: dict) -> int:
    spec = _COMMANDS[command]
    if config.get("out") is None:
        if not spec.allow_stdout:
            raise ValueError(f"{command} needs --out")
        _, code = spec.run(config, None, None)
        return code

    run_dir, primary = _resolve_out(config["out"], spec.default_primary)
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = _manifest_path(run_dir, command)
    payload = _manifest_payload(command, config)
    _write_json(manifest, payload)

    start = time.perf_counter()
    artifacts, code = spec.run(config, run_dir, primary)
    payload["wall_time_s"] = time.perf_counter() - start
    payload["artifacts"] = {
        str(p.relative_to(run_dir)): _sha256(p) for p in artifacts
    }
    _write_json(manifest, payload)
    return code


# ---------------------------------------------------------------------------
# shared input loading


def _iteration_progress(label: str) -> Callable[[int, float], None]:
    def callback(k: int, delta: float) -> None:
        if k % 25 == 0:
            print(f"  {label}: iteration {k}, update {delta:.3e}", flush=True)

    return callback


def _load_ground_report(path: Path) -> tuple[GroundStateReport, Path | None]:
    """Rebuild the scalar constants from a ground-state report file.

    The returned report carries no grid field (consumers here use only the
    certified scalars); the path of the companion field file, recorded by
    the ground-state command, is returned alongside when present.
    """
    data = _load_json(path)
    if "constants" not in data:
        raise ValueError(f"{path} is not a ground-state report (no constants block)")
    constants = data["constants"]
    keys = (
        "mass_q",
        "grad_q",
        "l4_q",
        "energy_q",
        "me_product",
        "mass_grad_product",
        "c_gn",
    )
    missing = [k for k in keys if k not in constants]
    if missing:
        raise ValueError(f"{path}: constants block is missing {missing}")
    report = GroundStateReport(
        q_field=None, **{k: float(constants[k]) for k in keys}
    )
    rel = data.get("working_grid", {}).get("field")
    field_path = (path.parent / rel) if rel else None
    return report, field_path


def _resolve_ground(
    value: str | None,
) -> tuple[GroundStateReport | None, Path | None]:
    """--ground accepts the report JSON (preferred) or a bare field file."""
    if value is None:
        return None, None
    path = Path(value)
    if path.suffix == ".bin":
        if not path.exists():
            raise FileNotFoundError(f"ground-state field {path} does not exist")
        return None, path
    report, field_path = _load_ground_report(path)
    if field_path is not None and not field_path.exists():
        field_path = None
    return report, field_path


def _initial_state(config: dict) -> Field:
    grid = make_grid(config["n"], config["box"])
    _, field_path = _resolve_ground(config.get("ground"))
    ground = load_field(field_path) if field_path is not None else None
    return build_initial_data(config["init"], grid, ground)


def _progress_hook(controls: EvolveControls) -> Callable[[float, Field], dict]:
    """Sample hook printing roughly ten progress lines over the run."""
    total = max(1, round(controls.t_final / controls.sample_every))
    stride = max(1, total // 10)
    state = {"count": 0}

    def hook(t: float, _u: Field) -> dict:
        k = state["count"]
        state["count"] = k + 1
        if k % stride == 0:
            print(f"  t = {t:8.3f} / {controls.t_final:g}", flush=True)
        return {}

    return hook


_SERIES_FIXED = [
    "t",
    "dt",
    "mass",
    "kinetic",
    "potential",
    "energy",
    "momentum_x",
    "momentum_y",
    "momentum_z",
    "momentum_abs",
    "l2",
    "grad_l2",
    "h1",
    "l3",
    "l4",
    "hdot_half",
    "center_x",
    "center_y",
    "center_z",
    "boundary_mass",
    "mass_drift",
]


def _write_series(path: Path, trajectory) -> Path:
    extras = sorted({key for row in trajectory.rows for key in row.extras})
    rows = []
    for row in trajectory.rows:
        c, n = row.conserved, row.norms
        rows.append(
            [
                row.t,
                row.dt,
                c.mass,
                c.kinetic,
                c.potential,
                c.energy,
                c.momentum[0],
                c.momentum[1],
                c.momentum[2],
                float(np.linalg.norm(c.momentum)),
                n.l2,
                n.grad_l2,
                n.h1,
                n.l3,
                n.l4,
                n.hdot_half,
                row.center[0],
                row.center[1],
                row.center[2],
                row.boundary_mass,
                row.mass_drift,
            ]
            + [row.extras.get(key, math.nan) for key in extras]
        )
    return _write_csv(path, _SERIES_FIXED + extras, rows)


def _write_snapshots(run_dir: Path, trajectory) -> list[Path]:
    paths = []
    for idx in sorted(trajectory.snapshots):
        row = trajectory.rows[idx]
        p = save_field(
            run_dir / "snapshots" / f"row_{idx:05d}.bin",
            trajectory.snapshots[idx],
            extra={"t": row.t, "row": idx},
        )
        paths.extend([p, p.with_suffix(".json")])
    return paths


# ---------------------------------------------------------------------------
# ground-state


def _collect_ground_state(args) -> dict:
    n, box = _resolve_grid(args)
    return {
        "out": args.out or "ground-state-out",
        "preset": args.preset,
        "n": n,
        "box": box,
        "shooting_tol": args.tol,
        "fixed_point_tol": args.fixed_point_tol,
        "seed": args.seed,
    }


def _run_ground_state(config, run_dir, primary):
    record = certified_ground_state(
        shooting_tol=config["shooting_tol"],
        fixed_point_tol=config["fixed_point_tol"],
        progress=_iteration_progress("certification grid"),
    )
    rep = record.report
    grid = make_grid(config["n"], config["box"])
    print(f"sampling the certified profile on {grid.n}^3, L = {grid.box_length:g}")
    seed = record.profile.sample_on_grid(grid)
    q = petviashvili(
        grid,
        tol=config["fixed_point_tol"],
        seed=seed,
        progress=_iteration_progress("working grid"),
    )
    residual = equation_residual(q)
    field_path = save_field(
        run_dir / "ground_state.bin",
        q,
        extra={"kind": "ground state", "equation_residual": residual},
    )
    payload = {
        "constants": {
            "mass_q": rep.mass_q,
            "grad_q": rep.grad_q,
            "l4_q": rep.l4_q,
            "energy_q": rep.energy_q,
            "me_product": rep.me_product,
            "mass_grad_product": rep.mass_grad_product,
            "c_gn": rep.c_gn,
        },
        "certification": {
            "n": CERT_N,
            "box": CERT_BOX,
            "sup_disagreement": record.sup_disagreement,
            "mass_gap": record.mass_gap,
            "profile_center_value": record.profile.center_value,
        },
        "working_grid": {
            "n": grid.n,
            "box": grid.box_length,
            "field": field_path.name,
            "peak": float(np.max(np.abs(q.values))),
            "mass": lebesgue_norm(q, 2) ** 2,
            "equation_residual": residual,
        },
    }
    report_path = _write_json(run_dir / primary, payload)
    print(f"wrote {report_path} and {field_path}")
    return [report_path, field_path, field_path.with_suffix(".json")], EX_OK


# ---------------------------------------------------------------------------
# evolve


def _controls_from_args(args, extra_keys=()) -> dict:
    controls = {
        "dt_initial": args.dt_initial,
        "dt_min": args.dt_min,
        "t_final": args.t_final,
        "sample_every": args.sample_every,
        "gradient_cap": args.gradient_cap,
        "boundary_mass_cap": args.boundary_mass_cap,
        "sign": args.sign,
        "energy_step_tol": args.energy_step_tol,
    }
    if args.controls:
        controls = _merge_controls(
            controls, _load_json(Path(args.controls)), extra_keys
        )
    return controls


def _split_classify_controls(controls: dict) -> tuple[dict, dict]:
    stepper = {k: v for k, v in controls.items() if k in _CONTROL_KEYS}
    extras = {k: v for k, v in controls.items() if k in _CLASSIFY_KEYS}
    return stepper, extras


def _build_controls(controls: dict) -> EvolveControls:
    if controls.get("t_final") is None:
        raise ValueError("t_final is required (flag --t-final or the controls file)")
    return EvolveControls(**{k: controls[k] for k in _CONTROL_KEYS})


def _collect_evolve(args) -> dict:
    n, box = _resolve_grid(args)
    return {
        "out": args.out or "evolve-out",
        "preset": args.preset,
        "n": n,
        "box": box,
        "init": _load_init_spec(args.init),
        "ground": args.ground,
        "snapshot_stride": args.snapshot_stride,
        "radii": args.radii,
        "controls": _controls_from_args(args),
        "seed": args.seed,
    }


def _run_evolve(config, run_dir, primary):
    controls = _build_controls(config["controls"])
    u0 = _initial_state(config)
    hooks = [_progress_hook(controls)]
    for big_r in config["radii"]:
        hooks.append(
            trajectory_virial_hook(
                make_radial_cutoff(u0.grid, float(big_r)), controls.sign
            )
        )
    start = time.perf_counter()
    trajectory, stop = evolve(
        u0,
        controls,
        sample_hooks=hooks,
        snapshot_stride=config["snapshot_stride"],
    )
    wall = time.perf_counter() - start
    artifacts = [_write_series(run_dir / primary, trajectory)]
    artifacts.extend(_write_snapshots(run_dir, trajectory))
    stop_path = _write_json(
        run_dir / "stop.json",
        {
            "kind": stop.kind,
            "t_stop": stop.t_stop,
            "detail": stop.detail,
            "rows": len(trajectory.rows),
            "wall_time_s": wall,
        },
    )
    artifacts.append(stop_path)
    print(
        f"evolve: {stop.kind} at t = {stop.t_stop:g} "
        f"after {len(trajectory.rows)} samples ({wall:.1f} s)"
    )
    return artifacts, EX_OK


# ---------------------------------------------------------------------------
# thresholds


def _collect_thresholds(args) -> dict:
    n, box = _resolve_grid(args)
    return {
        "out": args.out,
        "preset": args.preset,
        "n": n,
        "box": box,
        "state": args.state,
        "init": _load_init_spec(args.init) if args.init else None,
        "ground": args.ground,
        "sign": args.sign,
        "seed": args.seed,
    }


def _run_thresholds(config, run_dir, primary):
    report, _ = _resolve_ground(config["ground"])
    if report is None:
        raise ValueError(
            "thresholds needs the ground-state report JSON, not a bare field"
        )
    if config["state"]:
        u0 = load_field(config["state"])
    else:
        u0 = _initial_state(config)
    tr = threshold_report(u0, report, config["sign"])
    payload = {
        "sign": config["sign"],
        "me_ratio": tr.me_ratio,
        "mass_grad_ratio": tr.mass_grad_ratio,
        "omega": tr.omega,
        "below_threshold": tr.below_threshold,
        "gn_defect": gagliardo_nirenberg_defect(u0, report.c_gn),
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    if run_dir is None:
        return [], EX_OK
    return [_write_json(run_dir / primary, payload)], EX_OK


# ---------------------------------------------------------------------------
# virial (post-hoc over stored snapshots)


def _collect_virial(args) -> dict:
    radii = [float(v) for v in args.radii.split(",") if v.strip()]
    if not radii:
        raise ValueError("--R needs at least one cutoff radius")
    return {
        "out": args.out or args.run,
        "run": args.run,
        "radii": radii,
        "sign": args.sign,
        "seed": args.seed,
    }


def _sign_from_run(run_dir: Path) -> str | None:
    for name in ("manifest.json", "evolve-manifest.json", "classify-manifest.json"):
        path = run_dir / name
        if not path.exists():
            continue
        try:
            manifest = _load_json(path)
        except ValueError:
            continue
        sign = manifest.get("config", {}).get("controls", {}).get("sign")
        if sign is not None:
            return sign
    return None


def _run_virial(config, run_dir, primary):
    source = Path(config["run"])
    snaps = sorted((source / "snapshots").glob("row_*.bin"))
    if not snaps:
        raise FileNotFoundError(f"no snapshots under {source / 'snapshots'}")
    sign = config["sign"]
    if sign is None:
        sign = _sign_from_run(source) or FOCUSING
        print(f"equation sign from the run manifest: {sign}")
    first = load_field(snaps[0])
    radial = {}
    component = {}
    for big_r in config["radii"]:
        radial[big_r] = make_radial_cutoff(first.grid, big_r)
        component[big_r] = make_component_cutoff(first.grid, big_r)
    header = [
        "t",
        "R",
        "z_r",
        "z_r_prime",
        "z_r_second",
        "a_r",
        "interior_virial",
        "bound_rhs",
        "com_x",
        "com_y",
        "com_z",
    ]
    rows = []
    for k, path in enumerate(snaps):
        sidecar = _load_json(path.with_suffix(".json"))
        if "t" not in sidecar:
            raise ValueError(f"snapshot sidecar {path.with_suffix('.json')} has no t")
        t = float(sidecar["t"])
        u = load_field(path)
        for big_r in config["radii"]:
            vs = virial_sample(t, u, radial[big_r], component[big_r], sign)
            rows.append(
                [
                    vs.t,
                    big_r,
                    vs.z_r,
                    vs.z_r_prime,
                    vs.z_r_second,
                    vs.a_r,
                    vs.interior_virial,
                    vs.com_prime_bound_rhs,
                    vs.com_truncated[0],
                    vs.com_truncated[1],
                    vs.com_truncated[2],
                ]
            )
        if k % 10 == 0:
            print(f"  snapshot {k + 1}/{len(snaps)} (t = {t:g})", flush=True)
    out_path = _write_csv(run_dir / primary, header, rows)
    print(f"wrote {out_path} ({len(rows)} rows)")
    return [out_path], EX_OK


# ---------------------------------------------------------------------------
# profiles


def _collect_profiles(args) -> dict:
    n, box = _resolve_grid(args)
    return {
        "out": args.out or "profiles-out",
        "preset": args.preset,
        "n": n,
        "box": box,
        "family": args.family,
        "max_profiles": args.max_profiles,
        "ground": args.ground,
        "time_window": args.time_window,
        "n_times": args.n_times,
        "stop_height": args.stop_height,
        "sign": args.sign,
        "seed": args.seed,
    }


def _residuals_as_dict(report) -> dict:
    return {
        "pythag": {f"{s:g}": v for s, v in report.pythag_residual.items()},
        "l4_residual": report.l4_residual,
        "energy_residual": report.energy_residual,
        "remainder_l3_linfty": report.remainder_l3_linfty,
    }


def _run_profiles(config, run_dir, primary):
    family_spec = _load_json(Path(config["family"]))
    member_specs = (
        family_spec.get("members") if isinstance(family_spec, dict) else family_spec
    )
    if not isinstance(member_specs, list) or not member_specs:
        raise ValueError(
            f"{config['family']} must hold a non-empty members list of "
            "initial-data specs"
        )
    grid = make_grid(config["n"], config["box"])
    _, field_path = _resolve_ground(config.get("ground"))
    ground = load_field(field_path) if field_path is not None else None
    members = [build_initial_data(spec, grid, ground) for spec in member_specs]
    family = make_family(members)
    params = SearchParams(
        time_window=config["time_window"],
        n_times=config["n_times"],
        stop_height=config["stop_height"],
    )
    print(
        f"extracting up to {config['max_profiles']} profiles from "
        f"{len(members)} members"
    )
    decomp, _last = profile_decompose(
        family, config["max_profiles"], params, config["sign"]
    )
    residuals = [
        member_residuals(family, decomp, n, params, config["sign"])
        for n in range(len(family))
    ]

    artifacts = []
    profile_entries = []
    shift_rows = []
    for j, term in enumerate(decomp.profiles, start=1):
        field_path = save_field(
            run_dir / f"psi_{j}.bin", term.psi, extra={"profile": j}
        )
        artifacts.extend([field_path, field_path.with_suffix(".json")])
        profile_entries.append(
            {
                "index": j,
                "field": field_path.name,
                "height": term.height,
                "filtered_heights": [float(v) for v in term.filtered_heights],
            }
        )
        for n in range(len(family)):
            shift_rows.append(
                [
                    j,
                    n,
                    float(term.time_shifts[n]),
                    float(term.space_shifts[n][0]),
                    float(term.space_shifts[n][1]),
                    float(term.space_shifts[n][2]),
                    float(term.filtered_heights[n]),
                ]
            )
    shifts_path = _write_csv(
        run_dir / "shifts.csv",
        ["profile", "member", "time_shift", "shift_x", "shift_y", "shift_z",
         "filtered_height"],
        shift_rows,
    )
    residuals_path = _write_csv(
        run_dir / "residuals.csv",
        [
            "member",
            "pythag_s0",
            "pythag_s05",
            "pythag_s1",
            "l4_residual",
            "energy_residual",
            "remainder_l3_linfty",
        ],
        [
            [
                n,
                rep.pythag_residual[0.0],
                rep.pythag_residual[0.5],
                rep.pythag_residual[1.0],
                rep.l4_residual,
                rep.energy_residual,
                rep.remainder_l3_linfty,
            ]
            for n, rep in enumerate(residuals)
        ],
    )
    payload = {
        "m": decomp.m,
        "heights": [float(v) for v in decomp.heights],
        "pairwise_separation": [
            decomp.pairwise_separation(n) for n in range(len(family))
        ],
        "profiles": profile_entries,
        "member_residuals": [_residuals_as_dict(rep) for rep in residuals],
    }
    report_path = _write_json(run_dir / primary, payload)
    artifacts.extend([shifts_path, residuals_path, report_path])
    print(f"extracted {decomp.m} profiles; wrote {report_path}")
    return artifacts, EX_OK


# ---------------------------------------------------------------------------
# classify


def _collect_classify(args) -> dict:
    n, box = _resolve_grid(args)
    controls = _controls_from_args(args, extra_keys=_CLASSIFY_KEYS)
    stepper, extras = _split_classify_controls(controls)
    merged = dict(stepper)
    merged["scatter_tol"] = extras.get("scatter_tol", args.scatter_tol)
    merged["decay_factor"] = extras.get("decay_factor", args.decay_factor)
    merged["trailing_window"] = extras.get("trailing_window", args.trailing_window)
    merged["negative_time"] = extras.get("negative_time", args.negative_time)
    return {
        "out": args.out or "classify-out",
        "preset": args.preset,
        "n": n,
        "box": box,
        "init": _load_init_spec(args.init),
        "ground": args.ground,
        "controls": merged,
        "seed": args.seed,
    }


def _run_classify(config, run_dir, primary):
    report, _ = _resolve_ground(config["ground"])
    if report is None:
        raise ValueError("classify needs the ground-state report JSON (--ground)")
    stepper, extras = _split_classify_controls(config["controls"])
    controls = ClassifyControls(evolve=_build_controls(stepper), **extras)
    u0 = _initial_state(config)
    print(
        f"classify: {config['n']}^3, L = {config['box']:g}, "
        f"{controls.evolve.sign}, t_final = {controls.evolve.t_final:g}"
    )
    start = time.perf_counter()
    evidence = classify(u0, report, controls)
    wall = time.perf_counter() - start
    code = {SCATTER: EX_OK, BLOW_UP: EX_BLOW_UP, UNDECIDED: EX_UNDECIDED}[
        evidence.verdict
    ]

    payload = evidence_as_dict(evidence)
    payload["exit_code"] = code
    payload["wall_time_s"] = wall
    verdict_path = _write_json(run_dir / primary, payload)

    labels = sorted(evidence.strichartz.running)
    times = list(evidence.strichartz.times)
    wave_at = {}
    for i, increment in enumerate(evidence.wave_cauchy):
        wave_at[evidence.wave_cauchy_times[i + 1]] = increment
    rows = []
    for i, t in enumerate(times):
        rows.append(
            [t, evidence.l4_series[i]]
            + [evidence.strichartz.running[label][i] for label in labels]
            + [wave_at.get(t, math.nan)]
        )
    series_path = _write_csv(
        run_dir / "evidence.csv",
        ["t", "l4"] + [f"running_{label}" for label in labels] + ["wave_cauchy"],
        rows,
    )
    print(
        f"verdict {evidence.verdict} (exit {code}): {evidence.confidence_note} "
        f"({wall:.1f} s)"
    )
    return [verdict_path, series_path], code


# ---------------------------------------------------------------------------
# plot


def _collect_plot(args) -> dict:
    return {
        "out": args.out or args.run,
        "run": args.run,
        "kind": args.kind,
        "seed": args.seed,
    }


def _box_from_run(run_dir: Path) -> float:
    for name in ("manifest.json", "evolve-manifest.json", "classify-manifest.json"):
        path = run_dir / name
        if path.exists():
            box = _load_json(path).get("config", {}).get("box")
            if box is not None:
                return float(box)
    raise ValueError(
        f"cannot determine the box length: no manifest with a box entry in {run_dir}"
    )


def _save_svg(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    return path


def _new_figure():
    from matplotlib.figure import Figure

    fig = Figure(figsize=(6.4, 4.0))
    ax = fig.subplots()
    ax.grid(True, alpha=0.3)
    return fig, ax


def _plot_conserved(run: Path, out: Path) -> Path:
    data = _read_csv(run / "trajectory.csv")
    t = data["t"]
    tiny = 1e-18
    mass0 = data["mass"][0]
    energy0 = data["energy"][0]
    p_scale = math.sqrt(2.0 * mass0 * data["kinetic"][0]) or 1.0
    mass_drift = np.abs(data["mass"] - mass0) / max(abs(mass0), tiny)
    energy_drift = np.abs(data["energy"] - energy0) / max(abs(energy0), tiny)
    momentum_drift = np.max(
        np.abs(
            np.stack([data[f"momentum_{a}"] - data[f"momentum_{a}"][0] for a in "xyz"])
        ),
        axis=0,
    ) / p_scale
    fig, ax = _new_figure()
    ax.semilogy(t, np.maximum(mass_drift, tiny), label="mass")
    ax.semilogy(t, np.maximum(energy_drift, tiny), label="energy")
    ax.semilogy(t, np.maximum(momentum_drift, tiny), label="momentum")
    ax.set_xlabel("t")
    ax.set_ylabel("relative drift")
    ax.set_title("conserved-quantity drift")
    ax.legend()
    return _save_svg(fig, out / "conserved_drift.svg")


def _plot_l4(run: Path, out: Path) -> Path:
    data = _read_csv(run / "trajectory.csv")
    fig, ax = _new_figure()
    ax.plot(data["t"], data["l4"])
    ax.set_xlabel("t")
    ax.set_ylabel("L4 norm")
    ax.set_title("quartic-norm history")
    return _save_svg(fig, out / "l4_norm.svg")


def _plot_center(run: Path, out: Path) -> Path:
    data = _read_csv(run / "trajectory.csv")
    t = data["t"]
    box = _box_from_run(run)
    x = np.stack([data[f"center_{a}"] for a in "xyz"], axis=1)
    for i in range(1, len(x)):
        jump = x[i] - x[i - 1]
        x[i] -= box * np.round(jump / box)
    late = t >= 1.0 - 1e-12
    if not np.any(late):
        raise ValueError("center plot needs samples at t >= 1")
    fig, ax = _new_figure()
    for j, axis_name in enumerate("xyz"):
        ax.plot(t[late], x[late, j] / t[late], label=f"x_{axis_name}(t)/t")
    ax.plot(
        t[late],
        np.linalg.norm(x[late], axis=1) / t[late],
        "k--",
        label="|x(t)|/t",
    )
    ax.set_xlabel("t")
    ax.set_ylabel("center speed")
    ax.set_title("soliton-core path")
    ax.legend()
    return _save_svg(fig, out / "center_speed.svg")


def _plot_virial(run: Path, out: Path) -> Path:
    data = _read_csv(run / "virial.csv")
    fig, ax = _new_figure()
    for big_r in sorted(set(data["R"])):
        mask = data["R"] == big_r
        t = data["t"][mask]
        ax.plot(t, data["z_r_second"][mask], label=f"z_R'' (R = {big_r:g})")
        ax.plot(
            t,
            data["interior_virial"][mask],
            linestyle="--",
            label=f"interior (R = {big_r:g})",
        )
        ax.plot(t, data["a_r"][mask], linestyle=":", label=f"A_R (R = {big_r:g})")
    ax.set_xlabel("t")
    ax.set_ylabel("virial scalars")
    ax.set_title("localized virial decomposition")
    ax.legend(fontsize=7)
    return _save_svg(fig, out / "virial_decomposition.svg")


def _plot_pythag(run: Path, out: Path) -> Path:
    data = _read_csv(run / "residuals.csv")
    fig, ax = _new_figure()
    member = data["member"]
    for column, label in [
        ("pythag_s0", "L2 expansion"),
        ("pythag_s1", "gradient expansion"),
        ("l4_residual", "quartic expansion"),
        ("energy_residual", "energy expansion"),
    ]:
        ax.semilogy(member, np.maximum(data[column], 1e-18), marker="o", label=label)
    ax.set_xlabel("family member (growing separation)")
    ax.set_ylabel("absolute residual")
    ax.set_title("expansion residuals along the family")
    ax.set_xticks(member)
    ax.legend()
    return _save_svg(fig, out / "pythag_residuals.svg")


_PLOTS = {
    "conserved": _plot_conserved,
    "l4": _plot_l4,
    "center": _plot_center,
    "virial": _plot_virial,
    "pythag": _plot_pythag,
}


def _run_plot(config, run_dir, _primary):
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.fonttype"] = "path"
    matplotlib.rcParams["svg.hashsalt"] = "nlslab"
    source = Path(config["run"])
    if not source.exists():
        raise FileNotFoundError(f"run directory {source} does not exist")
    path = _PLOTS[config["kind"]](source, run_dir)
    print(f"wrote {path}")
    return [path], EX_OK


# ---------------------------------------------------------------------------
# parser and dispatch


@dataclass(frozen=True)
class _Command:
    name: str
    default_primary: str | None
    collect: Callable
    run: Callable
    allow_stdout: bool = False


_COMMANDS = {
    "ground-state": _Command(
        "ground-state", "report.json", _collect_ground_state, _run_ground_state
    ),
    "evolve": _Command("evolve", "trajectory.csv", _collect_evolve, _run_evolve),
    "thresholds": _Command(
        "thresholds",
        "thresholds.json",
        _collect_thresholds,
        _run_thresholds,
        allow_stdout=True,
    ),
    "virial": _Command("virial", "virial.csv", _collect_virial, _run_virial),
    "profiles": _Command(
        "profiles", "profiles.json", _collect_profiles, _run_profiles
    ),
    "classify": _Command(
        "classify", "verdict.json", _collect_classify, _run_classify
    ),
    "plot": _Command("plot", None, _collect_plot, _run_plot),
}


class _Parser(argparse.ArgumentParser):
    """argparse with the usage exit code fixed at 64."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EX_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(parser):
    parser.add_argument("--out", help="run directory (or primary .json/.csv path)")
    parser.add_argument(
        "--config",
        help="JSON overlay applied over the flags; accepts a manifest, and a "
        'top-level {"runs": [...]} list fans out across workers',
    )
    parser.add_argument(
        "--seed",
        type=int,
        default=0,
        help="recorded in the manifest for provenance; the pipelines "
        "themselves are deterministic",
    )


def _add_grid(parser):
    parser.add_argument(
        "--preset",
        choices=sorted(_PRESETS),
        default="desk",
        help="resolution preset: desk = 64^3 / L = 32, "
        "reference = 128^3 / L = 48",
    )
    parser.add_argument("--n", type=int, help="grid points per axis (overrides preset)")
    parser.add_argument(
        "--box", type=float, help="box side length (overrides preset)"
    )


def _add_stepper(parser):
    parser.add_argument("--dt-initial", type=float, default=1e-3)
    parser.add_argument("--dt-min", type=float, default=1e-6)
    parser.add_argument("--t-final", type=float, help="integration horizon")
    parser.add_argument("--sample-every", type=float, default=0.1)
    parser.add_argument(
        "--sign", choices=(FOCUSING, DEFOCUSING), default=FOCUSING
    )
    parser.add_argument("--energy-step-tol", type=float, default=1e-7)
    parser.add_argument("--gradient-cap", type=float, default=None)
    parser.add_argument("--boundary-mass-cap", type=float, default=None)
    parser.add_argument(
        "--controls",
        help="JSON file with stepper fields, overriding the flags above",
    )


def _parser() -> _Parser:
    parser = _Parser(
        prog="nlslab",
        description="experiment runner for the periodic cubic Schrodinger toolbox",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("ground-state", help="certify and sample the soliton profile")
    _add_common(p)
    _add_grid(p)
    p.add_argument("--tol", type=float, default=1e-8, help="shooting tolerance")
    p.add_argument("--fixed-point-tol", type=float, default=1e-12)

    p = sub.add_parser("evolve", help="integrate an initial state")
    _add_common(p)
    _add_grid(p)
    _add_stepper(p)
    p.add_argument("--init", required=True, help="initial-data spec (inline or path)")
    p.add_argument("--ground", help="ground-state report.json or field .bin")
    p.add_argument(
        "--snapshot-stride",
        type=int,
        default=0,
        help="store every k-th sample as a field file (0: final state only)",
    )
    p.add_argument(
        "--radii",
        type=float,
        nargs="*",
        default=[],
        help="cutoff radii whose virial scalars join the trajectory columns",
    )

    p = sub.add_parser("thresholds", help="position relative to the thresholds")
    _add_common(p)
    _add_grid(p)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--state", help="field .bin to examine")
    group.add_argument("--init", help="initial-data spec (inline or path)")
    p.add_argument("--ground", required=True, help="ground-state report.json")
    p.add_argument("--sign", choices=(FOCUSING, DEFOCUSING), default=FOCUSING)

    p = sub.add_parser("virial", help="virial scalars over stored snapshots")
    _add_common(p)
    p.add_argument("--run", required=True, help="run directory with snapshots/")
    p.add_argument(
        "--R",
        dest="radii",
        default="8,12,16",
        help="comma-separated cutoff radii",
    )
    p.add_argument(
        "--sign",
        choices=(FOCUSING, DEFOCUSING),
        default=None,
        help="equation sign (default: from the run manifest)",
    )

    p = sub.add_parser("profiles", help="profile extraction on a family")
    _add_common(p)
    _add_grid(p)
    p.add_argument(
        "--family",
        required=True,
        help='JSON file: {"members": [init spec, ...]} with growing separations',
    )
    p.add_argument("--max-profiles", type=int, default=3)
    p.add_argument("--ground", help="ground-state report.json or field .bin")
    p.add_argument("--time-window", type=float, default=2.0)
    p.add_argument("--n-times", type=int, default=33)
    p.add_argument("--stop-height", type=float, default=None)
    p.add_argument("--sign", choices=(FOCUSING, DEFOCUSING), default=FOCUSING)

    p = sub.add_parser("classify", help="long-time verdict with evidence")
    _add_common(p)
    _add_grid(p)
    _add_stepper(p)
    p.add_argument("--init", required=True, help="initial-data spec (inline or path)")
    p.add_argument("--ground", required=True, help="ground-state report.json")
    p.add_argument("--scatter-tol", type=float, default=1e-3)
    p.add_argument("--decay-factor", type=float, default=5.0)
    p.add_argument("--trailing-window", type=int, default=6)
    p.add_argument("--negative-time", action="store_true")

    p = sub.add_parser("plot", help="static SVG figures from a run directory")
    _add_common(p)
    p.add_argument("--run", required=True, help="run directory with the CSV series")
    p.add_argument("--kind", required=True, choices=sorted(_PLOTS))

    return parser


def _code_for(exc: BaseException) -> int:
    if isinstance(exc, FileNotFoundError):
        return EX_NOINPUT
    if isinstance(exc, (ValueError, KeyError, CertificationError)):
        return EX_DATA
    return EX_INTERNAL


def _batch_entry(job) -> int:
    command, config = job
    try:
        return _execute(command, config)
    except Exception as exc:
        print(f"[{config.get('out')}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return _code_for(exc)


def _fan_out(command: str, base: dict, runs: list, out_base: str) -> int:
    if not isinstance(runs, list) or not runs:
        raise ValueError('"runs" must be a non-empty list of config overlays')
    jobs = []
    for i, entry in enumerate(runs):
        if not isinstance(entry, dict):
            raise ValueError(f"runs[{i}] is not a config object")
        config = _overlay_config(command, dict(base), entry)
        config["out"] = str(Path(out_base) / f"run_{i:04d}")
        jobs.append((command, config))
    workers = min(_worker_cap(), len(jobs))
    print(f"fanning out {len(jobs)} {command} runs across {workers} workers")
    if workers == 1:
        codes = [_batch_entry(job) for job in jobs]
    else:
        with multiprocessing.Pool(workers) as pool:
            codes = pool.map(_batch_entry, jobs)
    for (cmd, config), code in zip(jobs, codes):
        print(f"  {config['out']}: exit {code}")
    return max(codes)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    command = args.command
    try:
        config = _COMMANDS[command].collect(args)
        if args.config:
            overlay = _load_json(Path(args.config))
            if "runs" in overlay:
                base_overlay = {
                    k: v for k, v in overlay.items() if k != "runs"
                }
                base = (
                    _overlay_config(command, config, base_overlay)
                    if base_overlay
                    else config
                )
                out_base = base.get("out") or f"{command}-out"
                return _fan_out(command, base, overlay["runs"], out_base)
            config = _overlay_config(command, config, overlay)
        return _execute(command, config)
    except FileNotFoundError as exc:
        print(f"nlslab {command}: missing input: {exc}", file=sys.stderr)
        return EX_NOINPUT
    except (ValueError, KeyError, CertificationError) as exc:
        print(f"nlslab {command}: {exc}", file=sys.stderr)
        return EX_DATA
    except RuntimeError as exc:
        print(f"nlslab {command}: internal failure: {exc}", file=sys.stderr)
        return EX_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
