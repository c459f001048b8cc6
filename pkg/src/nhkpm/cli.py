"""Reproducible experiment runner.

Configs are strict JSON (unknown keys are errors, silent typos in physics
parameters being the worst failure mode).  Every run writes the data CSVs
plus a manifest holding the fully resolved config, scaling, ground-state
diagnostics and wall time; re-running a manifest reproduces the CSVs
bitwise.  Exit codes: 0 success, 2 config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .eigensolver import (ConvergenceError, PairingError, dense_eig,
                          smallest_real_eigpair, DEFAULT_SEED)
from .kpm import BlowupError, KpmPlan, make_plan
from .maps import linear_axis
from .operators import (ScalingRecord, SpinChainParams, build_fermion_chain,
                        build_hatano_nelson, build_spin_chain, spin_operator)
from .maps import ProjectedProfile
from .spectral import (CoverageError, correlator_maps,
                       hermitian_structure_factor, projected_structure_factor,
                       total_correlator, total_dos)

MODELS = ("spin_chain", "fermion_chain", "hatano_nelson")
TASKS = ("correlator", "projected", "dos", "hermitian_sf", "validate", "bench")


class ConfigError(ValueError):
    """Invalid run configuration; message carries the offending key path."""


def _fail(path: str, msg: str) -> ConfigError:
    return ConfigError(f"config error at '{path}': {msg}")


def _require_keys(obj: dict, path: str, required: dict, optional: dict) -> None:
    if not isinstance(obj, dict):
        raise _fail(path, f"expected an object, got {type(obj).__name__}")
    for key in obj:
        if key not in required and key not in optional:
            raise _fail(f"{path}.{key}" if path else key, "unknown key")
    for key in required:
        if key not in obj:
            raise _fail(f"{path}.{key}" if path else key, "missing required key")


def _check_number(value, path: str, integer: bool = False, minimum=None):
    ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    if integer:
        ok = isinstance(value, int) and not isinstance(value, bool)
    if not ok:
        raise _fail(path, f"expected {'an integer' if integer else 'a number'}, got {value!r}")
    if minimum is not None and value < minimum:
        raise _fail(path, f"must be >= {minimum}, got {value}")
    return value


def _check_axis(spec, path: str):
    if (not isinstance(spec, list) or len(spec) != 3):
        raise _fail(path, "expected [min, max, count]")
    lo = _check_number(spec[0], f"{path}[0]")
    hi = _check_number(spec[1], f"{path}[1]")
    n = _check_number(spec[2], f"{path}[2]", integer=True, minimum=1)
    if n > 1 and hi <= lo:
        raise _fail(path, "max must exceed min")
    return linear_axis(lo, hi, n)


def validate_config(cfg: dict) -> dict:
    """Validate and normalize; returns the resolved config (defaults made
    explicit) that the manifest records."""
    _require_keys(cfg, "", {"model": None, "task": None}, {
        "plan": None, "sites": None, "dos": None, "eig": None, "bench": None,
        "seed": None, "threads": None, "output": None, "im_extent": None,
    })
    task = cfg["task"]
    if task not in TASKS:
        raise _fail("task", f"expected one of {TASKS}, got {task!r}")

    model = dict(cfg["model"])
    kind = model.get("kind")
    if kind not in MODELS:
        raise _fail("model.kind", f"expected one of {MODELS}, got {kind!r}")
    if kind == "hatano_nelson":
        _require_keys(model, "model", {"kind": None, "L": None, "t": None, "gamma": None}, {"bc": None})
        _check_number(model["L"], "model.L", integer=True, minimum=2)
        _check_number(model["t"], "model.t")
        _check_number(model["gamma"], "model.gamma")
        model.setdefault("bc", "open")
    else:
        _require_keys(model, "model", {"kind": None, "L": None},
                      {"J": None, "gamma": None, "Jz": None, "hz": None, "bc": None})
        _check_number(model["L"], "model.L", integer=True, minimum=1)
        for key, default in (("J", 1.0), ("gamma", 0.0), ("Jz", 0.0), ("hz", 0.0)):
            model.setdefault(key, default)
            _check_number(model[key], f"model.{key}")
        model.setdefault("bc", "open")
    if model["bc"] not in ("open", "periodic"):
        raise _fail("model.bc", f"expected 'open' or 'periodic', got {model['bc']!r}")

    resolved = {"model": model, "task": task}

    if task == "bench":
        bench = dict(cfg.get("bench") or {})
        _require_keys(bench, "bench", {"L_values": None}, {
            "omega": None, "site": None, "order_per_site": None, "repeats": None})
        if not isinstance(bench["L_values"], list) or not bench["L_values"]:
            raise _fail("bench.L_values", "expected a non-empty list of site counts")
        for i, L in enumerate(bench["L_values"]):
            _check_number(L, f"bench.L_values[{i}]", integer=True, minimum=2)
            if L > 12:
                raise _fail(f"bench.L_values[{i}]", "bench is limited to L <= 12 (dense backend)")
        omega = bench.setdefault("omega", [0.0, 0.23])
        if not (isinstance(omega, list) and len(omega) == 2):
            raise _fail("bench.omega", "expected [re, im]")
        bench.setdefault("site", 1)
        _check_number(bench["site"], "bench.site", integer=True, minimum=1)
        bench.setdefault("order_per_site", 12.5)
        _check_number(bench["order_per_site"], "bench.order_per_site", minimum=0.5)
        bench.setdefault("repeats", 3)
        _check_number(bench["repeats"], "bench.repeats", integer=True, minimum=1)
        resolved["bench"] = bench
    else:
        plan = dict(cfg.get("plan") or {})
        _require_keys(plan, "plan", {"order": None, "grid": None}, {"delta": None})
        _check_number(plan["order"], "plan.order", integer=True, minimum=1)
        delta = plan.setdefault("delta", "auto")
        if delta != "auto":
            _check_number(delta, "plan.delta")
            if delta <= 0:
                raise _fail("plan.delta", "must be positive")
        grid = plan["grid"]
        _require_keys(grid, "plan.grid", {"re": None, "im": None}, {})
        _check_axis(grid["re"], "plan.grid.re")
        _check_axis(grid["im"], "plan.grid.im")
        resolved["plan"] = plan

    sites = cfg.get("sites")
    if sites is not None:
        if kind == "hatano_nelson":
            raise _fail("sites", "sites apply to spin models only")
        if not isinstance(sites, list) or not sites:
            raise _fail("sites", "expected a non-empty list of site indices")
        for i, l in enumerate(sites):
            _check_number(l, f"sites[{i}]", integer=True, minimum=1)
            if l > model["L"]:
                raise _fail(f"sites[{i}]", f"site {l} out of range 1..{model['L']}")
        resolved["sites"] = sites
    elif kind != "hatano_nelson":
        resolved["sites"] = list(range(1, model["L"] + 1))

    dos = dict(cfg.get("dos") or {})
    _require_keys(dos, "dos", {}, {"mode": None, "vectors": None})
    dos.setdefault("mode", "exact_trace")
    if dos["mode"] not in ("exact_trace", "stochastic"):
        raise _fail("dos.mode", f"expected 'exact_trace' or 'stochastic', got {dos['mode']!r}")
    dos.setdefault("vectors", 16)
    _check_number(dos["vectors"], "dos.vectors", integer=True, minimum=1)
    if task == "dos":
        resolved["dos"] = dos

    eig = dict(cfg.get("eig") or {})
    _require_keys(eig, "eig", {}, {"k": None, "tol": None, "max_restarts": None, "subspace": None})
    eig.setdefault("k", 4)
    _check_number(eig["k"], "eig.k", integer=True, minimum=4)
    eig.setdefault("tol", 1e-9)
    _check_number(eig["tol"], "eig.tol")
    eig.setdefault("max_restarts", 200)
    _check_number(eig["max_restarts"], "eig.max_restarts", integer=True, minimum=1)
    eig.setdefault("subspace", 30)
    _check_number(eig["subspace"], "eig.subspace", integer=True, minimum=6)
    resolved["eig"] = eig

    resolved["seed"] = cfg.get("seed", DEFAULT_SEED)
    _check_number(resolved["seed"], "seed", integer=True)
    if "threads" in cfg:
        _check_number(cfg["threads"], "threads", integer=True, minimum=1)
        resolved["threads"] = cfg["threads"]
    resolved["output"] = cfg.get("output", "out")
    if not isinstance(resolved["output"], str):
        raise _fail("output", "expected a string path")
    if "im_extent" in cfg and cfg["im_extent"] is not None:
        _check_number(cfg["im_extent"], "im_extent", minimum=0)
        resolved["im_extent"] = cfg["im_extent"]
    return resolved


def build_model(model: dict):
    if model["kind"] == "hatano_nelson":
        return build_hatano_nelson(model["L"], model["t"], model["gamma"], model["bc"])
    params = SpinChainParams(L=model["L"], J=model["J"], gamma=model["gamma"],
                             Jz=model["Jz"], hz=model["hz"], bc=model["bc"])
    if model["kind"] == "spin_chain":
        return build_spin_chain(params)
    return build_fermion_chain(params)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_map_csv(path: Path, spectral_map) -> None:
    lines = ["re_omega,im_omega,re_value,im_value"]
    re_ax = spectral_map.re_omega_axis
    im_ax = spectral_map.im_omega_axis
    vals = spectral_map.values
    for i in range(len(re_ax)):
        for j in range(len(im_ax)):
            v = vals[i, j]
            lines.append(f"{_fmt(re_ax[i])},{_fmt(im_ax[j])},{_fmt(v.real)},{_fmt(v.imag)}")
    path.write_text("\n".join(lines) + "\n")


def write_profile_csv(path: Path, profile) -> None:
    lines = ["E,site,value"]
    for i, E in enumerate(profile.E_axis):
        for k, site in enumerate(profile.site_axis):
            lines.append(f"{_fmt(E)},{int(site)},{_fmt(profile.values[i, k])}")
    path.write_text("\n".join(lines) + "\n")


def _grid_axes(plan_cfg: dict):
    grid = plan_cfg["grid"]
    return _check_axis(grid["re"], "plan.grid.re"), _check_axis(grid["im"], "plan.grid.im")


def _corner_radius(re_ax, im_ax) -> float:
    return max(abs(complex(r, i)) for r in (re_ax[0], re_ax[-1]) for i in (im_ax[0], im_ax[-1]))


def _resolve_plan(plan_cfg: dict, H, shift: complex, re_ax, im_ax) -> KpmPlan:
    delta = plan_cfg["delta"]
    if delta == "auto":
        return make_plan(H, order=plan_cfg["order"], shift=shift,
                         omega_max=_corner_radius(re_ax, im_ax))
    return KpmPlan(order=plan_cfg["order"],
                   scaling=ScalingRecord(delta=float(delta), shift=complex(shift)))


def _ground_state(H, eig_cfg: dict, seed: int):
    return smallest_real_eigpair(H, k=eig_cfg["k"], tol=eig_cfg["tol"],
                                 max_restarts=eig_cfg["max_restarts"],
                                 subspace=eig_cfg["subspace"], seed=seed)


def _weighted_im_extent(H, gs, sites, weight_floor: float = 1e-4) -> float:
    """Imaginary extent of the excitations actually reached from the ground
    state (states carrying at least weight_floor of the total summed channel
    weight), from the dense oracle."""
    decomp = dense_eig(H)
    L = int(round(np.log2(H.shape[0])))
    weights = np.zeros(len(decomp.values))
    for l in sites:
        for kind in ("plus", "minus"):
            op = spin_operator(l, kind, L)
            a = (op.conjugate().T @ gs.left).conj() @ decomp.rights
            b = decomp.lefts.conj().T @ (op @ gs.right)
            weights += np.abs(a * b)
    total = weights.sum()
    keep = weights > weight_floor * total
    if not np.any(keep):
        return 0.0
    return float(np.abs((decomp.values - gs.value).imag[keep]).max())


def execute(resolved: dict, out_dir: Path, threads: int) -> dict:
    """Run the resolved config; returns the manifest dictionary."""
    task = resolved["task"]
    manifest = {
        "library_version": __version__,
        "resolved_config": resolved,
        "status": "ok",
        "outputs": [],
        "diagnostics": {},
    }
    t_start = time.perf_counter()

    if task == "bench":
        manifest["diagnostics"]["bench"] = _run_bench(resolved)
        manifest["wall_time_s"] = time.perf_counter() - t_start
        out_dir.mkdir(parents=True, exist_ok=True)
        bench_path = out_dir / "bench.json"
        bench_path.write_text(json.dumps(manifest["diagnostics"]["bench"], indent=2) + "\n")
        manifest["outputs"].append(bench_path.name)
        return manifest

    H = build_model(resolved["model"])
    re_ax, im_ax = _grid_axes(resolved["plan"])

    gs = None
    if task in ("correlator", "projected", "hermitian_sf", "validate"):
        gs = _ground_state(H, resolved["eig"], resolved["seed"])
        manifest["ground_state"] = {
            "energy": [gs.value.real, gs.value.imag],
            "d_right": gs.d_right,
            "d_left": gs.d_left,
        }

    artifacts: list[tuple[str, object, str]] = []  # (filename, payload, writer kind)

    if task == "validate":
        diag = {"krylov_energy": [gs.value.real, gs.value.imag]}
        if H.shape[0] <= 4096:
            decomp = dense_eig(H)
            dense_gs = decomp.values[0]
            diag["dense_energy"] = [dense_gs.real, dense_gs.imag]
            diag["energy_agreement"] = abs(gs.value - dense_gs)
        diag["biorthonormality_error"] = abs(np.vdot(gs.left, gs.right) - 1.0)
        manifest["diagnostics"]["validate"] = diag
        plan = _resolve_plan(resolved["plan"], H, gs.value, re_ax, im_ax)
        manifest["scaling"] = {"delta": plan.scaling.delta,
                               "shift": [plan.scaling.shift.real, plan.scaling.shift.imag]}
    elif task == "dos":
        plan = _resolve_plan(resolved["plan"], H, 0.0, re_ax, im_ax)
        manifest["scaling"] = {"delta": plan.scaling.delta,
                               "shift": [plan.scaling.shift.real, plan.scaling.shift.imag]}
        dos_cfg = resolved["dos"]
        dos_map = total_dos(H, re_ax, im_ax, plan, mode=dos_cfg["mode"],
                            n_vectors=dos_cfg["vectors"], seed=resolved["seed"],
                            workers=threads)
        for key in ("variance_mean", "variance_max", "resolution"):
            if key in dos_map.metadata:
                manifest["diagnostics"][key] = dos_map.metadata[key]
        artifacts.append(("dos.csv", dos_map, "map"))
    elif task == "hermitian_sf":
        plan = _resolve_plan(resolved["plan"], H, gs.value, re_ax, im_ax)
        manifest["scaling"] = {"delta": plan.scaling.delta,
                               "shift": [plan.scaling.shift.real, plan.scaling.shift.imag]}
        sites = resolved["sites"]
        values = np.stack([hermitian_structure_factor(H, gs, l, re_ax, plan)
                           for l in sites], axis=1)
        profile = ProjectedProfile(E_axis=re_ax, site_axis=np.asarray(sites, int),
                                   values=np.maximum(values, 0.0))
        artifacts.append(("hermitian_sf.csv", profile, "profile"))
    else:  # correlator / projected
        plan = _resolve_plan(resolved["plan"], H, gs.value, re_ax, im_ax)
        manifest["scaling"] = {"delta": plan.scaling.delta,
                               "shift": [plan.scaling.shift.real, plan.scaling.shift.imag]}
        sites = resolved["sites"]
        maps = correlator_maps(H, gs, sites, re_ax, im_ax, plan, workers=threads)
        total = total_correlator(maps)
        if task == "correlator":
            for l, m in zip(sites, maps):
                artifacts.append((f"correlator_site_{l:02d}.csv", m, "map"))
            artifacts.append(("correlator_total.csv", total, "map"))
        else:
            if "im_extent" in resolved:
                extent = resolved["im_extent"]
            elif H.shape[0] <= 4096:
                extent = _weighted_im_extent(H, gs, sites)
                manifest["diagnostics"]["im_extent_from_ed"] = extent
            else:
                extent = None
            profile = projected_structure_factor(maps, im_extent=extent)
            artifacts.append(("projected.csv", profile, "profile"))
            artifacts.append(("correlator_total.csv", total, "map"))

    manifest["wall_time_s"] = time.perf_counter() - t_start

    # all writes happen only after the computation is complete
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, payload, kind in artifacts:
        path = out_dir / name
        if kind == "map":
            write_map_csv(path, payload)
        else:
            write_profile_csv(path, payload)
        manifest["outputs"].append(name)
    return manifest


def _run_bench(resolved: dict) -> dict:
    """Wall time of a single complex-energy evaluation versus chain length,
    with the expansion order scaled proportionally to L."""
    from .kpm import nhkpm_point

    bench = resolved["bench"]
    omega = complex(bench["omega"][0], bench["omega"][1])
    site = bench["site"]
    entries = []
    for L in bench["L_values"]:
        model = dict(resolved["model"], L=L)
        H = build_model(model)
        gs = _ground_state(H, resolved["eig"], resolved["seed"])
        order = max(1, int(round(bench["order_per_site"] * L)))
        plan = make_plan(H, order=order, shift=gs.value, omega_max=abs(omega) + 1.0)
        l = min(site, L)
        op = spin_operator(l, "plus", L)
        left, right = op @ gs.left, op @ gs.right
        best = np.inf
        for _ in range(bench["repeats"]):
            t0 = time.perf_counter()
            nhkpm_point(H, left, right, omega + gs.value, plan)
            best = min(best, time.perf_counter() - t0)
        entries.append({"L": L, "order": order, "delta": plan.scaling.delta,
                        "seconds": best})
    result = {"points": entries, "omega": bench["omega"], "site": site}
    if len(entries) > 1:
        logL = np.log([e["L"] for e in entries])
        logt = np.log([e["seconds"] for e in entries])
        result["loglog_slope"] = float(np.polyfit(logL, logt, 1)[0])
    return result


def apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"config error at '--override {item}': expected key=value")
        key, _, raw = item.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(f"config error at '{key}': no such key to override")
            node = node[part]
        if not isinstance(node, dict):
            raise ConfigError(f"config error at '{key}': no such key to override")
        node[parts[-1]] = value
    return cfg


def _load_config(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"config error: cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"config error: {path} line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if isinstance(data, dict) and "resolved_config" in data:
        data = data["resolved_config"]  # manifest round trip
    if not isinstance(data, dict):
        raise ConfigError("config error: top level must be an object")
    return data


def _resolve_threads(args, resolved: dict) -> int:
    if args.threads is not None:
        return args.threads
    if "threads" in resolved:
        return resolved["threads"]
    env = os.environ.get("NHKPM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def _run_command(args) -> int:
    try:
        cfg = _load_config(args.config)
        cfg = apply_overrides(cfg, args.override or [])
        resolved = validate_config(cfg)
        if args.task_filter and resolved["task"] != args.task_filter:
            raise ConfigError(
                f"config error at 'task': this subcommand runs task={args.task_filter!r}, "
                f"config has {resolved['task']!r}")
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2

    out_dir = Path(args.out) if args.out else Path(resolved["output"])
    threads = _resolve_threads(args, resolved)
    try:
        manifest = execute(resolved, out_dir, threads)
    except CoverageError as exc:
        print(f"config error at 'plan.grid.im': {exc}", file=sys.stderr)
        return 2
    except (BlowupError, ConvergenceError, PairingError) as exc:
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest = {
            "library_version": __version__,
            "resolved_config": resolved,
            "status": "error",
            "error": {"type": type(exc).__name__, "message": str(exc)},
        }
        (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {', '.join(manifest['outputs'] + ['manifest.json'])} to {out_dir}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="nhkpm",
        description="Complex-energy spectral functions of non-Hermitian "
                    "lattice models via the Hermitrized kernel polynomial method.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a config (correlator, projected, dos, "
                                     "hermitian_sf, validate)")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (default: config 'output' field)")
    run.add_argument("--threads", type=int, help="worker threads for grid evaluation")
    run.add_argument("--override", action="append", metavar="KEY=VALUE",
                     help="override a config entry (dotted path, JSON value)")
    run.set_defaults(task_filter=None)

    bench = sub.add_parser("bench", help="time single-point evaluations vs chain length")
    bench.add_argument("config")
    bench.add_argument("--out", help="output directory")
    bench.add_argument("--threads", type=int)
    bench.add_argument("--override", action="append", metavar="KEY=VALUE")
    bench.set_defaults(task_filter="bench")

    args = parser.parse_args(argv)
    return _run_command(args)


if __name__ == "__main__":
    sys.exit(main())
