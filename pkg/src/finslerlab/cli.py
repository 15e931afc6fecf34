"""Scenario loading and the ``finslerlab`` command line.

Exit codes: 0 when every verdict passes, 1 when a verdict fails, 2 for input
or configuration errors.
"""
from __future__ import annotations

import argparse
import copy
import json
import math
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .expr import DomainError, ExpressionError, parse
from .flow import (
    IntegrationError, drift_report, integrate_geodesic, involutivity_probe, along_flow_check, write_csv,
)
from .geometry import (
    FinslerModel, ModelError, PhasePoint, SlitGuardError, canonical_residuals, local_geometry,
    sample_points, validate_model,
)
from .hierarchy import charpoly_check, hierarchy_batch, shifted_family_check
from .killing import TensorK, condition_residual, is_quadratic, nijenhuis_residual, riemannian_sckt_residual
from .presets import PRESET_STARTS, preset_config, preset_names

COMMANDS = ("check", "hierarchy", "flow", "bracket", "all")
SHIFTS = (-1.0, 0.5, 2.0)
ALONG_FLOW_TOL = 1e-6
B_NEXT_TOL = 1e-12

DEFAULTS = {
    "samples": {"count": 64, "seed": 0, "q_box": [-1.0, 1.0], "u_box": [-1.0, 1.0], "u_min_norm": 0.1},
    "flow": {"t_end": 10.0, "step": 1e-3, "method": "rk4", "adaptive_tol": 1e-10},
    "tolerances": {"condition": 1e-8, "drift": 1e-9, "identity": 1e-10},
    "output": {"report": None, "csv": None},
}
_TOP_KEYS = {"dimension", "energy", "k_tensor", *DEFAULTS}


class ConfigError(ValueError):
    pass


@dataclass
class Scenario:
    dimension: int
    energy: str
    k_tensor: list
    samples: dict
    flow: dict
    tolerances: dict
    output: dict
    name: str = "config"
    start: tuple | None = field(default=None, repr=False)

    def model(self) -> FinslerModel:
        return FinslerModel(self.energy, self.dimension)

    def tensor(self) -> TensorK:
        return TensorK(self.k_tensor)

    def sample_array(self) -> np.ndarray:
        s = self.samples
        return sample_points(self.dimension, s["count"], s["seed"], s["q_box"], s["u_box"], s["u_min_norm"])

    def header(self) -> dict:
        d = asdict(self)
        d.pop("start")
        return d


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _number(path: str, v, positive=False, integer=False):
    ok = isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)
    if integer:
        ok = ok and float(v).is_integer()
    if not ok or (positive and v <= 0):
        kind = "integer" if integer else "number"
        raise ConfigError(f"{path} must be a {'positive ' if positive else ''}{kind}")
    return int(v) if integer else float(v)


def _box(path: str, box, n: int, letter: str) -> list:
    if not isinstance(box, list) or not box:
        raise ConfigError(f"{path} must be [lo, hi] or a list of [lo, hi] pairs")
    pairs = [box] if not isinstance(box[0], list) else box
    out = []
    for i, pr in enumerate(pairs):
        if not (isinstance(pr, list) and len(pr) == 2):
            raise ConfigError(f"{path} entries must be [lo, hi]")
        lo, hi = (_number(path, v) for v in pr)
        if not lo < hi:
            raise ConfigError(f"degenerate interval {letter}{i + 1}")
        out.append([lo, hi])
    if len(out) == 1:
        out = out * n
    if len(out) != n:
        raise ConfigError(f"{path} has {len(out)} intervals for dimension {n}")
    return out


def _expr_error(field_name: str, exc: ExpressionError) -> ConfigError:
    return ConfigError(f"{field_name}: {exc}")


def build_scenario(raw: dict, name: str = "config", start=None) -> Scenario:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    unknown = sorted(set(raw) - _TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown field {unknown[0]}")
    for key in ("dimension", "energy", "k_tensor"):
        if key not in raw:
            raise ConfigError(f"missing field {key}")
    cfg = _merge(DEFAULTS, raw)
    for sect, defaults in DEFAULTS.items():
        if not isinstance(cfg[sect], dict):
            raise ConfigError(f"{sect} must be a mapping")
        extra = sorted(set(cfg[sect]) - set(defaults))
        if extra:
            raise ConfigError(f"unknown field {sect}.{extra[0]}")

    n = _number("dimension", cfg["dimension"], positive=True, integer=True)
    if n > 8:
        raise ConfigError("dimension must be at most 8")
    if not isinstance(cfg["energy"], str):
        raise ConfigError("energy must be a string")
    try:
        parse(cfg["energy"], n)
    except ExpressionError as exc:
        raise _expr_error("energy", exc) from None
    K = cfg["k_tensor"]
    if not (isinstance(K, list) and len(K) == n and all(isinstance(r, list) and len(r) == n for r in K)):
        raise ConfigError(f"k_tensor must be a {n}x{n} array of strings")
    for i, row in enumerate(K):
        for j, e in enumerate(row):
            if not isinstance(e, str):
                raise ConfigError(f"k_tensor[{i}][{j}] must be a string")
            try:
                parse(e, n)
            except ExpressionError as exc:
                raise _expr_error(f"k_tensor[{i}][{j}]", exc) from None

    s = cfg["samples"]
    s["count"] = _number("samples.count", s["count"], positive=True, integer=True)
    if s["seed"] is None:
        raise ConfigError("samples.seed is required")
    s["seed"] = _number("samples.seed", s["seed"], integer=True)
    s["q_box"] = _box("samples.q_box", s["q_box"], n, "q")
    s["u_box"] = _box("samples.u_box", s["u_box"], n, "u")
    s["u_min_norm"] = _number("samples.u_min_norm", s["u_min_norm"])
    f = cfg["flow"]
    f["t_end"] = _number("flow.t_end", f["t_end"], positive=True)
    f["step"] = _number("flow.step", f["step"], positive=True)
    f["adaptive_tol"] = _number("flow.adaptive_tol", f["adaptive_tol"], positive=True)
    if f["method"] not in ("rk4", "dopri"):
        raise ConfigError("flow.method must be 'rk4' or 'dopri'")
    for key in DEFAULTS["tolerances"]:
        cfg["tolerances"][key] = _number(f"tolerances.{key}", cfg["tolerances"][key], positive=True)
    for key in DEFAULTS["output"]:
        v = cfg["output"][key]
        if v is not None and not isinstance(v, str):
            raise ConfigError(f"output.{key} must be a path string")
    return Scenario(
        dimension=n, energy=cfg["energy"], k_tensor=K, samples=s, flow=f,
        tolerances=cfg["tolerances"], output=cfg["output"], name=name, start=start,
    )


def _read_json(path: str) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def load_config(path: str | None = None, preset: str | None = None, seed: int | None = None) -> Scenario:
    """Build a Scenario from a JSON file, a preset, or a preset overridden by a file."""
    if path is None and preset is None:
        raise ConfigError("a config path or a preset is required")
    raw: dict = {}
    start = None
    name = "config"
    if preset is not None:
        try:
            raw = preset_config(preset)
        except KeyError as exc:
            raise ConfigError(exc.args[0]) from None
        start = PRESET_STARTS.get(preset)
        name = preset
    if path is not None:
        raw = _merge(raw, _read_json(path))
    if seed is not None:
        raw = _merge(raw, {"samples": {"seed": seed}})
    return build_scenario(raw, name=name, start=start)


def _clean(obj):
    """JSON-ready copy: numpy scalars/arrays to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _verdict(ok: bool) -> str:
    return "pass" if ok else "fail"


def run_check(sc: Scenario, model, K, X) -> dict:
    tol = sc.tolerances["condition"]
    cond = condition_residual(model, K, X, tol)
    lg = local_geometry(model, X, order=3)
    canon = {k: float(v.max()) for k, v in canonical_residuals(lg).items()}
    report = {
        "condition": cond.to_dict(),
        "canonical": {"residuals": canon, "verdict": _verdict(max(canon.values()) <= tol)},
        "model": validate_model(model, X),
    }
    shifts = {}
    for s in SHIFTS:
        r = condition_residual(model, K.shifted(s), X, tol)
        da = float(np.abs(r.alpha_samples - cond.alpha_samples).max()
                   / max(1.0, float(np.abs(cond.alpha_samples).max())))
        shifts[repr(s)] = {"residual_max": r.residual_max, "alpha_change": da,
                           "verdict": _verdict(r.verdict and da <= tol)}
    report["shifted"] = shifts
    verdicts = [cond.verdict, max(canon.values()) <= tol] + [v["verdict"] == "pass" for v in shifts.values()]
    if not K.depends_on_u and is_quadratic(model, X):
        riem = riemannian_sckt_residual(model, K, X, tol)
        d = riem.to_dict()
        agree = riem.verdict == cond.verdict and riem.contraction_mismatch <= sc.tolerances["identity"]
        d["agrees_with_condition"] = agree
        report["riemannian"] = d
        report["nijenhuis"] = {"max_abs": nijenhuis_residual(K, X), "note": "informational"}
        verdicts.append(agree)
    report["verdict"] = _verdict(all(verdicts))
    return report


def run_hierarchy(sc: Scenario, model, K, X) -> dict:
    tol = sc.tolerances["identity"]
    hb = hierarchy_batch(model, K, X)
    res = {k: float(v.max()) for k, v in hb.residuals().items()}
    res["charpoly"] = max(charpoly_check(hb.K[i], hb.b[i]) for i in range(X.shape[0]))
    shift = shifted_family_check(model, K, PhasePoint.from_x(X[0]))
    res["shifted_family"] = float(shift["max_residual"])
    limits = {k: tol for k in res}
    limits["b_n_plus_1"] = B_NEXT_TOL
    limits["two_route"] = 1e-12
    limits["shifted_family"] = 1e-9
    checks = {k: {"max": res[k], "limit": limits[k], "verdict": _verdict(res[k] < limits[k])} for k in sorted(res)}
    return {
        "identities": checks,
        "samples": [hb.point(i).to_dict() for i in range(X.shape[0])],
        "verdict": _verdict(all(c["verdict"] == "pass" for c in checks.values())),
    }


def _start(sc: Scenario, X) -> PhasePoint:
    if sc.start is not None:
        return PhasePoint(np.array(sc.start[0], float), np.array(sc.start[1], float))
    return PhasePoint.from_x(X[0])


def run_flow(sc: Scenario, model, K, X) -> dict:
    f = sc.flow
    p0 = _start(sc, X)
    traj = integrate_geodesic(model, p0, f["t_end"], f["method"], step=f["step"], tol=f["adaptive_tol"])
    drift = drift_report(model, K, traj, sc.tolerances["drift"])
    report = {
        "start": {"q": p0.q, "u": p0.u},
        "integrator": {"method": traj.method, **traj.stats},
        "drift": drift.to_dict(),
    }
    verdicts = [drift.verdict]
    try:
        lem = along_flow_check(model, K, traj)
        lem["verdict"] = _verdict(max(lem["trace_power_max"], lem["quadratic_max"]) < ALONG_FLOW_TOL)
        verdicts.append(lem["verdict"] == "pass")
    except ValueError as exc:
        lem = {"skipped": str(exc)}
    report["along_flow"] = lem
    if sc.output.get("csv"):
        write_csv(sc.output["csv"], model, K, traj)
    report["verdict"] = _verdict(all(verdicts))
    return report


def run_bracket(sc: Scenario, model, K, X) -> dict:
    probe = involutivity_probe(model, K, X)
    tol = sc.tolerances["condition"]
    ok = max(probe["energy_brackets"]) < tol and probe["antisymmetry_max"] <= 1e-12
    probe["verdict"] = _verdict(ok)
    return probe


_RUNNERS = {"check": run_check, "hierarchy": run_hierarchy, "flow": run_flow, "bracket": run_bracket}


def run_command(sc: Scenario, command: str) -> tuple[dict, int]:
    """Return ``(report, exit code)``."""
    if command not in COMMANDS:
        return {"error": f"unknown command {command!r}"}, 2
    try:
        model, K = sc.model(), sc.tensor()
        X = sc.sample_array()
        names = list(_RUNNERS) if command == "all" else [command]
        report = {"scenario": sc.header(), "command": command, "backend": _kernels.get_backend().name}
        for name in names:
            report[name] = _RUNNERS[name](sc, model, K, X)
    except (ModelError, ExpressionError, DomainError, SlitGuardError, IntegrationError, ConfigError) as exc:
        return {"error": f"{type(exc).__name__}: {exc}"}, 2
    ok = all(report[name]["verdict"] == "pass" for name in names)
    report["verdict"] = _verdict(ok)
    return _clean(report), 0 if ok else 1


def dumps(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="finslerlab", description="Killing-tensor hierarchy checks for Finsler geodesic flows")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON scenario file")
    ap.add_argument("--preset", help=f"built-in scenario: {', '.join(preset_names())}")
    ap.add_argument("--seed", type=int, help="override samples.seed")
    ap.add_argument("--out", help="write the JSON report here instead of stdout")
    args = ap.parse_args(argv)
    try:
        sc = load_config(args.config, args.preset, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    report, code = run_command(sc, args.command)
    if code == 2:
        print(report["error"], file=sys.stderr)
        return 2
    text = dumps(report)
    out = args.out or sc.output.get("report")
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
