"""JSON experiment configuration: parsing, validation and the resolved form
embedded in every report."""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from typing import Any, Optional

from .coeffs import CoefficientError, ExprError, TailDescriptor, TimeCoefficient
from .companion import CompanionProblem, ExponentMatrix
from .pde import Constant, ConstantMinusBump, PDEConfig, RadialTable

DEFAULT_SEED = 20240601

DEFAULTS: dict = {
    "exponents": [[0, 2], [2, 0]],
    "h1": "1",
    "h2": "1",
    "k1": "1",
    "k2": "1",
    "y0": None,
    "profiles": {"kind": "bump", "M": 1.0, "A": 0.5, "sigma": 1.0},
    "grid": {"dim": 1, "N": 512, "L": "auto"},
    "coefficient_horizon": 100.0,
    "ode": {"horizon": 1e4, "rtol": 1e-10},
    "bounds": {"case": None, "audit": False},
    "pde": {"T_end": 2.0, "snapshot_times": [round(0.05 * n, 10) for n in range(1, 20)],
            "dt_max": 0.01, "U_max": 1e8, "max_steps": 1000000},
    "verify": {"lemma1_samples": 1000, "track_until": 0.8, "far_field_tol": 1e-3,
               "domination_tol": 1e-6, "picard_T_short": None, "picard_iterations": 20,
               "picard_N": 64, "picard_tol": 1e-5, "comparison_horizon": None},
    "seed": DEFAULT_SEED,
}


class ConfigError(ValueError):
    """All validation failures of one configuration, each with its field path."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass
class ExperimentConfig:
    exponents: ExponentMatrix
    h1: TimeCoefficient
    h2: TimeCoefficient
    k1: TimeCoefficient
    k2: TimeCoefficient
    y0: tuple
    profiles: tuple
    grid: dict
    ode: dict
    bounds: dict
    pde: dict
    verify: dict
    seed: int
    resolved: dict = field(repr=False, default_factory=dict)

    @property
    def companion(self) -> CompanionProblem:
        return CompanionProblem(self.exponents, self.h1, self.h2, *self.y0)

    def pde_config(self, **overrides) -> PDEConfig:
        g = {**self.grid, **{k: overrides.pop(k) for k in ("dim", "N", "L") if k in overrides}}
        p = {**self.pde, **overrides}
        return PDEConfig(self.exponents, self.h1, self.h2, self.k1, self.k2,
                         self.profiles[0], self.profiles[1], dim=g["dim"], N=g["N"], L=g["L"],
                         T_end=p["T_end"], snapshot_times=tuple(p["snapshot_times"]),
                         dt_max=p["dt_max"], U_max=p["U_max"], max_steps=p["max_steps"])


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _coefficient(raw, path: str, horizon: float, errors: list):
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        raw = str(raw)
    if isinstance(raw, str):
        raw = {"expr": raw}
    if not isinstance(raw, dict) or not isinstance(raw.get("expr"), str):
        errors.append(f"{path}: expected an expression string or {{expr, tail}}")
        return None, None
    try:
        tail = TailDescriptor.from_config(raw["tail"]) if "tail" in raw else None
    except (ValueError, KeyError, TypeError) as exc:
        errors.append(f"{path}.tail: {exc}")
        return None, None
    try:
        coef = TimeCoefficient.parse(raw["expr"], tail=tail, horizon=horizon)
    except ExprError as exc:
        errors.append(f"{path}: parse error: {exc}")
        return None, None
    except CoefficientError as exc:
        errors.append(f"{path}: {exc}")
        return None, None
    return coef, {"expr": raw["expr"], "tail": coef.tail.to_config()}


def _profile(raw, path: str, errors: list):
    if not isinstance(raw, dict):
        errors.append(f"{path}: expected an object")
        return None
    kind = raw.get("kind")
    try:
        if kind == "constant":
            return Constant(float(raw["M"]))
        if kind == "bump":
            return ConstantMinusBump(float(raw["M"]), float(raw["A"]), float(raw["sigma"]))
        if kind == "table":
            return RadialTable(tuple(map(float, raw["radii"])), tuple(map(float, raw["values"])),
                               float(raw["M"]))
    except KeyError as exc:
        errors.append(f"{path}: missing field {exc.args[0]!r}")
        return None
    except (TypeError, ValueError) as exc:
        errors.append(f"{path}: {exc}")
        return None
    errors.append(f"{path}.kind: expected constant, bump or table (got {kind!r})")
    return None


def _number(d: dict, key: str, path: str, errors: list, positive=True, integer=False, allow_none=False):
    v = d.get(key)
    if v is None and allow_none:
        return
    ok = isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)
    if ok and integer:
        ok = float(v).is_integer()
    if ok and positive:
        ok = v > 0
    if not ok:
        kind = "integer" if integer else "number"
        where = f"{path}.{key}" if path else key
        errors.append(f"{where}: expected a {'positive ' if positive else ''}{kind} (got {v!r})")


def parse_config(raw: Optional[dict], seed: Optional[int] = None) -> ExperimentConfig:
    """Validate ``raw`` merged over :data:`DEFAULTS`; raises :class:`ConfigError`."""
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(["<root>: expected a JSON object"])
    data = _merge(DEFAULTS, raw or {})
    unknown = sorted(set(data) - set(DEFAULTS))
    errors = [f"{k}: unknown field" for k in unknown]
    if seed is not None:
        data["seed"] = seed
    resolved: dict[str, Any] = {}

    exps = None
    try:
        exps = ExponentMatrix.from_rows(data["exponents"])
        resolved["exponents"] = exps.rows()
    except (TypeError, ValueError, IndexError) as exc:
        errors.append(f"exponents: {exc}")

    horizon = data["coefficient_horizon"]
    _number(data, "coefficient_horizon", "", errors)
    horizon = horizon if isinstance(horizon, (int, float)) and horizon > 0 else DEFAULTS["coefficient_horizon"]
    resolved["coefficient_horizon"] = horizon
    coefs = {}
    for name in ("h1", "h2", "k1", "k2"):
        coefs[name], resolved[name] = _coefficient(data[name], name, horizon, errors)

    raw_prof = data["profiles"]
    if isinstance(raw_prof, dict):
        raw_prof = [raw_prof, raw_prof]
    profiles = (None, None)
    if not isinstance(raw_prof, list) or len(raw_prof) != 2:
        errors.append("profiles: expected one profile object or a list of two")
    else:
        profiles = tuple(_profile(p, f"profiles[{n}]", errors) for n, p in enumerate(raw_prof))
        resolved["profiles"] = raw_prof

    y0 = data["y0"]
    if y0 is None:
        y0 = tuple(p.far_value for p in profiles) if all(profiles) else None
    elif (not isinstance(y0, list) or len(y0) != 2
          or not all(isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0 for v in y0)):
        errors.append(f"y0: expected two positive numbers (got {y0!r})")
        y0 = None
    else:
        y0 = tuple(float(v) for v in y0)
    resolved["y0"] = list(y0) if y0 else None

    grid = data["grid"]
    if grid.get("dim") not in (1, 2):
        errors.append(f"grid.dim: expected 1 or 2 (got {grid.get('dim')!r})")
    N = grid.get("N")
    if not (isinstance(N, int) and N >= 16 and N & (N - 1) == 0):
        errors.append(f"grid.N: expected a power of two >= 16 (got {N!r})")
    if grid.get("L") != "auto":
        _number(grid, "L", "grid", errors)

    _number(data["ode"], "horizon", "ode", errors)
    _number(data["ode"], "rtol", "ode", errors)
    if data["bounds"].get("case") not in (None, "a", "b", "c"):
        errors.append(f"bounds.case: expected null, 'a', 'b' or 'c' (got {data['bounds']['case']!r})")
    pde = data["pde"]
    for key in ("T_end", "dt_max", "U_max"):
        _number(pde, key, "pde", errors)
    _number(pde, "max_steps", "pde", errors, integer=True)
    times = pde.get("snapshot_times")
    if not isinstance(times, list) or not all(isinstance(t, (int, float)) and t >= 0 for t in times):
        errors.append("pde.snapshot_times: expected a list of nonnegative numbers")
    ver = data["verify"]
    for key in ("lemma1_samples", "picard_iterations", "picard_N"):
        _number(ver, key, "verify", errors, integer=True)
    for key in ("track_until", "far_field_tol", "domination_tol", "picard_tol"):
        _number(ver, key, "verify", errors)
    for key in ("picard_T_short", "comparison_horizon"):
        _number(ver, key, "verify", errors, allow_none=True)
    s = data["seed"]
    if not (isinstance(s, int) and not isinstance(s, bool) and 0 <= s < 2**64):
        errors.append(f"seed: expected an unsigned 64-bit integer (got {s!r})")

    if errors:
        raise ConfigError(errors)
    for key in ("grid", "ode", "bounds", "pde", "verify", "seed"):
        resolved[key] = data[key]
    return ExperimentConfig(exps, coefs["h1"], coefs["h2"], coefs["k1"], coefs["k2"], y0, profiles,
                            dict(grid), dict(data["ode"]), dict(data["bounds"]), dict(pde),
                            dict(ver), int(s), resolved)


def load_config(path: Optional[str], seed: Optional[int] = None) -> ExperimentConfig:
    if path is None:
        return parse_config(None, seed)
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError([f"<file>: {exc}"]) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError([f"<file>: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"]) from exc
    return parse_config(raw, seed)
