"""Scenario files: loading, validation, writing and assembly.

A scenario is a TOML document with five tables::

    [geometry]  tag = "EuclideanProduct" | "Helicoidal" | "ExponentialWarp" | "WarpedProduct"
                lam, r_min (built-in parameters); gamma, sigma (expressions, WarpedProduct)
    [domain]    lower, upper, resolution (one entry per axis)
    [problem]   u0, Hcal, phi (expressions; phi may use nu1, nu2), C
    [run]       scheme, dt, t_end, steady_tol, method, tol, max_iter, speed, weight
    [output]    directory, snapshot_every

Dotted keys (``domain.resolution = [65]``) are equivalent to tables.
"""

from __future__ import annotations

import copy
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
import sympy

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .ambient import AmbientGeometry, WarpedProduct, builtin_geometry
from .errors import ConfigError, KillingFlowError
from .expressions import X1, X2, Expression
from .flow import FlowConfig, boundary_field, check_contact_data
from .grid import Chart

MIN_NODES = 8
PRESETS = ("grim_reaper", "helicoid", "orthogonal_relax", "exp_warp_1d")

DEFAULTS = {
    "geometry": {"tag": "EuclideanProduct"},
    "domain": {},
    "problem": {"u0": "0", "Hcal": "0", "phi": "0", "C": 0.0},
    "run": {"scheme": "semi_implicit", "t_end": 1.0, "steady_tol": 1e-8, "method": "newton",
            "tol": 1e-9, "max_iter": 50, "speed": "free", "weight": "killing"},
    "output": {"directory": "out", "snapshot_every": 0},
}

ALLOWED = {
    "geometry": {"tag", "lam", "r_min", "gamma", "sigma"},
    "domain": {"lower", "upper", "resolution"},
    "problem": {"u0", "Hcal", "phi", "C"},
    "run": {"scheme", "dt", "t_end", "steady_tol", "method", "tol", "max_iter", "speed",
            "weight", "max_steps"},
    "output": {"directory", "snapshot_every"},
}


@dataclass
class ScenarioConfig:
    geometry: dict = field(default_factory=dict)
    domain: dict = field(default_factory=dict)
    problem: dict = field(default_factory=dict)
    run: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    name: str = ""

    def to_dict(self) -> dict:
        out = {k: copy.deepcopy(getattr(self, k)) for k in ALLOWED}
        if self.name:
            out["name"] = self.name
        return out

    @property
    def dim(self) -> int:
        return len(self.domain["lower"])


# ---------------------------------------------------------------------------
# loading and validation


def resolve_path(path_or_preset) -> Path:
    """A filesystem path, or the name of a shipped preset."""
    p = Path(path_or_preset)
    if p.exists():
        return p
    name = str(path_or_preset)
    if name.endswith(".toml"):
        name = name[:-5]
    if name in PRESETS:
        return Path(str(resources.files("killingflow") / "presets" / f"{name}.toml"))
    raise ConfigError(f"config file not found: {path_or_preset} "
                      f"(presets: {', '.join(PRESETS)})")


def parse_config(text: str, source: str = "<string>") -> ScenarioConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return from_dict(data, source)


def load_config(path) -> ScenarioConfig:
    """Read and fully validate a scenario (every violation is reported at once)."""
    p = resolve_path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {p}: {exc}") from None
    return parse_config(text, str(p))


def from_dict(data: dict, source: str = "<dict>") -> ScenarioConfig:
    problems = []
    name = data.get("name", "")
    if not isinstance(name, str):
        problems.append("name: must be a string")
        name = ""
    for key in data:
        if key not in ALLOWED and key != "name":
            problems.append(f"{key}: unknown section")
    sections = {}
    for sec, allowed in ALLOWED.items():
        raw = data.get(sec, {})
        if not isinstance(raw, dict):
            problems.append(f"{sec}: must be a table")
            raw = {}
        for key in raw:
            if key not in allowed:
                problems.append(f"{sec}.{key}: unknown key")
        merged = dict(DEFAULTS[sec])
        merged.update({k: v for k, v in raw.items() if k in allowed})
        sections[sec] = merged
    cfg = ScenarioConfig(name=name, **sections)
    problems += _validate(cfg)
    if problems:
        raise ConfigError(f"invalid configuration {source}", problems)
    return cfg


def _number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and np.isfinite(v)


def _validate(cfg: ScenarioConfig) -> list:
    problems = []
    dom = cfg.domain
    dim = None
    for key in ("lower", "upper", "resolution"):
        if key not in dom:
            problems.append(f"domain.{key}: required")
    if not problems:
        lower, upper, res = dom["lower"], dom["upper"], dom["resolution"]
        if isinstance(res, int) and not isinstance(res, bool) and isinstance(lower, list):
            res = dom["resolution"] = [res] * len(lower)
        ok = True
        for key, val in (("lower", lower), ("upper", upper), ("resolution", res)):
            if not isinstance(val, list) or len(val) not in (1, 2):
                problems.append(f"domain.{key}: must be a list with 1 or 2 entries")
                ok = False
        if ok:
            if not len(lower) == len(upper) == len(res):
                problems.append("domain: lower, upper and resolution must have equal lengths")
            else:
                dim = len(lower)
                for k in range(dim):
                    if not (_number(lower[k]) and _number(upper[k])):
                        problems.append(f"domain.lower/upper[{k}]: must be finite numbers")
                    elif not upper[k] > lower[k]:
                        problems.append(f"domain[{k}]: empty interval [{lower[k]}, {upper[k]}]")
                    if not isinstance(res[k], int) or isinstance(res[k], bool):
                        problems.append(f"domain.resolution[{k}]: must be an integer")
                    elif res[k] < MIN_NODES:
                        problems.append(f"domain.resolution[{k}]: need at least {MIN_NODES} "
                                        f"nodes, got {res[k]}")
    geo = cfg.geometry
    tag = geo.get("tag")
    if tag not in ("EuclideanProduct", "Helicoidal", "ExponentialWarp", "WarpedProduct"):
        problems.append(f"geometry.tag: unknown geometry {tag!r}")
    if tag == "Helicoidal" and dim not in (None, 2):
        problems.append("geometry.tag: Helicoidal needs a 2D domain")
    if tag == "ExponentialWarp" and dim not in (None, 1):
        problems.append("geometry.tag: ExponentialWarp needs a 1D domain")
    if tag == "WarpedProduct" and "gamma" not in geo:
        problems.append("geometry.gamma: required for WarpedProduct")
    for key in ("lam", "r_min"):
        if key in geo and not _number(geo[key]):
            problems.append(f"geometry.{key}: must be a finite number")
    if "r_min" in geo and _number(geo["r_min"]) and not geo["r_min"] > 0:
        problems.append("geometry.r_min: must be positive")
    d = dim or 2
    for key in ("gamma",):
        if key in geo:
            problems += _check_expr(f"geometry.{key}", geo[key], d, False)
    if "sigma" in geo:
        sig = geo["sigma"]
        if (not isinstance(sig, list) or len(sig) != d
                or any(not isinstance(row, list) or len(row) != d for row in sig)):
            problems.append(f"geometry.sigma: must be a {d}x{d} list of expressions")
        else:
            for i, row in enumerate(sig):
                for j, entry in enumerate(row):
                    problems += _check_expr(f"geometry.sigma[{i}][{j}]", entry, d, False)
    pr = cfg.problem
    for key in ("u0", "Hcal"):
        problems += _check_expr(f"problem.{key}", pr[key], d, False)
    problems += _check_expr("problem.phi", pr["phi"], d, True)
    if not _number(pr["C"]):
        problems.append("problem.C: must be a finite number")
    run = cfg.run
    if run["scheme"] not in ("explicit", "semi_implicit"):
        problems.append(f"run.scheme: must be 'explicit' or 'semi_implicit', got {run['scheme']!r}")
    if "dt" in run and not (_number(run["dt"]) and run["dt"] > 0):
        problems.append("run.dt: must be a positive number")
    if not (_number(run["t_end"]) and run["t_end"] >= 0):
        problems.append("run.t_end: must be a non-negative number")
    for key in ("steady_tol", "tol"):
        if not (_number(run[key]) and run[key] > 0):
            problems.append(f"run.{key}: must be a positive number")
    if run["method"] not in ("newton", "pseudo_time"):
        problems.append(f"run.method: must be 'newton' or 'pseudo_time', got {run['method']!r}")
    if run["speed"] not in ("free", "fixed"):
        problems.append(f"run.speed: must be 'free' or 'fixed', got {run['speed']!r}")
    if run["weight"] not in ("killing", "printed"):
        problems.append(f"run.weight: must be 'killing' or 'printed', got {run['weight']!r}")
    for key in ("max_iter", "max_steps"):
        if key in run and not (isinstance(run[key], int) and run[key] > 0):
            problems.append(f"run.{key}: must be a positive integer")
    out = cfg.output
    if not isinstance(out["directory"], str):
        problems.append("output.directory: must be a string")
    if not (isinstance(out["snapshot_every"], int) and out["snapshot_every"] >= 0):
        problems.append("output.snapshot_every: must be a non-negative integer")
    if not problems:
        problems += _check_evaluation(cfg)
    return problems


def _check_expr(path, value, dim, allow_normal):
    try:
        Expression(value, dim, allow_normal)
    except ConfigError as exc:
        return [f"{path}: {exc}"]
    return []


def _check_evaluation(cfg: ScenarioConfig) -> list:
    """Build the scenario and evaluate every expression on the grid."""
    try:
        sc = build(cfg)
    except ConfigError as exc:
        return [str(exc)] + list(exc.violations)
    except KillingFlowError as exc:
        return [f"geometry: {exc}"]
    problems = []
    for name, arr in (("problem.u0", sc.u0), ("problem.Hcal", sc.Hcal)):
        if not np.all(np.isfinite(arr)):
            problems.append(f"{name}: not finite on every grid node")
    try:
        check_contact_data(sc.phi)
    except ConfigError as exc:
        problems.append(f"problem.phi: {exc}")
    return problems


# ---------------------------------------------------------------------------
# writing


def write_config(cfg: ScenarioConfig, path=None) -> str:
    """Serialize to TOML; ``load_config(write_config(c, p))`` reproduces ``c``."""
    text = tomli_w.dumps(cfg.to_dict())
    if path is not None:
        Path(path).write_text(text, encoding="utf-8", newline="\n")
    return text


def apply_overrides(cfg: ScenarioConfig, resolution: Optional[int] = None,
                    dt: Optional[float] = None) -> ScenarioConfig:
    """Command-line flags take precedence over file values; the result is revalidated."""
    data = cfg.to_dict()
    if resolution is not None:
        data["domain"]["resolution"] = [int(resolution)] * len(data["domain"]["lower"])
    if dt is not None:
        data["run"]["dt"] = float(dt)
    return from_dict(data, "<overrides>")


# ---------------------------------------------------------------------------
# assembly


@dataclass
class Scenario:
    """Numerical objects assembled from a config."""

    config: ScenarioConfig
    geometry: AmbientGeometry
    chart: Chart
    u0: np.ndarray
    Hcal: np.ndarray
    phi: dict
    u0_expr: Expression

    @property
    def phi0(self) -> float:
        return check_contact_data(self.phi)

    def flow_config(self) -> FlowConfig:
        run = self.config.run
        return FlowConfig(scheme=run["scheme"], dt=run.get("dt"), t_end=float(run["t_end"]),
                          steady_tol=float(run["steady_tol"]), Hcal=self.Hcal, phi=self.phi,
                          snapshot_every=int(self.config.output["snapshot_every"]),
                          max_steps=run.get("max_steps"))


def expression_geometry(dim: int, gamma_text, sigma_text=None) -> WarpedProduct:
    """WarpedProduct from expressions, with exact sigma^-1, Christoffels and grad gamma."""
    xs = (X1, X2)[:dim]
    g = Expression(gamma_text, dim).sym
    if sigma_text is None:
        S = sympy.eye(dim)
    else:
        S = sympy.Matrix([[Expression(e, dim).sym for e in row] for row in sigma_text])
    Si = sympy.simplify(S.inv())
    Gam = [[[sympy.simplify(sum(Si[k, l] * (sympy.diff(S[j, l], xs[i]) + sympy.diff(S[i, l], xs[j])
                                            - sympy.diff(S[i, j], xs[l]))
                                for l in range(dim)) / 2)
             for j in range(dim)] for i in range(dim)] for k in range(dim)]
    dg = [sympy.diff(g, x) for x in xs]

    def tensor_fn(entries, tshape):
        fs = [sympy.lambdify(xs, e, modules="numpy") for e in entries]

        def call(x):
            x = np.asarray(x, dtype=float)
            args = [x[..., k] for k in range(dim)]
            vals = [np.broadcast_to(np.asarray(f(*args), dtype=float), x.shape[:-1]) for f in fs]
            return np.stack(vals, axis=-1).reshape(x.shape[:-1] + tshape)
        return call

    gamma_f = tensor_fn([g], ())
    sigma_f = tensor_fn(list(S), (dim, dim))
    sigma_inv_f = tensor_fn(list(Si), (dim, dim))
    grad_f = tensor_fn(dg, (dim,))
    chris_f = tensor_fn([Gam[k][i][j] for k in range(dim) for i in range(dim)
                         for j in range(dim)], (dim, dim, dim))
    return WarpedProduct(dim, sigma_f, gamma_f, grad_gamma=grad_f, christoffel=chris_f,
                         sigma_inv=sigma_inv_f, name="WarpedProduct")


def build_geometry(cfg: ScenarioConfig) -> AmbientGeometry:
    geo = cfg.geometry
    tag = geo["tag"]
    if tag == "EuclideanProduct":
        return builtin_geometry(tag, dim=cfg.dim)
    if tag == "Helicoidal":
        return builtin_geometry(tag, **({"r_min": geo["r_min"]} if "r_min" in geo else {}))
    if tag == "ExponentialWarp":
        return builtin_geometry(tag, **({"lam": geo["lam"]} if "lam" in geo else {}))
    return expression_geometry(cfg.dim, geo["gamma"], geo.get("sigma"))


def build(cfg: ScenarioConfig) -> Scenario:
    dom = cfg.domain
    chart = Chart(tuple(dom["lower"]), tuple(dom["upper"]), tuple(dom["resolution"]))
    geometry = build_geometry(cfg)
    geometry.on_chart(chart)  # domain and metric checks
    pr = cfg.problem
    u0e = Expression(pr["u0"], chart.dim)
    He = Expression(pr["Hcal"], chart.dim)
    phie = Expression(pr["phi"], chart.dim, allow_normal=True)
    phi = boundary_field(geometry, chart, lambda x, nu: phie(x, nu))
    return Scenario(cfg, geometry, chart, u0e(chart.points).ravel(), He(chart.points).ravel(),
                    phi, u0e)


def scenario_from(path_or_cfg, resolution=None, dt=None) -> Scenario:
    cfg = path_or_cfg if isinstance(path_or_cfg, ScenarioConfig) else load_config(path_or_cfg)
    if resolution is not None or dt is not None:
        cfg = apply_overrides(cfg, resolution, dt)
    return build(cfg)


__all__ = ["ScenarioConfig", "Scenario", "load_config", "parse_config", "from_dict",
           "write_config", "apply_overrides", "build", "build_geometry", "expression_geometry",
           "scenario_from", "resolve_path", "PRESETS"]
