"""Scenario configuration: INI files, density expressions and geometry construction."""

from __future__ import annotations

import ast
import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, ExpressionError, NonPositiveDensityError
from .geometry import (
    ChartGeometry,
    make_clifford_torus,
    make_sphere,
    make_two_spheres,
    pad_ambient,
    read_geometry,
)

# ---------------------------------------------------------------------------
# Density expressions
# ---------------------------------------------------------------------------

_FUNCS = {"exp": np.exp, "log": np.log, "cos": np.cos, "sin": np.sin}
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide}


class DensityExpression:
    """Arithmetic over ambient coordinates x1..xN and chart angles theta, phi.

    Only ``+ - * /``, unary minus, numeric literals and ``exp log cos sin`` are
    accepted; anything else is an :class:`ExpressionError`.
    """

    def __init__(self, text: str):
        self.text = text.strip()
        try:
            tree = ast.parse(self.text, mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse density expression {text!r}: {exc.msg}") from None
        self._check(tree.body)
        self._tree = tree.body

    def _check(self, node):
        if isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise ExpressionError(f"operator {type(node.op).__name__} is not allowed")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                raise ExpressionError(f"unary operator {type(node.op).__name__} is not allowed")
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
                raise ExpressionError("only exp, log, cos and sin may be called")
            if len(node.args) != 1 or node.keywords:
                raise ExpressionError(f"{node.func.id} takes exactly one argument")
            self._check(node.args[0])
        elif isinstance(node, ast.Name):
            if not (node.id in ("theta", "phi") or (node.id.startswith("x") and node.id[1:].isdigit())):
                raise ExpressionError(f"unknown variable {node.id!r}")
        elif isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
                raise ExpressionError(f"literal {node.value!r} is not a number")
        else:
            raise ExpressionError(f"{type(node).__name__} is not allowed in density expressions")

    def variables(self) -> set:
        return {n.id for n in ast.walk(self._tree) if isinstance(n, ast.Name) and n.id not in _FUNCS}

    def evaluate(self, env: dict) -> np.ndarray:
        def ev(node):
            if isinstance(node, ast.BinOp):
                return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
            if isinstance(node, ast.UnaryOp):
                v = ev(node.operand)
                return -v if isinstance(node.op, ast.USub) else v
            if isinstance(node, ast.Call):
                return _FUNCS[node.func.id](ev(node.args[0]))
            if isinstance(node, ast.Name):
                if node.id not in env:
                    raise ExpressionError(f"variable {node.id!r} is not available on this geometry")
                return env[node.id]
            return float(node.value)

        with np.errstate(all="ignore"):
            return ev(self._tree)


def expression_env(geometry) -> dict:
    X = geometry.points
    env = {f"x{k + 1}": X[:, k] for k in range(X.shape[1])}
    if isinstance(geometry, ChartGeometry):
        P = geometry.params
        env["theta"] = P[:, 0]
        if geometry.n > 1:
            env["phi"] = P[:, 1]
    elif X.shape[1] >= 3:
        env["theta"] = np.arccos(np.clip(X[:, 2], -1.0, 1.0))
        env["phi"] = np.arctan2(X[:, 1], X[:, 0])
    return env


def evaluate_density(expr: str, geometry) -> np.ndarray:
    P = geometry.sample_count
    if expr.strip() == "constant":
        return np.ones(P)
    vals = np.asarray(DensityExpression(expr).evaluate(expression_env(geometry)), dtype=float)
    vals = np.broadcast_to(vals, (P,)).copy()
    if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
        raise NonPositiveDensityError(f"density {expr!r} is not strictly positive on every sample")
    return vals


def random_smooth_density(geometry, seed: int, amplitude: float = 0.3) -> str:
    """Expression for exp(amplitude * (random linear + quadratic form in the coordinates)).

    The exponent has sup norm at most ``amplitude * 2`` on the unit ball, so
    log f stays well inside the +-5 range.
    """
    rng = np.random.default_rng(seed)
    N = geometry.ambient_dim
    lin = rng.normal(size=N)
    lin /= np.linalg.norm(lin)
    Q = rng.normal(size=(N, N))
    Q = 0.5 * (Q + Q.T)
    Q /= np.linalg.norm(Q, 2)
    terms = [f"{lin[i]:+.6f}*x{i + 1}" for i in range(N)]
    for i in range(N):
        for j in range(i, N):
            c = Q[i, j] * (1.0 if i == j else 2.0)
            terms.append(f"{c:+.6f}*x{i + 1}*x{j + 1}")
    return f"exp({amplitude:g}*({' '.join(terms)}))"


# ---------------------------------------------------------------------------
# Scenario
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GeometrySpec:
    kind: str = "sphere"  # sphere | clifford | two-spheres | file
    n: int = 2
    m: int | None = None  # codimension; trailing zero coordinates are appended to reach it
    refinement: int = 4
    variant: str = "chart"  # sphere only: chart | mesh
    radius: float = 1.0
    path: str = ""


@dataclass(frozen=True)
class TransportSpec:
    enabled: bool = True
    r_ladder: tuple = (0.5, 2.0, 8.0)
    samples: int = 1000
    sigma: float = 0.3
    covering_r: float = 10.0
    covering_trials: int = 1000
    seed: int = 0


@dataclass(frozen=True)
class Scenario:
    name: str = "scenario"
    geometry: GeometrySpec = field(default_factory=GeometrySpec)
    density: str = "constant"
    theta: float = 1.0
    inequality: str = "main"  # main | pham | beckner
    lemma: bool = True
    transport: TransportSpec = field(default_factory=TransportSpec)
    tolerances: tuple = ()  # sorted (key, value) overrides

    def __post_init__(self):
        if not (0.0 < self.theta <= 1.0):
            raise ConfigError(f"theta must lie in (0, 1], got {self.theta}")
        if self.inequality not in ("main", "pham", "beckner"):
            raise ConfigError(f"unknown inequality selector {self.inequality!r}")
        lad = self.transport.r_ladder
        if any(r <= 0 for r in lad) or any(b <= a for a, b in zip(lad, lad[1:])):
            raise ConfigError("r ladder must be positive and strictly increasing")
        if not (0.0 <= self.transport.sigma < 1.0):
            raise ConfigError("sigma must lie in [0, 1)")
        if self.geometry.refinement < 0:
            raise ConfigError("refinement must be >= 0")
        if self.density.strip() != "constant":
            DensityExpression(self.density)

    def canonical(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def tolerance_overrides(self) -> dict:
        return dict(self.tolerances)

    def with_refinement(self, level: int) -> "Scenario":
        return replace(self, geometry=replace(self.geometry, refinement=int(level)))

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, transport=replace(self.transport, seed=int(seed)))


_SCHEMA = {
    "scenario": {"name": str},
    "geometry": {"kind": str, "n": int, "m": int, "refinement": int, "variant": str, "radius": float, "path": str},
    "density": {"expression": str},
    "inequality": {"selector": str, "theta": float},
    "lemma": {"enabled": bool},
    "transport": {
        "enabled": bool,
        "r_ladder": tuple,
        "samples": int,
        "sigma": float,
        "covering_r": float,
        "covering_trials": int,
        "seed": int,
    },
    "tolerances": None,  # any key from the inequality defaults, float-valued
}


def _convert(section: str, key: str, raw: str, kind):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError(raw)
            return low in ("true", "yes", "1", "on")
        if kind is tuple:
            return tuple(float(v) for v in raw.split(",") if v.strip())
        return kind(raw.strip())
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot read {raw!r} as {kind.__name__}") from None


def parse_scenario(text: str) -> Scenario:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    from .inequality import DEFAULT_TOLERANCES

    vals: dict = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        keys = _SCHEMA[section]
        for key, raw in cp.items(section):
            if keys is None:
                if key not in DEFAULT_TOLERANCES:
                    raise ConfigError(f"unknown tolerance {key!r}")
                vals.setdefault(section, {})[key] = _convert(section, key, raw, float)
                continue
            if key not in keys:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            vals.setdefault(section, {})[key] = _convert(section, key, raw, keys[key])
    g = vals.get("geometry", {})
    t = vals.get("transport", {})
    ineq = vals.get("inequality", {})
    return Scenario(
        name=vals.get("scenario", {}).get("name", "scenario"),
        geometry=GeometrySpec(**g),
        density=vals.get("density", {}).get("expression", "constant"),
        theta=ineq.get("theta", 1.0),
        inequality=ineq.get("selector", "main"),
        lemma=vals.get("lemma", {}).get("enabled", True),
        transport=TransportSpec(**t),
        tolerances=tuple(sorted(vals.get("tolerances", {}).items())),
    )


def load_scenario(path) -> Scenario:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {str(p)!r} not found")
    return parse_scenario(p.read_text())


def build_geometry(geom: GeometrySpec):
    L = geom.refinement
    if geom.kind == "sphere":
        geo = make_sphere(geom.n, L, variant=geom.variant, radius=geom.radius)
    elif geom.kind == "clifford":
        geo = make_clifford_torus(8 * 2**L, geom.radius, L)
    elif geom.kind == "two-spheres":
        geo = make_two_spheres(L)
    elif geom.kind == "file":
        geo = read_geometry(geom.path)
    else:
        raise ConfigError(f"unknown geometry kind {geom.kind!r}")
    if geom.m is not None:
        extra = geom.m - geo.m
        if extra < 0:
            raise ConfigError(f"geometry {geom.kind!r} already has codimension {geo.m} > {geom.m}")
        geo = pad_ambient(geo, extra)
    return geo
