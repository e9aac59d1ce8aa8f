"""Run configuration: TOML parsing, validation, and object building.

Any constraint violation is reported with the offending key before a
solve starts.  All defaults live in ``DEFAULTS``.
"""

import copy
from dataclasses import dataclass

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError, InvalidChartError
from .expr import compile_expression
from .geometry import DomainSpec, InterfaceChart, normal_lower_bound
from .discretization.meshing import build_mesh
from .eps_solver import ProblemCoefficients

DEFAULTS = {
    "seed": 0,
    "eps": 0.5,
    "chart": {
        "g_lo": 0.0,
        "g_hi": 1.0,
        "n_samples": 400,
        "zeta": {"kind": "analytic", "expr": "0.1*sin(2*pi*x)"},
    },
    "mesh": {"n_t": 24, "n_z": 10, "n_1": 8, "depth": 1.0},
    "coefficients": {"q": 1.0, "mu": 1.0, "alpha": 1.0, "beta": 1.0},
    "forcing": {"f2": ["1 + 0.3*sin(pi*x)", "0.4*cos(pi*x)"], "h1": "0.3*sin(pi*x)"},
    "sweep": {
        "eps_list": [1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125],
        "jobs": 1,
    },
    "tolerances": {"monotone_slack": 0.02, "bundle_ceiling": 50.0},
    "output": {"directory": "out"},
}


#: Subtrees replaced wholesale instead of key-merged (their shape is
#: polymorphic: an analytic chart has expr, a table chart has x/z).
_REPLACE_PATHS = {"chart.zeta"}


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(where, "unknown key")
        if where in _REPLACE_PATHS:
            if not isinstance(value, dict):
                raise ConfigError(where, f"expected a table, got {type(value).__name__}")
            out[key] = copy.deepcopy(value)
        elif isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(where, f"expected a table, got {type(value).__name__}")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


def _set_override(tree, dotted, text):
    keys = dotted.split(".")
    node = tree
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(dotted, "override path crosses a non-table value")
    try:
        value = tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        value = text  # bare strings are allowed without quotes
    node[keys[-1]] = value


@dataclass
class RunConfig:
    """Validated configuration; builds geometry/mesh/coefficient objects."""

    data: dict

    @property
    def seed(self):
        return self.data["seed"]

    @property
    def eps(self):
        return self.data["eps"]

    @property
    def out_dir(self):
        return self.data["output"]["directory"]

    @property
    def eps_list(self):
        return list(self.data["sweep"]["eps_list"])

    @property
    def jobs(self):
        return self.data["sweep"]["jobs"]

    @property
    def slack(self):
        return self.data["tolerances"]["monotone_slack"]

    @property
    def ceiling(self):
        return self.data["tolerances"]["bundle_ceiling"]

    def build_chart(self):
        c = self.data["chart"]
        zeta = c["zeta"]
        if zeta["kind"] == "analytic":
            return InterfaceChart.from_expression(
                zeta["expr"], c["g_lo"], c["g_hi"], n_samples=c["n_samples"]
            )
        return InterfaceChart.from_table(
            zeta["x"], zeta["z"], g_lo=c["g_lo"], g_hi=c["g_hi"], n_samples=c["n_samples"]
        )

    def build_spec(self, chart=None):
        chart = self.build_chart() if chart is None else chart
        return DomainSpec(
            chart=chart, omega1_depth=self.data["mesh"]["depth"], epsilon=self.eps
        )

    def build_mesh(self, spec=None):
        spec = self.build_spec() if spec is None else spec
        m = self.data["mesh"]
        return build_mesh(spec, m["n_t"], m["n_z"], m["n_1"])

    def build_coefficients(self, eps=None):
        c = self.data["coefficients"]
        f = self.data["forcing"]
        fx = compile_expression(f["f2"][0], ("x", "z"), key="forcing.f2[0]")
        fz = compile_expression(f["f2"][1], ("x", "z"), key="forcing.f2[1]")
        h1 = compile_expression(f["h1"], ("x", "z"), key="forcing.h1")

        def f2(x, z):
            return np.stack(
                [np.broadcast_to(fx(x, z), np.shape(x)), np.broadcast_to(fz(x, z), np.shape(x))],
                axis=-1,
            )

        def h1_fn(x, z):
            return np.broadcast_to(h1(x, z), np.shape(x))

        q = c["q"]
        if isinstance(q, list):
            q = np.asarray(q, dtype=float)
        return ProblemCoefficients.create(
            q=q,
            mu=c["mu"],
            alpha=c["alpha"],
            beta=c["beta"],
            f2=f2,
            h1=h1_fn,
            eps=self.eps if eps is None else eps,
        )

    def echo(self):
        """The normalized config tree as embedded in reports.

        The output location is omitted: artifact content must not depend
        on where it is written.
        """
        tree = copy.deepcopy(self.data)
        tree.pop("output", None)
        return tree


def _validate(data):
    chart = data["chart"]
    if not isinstance(chart["g_lo"], (int, float)) or not isinstance(
        chart["g_hi"], (int, float)
    ):
        raise ConfigError("chart.g_lo", "interval endpoints must be numbers")
    if not chart["g_hi"] > chart["g_lo"]:
        raise ConfigError("chart.g_hi", "g_hi must exceed g_lo")
    zeta = chart["zeta"]
    kind = zeta.get("kind")
    if kind == "analytic":
        if "expr" not in zeta:
            raise ConfigError("chart.zeta.expr", "analytic chart needs an expr")
        compile_expression(zeta["expr"], ("x",), key="chart.zeta.expr")
    elif kind == "table":
        xs, zs = zeta.get("x"), zeta.get("z")
        if not isinstance(xs, list) or not isinstance(zs, list) or len(xs) != len(zs):
            raise ConfigError("chart.zeta.x", "table chart needs matching x and z lists")
        if len(xs) < 4:
            raise ConfigError("chart.zeta.x", "table chart needs at least 4 knots")
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ConfigError("chart.zeta.x", "knots must be strictly increasing")
    else:
        raise ConfigError("chart.zeta.kind", f"must be 'analytic' or 'table', got {kind!r}")

    mesh = data["mesh"]
    for key in ("n_t", "n_z", "n_1"):
        if not isinstance(mesh[key], int) or mesh[key] < 2:
            raise ConfigError(f"mesh.{key}", f"must be an integer >= 2, got {mesh[key]}")
    if mesh["depth"] <= 0:
        raise ConfigError("mesh.depth", "must be positive")

    co = data["coefficients"]
    q = co["q"]
    if isinstance(q, list):
        arr = np.asarray(q, dtype=float)
        if arr.shape != (2, 2):
            raise ConfigError("coefficients.q", "tensor q must be 2x2")
        if abs(arr[0, 1] - arr[1, 0]) > 1e-12:
            raise ConfigError("coefficients.q", "tensor q must be symmetric")
        eig = np.linalg.eigvalsh(arr)
        if eig[0] <= 0:
            raise ConfigError("coefficients.q", "tensor q must be positive definite")
    elif not (isinstance(q, (int, float)) and q > 0):
        raise ConfigError("coefficients.q", "scalar q must be positive")
    if co["mu"] <= 0:
        raise ConfigError("coefficients.mu", "must be positive")
    if co["alpha"] < 0:
        raise ConfigError("coefficients.alpha", "must be nonnegative")
    if co["beta"] < 0:
        raise ConfigError("coefficients.beta", "must be nonnegative")

    f = data["forcing"]
    if not (isinstance(f["f2"], list) and len(f["f2"]) == 2):
        raise ConfigError("forcing.f2", "needs two component expressions")
    compile_expression(f["f2"][0], ("x", "z"), key="forcing.f2[0]")
    compile_expression(f["f2"][1], ("x", "z"), key="forcing.f2[1]")
    compile_expression(f["h1"], ("x", "z"), key="forcing.h1")

    if not 0.0 < data["eps"] <= 1.0:
        raise ConfigError("eps", f"must lie in (0, 1], got {data['eps']}")

    eps_list = data["sweep"]["eps_list"]
    if len(eps_list) < 2:
        raise ConfigError("sweep.eps_list", "needs at least two entries")
    if any(not 0.0 < e <= 1.0 for e in eps_list):
        raise ConfigError("sweep.eps_list", "entries must lie in (0, 1]")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ConfigError("sweep.eps_list", "must be strictly decreasing")
    if not isinstance(data["sweep"]["jobs"], int) or data["sweep"]["jobs"] < 1:
        raise ConfigError("sweep.jobs", "must be a positive integer")
    if not isinstance(data["seed"], int):
        raise ConfigError("seed", "must be an integer")
    if data["tolerances"]["monotone_slack"] < 0:
        raise ConfigError("tolerances.monotone_slack", "must be nonnegative")
    if data["tolerances"]["bundle_ceiling"] <= 0:
        raise ConfigError("tolerances.bundle_ceiling", "must be positive")


def load_config(path=None, overrides=(), out_dir=None, jobs=None):
    """Load, override, and validate a configuration.

    ``overrides`` are ``key.path=value`` strings; ``out_dir``/``jobs``
    mirror the corresponding command-line flags.  The chart's normal
    lower bound is checked here so bad charts fail before any solve.
    """
    tree = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                tree = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError("config", f"file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("config", f"TOML parse error: {exc}") from None
    for item in overrides:
        if "=" not in item:
            raise ConfigError("--set", f"expected key=value, got {item!r}")
        dotted, text = item.split("=", 1)
        _set_override(tree, dotted.strip(), text.strip())
    if out_dir is not None:
        tree.setdefault("output", {})["directory"] = str(out_dir)
    if jobs is not None:
        tree.setdefault("sweep", {})["jobs"] = int(jobs)

    data = _merge(DEFAULTS, tree)
    _validate(data)
    cfg = RunConfig(data=data)
    try:
        normal_lower_bound(cfg.build_chart())
    except InvalidChartError as exc:
        raise ConfigError("chart.zeta", str(exc)) from None
    return cfg
