"""
Run configuration: a flat ``key = value`` text format.

Lines starting with ``#`` are comments. Tree literals and custom operator
term lists are Python literals, e.g. ``tree = ((1, 2), (3, 4))``.
"""

import ast
import math
from dataclasses import dataclass, fields, replace

import numpy as np

from . import tree as tr
from .operators import KroneckerSumOp
from .spin import SIGMA_X, SIGMA_Z


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


CHOICES = {
    "model": ("ising", "custom"),
    "mode": ("schrodinger", "gradient"),
    "ode_method": ("euler", "heun", "rk4"),
    "integrator": ("adaptive", "fixed_rank"),
    "reference": ("none", "exact_diag"),
    "initial": ("all_up", "random"),
}


@dataclass(frozen=True)
class RunConfig:
    model: str = "ising"
    d: int = 10
    omega: float = 1.0
    operator: str = ""
    n: int = 2
    tree: str = "balanced"
    mode: str = "schrodinger"
    h: float = 0.01
    T: float = 5.0
    theta: float = 1e-8
    rank_cap: int = 0
    ode_method: str = "rk4"
    ode_substeps: int = 1
    integrator: str = "adaptive"
    reference: str = "none"
    initial: str = "all_up"
    initial_rank: int = 1
    seed: int = 0
    gradient_shift: str = "auto"
    relative_root_tol: bool = False
    csv: str = "run.csv"
    summary: str = "run.json"
    checkpoint: str = ""

    def __post_init__(self):
        validate(self)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _field_error(name, msg):
    return ConfigError(f"{name}: {msg}")


def validate(cfg: RunConfig):
    for name, options in CHOICES.items():
        if getattr(cfg, name) not in options:
            raise _field_error(name, f"must be one of {', '.join(options)}")
    for name in ("omega", "h", "T", "theta"):
        if not math.isfinite(getattr(cfg, name)):
            raise _field_error(name, "must be finite")
    if cfg.h <= 0:
        raise _field_error("h", "must be positive")
    if cfg.T < 0:
        raise _field_error("T", "must be nonnegative")
    if cfg.theta < 0:
        raise _field_error("theta", "must be nonnegative")
    if cfg.omega < 0:
        raise _field_error("omega", "must be nonnegative")
    if cfg.d < 2:
        raise _field_error("d", "must be at least 2")
    if cfg.n < 1:
        raise _field_error("n", "must be positive")
    if cfg.rank_cap < 0:
        raise _field_error("rank_cap", "must be nonnegative")
    if cfg.ode_substeps < 1:
        raise _field_error("ode_substeps", "must be positive")
    if cfg.initial_rank < 1:
        raise _field_error("initial_rank", "must be positive")
    if cfg.model == "custom" and not cfg.operator:
        raise _field_error("operator", "required for the custom model")
    if cfg.model == "ising" and cfg.n != 2:
        raise _field_error("n", "the Ising model needs n = 2")
    if cfg.gradient_shift != "auto":
        try:
            if not math.isfinite(float(cfg.gradient_shift)):
                raise ValueError
        except ValueError:
            raise _field_error("gradient_shift", "must be 'auto' or a finite number") from None
    if cfg.tree not in ("balanced", "tt"):
        try:
            t = tr.parse_tree(cfg.tree, cfg.n)
        except (ValueError, SyntaxError, TypeError) as err:
            raise _field_error("tree", str(err)) from None
        if sorted(tr.leaf_labels(t)) != list(range(1, cfg.d + 1)):
            raise _field_error("tree", f"leaves must be 1..{cfg.d}")


def _convert(name, text):
    kind = _TYPES[name]
    try:
        if kind in (int, "int"):
            return int(text)
        if kind in (float, "float"):
            return float(text)
        if kind in (bool, "bool"):
            low = text.lower()
            if low not in ("true", "false"):
                raise ValueError
            return low == "true"
    except ValueError:
        raise _field_error(name, f"cannot parse {text!r} as {kind if isinstance(kind, str) else kind.__name__}") from None
    return text


def parse_config(text: str, overrides: dict = None) -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown field {key!r}")
        values[key] = _convert(key, val)
    for key, val in (overrides or {}).items():
        if key not in _TYPES:
            raise ConfigError(f"unknown field {key!r}")
        values[key] = _convert(key, str(val)) if isinstance(val, str) else val
    return RunConfig(**values)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_config(cfg: RunConfig) -> str:
    return "".join(f"{f.name} = {_fmt(getattr(cfg, f.name))}\n" for f in fields(RunConfig))


def load_config(path, overrides: dict = None) -> RunConfig:
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read(), overrides)


def build_tree(cfg: RunConfig) -> tr.Tree:
    if cfg.tree == "balanced":
        return tr.build_balanced_binary(cfg.n, cfg.d)
    if cfg.tree == "tt":
        return tr.build_tt_tree(cfg.n, cfg.d)
    return tr.parse_tree(cfg.tree, cfg.n)


_NAMED = {"pauli_x": SIGMA_X, "pauli_z": SIGMA_Z,
          "pauli_y": np.array([[0, -1j], [1j, 0]]), "identity": None}


def parse_operator(text: str, d: int, n: int) -> KroneckerSumOp:
    """
    Parse a list of ``(coeff, {site: 'pauli_x' | 'pauli_z' | 'pauli_y' | matrix})`` terms.
    """
    try:
        data = ast.literal_eval(text)
        terms = []
        for coeff, ops in data:
            site_ops = {}
            for site, a in ops.items():
                if isinstance(a, str):
                    if a not in _NAMED:
                        raise ValueError(f"unknown site operator {a!r}")
                    if _NAMED[a] is None:
                        continue
                    a = _NAMED[a]
                site_ops[int(site)] = np.asarray(a, dtype=complex)
            terms.append((complex(coeff), site_ops))
        return KroneckerSumOp({k: n for k in range(1, d + 1)}, terms)
    except (ValueError, SyntaxError, TypeError) as err:
        raise _field_error("operator", str(err)) from None


def with_tree(cfg: RunConfig, tree: str) -> RunConfig:
    return replace(cfg, tree=tree)
