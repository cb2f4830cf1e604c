"""Scenario files in TOML with a closed schema.

Layout::

    [kernel]            family = "caputo", beta = 0.5   (family parameters)
    [memory]            backend = "cq", tau = 0.01, N = 100
    [operator]          id = "relaxation", rate = 1.0, initial = 1.0, forcing = 0.0
    [solver]            strategy = "newton", abs_tol = 1e-12, ...
    [noise]             B = 1.0, n_paths = 1000, seed = 0
    [noise.kernel]      optional second kernel of the noise term
    [output]            dir = "out", trajectory = "trajectory.csv", ...

Unknown sections or keys raise :class:`ConfigError`.
"""

from __future__ import annotations

import copy
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .errors import ConfigError, FracEvolError
from .kernels import make_kernel
from .operators import (
    SpatialGrid,
    fast_diffusion_operator,
    p_laplace_operator,
    porous_medium_operator,
    relaxation_operator,
    zero_operator,
)
from .solver import FixedPointOptions, NewtonOptions, SolveConfig

__all__ = [
    "ScenarioConfig",
    "loads_config",
    "load_config",
    "dumps_config",
    "save_config",
    "build_kernel",
    "build_operator",
    "build_solve_config",
    "read_kernel_samples",
]

_NUM = (int, float)
_KERNEL_KEYS = {
    "caputo": {"beta": _NUM},
    "truncated_stable": {"beta": _NUM, "delta": _NUM},
    "distributed_order": {},
    "exp_weighted": {"beta": _NUM, "lam_w": _NUM},
    "gamma_sub": {"a": _NUM, "b": _NUM},
    "multi_term": {"alpha": _NUM, "beta": _NUM, "terms": list},
    "classical": {},
    "custom": {"file": str},
}
_FAMILY_ALIASES = {"truncated": "truncated_stable", "distributed": "distributed_order", "exponential": "exp_weighted", "gamma": "gamma_sub", "multiterm": "multi_term"}

_GRID_KEYS = {"dim": int, "n": int, "length": _NUM}
_STATE_KEYS = {"initial": (int, float, list, str), "forcing": (int, float, list)}
_OPERATOR_KEYS = {
    "relaxation": {"rate": _NUM, "size": int},
    "zero": {"size": int},
    "porous_medium": {**_GRID_KEYS, "r": _NUM, "h_t": _NUM, "alpha_frac": _NUM, "pairing": str, "C1": _NUM},
    "fast_diffusion": {**_GRID_KEYS, "r": _NUM, "h_t": _NUM, "eps_reg": _NUM, "scale": _NUM, "alpha_frac": _NUM, "pairing": str},
    "p_laplace": {**_GRID_KEYS, "p": _NUM, "h_t": _NUM, "reaction": _NUM, "eps_reg": _NUM},
}
_MEMORY_KEYS = {"backend": str, "tau": _NUM, "N": int}
_SOLVER_KEYS = {
    "strategy": str,
    "max_iter": int,
    "min_iter": int,
    "abs_tol": _NUM,
    "rel_tol": _NUM,
    "max_halvings": int,
    "gamma": _NUM,
    "max_sweeps": int,
    "sweep_tol": _NUM,
    "initial_guess": str,
    "integral_residual": bool,
}
_NOISE_KEYS = {"B": (int, float, list), "d_noise": int, "n_paths": int, "seed": int, "batch_size": int, "kernel": dict}
_OUTPUT_KEYS = {"dir": str, "trajectory": str, "stats": str, "weights": str, "report": str, "keep_paths": bool}
_SECTIONS = ("kernel", "memory", "operator", "solver", "noise", "output")


@dataclass
class ScenarioConfig:
    """Validated scenario; each section is a plain dictionary."""

    kernel: dict
    memory: dict
    operator: dict
    solver: dict = field(default_factory=dict)
    noise: dict | None = None
    output: dict = field(default_factory=dict)
    source: str | None = field(default=None, compare=False)

    @property
    def tau(self):
        return float(self.memory["tau"])

    @property
    def N(self):
        return int(self.memory["N"])

    def to_dict(self):
        out = {s: copy.deepcopy(getattr(self, s)) for s in _SECTIONS if getattr(self, s)}
        return out


def _check_keys(section, data, allowed):
    if not isinstance(data, dict):
        raise ConfigError(f"[{section}] must be a table")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}; allowed: {', '.join(sorted(allowed))}")
    for key, typ in allowed.items():
        if key in data:
            val = data[key]
            if isinstance(val, bool) and typ is not bool and (not isinstance(typ, tuple) or bool not in typ):
                raise ConfigError(f"[{section}] {key} must not be a boolean")
            if not isinstance(val, typ):
                raise ConfigError(f"[{section}] {key} has type {type(val).__name__}")


def _kernel_section(name, data):
    if not isinstance(data, dict) or "family" not in data:
        raise ConfigError(f"[{name}] needs a family")
    fam = str(data["family"]).lower().replace("-", "_")
    fam = _FAMILY_ALIASES.get(fam, fam)
    if fam not in _KERNEL_KEYS:
        raise ConfigError(f"[{name}] unknown family {data['family']!r}; known: {', '.join(_KERNEL_KEYS)}")
    _check_keys(name, data, {"family": str, **_KERNEL_KEYS[fam]})


def _validate(raw):
    unknown = sorted(set(raw) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    for req in ("kernel", "memory", "operator"):
        if req not in raw:
            raise ConfigError(f"missing section [{req}]")
    _kernel_section("kernel", raw["kernel"])
    _check_keys("memory", raw["memory"], _MEMORY_KEYS)
    mem = raw["memory"]
    if "tau" not in mem or "N" not in mem:
        raise ConfigError("[memory] needs tau and N")
    if not (mem["tau"] > 0 and math.isfinite(mem["tau"]) and mem["N"] >= 1):
        raise ConfigError(f"[memory] needs tau > 0 and N >= 1 (T = tau N > 0), got tau={mem['tau']}, N={mem['N']}")
    if mem.get("backend", "cq") not in ("cq", "pi"):
        raise ConfigError(f"[memory] backend must be 'cq' or 'pi', got {mem['backend']!r}")
    op = raw["operator"]
    if not isinstance(op, dict) or "id" not in op:
        raise ConfigError("[operator] needs an id")
    if op["id"] not in _OPERATOR_KEYS:
        raise ConfigError(f"[operator] unknown id {op['id']!r}; known: {', '.join(_OPERATOR_KEYS)}")
    _check_keys("operator", op, {"id": str, **_STATE_KEYS, **_OPERATOR_KEYS[op["id"]]})
    _check_keys("solver", raw.get("solver", {}), _SOLVER_KEYS)
    _check_keys("output", raw.get("output", {}), _OUTPUT_KEYS)
    if "noise" in raw:
        _check_keys("noise", raw["noise"], _NOISE_KEYS)
        if "kernel" in raw["noise"]:
            _kernel_section("noise.kernel", raw["noise"]["kernel"])
        _check_noise_dims(raw)


def _operator_size(op):
    oid = op["id"]
    if oid in ("relaxation", "zero"):
        return int(op.get("size", 1))
    n = int(op.get("n", 32))
    return n ** int(op.get("dim", 1))


def _check_noise_dims(raw):
    B = raw["noise"].get("B", 0.0)
    size = _operator_size(raw["operator"])
    if isinstance(B, list):
        arr = np.atleast_2d(np.asarray(B, dtype=float))
        if arr.ndim != 2 or arr.shape[0] != size:
            raise ConfigError(f"[noise] B has {arr.shape[0]} rows but the operator state has size {size}")
        d_noise = arr.shape[1]
        if raw["noise"].get("d_noise", d_noise) != d_noise:
            raise ConfigError(f"[noise] d_noise={raw['noise']['d_noise']} does not match B with {d_noise} columns")
    elif raw["noise"].get("d_noise", size) != size:
        raise ConfigError("[noise] scalar B needs d_noise equal to the state size")


def loads_config(text, source=None):
    """Parse and validate a TOML scenario."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    _validate(raw)
    return ScenarioConfig(
        kernel=raw["kernel"],
        memory=raw["memory"],
        operator=raw["operator"],
        solver=raw.get("solver", {}),
        noise=raw.get("noise"),
        output=raw.get("output", {}),
        source=source,
    )


def load_config(path):
    path = Path(path)
    return loads_config(path.read_text(), source=str(path))


def dumps_config(cfg):
    """Serialise to TOML; ``loads_config(dumps_config(c)) == c``."""
    return tomli_w.dumps(cfg.to_dict())


def save_config(cfg, path):
    Path(path).write_text(dumps_config(cfg))


# --------------------------------------------------------------------------
# builders


def read_kernel_samples(path):
    """Two-column CSV ``t,k`` (header optional) for a custom kernel."""
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2, comments="#", skiprows=_header_rows(path))
    except ValueError as exc:
        raise ConfigError(f"cannot read kernel samples from {path}: {exc}") from exc
    if data.shape[1] != 2:
        raise ConfigError(f"{path}: expected two columns t,k")
    return data[:, 0], data[:, 1]


def _header_rows(path):
    with open(path) as fh:
        first = fh.readline()
    try:
        [float(x) for x in first.split(",")]
        return 0
    except ValueError:
        return 1


def build_kernel(section, base_dir=None):
    """Kernel from a ``[kernel]`` table."""
    params = dict(section)
    family = params.pop("family")
    if str(family).lower() == "custom":
        path = Path(params.pop("file"))
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        t, k = read_kernel_samples(path)
        return make_kernel("custom", t=t, values=k)
    if "terms" in params:
        params["terms"] = [tuple(x) for x in params["terms"]]
    try:
        return make_kernel(family, **params)
    except FracEvolError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[kernel] {exc}") from exc


def _initial_state(spec, grid, size):
    if spec is None:
        return np.zeros(size)
    if isinstance(spec, str):
        if grid is None or spec != "sine":
            raise ConfigError(f"[operator] initial={spec!r}; only 'sine' on a spatial grid is recognised")
        return grid.sample(lambda *xs: np.prod([np.sin(np.pi * x / grid.length) for x in xs], axis=0))
    arr = np.asarray(spec, dtype=float)
    if arr.ndim == 0:
        return np.full(size, float(arr))
    if arr.size != size:
        raise ConfigError(f"[operator] initial has {arr.size} entries, state size is {size}")
    return arr


def build_operator(section):
    """``(operator, u0, forcing)`` from an ``[operator]`` table."""
    params = dict(section)
    oid = params.pop("id")
    initial = params.pop("initial", None)
    forcing = params.pop("forcing", None)
    grid = None
    if oid in ("relaxation", "zero"):
        op = relaxation_operator(float(params.get("rate", 1.0)), int(params.get("size", 1))) if oid == "relaxation" else zero_operator(int(params.get("size", 1)))
    else:
        grid = SpatialGrid(int(params.pop("dim", 1)), int(params.pop("n", 32)), float(params.pop("length", 1.0)))
        builder = {"porous_medium": porous_medium_operator, "fast_diffusion": fast_diffusion_operator, "p_laplace": p_laplace_operator}[oid]
        op = builder(grid, **params)
    u0 = _initial_state(initial, grid, op.size)
    if forcing is not None:
        forcing = np.broadcast_to(np.asarray(forcing, dtype=float), (op.size,)).copy()
    return op, u0, forcing


def build_solve_config(cfg):
    s = dict(cfg.solver)
    newton = NewtonOptions(**{k: s.pop(k) for k in ("max_iter", "min_iter", "abs_tol", "rel_tol", "max_halvings") if k in s})
    fixed = FixedPointOptions(**{k: s.pop(k) for k in ("gamma", "max_sweeps", "sweep_tol") if k in s})
    return SolveConfig(cfg.tau, cfg.N, cfg.memory.get("backend", "cq"), s.pop("strategy", "newton"), newton, fixed, s.pop("initial_guess", "previous"), s.pop("integral_residual", True))
