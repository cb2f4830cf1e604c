"""Command line entry point ``fracevol``.

Exit codes: 0 success, 1 a check failed or the solver failed, 2 invalid
input, 3 file I/O error. Errors are reported as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .config import build_kernel, build_operator, build_solve_config, load_config, read_kernel_samples
from .errors import BadExponent, ConfigError, DimensionMismatch, FracEvolError, ParamOutOfRange
from .kernels import catalogue, make_kernel, psi, verify_kernel_conditions
from .memory import make_scheme
from .solver import run, weighted_fixed_point
from .stochastic import make_noise_model, solve_spde
from . import verify as V

EXIT_OK, EXIT_FAIL, EXIT_INVALID, EXIT_IO = 0, 1, 2, 3
_INVALID = (ConfigError, ParamOutOfRange, BadExponent, DimensionMismatch)
SUITES = ("dissipativity", "contraction", "fourier", "sonine", "all")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------------
# output helpers


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def _dumps(obj):
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def atomic_write(path, writer):
    """Write through a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_text(path, text):
    atomic_write(path, lambda p: Path(p).write_text(text))


def _commit(out_dir, files):
    """Write every ``(name, writer)`` pair; nothing is written before all results exist."""
    if out_dir is None:
        return []
    written = []
    for name, writer in files:
        target = Path(out_dir) / name
        atomic_write(target, writer)
        written.append(str(target))
    return written


def _threads(args):
    if getattr(args, "threads", None) is not None:
        n = args.threads
    else:
        env = os.environ.get("FRACEVOL_THREADS")
        try:
            n = int(env) if env else 1
        except ValueError:
            raise ConfigError(f"FRACEVOL_THREADS={env!r} is not an integer") from None
    if n < 1:
        raise ParamOutOfRange("threads", n, "threads >= 1")
    return n


# --------------------------------------------------------------------------
# kernel


def _kernel_from_args(args):
    if args.config:
        cfg = load_config(args.config)
        return build_kernel(cfg.kernel, Path(args.config).parent)
    if not args.family:
        raise ConfigError("--family or --config is required")
    fam = args.family.lower().replace("-", "_")
    if fam == "custom":
        if not args.file:
            raise ConfigError("custom kernels need --file with t,k samples")
        t, k = read_kernel_samples(args.file)
        return make_kernel("custom", t=t, values=k)
    params = {}
    for name in ("beta", "delta", "lam_w", "a", "b", "alpha"):
        val = getattr(args, name)
        if val is not None:
            params[name] = val
    return make_kernel(fam, **params)


def cmd_kernel(args):
    kernel = _kernel_from_args(args)
    if args.action == "inspect":
        t = np.array([0.01, 0.1, 1.0, 10.0])
        lam = np.array([0.5, 1.0, 2.0, 5.0, 10.0])
        k_t = kernel.k(t)
        kt_t = kernel.k_tilde(t) if kernel.has_closed_conjugate else np.full(t.shape, np.nan)
        psi_l = np.real(psi(kernel, lam))
        lines = [f"kernel {kernel.id}", f"{'t':>8} {'k(t)':>22} {'k_tilde(t)':>22}"]
        lines += [f"{ti:8.3g} {ki:22.15g} {kti:22.15g}" for ti, ki, kti in zip(t, k_t, kt_t)]
        lines += [f"{'lambda':>8} {'psi(lambda)':>22}"] + [f"{li:8.3g} {pi:22.15g}" for li, pi in zip(lam, psi_l)]
        print("\n".join(lines))
        report = {"kernel": kernel.id, "t": t, "k": k_t, "k_tilde": kt_t, "lambda": lam, "psi": psi_l}
        _commit(args.out, [("kernel_inspect.json", lambda p: Path(p).write_text(_dumps(report)))])
        return EXIT_OK
    if args.action == "verify":
        rep = verify_kernel_conditions(kernel)
        payload = {"kernel": rep.kernel, "singular_at_zero": rep.singular_at_zero, "records": rep.records, "pass": rep.all_pass}
        print(_dumps(payload), end="")
        _commit(args.out, [("kernel_verify.json", lambda p: Path(p).write_text(_dumps(payload)))])
        if not rep.all_pass:
            failed = [r["condition"] for r in rep.records if not r["pass"]]
            raise ConfigError(f"kernel {kernel.id} violates: {', '.join(failed)}")
        return EXIT_OK
    rec = V.check_sonine(kernel, tau=args.tau, T=args.horizon)
    print(_dumps(rec.to_dict()), end="")
    _commit(args.out, [("sonine.json", lambda p: Path(p).write_text(_dumps(rec.to_dict())))])
    return EXIT_OK if rec.passed else EXIT_FAIL


# --------------------------------------------------------------------------
# run and spde


def _out_dir(args, cfg):
    if args.out:
        return args.out
    return cfg.output.get("dir", "out")


def cmd_run(args):
    cfg = load_config(args.config)
    base = Path(args.config).parent
    kernel = build_kernel(cfg.kernel, base)
    op, u0, forcing = build_operator(cfg.operator)
    scfg = build_solve_config(cfg)
    scheme = make_scheme(kernel, scfg.tau, scfg.N, scfg.backend)
    if scfg.strategy == "fixed_point":
        traj, rho = weighted_fixed_point(kernel, op, u0, forcing, scfg, scheme=scheme)
        extra = {"contraction_estimate": rho}
    else:
        traj = run(kernel, op, u0, forcing, scfg, scheme=scheme)
        extra = {}
    diag = traj.diagnostics()
    print(f"memory time {diag.pop('memory_seconds'):.3f} s, max residual {diag['max_residual']:.3e}", file=sys.stderr)
    report = {"kernel": kernel.id, "operator": op.name, "tau": scfg.tau, "N": scfg.N, "backend": scfg.backend, "strategy": scfg.strategy, **diag, **extra}
    out = _out_dir(args, cfg)
    files = [(cfg.output.get("trajectory", "trajectory.csv"), traj.to_csv), (cfg.output.get("report", "report.json"), lambda p: Path(p).write_text(_dumps(report)))]
    if "weights" in cfg.output:
        files.append((cfg.output["weights"], scheme.to_csv))
    for path in _commit(out, files):
        print(path)
    return EXIT_OK


def cmd_spde(args):
    cfg = load_config(args.config)
    if cfg.noise is None:
        raise ConfigError("spde needs a [noise] section")
    base = Path(args.config).parent
    kernel = build_kernel(cfg.kernel, base)
    k2 = build_kernel(cfg.noise["kernel"], base) if "kernel" in cfg.noise else kernel
    op, u0, forcing = build_operator(cfg.operator)
    scfg = build_solve_config(cfg)
    seed = args.seed if args.seed is not None else cfg.noise.get("seed", 0)
    B = cfg.noise.get("B", 0.0)
    noise = make_noise_model(kernel, k2, B, op.size, cfg.noise.get("d_noise"), seed)
    ens = solve_spde(
        kernel,
        noise,
        op,
        u0,
        scfg,
        cfg.noise.get("n_paths", 1000),
        forcing=forcing,
        batch_size=cfg.noise.get("batch_size", 2048),
        threads=_threads(args),
    )
    report = {"kernel": kernel.id, "noise_kernel": k2.id, "operator": op.name, "n_paths": ens.n_paths, "tau": scfg.tau, "N": scfg.N, **ens.info}
    out = _out_dir(args, cfg)
    files = [(cfg.output.get("stats", "ensemble.csv"), ens.to_csv), (cfg.output.get("report", "report.json"), lambda p: Path(p).write_text(_dumps(report)))]
    for path in _commit(out, files):
        print(path)
    return EXIT_OK


# --------------------------------------------------------------------------
# verify


def _suite_records(name, args):
    recs = []
    if name in ("dissipativity", "all"):
        for g in args.gamma:
            if not g > 0:
                raise ParamOutOfRange("gamma", g, "gamma > 0")
        reports, summary = V.dissipativity_suite(catalogue(), tuple(args.gamma), taus=tuple(args.taus), T_cut=args.t_cut)
        recs += [r.to_dict() for r in reports]
        converging = all(summary["tuples_monotone"].values())
        recs.append(
            {
                "check": "dissipativity_refinement",
                "kernel": "catalogue",
                "params": {"taus": list(args.taus)},
                "lhs": summary["worst_margin_per_tau"],
                "rhs": None,
                "margin": None,
                "tol": None,
                "pass": bool(converging and summary["worst_deficit_nonincreasing"]),
                "extra": {
                    "worst_margin_nondecreasing": summary["worst_margin_nondecreasing"],
                    "tuples_nondecreasing": sum(summary["tuples_nondecreasing"].values()),
                    "tuples": len(summary["tuples_nondecreasing"]),
                },
            }
        )
        classical = make_kernel("classical")
        for g in args.gamma:
            for path in V.TEST_PATHS:
                m = V.extrapolated_margin(classical, g, path, min(args.taus) / 2.0, args.t_cut)
                recs.append({"check": "dissipativity_equality", "kernel": classical.id, "params": {"gamma": g, "path": path}, "lhs": m, "rhs": 0.0, "margin": m, "tol": 1e-6, "pass": abs(m) <= 1e-6})
    if name in ("contraction", "all"):
        half = make_kernel("caputo", beta=0.5)
        recs.append(V.check_subordination_normalization(half).to_dict())
        for lam, t in ((1.0, 1.0), (4.0, 1.0), (1.0, 2.0)):
            recs.append(V.check_subordination_laplace(half, lam, t).to_dict())
        recs.append(V.check_weighted_contraction(half, 1.0, 1.0).to_dict())
    if name in ("fourier", "all"):
        recs += [r.to_dict() for r in V.check_fourier_symbol(make_kernel("caputo", beta=0.5), (0.0, 0.5, 1.0, 2.0))]
        recs += [r.to_dict() for r in V.check_fourier_symbol(make_kernel("classical"), (1.0,), tau=1e-4, tol=1e-4)]
    if name in ("sonine", "all"):
        kernels = [make_kernel("caputo", beta=b) for b in (0.25, 0.5, 0.75)]
        kernels += [make_kernel("distributed_order"), make_kernel("exp_weighted", beta=0.5, lam_w=1.0), make_kernel("multi_term", alpha=0.3, beta=0.7)]
        recs += [V.check_sonine(k).to_dict() for k in kernels]
    return recs


def cmd_verify(args):
    if not args.suite:
        raise UsageError("a suite name is required: " + ", ".join(SUITES))
    if args.suite not in SUITES:
        raise UsageError(f"unknown suite {args.suite!r}; choose from {', '.join(SUITES)}")
    recs = _suite_records(args.suite, args)
    ok = all(r["pass"] for r in recs)
    summary = {"suite": args.suite, "checks": len(recs), "failed": sum(not r["pass"] for r in recs), "pass": ok}
    print(_dumps(summary), end="")
    _commit(args.out, [(f"verify_{args.suite}.json", lambda p: Path(p).write_text(_dumps({"summary": summary, "records": recs})))])
    return EXIT_OK if ok else EXIT_FAIL


# --------------------------------------------------------------------------
# entry point


def build_parser():
    p = _Parser(prog="fracevol", description="Evolution equations with generalized memory kernels.")
    p.add_argument("--version", action="version", version=f"fracevol {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="TOML scenario file")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="master seed (noise runs)")
        sp.add_argument("--threads", type=int, help="worker threads (default: FRACEVOL_THREADS or 1)")

    pk = sub.add_parser("kernel", help="inspect or check a kernel")
    pk.add_argument("action", choices=("inspect", "verify", "sonine"))
    pk.add_argument("--family")
    for name in ("beta", "delta", "lam-w", "a", "b", "alpha"):
        pk.add_argument(f"--{name}", type=float, dest=name.replace("-", "_"))
    pk.add_argument("--file", help="CSV with t,k samples for a custom kernel")
    pk.add_argument("--tau", type=float, default=1e-3)
    pk.add_argument("--horizon", type=float, default=10.0)
    common(pk)

    pr = sub.add_parser("run", help="deterministic scenario")
    common(pr)
    ps = sub.add_parser("spde", help="stochastic ensemble")
    common(ps)

    pv = sub.add_parser("verify", help="verification suites")
    pv.add_argument("suite", nargs="?", default="")
    pv.add_argument("--gamma", type=float, nargs="+", default=[0.5, 1.0, 5.0])
    pv.add_argument("--taus", type=float, nargs="+", default=[0.01, 0.005, 0.0025])
    pv.add_argument("--t-cut", type=float, default=30.0, dest="t_cut")
    common(pv)
    return p


def _error(exc, code):
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("path_ids", "step_index", "residual"):
        if hasattr(exc, attr):
            val = getattr(exc, attr)
            payload[attr] = val[:20] if isinstance(val, list) else val
    sys.stderr.write(json.dumps(_clean(payload)) + "\n")
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: kernel, run, spde, verify")
        if args.command in ("run", "spde") and not args.config:
            raise UsageError(f"{args.command} needs --config")
        handler = {"kernel": cmd_kernel, "run": cmd_run, "spde": cmd_spde, "verify": cmd_verify}[args.command]
        return handler(args)
    except UsageError as exc:
        return _error(exc, EXIT_INVALID)
    except _INVALID as exc:
        return _error(exc, EXIT_INVALID)
    except FracEvolError as exc:
        return _error(exc, EXIT_FAIL)
    except OSError as exc:
        return _error(exc, EXIT_IO)


if __name__ == "__main__":
    sys.exit(main())
