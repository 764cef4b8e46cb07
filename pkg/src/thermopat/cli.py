"""Command-line entry point: ``thermopat <command> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .config import RunConfig, describe_defaults, parse_config, with_overrides
from .exceptions import ConfigError, GridMismatchError, ThermoPatError
from .forward import forward_solve
from .grid import Grid2D
from .inversion import add_noise, reconstruct, relative_error, time_reversal

log = logging.getLogger("thermopat")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_SELFTEST = 0, 2, 3, 4


class SelftestFailure(Exception):
    def __init__(self, report):
        super().__init__("selftest failed")
        self.report = report


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value configuration file")
    common.add_argument("--out", type=Path, help="output directory (overrides io.out)")
    common.add_argument("--seed", type=int, help="seed for trace noise and random probes (overrides noise.seed)")
    common.add_argument("--iters", type=int, help="CG iteration cap (overrides cg.k_max)")
    common.add_argument("--mode", choices=("h0", "h1"), help="CG inner product (overrides cg.mode)")
    common.add_argument("--quiet", action="store_true", help="only warnings and errors on stderr")

    p = argparse.ArgumentParser(
        prog="thermopat",
        description="Thermoacoustic tomography with thermodynamic attenuation: simulation and reconstruction.",
        epilog="configuration keys and defaults:\n" + describe_defaults(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("phantom", parents=[common], help="write the initial pressure and wave speed fields")
    sub.add_parser("forward", parents=[common], help="simulate boundary measurements and energy diagnostics")
    sub.add_parser("timereversal", parents=[common], help="lossless time-reversal reconstruction")
    sub.add_parser("reconstruct", parents=[common], help="CG reconstruction started from time reversal")
    sub.add_parser("errors", parents=[common], help="relative errors of io.estimate against io.truth")
    st = sub.add_parser("selftest", parents=[common], help="duality, energy, convergence-order and CG checks")
    st.add_argument("--grid", type=int, default=33, help="coarsest grid of the self-test (default 33)")
    return p


def load_config(args) -> RunConfig:
    cfg = parse_config(args.config) if args.config else RunConfig()
    overrides = {}
    if args.out is not None:
        overrides["io__out"] = args.out
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer", key="noise.seed")
        overrides["noise__seed"] = args.seed
    if args.iters is not None:
        overrides["cg__k_max"] = args.iters
    if args.mode is not None:
        overrides["cg__mode"] = args.mode
    return with_overrides(cfg, **overrides) if overrides else cfg


def _header(cfg: RunConfig, dt=None, n_steps=None) -> dict:
    meta = {k: v for k, v in cfg.as_dict().items() if not k.startswith("io.")}
    if dt is not None:
        meta["solver.dt"] = repr(dt)
        meta["solver.n_steps"] = n_steps
    return meta


# --------------------------------------------------------------------------
# commands


def cmd_phantom(cfg: RunConfig) -> dict:
    g = cfg.build_grid()
    out = cfg.io.out
    p0 = cfg.build_phantom(g)
    c = cfg.build_speed(g)
    io.write_field(out / "p0.field", p0, g, _header(cfg))
    io.write_field(out / "speed.field", c, g, _header(cfg))
    io.write_pgm(out / "p0.pgm", p0)
    io.write_pgm(out / "speed.pgm", c)
    return {"p0": str(out / "p0.field"), "speed": str(out / "speed.field")}


def _trace(cfg: RunConfig, m, scfg, truth):
    """Trace from io.trace, or simulated from the phantom (plus configured noise)."""
    if cfg.io.trace is not None:
        tr = io.read_trace(cfg.io.trace)
        return tr
    tr, _, _ = forward_solve(truth, m, scfg, diagnostics=False)
    if cfg.noise.level > 0:
        tr = add_noise(tr, cfg.noise.level, np.random.default_rng(cfg.noise.seed))
    return tr


def _truth(cfg: RunConfig, g: Grid2D):
    if cfg.io.truth is not None:
        f, tg = io.read_field(cfg.io.truth)
        if tg.shape != g.shape:
            raise GridMismatchError(f"truth field is {tg.nx}x{tg.ny}, run grid is {g.nx}x{g.ny}")
        return f
    return cfg.build_phantom(g)


def cmd_forward(cfg: RunConfig) -> dict:
    g = cfg.build_grid()
    m = cfg.build_medium(g)
    scfg = cfg.solver_config(m)
    p0 = _truth(cfg, g)
    t0 = time.perf_counter()
    tr, _, diag = forward_solve(p0, m, scfg)
    if cfg.noise.level > 0:
        tr = add_noise(tr, cfg.noise.level, np.random.default_rng(cfg.noise.seed))
    out = cfg.io.out
    io.write_trace(out / "trace.txt", tr, _header(cfg, scfg.dt, scfg.n_steps))
    io.write_csv(out / "diagnostics.csv", diag.as_columns())
    ratio = float(diag.energy[-1] / diag.energy[0]) if diag.energy[0] > 0 else 0.0
    return {"trace": str(out / "trace.txt"), "n_steps": scfg.n_steps, "dt": scfg.dt,
            "energy_ratio": ratio, "seconds": time.perf_counter() - t0}


def cmd_timereversal(cfg: RunConfig) -> dict:
    g = cfg.build_grid()
    m = cfg.build_medium(g)
    scfg = cfg.solver_config(m)
    truth = _truth(cfg, g)
    tr = _trace(cfg, m, scfg, truth)
    est = time_reversal(tr, m, scfg)
    out = cfg.io.out
    io.write_field(out / "timereversal.field", est, g, _header(cfg, scfg.dt, scfg.n_steps))
    io.write_pgm(out / "timereversal.pgm", est)
    e1 = relative_error(est, truth, g, "h1")
    e0 = relative_error(est, truth, g, "h0")
    io.write_csv(out / "timereversal_errors.csv", {"iter": [0], "h1_error_pct": [round(e1, 1)], "h0_error_pct": [round(e0, 1)]})
    return {"h1_error_pct": e1, "h0_error_pct": e0}


def cmd_reconstruct(cfg: RunConfig) -> dict:
    g = cfg.build_grid()
    m = cfg.build_medium(g)
    scfg = cfg.solver_config(m)
    truth = _truth(cfg, g)
    tr = _trace(cfg, m, scfg, truth)
    rep = reconstruct(tr, m, scfg, cfg.cg_options(), truth=truth)
    out = cfg.io.out
    meta = _header(cfg, scfg.dt, scfg.n_steps)
    io.write_field(out / "estimate.field", rep.estimate, g, meta)
    io.write_pgm(out / "estimate.pgm", rep.estimate)
    io.write_error_table(out / "errors.csv", rep)
    for k, e1, e0 in rep.error_table():
        log.info("iter %d  H1 %5.1f %%  H0 %5.1f %%", k, e1, e0)
    return {"iterations": rep.iterations, "converged": rep.converged,
            "table": [{"iter": k, "h1": round(e1, 1), "h0": round(e0, 1)} for k, e1, e0 in rep.error_table()],
            "seconds": rep.timings.get("total")}


def cmd_errors(cfg: RunConfig) -> dict:
    if cfg.io.estimate is None:
        raise ConfigError("io.estimate is required by the errors command", key="io.estimate")
    est, g = io.read_field(cfg.io.estimate)
    truth = _truth(cfg, g)
    res = {"h1_error_pct": relative_error(est, truth, g, "h1"), "h0_error_pct": relative_error(est, truth, g, "h0")}
    print(f"H1 {res['h1_error_pct']:.1f} %   H0 {res['h0_error_pct']:.1f} %")
    return res


def cmd_selftest(cfg: RunConfig, n: int) -> dict:
    from .verification import (
        cg_envelope,
        duality_study,
        energy_decay,
        standing_wave_errors,
    )

    seed = cfg.noise.seed
    ns = (n, 2 * n - 1)
    dual = duality_study(ns=ns, seeds=(seed, seed + 1))
    wave = standing_wave_errors(ns=(n, 2 * n - 1, 4 * n - 3))
    energy = energy_decay(n=n)
    env = cg_envelope(n=n, seed=seed)
    checks = {
        "duality_gap": {"worst": dual["worst"], "order": dual["order"],
                        "passed": dual["worst"][0] <= 0.05 and dual["worst"][-1] <= dual["worst"][0]},
        "energy_monotone": {"max_relative_increase": energy["max_relative_increase"], "passed": energy["monotone"]},
        "eigenmode_order": {"error": wave["error"], "order": wave["order"], "passed": min(wave["order"]) >= 1.8},
        "cg_envelope": {"iterations": env["iterations"], "sigma": env["sigma"], "passed": env["passed"]},
    }
    report = {"grid": n, "checks": checks, "passed": all(c["passed"] for c in checks.values())}
    if not report["passed"]:
        raise SelftestFailure(report)
    return report


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        commands = {
            "phantom": cmd_phantom,
            "forward": cmd_forward,
            "timereversal": cmd_timereversal,
            "reconstruct": cmd_reconstruct,
            "errors": cmd_errors,
        }
        if args.command == "selftest":
            result = cmd_selftest(cfg, args.grid)
        else:
            result = commands[args.command](cfg)
    except SelftestFailure as e:
        _fail(EXIT_SELFTEST, "selftest", "one or more checks failed", e.report)
        return EXIT_SELFTEST
    except (ConfigError, io.FormatError, GridMismatchError, OSError) as e:
        _fail(EXIT_CONFIG, type(e).__name__, str(e), {"key": getattr(e, "key", None), "line": getattr(e, "line", None)})
        return EXIT_CONFIG
    except (ThermoPatError, FloatingPointError, np.linalg.LinAlgError) as e:
        _fail(EXIT_NUMERICAL, type(e).__name__, str(e), {"step": getattr(e, "step", None)})
        return EXIT_NUMERICAL
    if not args.quiet:
        print(json.dumps(result, indent=2, default=str))
    return EXIT_OK


def _fail(code, kind, message, detail):
    json.dump({"status": "error", "exit_code": code, "kind": kind, "message": message, "detail": detail},
              sys.stderr, indent=2, default=str)
    sys.stderr.write("\n")


if __name__ == "__main__":
    sys.exit(main())
