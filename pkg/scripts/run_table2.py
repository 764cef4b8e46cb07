"""Constant-speed experiment: error table for time reversal and 5 CG iterations.

    python3 scripts/run_table2.py --n 257 --out results/table2

Writes errors.csv (one row per iteration, percentages with one decimal),
estimate.field and estimate.pgm.
"""
import argparse
import logging
from pathlib import Path

from thermopat import io
from thermopat.forward import DEFAULT_CFL, SolverConfig, forward_solve
from thermopat.grid import Grid2D
from thermopat.inversion import CgOptions, reconstruct
from thermopat.medium import layered_speed, make_medium, shepp_logan

log = logging.getLogger("table")


def run(speed: str, n: int, iters: int, mode: str, cfl: float, out: Path) -> list:
    g = Grid2D.unit_square(n)
    c = layered_speed(g) if speed == "layered" else 1.0
    m = make_medium(g, c=c, alpha=0.01, epsilon=0.1)
    cfg = SolverConfig.for_medium(m, tau=2.0, cfl=cfl)
    truth = shepp_logan(g)
    tr, _, _ = forward_solve(truth, m, cfg, diagnostics=False)
    rep = reconstruct(tr, m, cfg, CgOptions(mode=mode, k_max=iters), truth=truth)
    out.mkdir(parents=True, exist_ok=True)
    io.write_error_table(out / "errors.csv", rep)
    io.write_field(out / "estimate.field", rep.estimate, g, {"speed": speed, "cfl": cfl, "mode": mode})
    io.write_pgm(out / "estimate.pgm", rep.estimate)
    print(f"{'Iter':>4}  {'H1':>7}  {'H0':>7}")
    for k, e1, e0 in rep.error_table():
        print(f"{k:>4}  {e1:6.1f}%  {e0:6.1f}%")
    log.info("%.0f s total", rep.timings["total"])
    return rep.error_table()


def main(speed: str = "constant"):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=257, help="nodes per axis (default 257)")
    ap.add_argument("--iters", type=int, default=5)
    ap.add_argument("--mode", choices=("h0", "h1"), default="h0")
    ap.add_argument("--cfl", type=float, default=DEFAULT_CFL)
    ap.add_argument("--out", type=Path, default=Path(f"results/{speed}"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    run(speed, args.n, args.iters, args.mode, args.cfl, args.out)


if __name__ == "__main__":
    main("constant")
