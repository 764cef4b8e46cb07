"""Text formats for fields and traces, PGM rendering, and CSV tables.

All writers go through a temporary file in the target directory followed by
``os.replace``, so a failed write never leaves a partial file behind.
"""
from __future__ import annotations

import contextlib
import csv
import os
import tempfile
from pathlib import Path

import numpy as np

from .exceptions import GridMismatchError, ThermoPatError
from .forward import MeasurementTrace
from .grid import BoundarySet, Grid2D, check_field

FIELD_MAGIC = "THERMOAC-FIELD v1"
TRACE_MAGIC = "THERMOAC-TRACE v1"


class FormatError(ThermoPatError, ValueError):
    def __init__(self, message, path=None, line=None):
        super().__init__(f"{path}:{line}: {message}" if line is not None else f"{path}: {message}")
        self.path = path
        self.line = line


@contextlib.contextmanager
def atomic_open(path, mode="w"):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        kw = {} if "b" in mode else {"encoding": "utf-8", "newline": "\n"}
        with os.fdopen(fd, mode, **kw) as f:
            yield f
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def _fmt(v: float) -> str:
    return repr(float(v))  # shortest round-trip repr, locale independent


# --------------------------------------------------------------------------
# fields


def write_field(path, f: np.ndarray, grid: Grid2D, meta: dict | None = None) -> None:
    """Header lines, then one value per line, x index slowest."""
    f = check_field(f, grid)
    with atomic_open(path) as out:
        out.write(f"{FIELD_MAGIC}\n")
        for k, v in (meta or {}).items():
            out.write(f"# {k} {v}\n")
        out.write(f"nx {grid.nx}\nny {grid.ny}\nh {_fmt(grid.h)}\n")
        out.write(f"origin {_fmt(grid.origin[0])} {_fmt(grid.origin[1])}\n")
        out.write("\n".join(map(_fmt, f.ravel())))
        out.write("\n")


def _header(lines, path, keys):
    vals = {}
    i = 1
    while len(vals) < len(keys):
        if i >= len(lines):
            raise FormatError(f"missing header keys {sorted(set(keys) - set(vals))}", path, i + 1)
        line = lines[i].strip()
        i += 1
        if not line or line.startswith("#"):
            continue
        key, _, rest = line.partition(" ")
        if key not in keys:
            raise FormatError(f"unexpected header key {key!r}", path, i)
        vals[key] = rest.split()
    return vals, i


def read_field(path) -> tuple[np.ndarray, Grid2D]:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != FIELD_MAGIC:
        raise FormatError(f"expected header {FIELD_MAGIC!r}", path, 1)
    hdr, start = _header(lines, path, ("nx", "ny", "h", "origin"))
    try:
        grid = Grid2D(int(hdr["nx"][0]), int(hdr["ny"][0]), float(hdr["h"][0]),
                      (float(hdr["origin"][0]), float(hdr["origin"][1])))
        values = np.array([float(s) for s in lines[start:] if s.strip()])
    except (ValueError, IndexError) as e:
        raise FormatError(f"malformed content: {e}", path) from e
    if values.size != grid.nx * grid.ny:
        raise GridMismatchError(f"{path}: expected {grid.nx * grid.ny} values, found {values.size}")
    return values.reshape(grid.shape), grid


# --------------------------------------------------------------------------
# traces


def write_trace(path, tr: MeasurementTrace, meta: dict | None = None) -> None:
    bset = tr.bset
    g = bset.grid
    idx = bset.node_indices
    with atomic_open(path) as out:
        out.write(f"{TRACE_MAGIC}\n")
        for k, v in (meta or {}).items():
            out.write(f"# {k} {v}\n")
        out.write(f"grid {g.nx} {g.ny} {_fmt(g.h)} {_fmt(g.origin[0])} {_fmt(g.origin[1])}\n")
        out.write(f"n_steps {tr.n_steps}\ndt {_fmt(tr.dt)}\nn_nodes {bset.n_nodes}\n")
        out.write("node_i " + ",".join(map(str, idx[:, 0])) + "\n")
        out.write("node_j " + ",".join(map(str, idx[:, 1])) + "\n")
        out.write("node_x " + ",".join(_fmt(g.origin[0] + i * g.h) for i in idx[:, 0]) + "\n")
        out.write("node_y " + ",".join(_fmt(g.origin[1] + j * g.h) for j in idx[:, 1]) + "\n")
        out.write("weights " + ",".join(map(_fmt, bset.node_weights)) + "\n")
        for row in tr.values:
            out.write(",".join(map(_fmt, row)) + "\n")


def read_trace(path) -> MeasurementTrace:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != TRACE_MAGIC:
        raise FormatError(f"expected header {TRACE_MAGIC!r}", path, 1)
    keys = ("grid", "n_steps", "dt", "n_nodes", "node_i", "node_j", "node_x", "node_y", "weights")
    hdr, start = _header(lines, path, keys)
    try:
        nx, ny, h, ox, oy = hdr["grid"]
        grid = Grid2D(int(nx), int(ny), float(h), (float(ox), float(oy)))
        n_steps = int(hdr["n_steps"][0])
        dt = float(hdr["dt"][0])
        n_nodes = int(hdr["n_nodes"][0])
        ii = np.array(hdr["node_i"][0].split(","), dtype=int)
        jj = np.array(hdr["node_j"][0].split(","), dtype=int)
        xx = np.array(hdr["node_x"][0].split(","), dtype=float)
        yy = np.array(hdr["node_y"][0].split(","), dtype=float)
        rows = [np.array(s.split(","), dtype=float) for s in lines[start:] if s.strip()]
    except (ValueError, IndexError) as e:
        raise FormatError(f"malformed content: {e}", path) from e
    if ii.size != n_nodes or jj.size != n_nodes:
        raise FormatError("node list length does not match n_nodes", path)
    if np.any(ii < 0) or np.any(ii >= grid.nx) or np.any(jj < 0) or np.any(jj >= grid.ny):
        raise FormatError("node index outside the grid", path)
    # coordinates are redundant with the indices; a disagreement means a corrupted header
    if xx.shape != ii.shape or yy.shape != jj.shape or not (
        np.allclose(xx, grid.origin[0] + ii * grid.h, atol=1e-9 * grid.h)
        and np.allclose(yy, grid.origin[1] + jj * grid.h, atol=1e-9 * grid.h)
    ):
        raise FormatError("node coordinates disagree with node indices", path)
    if len(rows) != n_steps + 1 or any(r.size != n_nodes for r in rows):
        raise GridMismatchError(f"{path}: expected {n_steps + 1} rows of {n_nodes} values")
    mask = np.zeros(grid.shape, dtype=bool)
    mask[ii, jj] = True
    bset = BoundarySet.from_mask(grid, mask)
    return MeasurementTrace(np.vstack(rows), dt, bset)


# --------------------------------------------------------------------------
# images and tables


def write_pgm(path, f: np.ndarray) -> None:
    """16-bit binary graymap with a linear min-max map.

    Image rows run along y from top (largest y) to bottom; the value range is
    kept in a header comment.
    """
    f = np.asarray(f, dtype=float)
    lo, hi = float(f.min()), float(f.max())
    scale = 65535.0 / (hi - lo) if hi > lo else 0.0
    img = np.rint((f - lo) * scale).astype(">u2")
    img = img.T[::-1]
    h, w = img.shape
    header = f"P5\n# min {_fmt(lo)} max {_fmt(hi)}\n{w} {h}\n65535\n".encode("ascii")
    with atomic_open(path, "wb") as out:
        out.write(header)
        out.write(img.tobytes())


def read_pgm(path) -> tuple[np.ndarray, float, float]:
    """Inverse of :func:`write_pgm` up to quantisation: ``(field, min, max)``."""
    data = Path(path).read_bytes()
    tokens = []
    lo = hi = None
    pos = 0
    while len(tokens) < 4:
        end = data.index(b"\n", pos)
        line = data[pos:end].decode("ascii")
        pos = end + 1
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 4 and parts[0] == "min" and parts[2] == "max":
                lo, hi = float(parts[1]), float(parts[3])
            continue
        tokens.extend(line.split())
    if tokens[0] != "P5" or int(tokens[3]) != 65535:
        raise FormatError("not a 16-bit binary graymap", path)
    w, h = int(tokens[1]), int(tokens[2])
    img = np.frombuffer(data[pos : pos + 2 * w * h], dtype=">u2").reshape(h, w)
    raw = img[::-1].T.astype(float)
    if lo is None:
        return raw, 0.0, 65535.0
    return lo + raw * ((hi - lo) / 65535.0), lo, hi


def write_csv(path, columns: dict[str, np.ndarray | list], float_fmt: str | None = None) -> None:
    names = list(columns)
    cols = [list(columns[k]) for k in names]
    with atomic_open(path) as out:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(names)
        for row in zip(*cols):
            w.writerow([(format(v, float_fmt) if float_fmt and isinstance(v, float) else v) for v in row])


def write_error_table(path, report) -> None:
    """Iteration, H1 and H0 relative errors in percent with one decimal."""
    rows = report.error_table()
    write_csv(
        path,
        {
            "iter": [r[0] for r in rows],
            "h1_error_pct": [round(r[1], 1) for r in rows],
            "h0_error_pct": [round(r[2], 1) for r in rows],
            "residual": report.residual_norms[: len(rows)],
        },
    )
