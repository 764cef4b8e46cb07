"""Run configuration: flat ``section.key = value`` text files.

Lines are UTF-8, one pair per line, ``#`` starts a comment.  Unknown keys,
duplicate keys and malformed lines are rejected with their line number.
Relative file paths are resolved against the directory of the config file.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError
from .forward import DEFAULT_CFL, SolverConfig
from .grid import SIDES, BoundarySet, Grid2D
from .inversion import MODES, CgOptions
from .medium import MediumFields, gaussian_blob, layered_speed, make_medium, shepp_logan


@dataclass(frozen=True)
class GridSection:
    n: int = 257
    coarse: int | None = None  # derived from n when unset

    @property
    def coarse_n(self) -> int:
        return (self.n + 1) // 2


@dataclass(frozen=True)
class MediumSection:
    speed: str = "constant"  # constant | layered | file
    c: float = 1.0
    layer_value: float = 1.5
    speed_file: Path | None = None
    alpha: float = 0.01
    epsilon: float = 0.1
    gamma: str = "inverse_speed"  # inverse_speed | constant | file
    gamma_value: float = 1.0
    gamma_file: Path | None = None


@dataclass(frozen=True)
class ObservationSection:
    boundary: str = "full"  # full | sides | file
    sides: tuple[str, ...] = SIDES
    mask_file: Path | None = None


@dataclass(frozen=True)
class SolverSection:
    tau: float = 2.0
    cfl: float = DEFAULT_CFL


@dataclass(frozen=True)
class CgSection:
    mode: str = "h0"
    tol: float = 1e-6
    k_max: int = 50


@dataclass(frozen=True)
class NoiseSection:
    level: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class PhantomSection:
    kind: str = "shepp_logan"  # shepp_logan | blob | file
    scale: float = 1.0
    file: Path | None = None


@dataclass(frozen=True)
class IoSection:
    out: Path = Path("out")
    truth: Path | None = None
    trace: Path | None = None
    estimate: Path | None = None


@dataclass(frozen=True)
class RunConfig:
    grid: GridSection = field(default_factory=GridSection)
    medium: MediumSection = field(default_factory=MediumSection)
    observation: ObservationSection = field(default_factory=ObservationSection)
    solver: SolverSection = field(default_factory=SolverSection)
    cg: CgSection = field(default_factory=CgSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    phantom: PhantomSection = field(default_factory=PhantomSection)
    io: IoSection = field(default_factory=IoSection)

    def __post_init__(self):
        validate(self)

    # builders ------------------------------------------------------------

    def build_grid(self) -> Grid2D:
        return Grid2D.unit_square(self.grid.n)

    def build_observation(self, grid: Grid2D) -> BoundarySet:
        o = self.observation
        if o.boundary == "full":
            return BoundarySet.full(grid)
        if o.boundary == "sides":
            return BoundarySet.from_sides(grid, o.sides)
        from .io import read_field

        mask, g = read_field(o.mask_file)
        _same_grid(g, grid, o.mask_file)
        return BoundarySet.from_mask(grid, mask != 0)

    def build_speed(self, grid: Grid2D) -> np.ndarray:
        md = self.medium
        if md.speed == "constant":
            return np.full(grid.shape, md.c)
        if md.speed == "layered":
            return layered_speed(grid, base=md.c, layer_value=md.layer_value)
        from .io import read_field

        c, g = read_field(md.speed_file)
        _same_grid(g, grid, md.speed_file)
        return c

    def build_medium(self, grid: Grid2D | None = None, epsilon: float | None = None) -> MediumFields:
        grid = grid or self.build_grid()
        md = self.medium
        c = self.build_speed(grid)
        obs = self.build_observation(grid)
        if md.gamma == "inverse_speed":
            gamma = "inverse_speed"
        elif md.gamma == "constant":
            gamma = md.gamma_value
        else:
            from .io import read_field

            gamma, g = read_field(md.gamma_file)
            _same_grid(g, grid, md.gamma_file)
        eps = md.epsilon if epsilon is None else epsilon
        try:
            return make_medium(grid, c=c, alpha=md.alpha, epsilon=eps, gamma=gamma, obs=obs)
        except ValueError as e:
            raise ConfigError(str(e), key="medium") from e

    def solver_config(self, m: MediumFields) -> SolverConfig:
        return SolverConfig.for_medium(m, tau=self.solver.tau, cfl=self.solver.cfl)

    def cg_options(self, mode: str | None = None, k_max: int | None = None) -> CgOptions:
        return CgOptions(mode=mode or self.cg.mode, tol=self.cg.tol, k_max=k_max or self.cg.k_max)

    def build_phantom(self, grid: Grid2D) -> np.ndarray:
        ph = self.phantom
        if ph.kind == "shepp_logan":
            return shepp_logan(grid, ph.scale)
        if ph.kind == "blob":
            return gaussian_blob(grid, amplitude=ph.scale)
        from .io import read_field

        f, g = read_field(ph.file)
        _same_grid(g, grid, ph.file)
        return f

    def as_dict(self) -> dict[str, str]:
        out = {}
        for sec in dataclasses.fields(self):
            obj = getattr(self, sec.name)
            for f in dataclasses.fields(obj):
                v = getattr(obj, f.name)
                if v is None:
                    continue
                out[f"{sec.name}.{f.name}"] = ",".join(v) if isinstance(v, tuple) else str(v)
        return out


def _same_grid(g: Grid2D, grid: Grid2D, path):
    if g.shape != grid.shape or not np.isclose(g.h, grid.h):
        raise ConfigError(f"{path} holds a {g.nx}x{g.ny} field, the run uses {grid.nx}x{grid.ny}")


# --------------------------------------------------------------------------
# validation


def _positive(cfg, key):
    sec, name = key.split(".")
    v = getattr(getattr(cfg, sec), name)
    if not v > 0:
        raise ConfigError(f"{key} must be positive, got {v}", key=key)


def _choice(cfg, key, options):
    sec, name = key.split(".")
    v = getattr(getattr(cfg, sec), name)
    if v not in options:
        raise ConfigError(f"{key} must be one of {', '.join(options)}, got {v!r}", key=key)


def _file(cfg, key, when):
    sec, name = key.split(".")
    v = getattr(getattr(cfg, sec), name)
    if not when:
        return
    if v is None:
        raise ConfigError(f"{key} is required by the chosen options", key=key)
    if not Path(v).is_file():
        raise ConfigError(f"{key}: no such file {v}", key=key)


def validate(cfg: RunConfig) -> None:
    g = cfg.grid
    if g.n < 5 or (g.n - 1) % 2:
        raise ConfigError(f"grid.n must be odd and at least 5, got {g.n}", key="grid.n")
    if g.coarse is not None and g.coarse != g.coarse_n:
        raise ConfigError(f"grid.coarse must be (grid.n + 1) / 2 = {g.coarse_n}, got {g.coarse}", key="grid.coarse")
    for key in ("medium.c", "medium.layer_value", "medium.alpha", "solver.tau", "solver.cfl", "cg.tol", "phantom.scale"):
        _positive(cfg, key)
    if not cfg.medium.epsilon >= 0:
        raise ConfigError(f"medium.epsilon must be nonnegative, got {cfg.medium.epsilon}", key="medium.epsilon")
    if not cfg.medium.gamma_value >= 0:
        raise ConfigError("medium.gamma_value must be nonnegative", key="medium.gamma_value")
    if cfg.solver.cfl > 1:
        raise ConfigError(f"solver.cfl must lie in (0, 1], got {cfg.solver.cfl}", key="solver.cfl")
    if cfg.cg.k_max < 1:
        raise ConfigError("cg.k_max must be at least 1", key="cg.k_max")
    if not cfg.noise.level >= 0:
        raise ConfigError("noise.level must be nonnegative", key="noise.level")
    if cfg.noise.seed < 0:
        raise ConfigError("noise.seed must be nonnegative", key="noise.seed")
    _choice(cfg, "medium.speed", ("constant", "layered", "file"))
    _choice(cfg, "medium.gamma", ("inverse_speed", "constant", "file"))
    _choice(cfg, "observation.boundary", ("full", "sides", "file"))
    _choice(cfg, "cg.mode", MODES)
    _choice(cfg, "phantom.kind", ("shepp_logan", "blob", "file"))
    bad = [s for s in cfg.observation.sides if s not in SIDES]
    if bad or not cfg.observation.sides:
        raise ConfigError(f"observation.sides must be a nonempty subset of {', '.join(SIDES)}", key="observation.sides")
    _file(cfg, "medium.speed_file", cfg.medium.speed == "file")
    _file(cfg, "medium.gamma_file", cfg.medium.gamma == "file")
    _file(cfg, "observation.mask_file", cfg.observation.boundary == "file")
    _file(cfg, "phantom.file", cfg.phantom.kind == "file")
    for key in ("io.truth", "io.trace", "io.estimate"):
        _file(cfg, key, getattr(cfg.io, key.split(".")[1]) is not None)


# --------------------------------------------------------------------------
# parsing


def _converter(tp, base_dir):
    tp = tp.replace(" | None", "") if isinstance(tp, str) else tp
    if tp in ("int", int):
        return int
    if tp in ("float", float):
        return float
    if tp in ("str", str):
        return str
    if "tuple" in str(tp):
        return lambda s: tuple(p.strip() for p in s.split(",") if p.strip())
    if "Path" in str(tp):
        return lambda s: (base_dir / s) if not Path(s).is_absolute() else Path(s)
    raise TypeError(tp)


def _schema(base_dir):
    schema = {}
    for sec in dataclasses.fields(RunConfig):
        for f in dataclasses.fields(sec.default_factory):
            schema[f"{sec.name}.{f.name}"] = (sec.name, f.name, _converter(f.type, base_dir))
    return schema


CONFIG_KEYS = tuple(_schema(Path(".")))


def parse_config_text(text: str, base_dir: Path = Path("."), source: str = "<config>") -> RunConfig:
    schema = _schema(Path(base_dir))
    updates: dict[str, dict] = {}
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value', got {raw.strip()!r}", line=lineno)
        if key not in schema:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}", key=key, line=lineno)
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: {key} already set on line {seen[key]}", key=key, line=lineno)
        seen[key] = lineno
        sec, name, conv = schema[key]
        try:
            updates.setdefault(sec, {})[name] = conv(value)
        except ValueError as e:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {e}", key=key, line=lineno) from e
    return build_config(updates)


def build_config(updates: dict[str, dict]) -> RunConfig:
    sections = {
        sec.name: dataclasses.replace(sec.default_factory(), **updates.get(sec.name, {}))
        for sec in dataclasses.fields(RunConfig)
    }
    return RunConfig(**sections)


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config_text(text, path.parent, str(path))


def with_overrides(cfg: RunConfig, **dotted) -> RunConfig:
    """Copy of ``cfg`` with ``section__key=value`` overrides applied and validated."""
    updates: dict[str, dict] = {}
    for k, v in dotted.items():
        sec, name = k.split("__")
        updates.setdefault(sec, {})[name] = v
    sections = {
        sec.name: dataclasses.replace(getattr(cfg, sec.name), **updates.get(sec.name, {}))
        for sec in dataclasses.fields(RunConfig)
    }
    return RunConfig(**sections)


def describe_defaults() -> str:
    cfg = RunConfig()
    return "\n".join(f"  {k} = {v}" for k, v in cfg.as_dict().items())
