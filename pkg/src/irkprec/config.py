"""Experiment configuration: dataclass, flat key=value files and flag merging."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .amg import AmgParams, Coarsening, Smoother
from .blocksolve import Side, Subsolver
from .butcher import Kind, Scheme


class ConfigError(ValueError):
    pass


class Problem(str, enum.Enum):
    HEAT = "heat"
    DOUBLE_GLAZING = "double-glazing"


class Study(str, enum.Enum):
    ITERATIONS = "iterations"
    TIMESTEP = "timestep"
    SPECTRAL = "spectral"
    ERROR = "error"


_PROBLEM_ALIASES = {"heat": "heat", "double-glazing": "double-glazing", "doubleglazing": "double-glazing",
                    "dg": "double-glazing"}
_SCHEME_ALIASES = {"radauiia": Scheme.RADAU_IIA, "radau": Scheme.RADAU_IIA, "riia": Scheme.RADAU_IIA,
                   "lobattoiiic": Scheme.LOBATTO_IIIC, "lobatto": Scheme.LOBATTO_IIIC, "liiic": Scheme.LOBATTO_IIIC}
_KIND_ALIASES = {"j": Kind.JACOBI, "gsl": Kind.GAUSS_SEIDEL_LOWER, "du": Kind.DU, "ld": Kind.LD,
                 "custom": Kind.CUSTOM}

# default spatial resolutions per study (inverse mesh widths)
_DEFAULT_HX = {Study.TIMESTEP: {Problem.HEAT: (128,), Problem.DOUBLE_GLAZING: (64,)},
               Study.SPECTRAL: {Problem.HEAT: (8,), Problem.DOUBLE_GLAZING: (16,)},
               Study.ERROR: {Problem.HEAT: (128,), Problem.DOUBLE_GLAZING: (64,)}}


@dataclass(frozen=True)
class ExperimentConfig:
    study: Study = Study.ITERATIONS
    problem: Problem = Problem.HEAT
    scheme: Scheme = Scheme.RADAU_IIA
    stages: tuple[int, ...] = (2,)
    p: int | None = None
    hx_inv: tuple[int, ...] = ()
    # empty means the coupled rule h_t = h_x^((p+1)/q)
    ht: tuple[float, ...] = ()
    eps: float | None = None
    precond: tuple[Kind, ...] = (Kind.JACOBI, Kind.GAUSS_SEIDEL_LOWER, Kind.DU, Kind.LD)
    side: tuple[Side, ...] = (Side.RIGHT,)
    subsolver: Subsolver = Subsolver.AMG
    tol: float = 1e-8
    max_iter: int = 500
    seed: int = 0
    out: Path = Path("results")
    custom_coeff: Path | None = None
    steps: int = 1
    eigs: bool = False
    coarsening: Coarsening = Coarsening.CLASSICAL
    smoother: Smoother = Smoother.SYMMETRIC_GS
    sweeps: int = 1

    def __post_init__(self):
        for name, conv in _COERCE.items():
            v = getattr(self, name)
            if isinstance(v, str):
                try:
                    object.__setattr__(self, name, conv(v))
                except ValueError as exc:
                    raise ConfigError(f"bad value for {name}: {v!r}") from exc
        if self.p is None:
            object.__setattr__(self, "p", 2 if self.problem is Problem.HEAT else 1)
        if not self.hx_inv:
            hx = _DEFAULT_HX.get(self.study, {}).get(self.problem, (8, 16, 32))
            object.__setattr__(self, "hx_inv", hx)
        validate(self)

    @property
    def coupled(self) -> bool:
        return not self.ht

    def amg_params(self) -> AmgParams:
        return AmgParams(coarsening=self.coarsening, smoother=self.smoother,
                         presmooth=self.sweeps, postsmooth=self.sweeps, seed=self.seed)

    def q(self, s: int) -> int:
        return 2 * s - 1 if self.scheme is Scheme.RADAU_IIA else 2 * s - 2

    def coupled_ht(self, s: int, hx_inv: int) -> float:
        return (1.0 / hx_inv) ** ((self.p + 1) / self.q(s))

    def time_steps(self, s: int, hx_inv: int) -> tuple[float, ...]:
        return (self.coupled_ht(s, hx_inv),) if self.coupled else self.ht

    def mesh_n(self, hx_inv: int) -> int:
        # the cavity is [-1, 1]^2, so h_x = 1/k needs 2k elements per side
        return hx_inv if self.problem is Problem.HEAT else 2 * hx_inv

    def manifest_lines(self) -> list[str]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.append(f"{f.name} = {_render(v)}")
        return out


def _render(v) -> str:
    if isinstance(v, tuple):
        return ",".join(_render(x) for x in v)
    if isinstance(v, enum.Enum):
        return str(v.value)
    return "" if v is None else str(v)


def validate(cfg: ExperimentConfig) -> None:
    if cfg.problem is Problem.HEAT and cfg.eps is not None:
        raise ConfigError("eps applies to the double-glazing problem only")
    if cfg.problem is Problem.DOUBLE_GLAZING:
        if cfg.eps is None:
            raise ConfigError("double-glazing needs eps")
        if cfg.eps <= 0:
            raise ConfigError("eps must be positive")
        if cfg.p != 1:
            raise ConfigError("double-glazing uses linear elements (p = 1)")
    if cfg.p not in (1, 2):
        raise ConfigError("p must be 1 or 2")
    if cfg.scheme is Scheme.CUSTOM:
        raise ConfigError("studies run Radau IIA or Lobatto IIIC tables")
    lo, hi = (1, 7) if cfg.scheme is Scheme.RADAU_IIA else (2, 5)
    if not cfg.stages or any(not lo <= s <= hi for s in cfg.stages):
        raise ConfigError(f"{cfg.scheme.value} stages must lie in {lo}..{hi}")
    if any(k < 1 for k in cfg.hx_inv):
        raise ConfigError("hx-inv entries must be positive integers")
    if any(not h > 0 for h in cfg.ht):
        raise ConfigError("time steps must be positive")
    if not cfg.tol > 0:
        raise ConfigError("tol must be positive")
    if cfg.steps < 1 or cfg.max_iter < 1 or cfg.sweeps < 1:
        raise ConfigError("steps, max_iter and sweeps must be at least 1")
    if Kind.CUSTOM in cfg.precond:
        if cfg.custom_coeff is None:
            raise ConfigError("Custom preconditioner needs --custom-coeff")
        if len(cfg.stages) != 1:
            raise ConfigError("a custom coefficient file fixes a single stage count")
    if not cfg.side:
        raise ConfigError("need at least one side")


# --- parsing -------------------------------------------------------------------

def _split(v: str) -> list[str]:
    return [x.strip() for x in v.replace(";", ",").split(",") if x.strip()]


def _int_range(v: str) -> tuple[int, ...]:
    out: list[int] = []
    for tok in _split(v):
        if "-" in tok[1:] or ".." in tok:
            a, b = tok.replace("..", "-").split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(tok))
    return tuple(out)


def _kind(v: str) -> Kind:
    key = v.strip().lower()
    if key not in _KIND_ALIASES:
        raise ConfigError(f"unknown preconditioner {v!r}")
    return _KIND_ALIASES[key]


def _scheme(v: str) -> Scheme:
    key = v.strip().lower().replace(" ", "").replace("_", "")
    if key not in _SCHEME_ALIASES:
        raise ConfigError(f"unknown scheme {v!r}")
    return _SCHEME_ALIASES[key]


def _problem(v: str) -> Problem:
    key = v.strip().lower().replace("_", "-")
    if key not in _PROBLEM_ALIASES:
        raise ConfigError(f"unknown problem {v!r}")
    return Problem(_PROBLEM_ALIASES[key])


def _bool(v: str) -> bool:
    key = v.strip().lower()
    if key in ("1", "true", "yes", "on"):
        return True
    if key in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


_PARSERS = {
    "study": lambda v: Study(v.strip().lower()),
    "problem": _problem,
    "scheme": _scheme,
    "stages": _int_range,
    "p": int,
    "hx_inv": _int_range,
    "ht": lambda v: tuple(float(x) for x in _split(v)),
    "eps": float,
    "precond": lambda v: tuple(_kind(x) for x in _split(v)),
    "side": lambda v: tuple(Side(x.lower()) for x in _split(v)),
    "subsolver": lambda v: Subsolver(v.strip().lower()),
    "tol": float,
    "max_iter": int,
    "seed": int,
    "out": Path,
    "custom_coeff": Path,
    "steps": int,
    "eigs": _bool,
    "coarsening": lambda v: Coarsening(v.strip().lower()),
    "smoother": lambda v: Smoother(v.strip().lower()),
    "sweeps": int,
}
_COERCE = {k: _PARSERS[k] for k in ("study", "problem", "scheme", "subsolver", "coarsening", "smoother")}
_LIST_KEYS = {"stages", "hx_inv", "ht", "precond", "side"}


def parse_pairs(pairs: list[tuple[str, str]]) -> dict:
    """Turn raw (key, value) pairs into typed fields; repeated list keys accumulate."""
    out: dict = {}
    for key, raw in pairs:
        key = key.strip().lower().replace("-", "_")
        if key not in _PARSERS:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            val = _PARSERS[key](raw)
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
        if key in _LIST_KEYS and key in out:
            val = out[key] + val
        out[key] = val
    return out


def read_config_file(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        k, v = line.split("=", 1)
        pairs.append((k, v))
    return parse_pairs(pairs)


def build_config(file_values: dict | None = None, overrides: dict | None = None) -> ExperimentConfig:
    vals = dict(file_values or {})
    vals.update(overrides or {})
    # a fixed time step list selects the fixed rule; the timestep study needs one
    try:
        cfg = ExperimentConfig(**vals)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.study is Study.TIMESTEP and cfg.coupled:
        raise ConfigError("the timestep study needs a list of time steps (ht)")
    return cfg


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(cfg, **kw)
