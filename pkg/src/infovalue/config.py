"""Run configuration: an INI file with bracketed sections and ``key = value`` lines."""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .microstructure import DEFAULT_QUOTE_DELAY_MS, FLOW_UNITS, RULES
from .oos.ridge import DEFAULT_PENALTY_GRID
from .oos.window import DEFAULT_PLS_GRID, INPUT_KINDS, MODEL_KINDS

__all__ = ["RunConfig", "ConfigError", "load_config", "default_config_text"]


class ConfigError(ValueError):
    pass


def _floats(v: str) -> tuple[float, ...]:
    return tuple(float(x) for x in v.replace(",", " ").split())


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.replace(",", " ").split())


def _words(v: str) -> tuple[str, ...]:
    return tuple(x for x in v.replace(",", " ").split())


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _opt_int(v: str) -> int | None:
    return None if v.strip().lower() in ("", "auto", "none") else int(v)


def _opt_path(v: str) -> Path | None:
    return None if v.strip() == "" else Path(v.strip())


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v) if v else ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class PathsSection:
    data_dir: Path = Path("data")
    out_dir: Path = Path("out")
    predictions: Path | None = None  # default: out_dir/predictions.csv
    deflator_table: Path | None = None  # CSV with columns date,deflator
    shapley_cache: Path | None = None  # default: out_dir/shapley_cache.txt


@dataclass(frozen=True)
class WindowSection:
    test_years: tuple[int, ...] = ()  # empty: derive from initial_fraction
    initial_fraction: float = 0.6
    validation_fraction: float = 0.2
    penalty_grid: tuple[float, ...] = DEFAULT_PENALTY_GRID
    pls_grid: tuple[int, ...] = DEFAULT_PLS_GRID


@dataclass(frozen=True)
class ModelSection:
    model_kind: str = "ridge"
    input_kinds: tuple[str, ...] = ("text", "zero")
    dm_pairs: tuple[str, ...] = ("zero:text",)  # a:b, positive statistic when b is more accurate


@dataclass(frozen=True)
class DmSection:
    lag: int | None = None  # None: floor(T^(1/3))


@dataclass(frozen=True)
class MicrostructureSection:
    rule: str = "LR"
    rules: tuple[str, ...] = ("LR", "EMO", "CLNV")
    flow_units: str = "shares"
    quote_delay_ms: int = DEFAULT_QUOTE_DELAY_MS
    intercept: bool = False


@dataclass(frozen=True)
class InfovalSection:
    input_kind: str = "text"
    report_days_per_year: float = 15.0
    subsamples: tuple[str, ...] = ("all", "week_bin", "stock")


@dataclass(frozen=True)
class ShapleySection:
    mode: str = "exact"
    topics: tuple[int, ...] = ()  # empty: every topic present in the data
    n_permutations: int = 1000
    max_evaluations: int | None = None
    model_kind: str = "ridge"


@dataclass(frozen=True)
class SimulateSection:
    n_events: int = 2000
    bars_per_event: int = 1170
    signal_share: float = 0.10
    dims: int = 64
    tick_events: int = 50
    n_topics: int = 4
    n_years: int = 10
    start_year: int = 2011
    p0: float = 100.0
    sigma_s: float = 2.0
    sigma_eps: float = 6.0
    sigma_u: float = 200_000.0


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    threads: int = 1


_SECTIONS = {
    "paths": PathsSection,
    "window": WindowSection,
    "model": ModelSection,
    "dm": DmSection,
    "microstructure": MicrostructureSection,
    "infoval": InfovalSection,
    "shapley": ShapleySection,
    "simulate": SimulateSection,
    "run": RunSection,
}

_PARSERS = {
    "Path | None": _opt_path,
    "tuple[int, ...]": _ints,
    "tuple[float, ...]": _floats,
    "tuple[str, ...]": _words,
    "int | None": _opt_int,
    "float": float,
    "int": int,
    "str": lambda v: v.strip(),
    "bool": _bool,
    "Path": lambda v: Path(v.strip()),
}


@dataclass(frozen=True)
class RunConfig:
    paths: PathsSection = field(default_factory=PathsSection)
    window: WindowSection = field(default_factory=WindowSection)
    model: ModelSection = field(default_factory=ModelSection)
    dm: DmSection = field(default_factory=DmSection)
    microstructure: MicrostructureSection = field(default_factory=MicrostructureSection)
    infoval: InfovalSection = field(default_factory=InfovalSection)
    shapley: ShapleySection = field(default_factory=ShapleySection)
    simulate: SimulateSection = field(default_factory=SimulateSection)
    run: RunSection = field(default_factory=RunSection)

    def __post_init__(self) -> None:
        w = self.window
        if any(b <= a for a, b in zip(w.test_years, w.test_years[1:])):
            raise ConfigError("window.test_years must be strictly ascending")
        if not 0 < w.validation_fraction < 1 or not 0 < w.initial_fraction < 1:
            raise ConfigError("window fractions must lie in (0, 1)")
        m = self.model
        if m.model_kind not in MODEL_KINDS or self.shapley.model_kind not in MODEL_KINDS:
            raise ConfigError(f"model kinds must be among {MODEL_KINDS}")
        for k in m.input_kinds + (self.infoval.input_kind,):
            if k not in INPUT_KINDS:
                raise ConfigError(f"unknown input kind {k!r}; expected one of {INPUT_KINDS}")
        for pair in m.dm_pairs:
            parts = pair.split(":")
            if len(parts) != 2 or any(p not in m.input_kinds for p in parts):
                raise ConfigError(f"dm pair {pair!r} must be a:b with both in model.input_kinds")
        ms = self.microstructure
        for r in (ms.rule,) + ms.rules:
            if r not in RULES:
                raise ConfigError(f"unknown signing rule {r!r}; expected one of {RULES}")
        if ms.flow_units not in FLOW_UNITS:
            raise ConfigError(f"flow_units must be one of {FLOW_UNITS}")
        if ms.quote_delay_ms < 0:
            raise ConfigError("quote_delay_ms must be nonnegative")
        if self.shapley.mode not in ("exact", "montecarlo"):
            raise ConfigError("shapley.mode must be exact or montecarlo")
        for s in self.infoval.subsamples:
            if s not in ("all", "week_bin", "stock"):
                raise ConfigError(f"unknown subsample {s!r}")
        if self.run.threads < 1:
            raise ConfigError("threads must be at least 1")

    def with_overrides(self, *, seed: int | None = None, threads: int | None = None,
                       out_dir: Path | None = None) -> "RunConfig":
        run = replace(self.run, **{k: v for k, v in (("seed", seed), ("threads", threads)) if v is not None})
        paths = self.paths if out_dir is None else replace(self.paths, out_dir=Path(out_dir))
        return replace(self, run=run, paths=paths)

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for name in _SECTIONS:
            sec = getattr(self, name)
            cp[name] = {f.name: _fmt(getattr(sec, f.name)) for f in fields(sec)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def load_config(path: str | Path | None) -> RunConfig:
    """Read an INI file over the defaults; unknown sections or keys are errors."""
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} not found")
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(p.read_text(), source=str(p))
    except configparser.Error as exc:
        raise ConfigError(f"{p}: {exc}") from None
    kwargs = {}
    for name in cp.sections():
        cls = _SECTIONS.get(name)
        if cls is None:
            raise ConfigError(f"{p}: unknown section [{name}]")
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for key, raw in cp[name].items():
            if key not in types:
                raise ConfigError(f"{p}: unknown key {key!r} in [{name}]")
            try:
                values[key] = _PARSERS[types[key]](raw)
            except (ValueError, KeyError) as exc:
                raise ConfigError(f"{p}: [{name}] {key} = {raw!r}: {exc}") from None
        kwargs[name] = cls(**values)
    return RunConfig(**kwargs)


def default_config_text() -> str:
    return RunConfig().to_text()
