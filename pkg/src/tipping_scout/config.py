"""Experiment configuration: a single TOML file per experiment.

Unknown keys anywhere in the file are hard errors so that a typo in a
hyperparameter name can never silently fall back to a default. Seeds are
explicit; nothing is derived from wall-clock entropy.
"""

from __future__ import annotations

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .hyperopt import PARAM_NAMES, Objective, SearchSpace
from .reservoir import HyperParams

__all__ = ["ConfigError", "ExperimentConfig", "load_config"]

SYSTEMS = ("ikeda", "foodchain", "external-csv")


class ConfigError(ValueError):
    """Configuration file is missing, malformed, or inconsistent."""


def _require_keys(table: dict, allowed: set, context: str) -> None:
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {context}: {sorted(unknown)}")


def _get(table: dict, key: str, types, context: str, default=None, required=False):
    if key not in table:
        if required:
            raise ConfigError(f"missing required key {key!r} in {context}")
        return default
    value = table[key]
    if not isinstance(value, types):
        raise ConfigError(f"{context}.{key}: expected {types}, got {type(value).__name__}")
    return value


def _float_list(table: dict, key: str, context: str, default=None, required=False):
    value = _get(table, key, list, context, default=default, required=required)
    if value is default:
        return default
    out = []
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{context}.{key}: expected a list of numbers")
        out.append(float(v))
    return out


@dataclass
class TrainingSection:
    params: Optional[list] = None     # simulate sessions at these values
    length: int = 30_000              # post-washout samples per session
    washout: int = 1000
    files: Optional[list] = None      # external-csv session files


@dataclass
class RegionSection:
    lower: Optional[list] = None
    upper: Optional[list] = None
    grace: int = 10
    inflate: float = 0.5
    extinction_coord: Optional[int] = None
    extinction_floor: float = 1e-4


@dataclass
class SimulateSection:
    params: list = field(default_factory=list)
    length: int = 30_000


@dataclass
class CrisisSection:
    members: int = 100
    b_lo: float = 0.0
    b_hi: float = 1.0
    resolution: float = 1e-3
    t_max: float = 10_000.0
    n_votes: int = 5
    warmup_length: Optional[int] = None


@dataclass
class LifetimesSection:
    members: int = 20
    n_ics: int = 100
    b: float = 1.0
    t_max: float = 100_000.0
    warmup_length: Optional[int] = None


@dataclass
class TuneSection:
    budget: int = 150
    n_nodes: int = 500
    space: SearchSpace = field(default_factory=SearchSpace)
    holdout_fraction: float = 0.25    # external-csv: tail reserved for validation


@dataclass
class ExperimentConfig:
    system: str
    seed: int
    output_dir: Optional[Path]
    threads: int                       # 0 means all available cores
    system_params: dict
    training: TrainingSection
    region: RegionSection
    simulate: SimulateSection
    crisis: CrisisSection
    lifetimes: LifetimesSection
    tune: TuneSection
    objective: Objective
    hyperparams: Optional[HyperParams]
    lyapunov_exponent: Optional[float]
    raw: dict                          # parsed file, echoed into manifests

    def training_values(self) -> list:
        if self.training.params is None:
            raise ConfigError("[training].params is required for this command")
        return self.training.params


_TOP_KEYS = {
    "system", "seed", "output_dir", "threads", "lyapunov_exponent",
    "system_params", "training", "region", "hyperparams", "simulate",
    "crisis", "lifetimes", "tune", "objective",
}

_SYSTEM_PARAM_KEYS = {
    "ikeda": {"gamma", "kappa", "eta"},
    "foodchain": {"x_c", "y_c", "x_p", "y_p", "R0", "C0"},
    "external-csv": set(),
}


def _parse_hyperparams(table: dict) -> HyperParams:
    allowed = {"n_nodes", "avg_degree", "spectral_radius", "sigma_in",
               "k_b", "b0", "alpha", "beta"}
    _require_keys(table, allowed, "[hyperparams]")
    missing = allowed - set(table)
    if missing:
        raise ConfigError(f"[hyperparams] missing key(s): {sorted(missing)}")
    try:
        return HyperParams(
            n_nodes=int(table["n_nodes"]),
            avg_degree=float(table["avg_degree"]),
            spectral_radius=float(table["spectral_radius"]),
            sigma_in=float(table["sigma_in"]),
            k_b=float(table["k_b"]),
            b0=float(table["b0"]),
            alpha=float(table["alpha"]),
            beta=float(table["beta"]),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[hyperparams]: {exc}") from None


def _parse_space(table: dict) -> SearchSpace:
    _require_keys(table, set(PARAM_NAMES), "[tune.space]")
    kwargs = {}
    for name, bounds in table.items():
        if (not isinstance(bounds, list) or len(bounds) != 2
                or any(isinstance(v, bool) or not isinstance(v, (int, float))
                       for v in bounds)):
            raise ConfigError(f"[tune.space].{name}: expected [lower, upper]")
        kwargs[name] = (float(bounds[0]), float(bounds[1]))
    try:
        return SearchSpace(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"[tune.space]: {exc}") from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None

    _require_keys(raw, _TOP_KEYS, str(path))
    system = _get(raw, "system", str, "config", required=True)
    if system not in SYSTEMS:
        raise ConfigError(f"system must be one of {SYSTEMS}, got {system!r}")
    seed = _get(raw, "seed", int, "config", required=True)
    if isinstance(seed, bool):
        raise ConfigError("seed must be an integer")
    threads = _get(raw, "threads", int, "config", default=0)
    out = _get(raw, "output_dir", str, "config")

    sp_table = _get(raw, "system_params", dict, "config", default={})
    _require_keys(sp_table, _SYSTEM_PARAM_KEYS[system], "[system_params]")
    system_params = {k: float(v) for k, v in sp_table.items()}

    t = _get(raw, "training", dict, "config", default={})
    _require_keys(t, {"params", "length", "washout", "files"}, "[training]")
    training = TrainingSection(
        params=_float_list(t, "params", "[training]"),
        length=_get(t, "length", int, "[training]", default=30_000),
        washout=_get(t, "washout", int, "[training]", default=1000),
        files=_get(t, "files", list, "[training]"),
    )
    if system == "external-csv":
        if not training.files:
            raise ConfigError("[training].files is required for external-csv")
        if training.params is not None:
            raise ConfigError("external-csv sessions carry their own parameter "
                              "values; remove [training].params")
    elif training.files is not None:
        raise ConfigError("[training].files is only valid for external-csv")

    r = _get(raw, "region", dict, "config", default={})
    _require_keys(r, {"lower", "upper", "grace", "inflate",
                      "extinction_coord", "extinction_floor"}, "[region]")
    region = RegionSection(
        lower=_float_list(r, "lower", "[region]"),
        upper=_float_list(r, "upper", "[region]"),
        grace=_get(r, "grace", int, "[region]", default=10),
        inflate=float(_get(r, "inflate", (int, float), "[region]", default=0.5)),
        extinction_coord=_get(r, "extinction_coord", int, "[region]"),
        extinction_floor=float(_get(r, "extinction_floor", (int, float),
                                    "[region]", default=1e-4)),
    )
    if (region.lower is None) != (region.upper is None):
        raise ConfigError("[region]: lower and upper must be given together")

    s = _get(raw, "simulate", dict, "config", default={})
    _require_keys(s, {"params", "length"}, "[simulate]")
    simulate = SimulateSection(
        params=_float_list(s, "params", "[simulate]", default=[]),
        length=_get(s, "length", int, "[simulate]", default=30_000),
    )

    c = _get(raw, "crisis", dict, "config", default={})
    _require_keys(c, {"members", "b_lo", "b_hi", "resolution", "t_max",
                      "n_votes", "warmup_length"}, "[crisis]")
    crisis = CrisisSection(
        members=_get(c, "members", int, "[crisis]", default=100),
        b_lo=float(_get(c, "b_lo", (int, float), "[crisis]", default=0.0)),
        b_hi=float(_get(c, "b_hi", (int, float), "[crisis]", default=1.0)),
        resolution=float(_get(c, "resolution", (int, float), "[crisis]",
                              default=1e-3)),
        t_max=float(_get(c, "t_max", (int, float), "[crisis]", default=1e4)),
        n_votes=_get(c, "n_votes", int, "[crisis]", default=5),
        warmup_length=_get(c, "warmup_length", int, "[crisis]"),
    )

    lf = _get(raw, "lifetimes", dict, "config", default={})
    _require_keys(lf, {"members", "n_ics", "b", "t_max", "warmup_length"},
                  "[lifetimes]")
    lifetimes = LifetimesSection(
        members=_get(lf, "members", int, "[lifetimes]", default=20),
        n_ics=_get(lf, "n_ics", int, "[lifetimes]", default=100),
        b=float(_get(lf, "b", (int, float), "[lifetimes]", default=1.0)),
        t_max=float(_get(lf, "t_max", (int, float), "[lifetimes]", default=1e5)),
        warmup_length=_get(lf, "warmup_length", int, "[lifetimes]"),
    )

    tu = _get(raw, "tune", dict, "config", default={})
    _require_keys(tu, {"budget", "n_nodes", "space", "holdout_fraction"},
                  "[tune]")
    tune = TuneSection(
        budget=_get(tu, "budget", int, "[tune]", default=150),
        n_nodes=_get(tu, "n_nodes", int, "[tune]", default=500),
        space=_parse_space(_get(tu, "space", dict, "[tune]", default={})),
        holdout_fraction=float(_get(tu, "holdout_fraction", (int, float),
                                    "[tune]", default=0.25)),
    )

    o = _get(raw, "objective", dict, "config", default={})
    _require_keys(o, {"w_short", "w_climate", "horizon_lyapunov", "n_segments"},
                  "[objective]")
    try:
        objective = Objective(
            w_short=float(_get(o, "w_short", (int, float), "[objective]",
                               default=1.0)),
            w_climate=float(_get(o, "w_climate", (int, float), "[objective]",
                                 default=1.0)),
            horizon_lyapunov=float(_get(o, "horizon_lyapunov", (int, float),
                                        "[objective]", default=5.0)),
            n_segments=_get(o, "n_segments", int, "[objective]", default=20),
        )
    except ValueError as exc:
        raise ConfigError(f"[objective]: {exc}") from None

    hyper_table = _get(raw, "hyperparams", dict, "config")
    hyperparams = None if hyper_table is None else _parse_hyperparams(hyper_table)

    lyap = _get(raw, "lyapunov_exponent", (int, float), "config")
    if lyap is not None:
        lyap = float(lyap)
        if lyap <= 0:
            raise ConfigError("lyapunov_exponent must be positive")

    return ExperimentConfig(
        system=system,
        seed=seed,
        output_dir=None if out is None else Path(out),
        threads=threads,
        system_params=system_params,
        training=training,
        region=region,
        simulate=simulate,
        crisis=crisis,
        lifetimes=lifetimes,
        tune=tune,
        objective=objective,
        hyperparams=hyperparams,
        lyapunov_exponent=lyap,
        raw=raw,
    )
