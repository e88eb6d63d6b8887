"""Command-line pipelines: simulate, train, crisis, lifetimes, tune.

Every command is a pure function of its config file and referenced inputs:
artifacts (CSV tables, JSON summaries, PNG figures, model files) are
byte-identical across reruns and parallelism widths. Each run writes a
manifest echoing the config, the seeds of record, and content hashes.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, crisis, experiments, figures, hyperopt
from .config import ConfigError, ExperimentConfig, load_config
from .crisis import EnsembleSpec, EnsembleUnhealthy
from .dynsys import EscapeRegion, TimeSeries, read_csv, write_csv
from .hyperopt import PARAM_NAMES, ClimateCheck, ValidationSegment, ValidationSuite
from .reservoir import Reservoir, TrainingCorpus

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_UNHEALTHY = 4
EXIT_ALL_CENSORED = 5

OUTPUT_DIR_ENV = "TIPPING_SCOUT_OUT"


class DataError(RuntimeError):
    """Input files or output locations are unusable."""


class AllCensored(RuntimeError):
    """Every lifetime run survived the horizon; no distribution to fit."""


# ---------------------------------------------------------------------------
# Small artifact helpers
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return ""
        return repr(float(value))
    return str(value)


def _write_table(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(outdir: Path, command: str, config: ExperimentConfig,
                    config_path: Path, inputs, outputs) -> None:
    manifest = {
        "command": command,
        "config": config.raw,
        "config_sha256": _sha256(config_path),
        "input_sha256": {str(p): _sha256(Path(p)) for p in inputs},
        "outputs_sha256": {name: _sha256(outdir / name) for name in sorted(outputs)},
        "seed": config.seed,
        "threads": config.threads,
        "tool_version": __version__,
    }
    _write_json(outdir / "manifest.json", manifest)


# ---------------------------------------------------------------------------
# Config-driven assembly
# ---------------------------------------------------------------------------

def _resolve_outdir(config: ExperimentConfig, cli_out) -> Path:
    out = cli_out or os.environ.get(OUTPUT_DIR_ENV) or config.output_dir
    if out is None:
        raise ConfigError("no output directory: set output_dir, --out, or "
                          f"${OUTPUT_DIR_ENV}")
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise DataError(f"output directory not writable: {out} ({exc})") from None
    return out


def _resolve_threads(config: ExperimentConfig, cli_threads) -> int:
    if cli_threads is not None:
        return max(1, cli_threads)
    if config.threads > 0:
        return config.threads
    return os.cpu_count() or 1


def _load_corpus(config: ExperimentConfig):
    """Training corpus plus the list of external files it came from."""
    if config.system == "external-csv":
        files = [Path(f) for f in config.training.files]
        sessions = []
        for f in files:
            try:
                sessions.append(read_csv(f))
            except OSError as exc:
                raise DataError(f"cannot read training file {f}: {exc}") from None
            except ValueError as exc:
                raise DataError(str(exc)) from None
        try:
            corpus = TrainingCorpus(sessions, washout=config.training.washout)
        except ValueError as exc:
            raise DataError(f"inconsistent training sessions: {exc}") from None
        return corpus, files
    params = config.training_values()
    corpus = experiments.make_corpus(
        config.system, params, config.training.length,
        config.training.washout, config.system_params or None,
    )
    return corpus, []


def _resolve_region(config: ExperimentConfig, corpus=None) -> EscapeRegion:
    r = config.region
    if r.lower is not None:
        return EscapeRegion(r.lower, r.upper, r.grace,
                            r.extinction_coord, r.extinction_floor)
    if config.system == "external-csv":
        if corpus is None:
            raise ConfigError("[region] bounds are required for external-csv")
        pooled = np.vstack([s.states for s in corpus.sessions])
        return EscapeRegion.from_attractor(
            pooled, inflate=r.inflate, grace=r.grace,
            floor_coord=r.extinction_coord, floor_value=r.extinction_floor)
    return experiments.region_for(config.system, config.system_params or None)


def _require_hyper(config: ExperimentConfig):
    if config.hyperparams is None:
        raise ConfigError("[hyperparams] section is required for this command "
                          "(run the tune command to produce one)")
    return config.hyperparams


def _labels(config: ExperimentConfig, dim: int):
    if config.system in ("ikeda", "foodchain"):
        return experiments.system_labels(config.system)
    return [f"x{i+1}" for i in range(dim)]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_simulate(config: ExperimentConfig, config_path: Path, outdir: Path,
                 threads: int, render: bool) -> int:
    if config.system == "external-csv":
        raise ConfigError("simulate needs a built-in system (ikeda or foodchain)")
    params = config.simulate.params or config.training.params
    if not params:
        raise ConfigError("[simulate].params (or [training].params) is required")
    outputs = []
    for p in params:
        series = experiments.simulate_series(
            config.system, p, config.simulate.length,
            config.system_params or None)
        labels = _labels(config, series.dim)
        name = f"trajectory_{p!r}.csv"
        write_csv(series, outdir / name, labels=labels)
        outputs.append(name)
        if render:
            fig_name = f"trajectory_{p!r}.png"
            figures.save_trajectory(series, outdir / fig_name, labels)
            outputs.append(fig_name)
    _write_manifest(outdir, "simulate", config, config_path, [], outputs)
    print(f"simulate: wrote {len(params)} trajectories to {outdir}")
    return EXIT_OK


def cmd_train(config: ExperimentConfig, config_path: Path, outdir: Path,
              threads: int, render: bool) -> int:
    hyper = _require_hyper(config)
    corpus, input_files = _load_corpus(config)
    res = Reservoir.build(hyper, corpus.dim, config.seed).train(corpus)
    res.save(outdir / "model.npz")
    warnings = []
    if len(corpus.sessions) == 1:
        warnings.append("single-parameter corpus: no parameter generalization "
                        "expected")
    report = {
        "hyperparams": hyper.to_dict(),
        "seed": config.seed,
        "sessions": [
            {"param": p, "one_step_rmse_normalized": r}
            for p, r in res.session_rmse
        ],
        "warnings": warnings,
    }
    _write_json(outdir / "training_report.json", report)
    outputs = ["model.npz", "training_report.json"]
    if render:
        figures.save_training_report(res.session_rmse,
                                     outdir / "training_report.png")
        outputs.append("training_report.png")
    _write_manifest(outdir, "train", config, config_path, input_files, outputs)
    for line in warnings:
        print(f"warning: {line}")
    rmse = ", ".join(f"{p:g}: {r:.2e}" for p, r in res.session_rmse)
    print(f"train: model written to {outdir / 'model.npz'} (one-step RMSE {rmse})")
    return EXIT_OK


def cmd_crisis(config: ExperimentConfig, config_path: Path, outdir: Path,
               threads: int, render: bool) -> int:
    hyper = _require_hyper(config)
    corpus, input_files = _load_corpus(config)
    region = _resolve_region(config, corpus)
    cc = config.crisis
    spec = EnsembleSpec(hyper, cc.members, base_seed=config.seed)
    estimate = crisis.estimate_critical_point(
        spec, corpus, cc.b_lo, cc.b_hi, cc.resolution, cc.t_max, region,
        n_votes=cc.n_votes, warmup_length=cc.warmup_length, threads=threads,
    )
    _write_table(
        outdir / "crisis_members.csv",
        ["member", "seed", "b_star"],
        [(m.member, m.seed, m.estimate) for m in estimate.members],
    )
    flags = sorted({m.flag for m in estimate.members if m.flag})
    summary = {
        "mean": estimate.mean,
        "std": estimate.std,
        "sem": estimate.sem,
        "n": estimate.n,
        "n_excluded": estimate.n_excluded,
        "flags": {
            flag: sum(1 for m in estimate.members if m.flag == flag)
            for flag in flags
        },
        "b_lo": cc.b_lo,
        "b_hi": cc.b_hi,
        "resolution": cc.resolution,
        "t_max": cc.t_max,
        "n_votes": cc.n_votes,
        "members": cc.members,
        "seeds": spec.member_seeds(),
        "warnings": (["single member"] if cc.members == 1 else []),
    }
    _write_json(outdir / "crisis_summary.json", summary)
    outputs = ["crisis_members.csv", "crisis_summary.json"]
    if render:
        figures.save_crisis_histogram(estimate, outdir / "crisis_histogram.png")
        outputs.append("crisis_histogram.png")
    _write_manifest(outdir, "crisis", config, config_path, input_files, outputs)
    print(f"crisis: predicted critical point = {estimate.mean:.6g} "
          f"+/- {estimate.std:.2g} (n={estimate.n}, "
          f"excluded={estimate.n_excluded})")
    return EXIT_OK


def cmd_lifetimes(config: ExperimentConfig, config_path: Path, outdir: Path,
                  threads: int, render: bool) -> int:
    hyper = _require_hyper(config)
    corpus, input_files = _load_corpus(config)
    region = _resolve_region(config, corpus)
    lc = config.lifetimes
    spec = EnsembleSpec(hyper, lc.members, base_seed=config.seed)
    samples = crisis.lifetime_distribution(
        spec, corpus, lc.b, lc.n_ics, lc.t_max, region,
        warmup_length=lc.warmup_length, threads=threads,
    )
    _write_table(
        outdir / "lifetimes.csv",
        ["member", "ic", "lifetime", "censored"],
        samples.per_run,
    )
    fit = None
    fit_warnings = []
    if samples.lifetimes.size >= 10:
        try:
            fit = crisis.fit_exponential(samples)
            samples.tau = fit.tau
        except ValueError as exc:
            fit_warnings.append(f"exponential fit unavailable: {exc}")
    table = crisis.survival_table(samples)
    _write_table(outdir / "survival.csv", ["lifetime", "log_survival"], table)
    summary = {
        "b": lc.b,
        "horizon": lc.t_max,
        "n_runs": len(samples.per_run),
        "n_escaped": int(samples.lifetimes.size),
        "n_censored": samples.censored,
        "tau": None if fit is None else fit.tau,
        "tau_ci95": None if fit is None else [fit.ci_low, fit.ci_high],
        "shift": None if fit is None else fit.shift,
        "members": lc.members,
        "n_ics": lc.n_ics,
        "seeds": spec.member_seeds(),
        "warnings": fit_warnings,
    }
    _write_json(outdir / "lifetimes_summary.json", summary)
    outputs = ["lifetimes.csv", "survival.csv", "lifetimes_summary.json"]
    if render:
        figures.save_survival_curve(samples, table,
                                    outdir / "survival.png", fit)
        outputs.append("survival.png")
    _write_manifest(outdir, "lifetimes", config, config_path, input_files,
                    outputs)
    if samples.lifetimes.size == 0:
        raise AllCensored(
            f"all {len(samples.per_run)} runs survived the horizon "
            f"{lc.t_max:g}; no lifetimes to fit")
    tau_msg = "unfit (fewer than 10 escapes)" if fit is None else f"{fit.tau:.6g}"
    print(f"lifetimes: {samples.lifetimes.size} escapes, "
          f"{samples.censored} censored, tau = {tau_msg}")
    return EXIT_OK


def cmd_tune(config: ExperimentConfig, config_path: Path, outdir: Path,
             threads: int, render: bool) -> int:
    corpus, input_files = _load_corpus(config)
    region = _resolve_region(config, corpus)
    objective = config.objective
    if config.system == "external-csv":
        if config.lyapunov_exponent is None:
            raise ConfigError("external-csv tune needs lyapunov_exponent in "
                              "the config (it scales the validation horizon)")
        corpus, suite = _split_external_corpus(
            corpus, region, objective, config.lyapunov_exponent,
            config.tune.holdout_fraction)
    else:
        suite = experiments.make_validation_suite(
            config.system, config.training_values(), region, objective,
            warmup_length=min(config.training.washout, 1000),
            seed=config.seed,
            lyapunov_exponent=config.lyapunov_exponent,
            system_params=config.system_params or None,
        )
    space = config.tune.space
    n_nodes = config.tune.n_nodes

    def fn(point, eval_seed):
        hyper = space.to_hyper(point, n_nodes)
        return hyperopt.evaluate(hyper, corpus, suite, objective,
                                 seed=eval_seed)

    result = hyperopt.optimize(space, fn, config.tune.budget, seed=config.seed)
    _write_table(
        outdir / "tune_trace.csv",
        ["iter", "loss", "avg_degree", "rho", "sigma_in", "k_b", "b0",
         "alpha", "log_beta", "seed"],
        [(t.iteration, t.loss, *t.point, t.seed) for t in result.trace],
    )
    best = space.to_hyper(result.best_point, n_nodes)
    _write_best_fragment(outdir / "best_hyperparams.toml", best,
                         result.best_loss)
    outputs = ["tune_trace.csv", "best_hyperparams.toml"]
    if render:
        figures.save_tune_trace([t.loss for t in result.trace],
                                outdir / "tune_trace.png")
        outputs.append("tune_trace.png")
    _write_manifest(outdir, "tune", config, config_path, input_files, outputs)
    print(f"tune: best loss {result.best_loss:.4g} after "
          f"{len(result.trace)} evaluations; fragment written to "
          f"{outdir / 'best_hyperparams.toml'}")
    return EXIT_OK


def _split_external_corpus(corpus, region, objective, lyap, holdout_frac):
    """Head of each session trains; the tail provides validation data."""
    dt = corpus.dt
    horizon = max(1, math.ceil(objective.horizon_lyapunov / (lyap * dt)))
    warmup_len = corpus.washout
    train_sessions = []
    segments = []
    climates = []
    rng = np.random.default_rng(97)
    per_session = max(1, objective.n_segments // len(corpus.sessions))
    for s in corpus.sessions:
        split = int(len(s) * (1.0 - holdout_frac))
        tail = s.states[split:]
        need = warmup_len + horizon + 1
        if split <= corpus.washout + 1 or tail.shape[0] < need:
            raise DataError(
                f"session at param={s.param} too short to hold out "
                f"{holdout_frac:.0%} for validation (needs {need} samples)")
        train_sessions.append(TimeSeries(dt, s.states[:split], s.param))
        climates.append(ClimateCheck(
            warmup=tail[:warmup_len], b=s.param,
            mean=tail.mean(axis=0), std=tail.std(axis=0)))
        for _ in range(per_session):
            i0 = int(rng.integers(0, tail.shape[0] - need + 1))
            segments.append(ValidationSegment(
                warmup=tail[i0 : i0 + warmup_len],
                truth=tail[i0 + warmup_len : i0 + warmup_len + horizon],
                b=s.param))
    suite = ValidationSuite(
        segments=segments, climates=climates, region=region, dt=dt,
        lyapunov_exponent=lyap)
    return TrainingCorpus(train_sessions, corpus.washout), suite


def _write_best_fragment(path: Path, hyper, loss: float) -> None:
    lines = [
        "# tuned reservoir hyperparameters (validation loss "
        f"{repr(float(loss))})",
        "[hyperparams]",
        f"n_nodes = {hyper.n_nodes}",
    ]
    for name in ("avg_degree", "spectral_radius", "sigma_in", "k_b", "b0",
                 "alpha", "beta"):
        lines.append(f"{name} = {repr(float(getattr(hyper, name)))}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "crisis": cmd_crisis,
    "lifetimes": cmd_lifetimes,
    "tune": cmd_tune,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="tipping-scout",
        description="Predict crisis bifurcations and transient-chaos "
                    "lifetimes with parameter-aware reservoir computing.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("simulate", "generate ground-truth trajectory CSVs"),
        ("train", "train a reservoir and persist the model"),
        ("crisis", "ensemble critical-point estimation"),
        ("lifetimes", "transient-lifetime distribution beyond the crisis"),
        ("tune", "Bayesian optimization of the reservoir hyperparameters"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, type=Path,
                       help="experiment TOML file")
        p.add_argument("--out", type=Path, default=None,
                       help="output directory (overrides config and "
                            f"${OUTPUT_DIR_ENV})")
        p.add_argument("--threads", type=int, default=None,
                       help="parallel workers (default: config or all cores)")
        p.add_argument("--no-figures", action="store_true",
                       help="skip PNG rendering")
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config)
        outdir = _resolve_outdir(config, args.out)
        threads = _resolve_threads(config, args.threads)
        return COMMANDS[args.command](config, args.config, outdir, threads,
                                      render=not args.no_figures)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EnsembleUnhealthy as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNHEALTHY
    except AllCensored as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ALL_CENSORED


if __name__ == "__main__":
    sys.exit(main())
