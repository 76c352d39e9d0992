"""Experiment orchestration: configuration, runs, manifests and reports.

A run is described by a :class:`RunConfig` (INI or JSON on disk), executed
into an output directory containing response-curve CSVs, variance tables and
a JSON manifest with the config snapshot, per-realization seed derivation,
wall-clock data and a checksum for every output file. Re-running the same
config with the same seed reproduces every output byte for byte, for any
worker count.

Full-scale literature reference values for the Lennard-Jones experiments
(N = 1000, K = 1e5; hours of compute) are recorded here as constants; desk
runs only check internal consistency against them, see the README.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .coupling import PerturbationMap
from .dynamics import Box, Cosine1D, LangevinParams, SystemSpec
from .estimators import (
    green_kubo_estimate,
    naive_transient_estimate,
    nemd_estimate,
    result_from_accumulator,
    subtraction_estimate,
    ttcf_estimate,
    variance_report,
)
from .fdoracle import FDGrid, bias_sweep
from .forcing import Constant1D, Test1D
from .lj import LJParams
from .simulate import (
    LJTransientSetup,
    run_1d_ensemble,
    run_nemd_1d,
    simulate_lj_transient,
)

__all__ = [
    "MOBILITY_FULL_SCALE_REFERENCE",
    "RunConfig",
    "RunFailedError",
    "RunManifest",
    "SHEAR_FULL_SCALE_REFERENCE",
    "ConfigError",
    "defaults_for",
    "load_config",
    "pilot_run",
    "run_experiment",
]

#: Literature values for the full-scale configurations (reduced units):
#: integrated mobility response and first shear Fourier mode.
MOBILITY_FULL_SCALE_REFERENCE = 0.122
SHEAR_FULL_SCALE_REFERENCE = 0.322

MODES = ("mobility", "shear", "bias1d", "gk1d", "ttcf1d", "custom")
PILOT_REALIZATIONS = 100


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class RunFailedError(RuntimeError):
    """More than the tolerated fraction of realizations failed."""


@dataclass
class RunConfig:
    """All knobs of one experiment; see ``defaults_for`` for per-mode values."""

    mode: str
    eta: float = 0.1
    alpha: int = 1
    T: float = 2.0
    t_therm: float = 1.0
    dt: float = 1e-3
    K: int = 100_000
    N: int = 1000
    density: float = 0.6
    beta: float = 0.8
    gamma: float = 1.0
    lj: LJParams = field(default_factory=LJParams)
    master_seed: int = 20240601
    stride: int = 1
    threads: int = 1
    output_dir: str = "out"
    variance_times: tuple = ()
    # 1D-system knobs
    amplitude: float = 1.0          # cosine potential amplitude
    forcing_value: float = 1.0      # constant 1D forcing
    nemd_T: float = 200.0
    nemd_burn_in: float = 5.0
    recenter: bool = False
    estimator: str = "transient"    # custom mode dispatch
    # finite-difference grid knobs
    m_q: int = 200
    m_p: int = 400
    p_max: float = 5.0
    eta_sweep: tuple = (0.01, 0.02, 0.04, 0.08, 0.16, 0.32)

    def validate(self):
        problems = []
        if self.mode not in MODES:
            problems.append(f"unknown mode {self.mode!r}")
        for name in ("dt", "beta", "gamma"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be positive")
        if self.T < 0 or self.t_therm < 0:
            problems.append("T and t_therm must be nonnegative")
        if self.K < 1:
            problems.append("K must be >= 1")
        if self.stride < 1:
            problems.append("stride must be >= 1")
        if self.alpha not in (1, 2):
            problems.append("alpha must be 1 or 2")
        if self.threads < 1:
            problems.append("threads must be >= 1")
        if self.mode in ("mobility", "shear"):
            if self.eta == 0.0:
                problems.append("transient modes need a nonzero eta")
            if self.N < 2:
                problems.append("need at least 2 particles")
            if self.density <= 0:
                problems.append("density must be positive")
            else:
                box_l = (self.N / self.density) ** (1.0 / 3.0)
                if box_l < 2.0 * self.lj.r_cut:
                    problems.append(
                        f"box side {box_l:.3f} below 2*r_cut = {2 * self.lj.r_cut}; "
                        "raise N or lower the density"
                    )
        if self.mode == "custom" and self.estimator not in (
                "transient", "gk", "ttcf", "nemd"):
            problems.append(f"unknown custom estimator {self.estimator!r}")
        if self.mode == "bias1d" and len(self.eta_sweep) < 2:
            problems.append("eta_sweep needs at least 2 points")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    def to_dict(self):
        d = asdict(self)
        d["lj"] = asdict(self.lj)
        d["variance_times"] = list(self.variance_times)
        d["eta_sweep"] = list(self.eta_sweep)
        return d


def defaults_for(mode):
    """Per-mode default configuration (full-scale for the LJ experiments)."""
    if mode == "mobility":
        return RunConfig(mode="mobility", T=2.0, t_therm=1.0, K=100_000, dt=1e-3,
                         beta=0.8, gamma=1.0, N=1000, density=0.6,
                         variance_times=(1.0, 2.0))
    if mode == "shear":
        return RunConfig(mode="shear", T=3.5, t_therm=1.0, K=100_000, dt=1e-3,
                         beta=1.25, gamma=1.0, N=1000, density=0.7,
                         variance_times=(2.0, 3.5))
    if mode == "bias1d":
        return RunConfig(mode="bias1d", beta=1.0, gamma=1.0, dt=0.01)
    if mode == "gk1d":
        return RunConfig(mode="gk1d", T=20.0, K=5000, dt=0.01, beta=1.0, gamma=1.0)
    if mode == "ttcf1d":
        return RunConfig(mode="ttcf1d", T=10.0, K=5000, dt=0.01, beta=1.0,
                         gamma=1.0, eta=0.1, recenter=True)
    if mode == "custom":
        raise ConfigError("custom mode has no defaults; supply a full config")
    raise ConfigError(f"unknown mode {mode!r}")


_FLOAT_FIELDS = {"eta", "T", "t_therm", "dt", "density", "beta", "gamma",
                 "amplitude", "forcing_value", "nemd_T", "nemd_burn_in", "p_max"}
_INT_FIELDS = {"alpha", "K", "N", "master_seed", "stride", "threads", "m_q", "m_p"}
_TUPLE_FIELDS = {"variance_times", "eta_sweep"}
_BOOL_FIELDS = {"recenter"}


def _coerce(key, value):
    if key in _FLOAT_FIELDS:
        return float(value)
    if key in _INT_FIELDS:
        return int(float(value))
    if key in _BOOL_FIELDS:
        if isinstance(value, bool):
            return value
        return str(value).strip().lower() in ("1", "true", "yes", "on")
    if key in _TUPLE_FIELDS:
        if isinstance(value, (list, tuple)):
            return tuple(float(x) for x in value)
        return tuple(float(x) for x in str(value).replace(",", " ").split())
    return value


def load_config(path):
    """Read a config from INI (sections [run] and [lj]) or JSON."""
    path = Path(path)
    text = path.read_text()
    if text.lstrip().startswith("{"):
        raw = json.loads(text)
        lj_raw = raw.pop("lj", {})
    else:
        parser = configparser.ConfigParser()
        parser.read_string(text)
        if "run" not in parser:
            raise ConfigError("INI config needs a [run] section")
        raw = dict(parser["run"])
        lj_raw = dict(parser["lj"]) if "lj" in parser else {}
    if "mode" not in raw:
        raise ConfigError("config must set a mode")
    mode = raw.pop("mode")
    try:
        cfg = defaults_for(mode)
    except ConfigError:
        if mode == "custom":
            cfg = RunConfig(mode="custom", T=10.0, K=1000, dt=0.01, beta=1.0,
                            gamma=1.0)
        else:
            raise
    known = set(cfg.__dataclass_fields__)
    updates = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        updates[key] = _coerce(key, value)
    lj_updates = {k: float(v) for k, v in lj_raw.items()}
    unknown_lj = set(lj_updates) - {"sigma", "epsilon", "r_cut"}
    if unknown_lj:
        raise ConfigError(f"unknown lj keys {sorted(unknown_lj)}")
    cfg = replace(cfg, **updates)
    if lj_updates:
        cfg = replace(cfg, lj=replace(cfg.lj, **lj_updates))
    return cfg.validate()


@dataclass
class RunManifest:
    """Provenance record finalized at the end of every run."""

    config: dict
    version: str
    status: str = "running"
    started: str = ""
    finished: str = ""
    wall_seconds: float = 0.0
    seeds: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    results: dict = field(default_factory=dict)

    def write(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    @staticmethod
    def read(path):
        return RunManifest(**json.loads(Path(path).read_text()))


def _checksum(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _utcnow():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write_combined_response_csv(path, naive, sub):
    cols = [
        ("t", naive.times),
        ("naive_inst_mean", naive.inst_mean),
        ("naive_inst_stderr", naive.inst_stderr),
        ("naive_int_mean", naive.mean_curve),
        ("naive_int_stderr", naive.stderr_curve),
        ("sub_inst_mean", sub.inst_mean),
        ("sub_inst_stderr", sub.inst_stderr),
        ("sub_int_mean", sub.mean_curve),
        ("sub_int_stderr", sub.stderr_curve),
    ]
    with open(path, "w") as fh:
        fh.write(",".join(name for name, _ in cols) + "\n")
        for row in zip(*(vals for _, vals in cols)):
            fh.write(",".join(f"{x:.17g}" for x in row) + "\n")


def _system_1d(config):
    potential = Cosine1D(config.amplitude)
    params = LangevinParams(beta=config.beta, gamma=config.gamma, mass=1.0,
                            dt=config.dt)
    return SystemSpec(potential, params, Box((2.0 * np.pi,)))


def _observable_1d(config, potential):
    return Test1D(beta=config.beta, potential=potential)


def _lj_setup(config):
    params = LangevinParams(beta=config.beta, gamma=config.gamma, mass=1.0,
                            dt=config.dt)
    return LJTransientSetup(
        mode=config.mode, n_particles=config.N, density=config.density,
        lj=config.lj, params=params, t_therm=config.t_therm, t_final=config.T,
        eta=config.eta, alpha=config.alpha, master_seed=config.master_seed,
        stride=config.stride)


def _variance_times(config):
    times = tuple(config.variance_times)
    if not times and config.T > 0:
        times = (config.T,)
    return times


def _run_lj_transient_mode(config, outdir, manifest):
    setup = _lj_setup(config)
    data = simulate_lj_transient(setup, config.K, threads=config.threads)
    manifest.failures = [[int(k), reason] for k, reason in data.failures]
    times = _variance_times(config)
    naive = result_from_accumulator(data.acc_naive, "naive_transient",
                                    config.eta, variance_times=times)
    sub = result_from_accumulator(data.acc_sub, "subtraction",
                                  config.eta, variance_times=times)
    name = f"response_{config.mode}_eta{config.eta:g}.csv"
    _write_combined_response_csv(outdir / name, naive, sub)
    table = variance_report([(naive, sub)], times)
    table.write_csv(outdir / "variance_table.csv")
    (outdir / "variance_table.txt").write_text(table.format_text() + "\n")
    manifest.results = {
        "estimate_naive": naive.estimate,
        "estimate_naive_stderr": naive.estimate_stderr,
        "estimate_subtraction": sub.estimate,
        "estimate_subtraction_stderr": sub.estimate_stderr,
        "kinetic_temperature": data.kin_temp_mean,
        "n_ok": data.n_ok,
        "reference_full_scale": (MOBILITY_FULL_SCALE_REFERENCE
                                 if config.mode == "mobility"
                                 else SHEAR_FULL_SCALE_REFERENCE),
    }
    if len(data.failures) > 0.01 * config.K:
        raise RunFailedError(
            f"{len(data.failures)} of {config.K} realizations failed")


def _run_bias1d_mode(config, outdir, manifest):
    system = _system_1d(config)
    obs = _observable_1d(config, system.potential)
    grid = FDGrid(m_q=config.m_q, m_p=config.m_p, p_max=config.p_max)
    sweep = bias_sweep(system, obs, config.eta_sweep, grid=grid,
                       forcing=Constant1D(config.forcing_value))
    sweep.write_csv(outdir / "bias_sweep.csv")
    manifest.results = {
        "slope_alpha1": sweep.slopes[1],
        "slope_alpha2": sweep.slopes[2],
        "reference_transport": sweep.transport,
    }


def _run_gk1d_mode(config, outdir, manifest):
    system = _system_1d(config)
    obs = _observable_1d(config, system.potential)
    forcing = Constant1D(config.forcing_value)
    series = run_1d_ensemble(system, obs, config.T, config.K,
                             config.master_seed, forcing=forcing)
    result = green_kubo_estimate(series, variance_times=_variance_times(config))
    result.write_csv(outdir / "response_gk1d.csv")
    manifest.results = {
        "estimate": result.estimate,
        "estimate_stderr": result.estimate_stderr,
    }


def _run_ttcf1d_mode(config, outdir, manifest):
    system = _system_1d(config)
    obs = _observable_1d(config, system.potential)
    forcing = Constant1D(config.forcing_value)
    series = run_1d_ensemble(system, obs, config.T, config.K,
                             config.master_seed, forcing=forcing, eta=config.eta)
    times = _variance_times(config)
    plain = ttcf_estimate(series, config.eta, variance_times=times)
    plain.write_csv(outdir / "response_ttcf1d.csv")
    manifest.results = {
        "estimate_plain": plain.estimate,
        "estimate_plain_stderr": plain.estimate_stderr,
    }
    if config.recenter:
        values, dt = run_nemd_1d(system, obs, forcing, config.eta,
                                 config.nemd_T, config.master_seed,
                                 stream_id=config.K)
        aux = nemd_estimate(values, dt, config.eta, burn_in=config.nemd_burn_in)
        recentered = ttcf_estimate(series, config.eta, recenter=True,
                                   steady_mean=aux.steady_mean,
                                   variance_times=times)
        recentered.write_csv(outdir / "response_ttcf1d_recentered.csv")
        manifest.results.update({
            "estimate_recentered": recentered.estimate,
            "estimate_recentered_stderr": recentered.estimate_stderr,
            "steady_mean": aux.steady_mean,
            "steady_mean_stderr": aux.steady_mean_stderr,
            "nemd_rate": aux.rate,
            "nemd_rate_stderr": aux.rate_stderr,
        })


def _run_custom_mode(config, outdir, manifest):
    system = _system_1d(config)
    obs = _observable_1d(config, system.potential)
    forcing = Constant1D(config.forcing_value)
    times = _variance_times(config)
    if config.estimator == "gk":
        _run_gk1d_mode(config, outdir, manifest)
    elif config.estimator == "ttcf":
        _run_ttcf1d_mode(config, outdir, manifest)
    elif config.estimator == "nemd":
        values, dt = run_nemd_1d(system, obs, forcing, config.eta,
                                 config.T, config.master_seed)
        res = nemd_estimate(values, dt, config.eta, burn_in=config.nemd_burn_in)
        manifest.results = {
            "estimate": res.rate, "estimate_stderr": res.rate_stderr,
            "steady_mean": res.steady_mean,
        }
    else:  # transient subtraction on the 1D system
        params = system.params
        pmap = PerturbationMap(order=config.alpha, eta=config.eta,
                               forcing=forcing, params=params)
        series = run_1d_ensemble(system, obs, config.T, config.K,
                                 config.master_seed, forcing=forcing, pmap=pmap)
        naive = naive_transient_estimate(series, config.eta, variance_times=times)
        sub = subtraction_estimate(series, config.eta, variance_times=times)
        _write_combined_response_csv(outdir / "response_custom_transient.csv",
                                     naive, sub)
        table = variance_report([(naive, sub)], times)
        table.write_csv(outdir / "variance_table.csv")
        (outdir / "variance_table.txt").write_text(table.format_text() + "\n")
        manifest.results = {
            "estimate_naive": naive.estimate,
            "estimate_subtraction": sub.estimate,
            "estimate_subtraction_stderr": sub.estimate_stderr,
        }


def run_experiment(config):
    """Execute a configured run into its output directory.

    Writes the manifest before starting, finalizes it with checksums and
    wall-clock data at the end, and raises :class:`RunFailedError` (after
    finalizing) when more than 1% of the realizations blew up.
    """
    config.validate()
    outdir = Path(config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        config=config.to_dict(), version=__version__, started=_utcnow(),
        seeds={"master_seed": config.master_seed,
               "stream_ids": f"0..{config.K - 1}",
               "derivation": "realization k uses stream_id = k"},
    )
    manifest_path = outdir / "manifest.json"
    manifest.write(manifest_path)
    t0 = time.monotonic()
    error = None
    try:
        if config.mode in ("mobility", "shear"):
            _run_lj_transient_mode(config, outdir, manifest)
        elif config.mode == "bias1d":
            _run_bias1d_mode(config, outdir, manifest)
        elif config.mode == "gk1d":
            _run_gk1d_mode(config, outdir, manifest)
        elif config.mode == "ttcf1d":
            _run_ttcf1d_mode(config, outdir, manifest)
        else:
            _run_custom_mode(config, outdir, manifest)
        manifest.status = "completed"
    except RunFailedError as exc:
        manifest.status = "failed"
        error = exc
    manifest.finished = _utcnow()
    manifest.wall_seconds = time.monotonic() - t0
    manifest.outputs = {
        p.name: _checksum(p)
        for p in sorted(outdir.iterdir())
        if p.is_file() and p.name != "manifest.json"
    }
    manifest.write(manifest_path)
    if error is not None:
        raise error
    return manifest


def pilot_run(config, k_pilot=PILOT_REALIZATIONS):
    """Coarse observational run estimating the decoupling time.

    Runs ``k_pilot`` realizations of an LJ transient config and reports the
    first grid time at which the subtraction standard error exceeds the
    naive one (the point where the control variate stops paying off), or
    None when no crossing occurs within the horizon.
    """
    config.validate()
    if config.mode not in ("mobility", "shear"):
        raise ConfigError("pilot runs apply to the LJ transient modes")
    setup = _lj_setup(config)
    data = simulate_lj_transient(setup, k_pilot, threads=config.threads)
    times = _variance_times(config)
    naive = result_from_accumulator(data.acc_naive, "naive_transient",
                                    config.eta, variance_times=times)
    sub = result_from_accumulator(data.acc_sub, "subtraction", config.eta,
                                  variance_times=times)
    crossing = None
    worse = sub.stderr_curve[1:] > naive.stderr_curve[1:]
    if np.any(worse):
        crossing = float(naive.times[1:][np.argmax(worse)])
    report = {
        "mode": config.mode,
        "eta": config.eta,
        "k_pilot": k_pilot,
        "decoupling_time": crossing,
        "final_naive_stderr": float(naive.stderr_curve[-1]),
        "final_subtraction_stderr": float(sub.stderr_curve[-1]),
    }
    outdir = Path(config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "pilot_report.json").write_text(json.dumps(report, indent=2) + "\n")
    return report
