"""
Monte Carlo experiment harness
==============================

Runs every configured estimator on the same seeded snapshot batch for each
(SNR, trial) pair, aggregates RMSE and probability of resolution, and writes
the result table as CSV and SVG plots.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .array_model import (
    ArrayGeometry,
    SourceScenario,
    noise_variance_from_snr,
    sample_covariance,
    synthesize_snapshots,
)
from .esprit import esprit
from .kai import DEFAULT_INCREMENT, iesprit, two_step_kai
from .metrics import TrialOutcome, crb_sqrt, match_errors, resolved, rmse

log = logging.getLogger(__name__)

ESTIMATORS = ("esprit", "iesprit", "two_step_kai")
PLOT_KINDS = ("rmse", "resolution", "rmse_db_with_crb")
CSV_HEADER = ("snr_db", "estimator", "rmse_deg", "rmse_db", "prob_resolution",
              "mean_mu_opt", "crb_sqrt_deg")
CONFIG_DIR = Path(__file__).parent / "configs"


class ConfigError(ValueError):
    """Invalid or unreadable experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    num_sensors: int = 40
    spacing: float = 0.5
    doas_deg: tuple = (13.0, 15.0, 17.0, 19.0)
    known_doas_deg: tuple = (17.0, 19.0)
    num_snapshots: int = 10
    source_powers: Optional[tuple] = None
    snr_start_db: float = -10.0
    snr_stop_db: float = 20.0
    snr_step_db: float = 2.5
    trials: int = 100
    base_seed: int = 0
    estimators: tuple = ESTIMATORS
    increment: float = DEFAULT_INCREMENT
    rmse_sources: str = "unknown"
    noise_variance: Optional[float] = None
    name: str = "sweep"
    plots: tuple = ("resolution",)
    out_dir: str = "."

    def __post_init__(self):
        for key in ("doas_deg", "known_doas_deg", "estimators", "plots"):
            object.__setattr__(self, key, tuple(getattr(self, key)))
        if self.source_powers is not None:
            object.__setattr__(self, "source_powers", tuple(self.source_powers))
        try:
            self.validate()
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc

    def validate(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if len(self.snr_grid) == 0:
            raise ConfigError("SNR grid is empty")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown or not self.estimators:
            raise ConfigError(f"estimators must be a non-empty subset of {ESTIMATORS}")
        bad_plots = set(self.plots) - set(PLOT_KINDS)
        if bad_plots:
            raise ConfigError(f"unknown plot kinds {sorted(bad_plots)}")
        if self.rmse_sources not in ("unknown", "all"):
            raise ConfigError("rmse_sources must be 'unknown' or 'all'")
        if not 0 < self.increment <= 1:
            raise ConfigError("increment must lie in (0, 1]")
        if not 0 <= self.base_seed < 2 ** 64:
            raise ConfigError("base_seed must be an unsigned 64-bit integer")
        self.known_indices  # raises on unmatched known DOAs
        self.scenario(1.0).check_geometry(self.geometry)

    @property
    def geometry(self) -> ArrayGeometry:
        return ArrayGeometry(self.num_sensors, self.spacing, 1.0)

    @property
    def num_sources(self) -> int:
        return len(self.doas_deg)

    @property
    def known_indices(self) -> tuple:
        doas = sorted(self.doas_deg)
        idx = []
        for k in self.known_doas_deg:
            hits = [i for i, t in enumerate(doas) if abs(t - k) < 1e-9]
            if not hits:
                raise ConfigError(f"known DOA {k} deg is not one of the scenario DOAs")
            idx.append(hits[0])
        return tuple(sorted(idx))

    @property
    def known_doas(self) -> np.ndarray:
        """Known DOAs in radians, taken from the scenario so they match bit for bit."""
        doas = np.deg2rad(sorted(self.doas_deg))
        return doas[list(self.known_indices)]

    @property
    def snr_grid(self) -> tuple:
        if self.snr_step_db <= 0:
            raise ConfigError("snr_step_db must be positive")
        n = int(math.floor((self.snr_stop_db - self.snr_start_db) / self.snr_step_db + 1e-9)) + 1
        return tuple(round(self.snr_start_db + k * self.snr_step_db, 10) for k in range(max(n, 0)))

    def noise_variance_at(self, snr_db: float) -> float:
        if self.noise_variance is not None:
            return float(self.noise_variance)
        return noise_variance_from_snr(snr_db)

    def scenario(self, noise_variance: float) -> SourceScenario:
        powers = self.source_powers or (1.0,) * self.num_sources
        return SourceScenario(np.deg2rad(sorted(self.doas_deg)), powers, noise_variance,
                              self.num_snapshots, self.known_indices)


_SECTIONS = {
    "array": {"num_sensors", "spacing"},
    "scenario": {"doas_deg", "known_doas_deg", "num_snapshots", "source_powers"},
    "sweep": {"snr_start_db", "snr_stop_db", "snr_step_db", "trials", "base_seed",
              "estimators", "increment", "rmse_sources", "noise_variance"},
    "output": {"name", "plots", "out_dir"},
}


def resolve_config_path(path) -> Path:
    """Return ``path`` if it exists, else a bundled config with that file name."""
    p = Path(path)
    if p.is_file():
        return p
    bundled = CONFIG_DIR / p.name
    if bundled.is_file():
        return bundled
    raise ConfigError(f"config file not found: {path}")


def load_config(path, **overrides) -> ExperimentConfig:
    """Parse a TOML experiment file. Keyword overrides replace parsed values."""
    p = resolve_config_path(path)
    try:
        with open(p, "rb") as fh:
            doc = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read {p}: {exc}") from exc
    values = {}
    for section, table in doc.items():
        if section not in _SECTIONS or not isinstance(table, dict):
            raise ConfigError(f"unknown section [{section}] in {p}")
        extra = set(table) - _SECTIONS[section]
        if extra:
            raise ConfigError(f"unknown keys {sorted(extra)} in [{section}]")
        values.update(table)
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class ResultRow:
    snr_db: float
    estimator: str
    rmse_deg: float
    rmse_db: float
    prob_resolution: float
    mean_mu_opt: float
    crb_sqrt_deg: float


@dataclass
class ResultTable:
    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def select(self, estimator: str) -> list:
        return [r for r in self.rows if r.estimator == estimator]

    def column(self, estimator: str, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.select(estimator)])


def run_estimator(name: str, batch, config: ExperimentConfig):
    geom, P = config.geometry, config.num_sources
    if name == "esprit":
        return esprit(sample_covariance(batch), P, geom)
    if name == "iesprit":
        return iesprit(batch, geom, P, config.increment).estimate
    if name == "two_step_kai":
        return two_step_kai(batch, geom, P, config.known_doas, config.increment).estimate
    raise ValueError(f"unknown estimator {name!r}")


def run_trial(config: ExperimentConfig, snr_db: float, trial: int) -> dict:
    """All estimators on the single batch drawn with seed ``base_seed + trial``."""
    scenario = config.scenario(config.noise_variance_at(snr_db))
    truth = np.asarray(scenario.doas)
    batch = synthesize_snapshots(scenario, config.geometry, config.base_seed + trial)
    out = {}
    for name in config.estimators:
        try:
            est = run_estimator(name, batch, config)
            errors = match_errors(truth, est, config.known_indices, config.rmse_sources)
            err_unknown = errors if config.rmse_sources == "unknown" else \
                match_errors(truth, est, config.known_indices)
            ok = resolved(np.rad2deg(truth), err_unknown)
            out[name] = TrialOutcome(errors, ok, est.mu_opt, est.flags)
        except (np.linalg.LinAlgError, ValueError) as exc:
            log.warning("%s failed at snr=%s trial=%d: %s", name, snr_db, trial, exc)
            n = len(scenario.unknown_indices) if config.rmse_sources == "unknown" \
                else scenario.num_sources
            out[name] = TrialOutcome(np.full(n, np.nan), False, None, frozenset({"failed"}))
    return out


def _trial_job(args):
    return run_trial(*args)


def simulate(config: ExperimentConfig, workers: int = 1) -> dict:
    """Raw outcomes: ``{snr_db: [per-trial {estimator: TrialOutcome}]}`` in trial order."""
    jobs = [(config, snr, t) for snr in config.snr_grid for t in range(config.trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trial_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_trial_job(j) for j in jobs]
    outcomes = {snr: [] for snr in config.snr_grid}
    for (_, snr, _), res in zip(jobs, results):
        outcomes[snr].append(res)
    return outcomes


def summarize(config: ExperimentConfig, outcomes: dict) -> ResultTable:
    table = ResultTable()
    for snr in config.snr_grid:
        trials = outcomes[snr]
        crb = crb_sqrt(config.scenario(config.noise_variance_at(snr)), config.geometry,
                       sources=config.rmse_sources)
        for name in config.estimators:
            per = [t[name] for t in trials]
            errors = [o.errors for o in per]
            finite = [e[np.isfinite(e)] for e in errors]
            dropped = sum(e.size for e in errors) - sum(e.size for e in finite)
            if dropped:
                log.warning("%s at snr=%s: %d non-finite errors excluded", name, snr, dropped)
            r = rmse(finite) if sum(e.size for e in finite) else math.nan
            r_db = 20 * math.log10(r) if r > 0 else (-math.inf if r == 0 else math.nan)
            mus = [o.mu_opt for o in per if o.mu_opt is not None]
            table.rows.append(ResultRow(
                snr_db=float(snr), estimator=name, rmse_deg=r, rmse_db=r_db,
                prob_resolution=sum(o.resolved for o in per) / len(per),
                mean_mu_opt=float(np.mean(mus)) if mus else math.nan,
                crb_sqrt_deg=crb))
    return table


def run_experiment(config: ExperimentConfig, workers: int = 1) -> ResultTable:
    return summarize(config, simulate(config, workers))


def _fmt(x) -> str:
    return f"{x:.6f}" if isinstance(x, float) else str(x)


def format_csv(table: ResultTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for row in table.rows:
        w.writerow([_fmt(getattr(row, k)) for k in CSV_HEADER])
    return buf.getvalue()


def emit_csv(table: ResultTable, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(format_csv(table))
    return path


def read_csv(path) -> ResultTable:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {header}")
        rows = [ResultRow(float(r[0]), r[1], *(float(x) for x in r[2:])) for r in reader]
    return ResultTable(rows)


_PLOT_LABELS = {
    "resolution": ("Probability of resolution", "Probability of resolution versus SNR"),
    "rmse": ("RMSE (degrees)", "RMSE versus SNR"),
    "rmse_db_with_crb": ("RMSE (dB)", "RMSE and the square root of CRB versus SNR"),
}
_LABELS = {"esprit": "ESPRIT", "iesprit": "IESPRIT", "two_step_kai": "Two-Step KAI-ESPRIT"}


def emit_plot(table: ResultTable, kind: str, path, subtitle: str = "") -> Path:
    """Write one SVG figure with a curve per estimator.

    Each curve is a single SVG path inside a group with id
    ``curve-<estimator>``; the CRB reference (``rmse_db_with_crb`` only) is
    dashed and has id ``curve-crb``.
    """
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; expected one of {PLOT_KINDS}")
    if not table.rows:
        raise ValueError("cannot plot an empty table")
    import matplotlib
    from matplotlib.figure import Figure

    ylabel, title = _PLOT_LABELS[kind]
    names = list(dict.fromkeys(r.estimator for r in table.rows))
    style = {"svg.hashsalt": "kaiesprit", "path.simplify": False, "svg.fonttype": "path"}
    with matplotlib.rc_context(style):
        fig = Figure(figsize=(6.4, 4.8))
        ax = fig.subplots()
        for name in names:
            snr = table.column(name, "snr_db")
            if kind == "resolution":
                y = table.column(name, "prob_resolution")
            elif kind == "rmse":
                y = table.column(name, "rmse_deg")
            else:
                y = table.column(name, "rmse_db")
            line, = ax.plot(snr, y, marker="o", label=_LABELS.get(name, name))
            line.set_gid(f"curve-{name}")
        if kind == "rmse_db_with_crb":
            ref = table.select(names[0])
            crb_db = [20 * math.log10(r.crb_sqrt_deg) for r in ref]
            line, = ax.plot([r.snr_db for r in ref], crb_db, "k--", label="CRB")
            line.set_gid("curve-crb")
        if kind == "resolution":
            ax.set_ylim(0.0, 1.0)
        if kind == "rmse":
            ax.set_yscale("log")
        ax.set_xlabel("SNR (dB)")
        ax.set_ylabel(ylabel)
        ax.set_title(f"{title}{subtitle}")
        ax.grid(True, alpha=0.3)
        ax.legend()
        fig.tight_layout()
        path = Path(path)
        fig.savefig(path, format="svg", metadata={"Date": None})
    return path


def plot_subtitle(config: ExperimentConfig) -> str:
    return (f" with P={config.num_sources}, M={config.num_sensors}, "
            f"N={config.num_snapshots}, L={config.trials} runs")


def run_sweep(config: ExperimentConfig, out_dir=None, workers: int = 1) -> dict:
    """Run the experiment and write ``<name>.csv`` plus one SVG per plot kind."""
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = run_experiment(config, workers)
    written = {"csv": emit_csv(table, out / f"{config.name}.csv")}
    for k, kind in enumerate(config.plots):
        stem = config.name if k == 0 else f"{config.name}_{kind}"
        written[kind] = emit_plot(table, kind, out / f"{stem}.svg", plot_subtitle(config))
    written["table"] = table
    return written


def with_overrides(config: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
