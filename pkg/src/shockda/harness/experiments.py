"""End-to-end twin experiments: truth, observations, filtering, artifacts.

The truth pipeline runs the coupled shallow-water solver once per
experiment geometry and caches its velocity history (the assimilation
dynamics) plus the reference depth rows, so repeated runs across variants
and seeds reuse the expensive part.  Artifacts are CSV files with
full-precision floats and a ``key = value`` manifest that regenerates the
run bit-identically.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import __version__
from ..errors import ConfigError, ShockdaError
from ..solver import Grid1D, SWEState, VelocityField, solve_coupled_swe, transport_step
from ..stoker import (
    ObservationStream,
    observations_to_csv,
    stoker_evaluate,
    stoker_solve,
    synthesize_observations,
    truth_to_csv,
)
from ..assimilation import Ensemble, ensemble_moments, gradient_second_moment, run_baseline_filter, run_weighted_filter, sample_variance_diag
from ..assimilation.filters import FilterRun
from ..metrics import ErrorSeries, error_series_to_csv, pointwise_error, relative_error
from .config import ExperimentConfig
from .._csvio import fmt17, write_csv

# fixed smooth-region window for the restricted error curve
SMOOTH_WINDOW = (-0.39, 0.39)

_OSC_AMPLITUDE = 0.03
_OSC_WAVENUMBER = 30.0


def initial_condition(config: ExperimentConfig, grid: Grid1D) -> SWEState:
    """Case initial state: dam-break step, or the oscillatory profile."""
    x = grid.points
    if config.case == "oscillatory":
        h = np.where(
            x < -0.5,
            config.h0 + _OSC_AMPLITUDE * np.sin(_OSC_WAVENUMBER * x),
            np.where(x < config.x_dam, config.h0, config.h1),
        )
    else:
        h = np.where(x < config.x_dam, config.h0, config.h1)
    return SWEState(h, np.zeros_like(h), config.g)


@dataclass
class TruthBundle:
    """Velocity history for the dynamics plus reference depth/velocity rows.

    Row 0 of ``truth_h``/``truth_u`` is the initial condition; row j >= 1
    belongs to observation time ``obs_times[j-1]``.  ``kind`` records
    whether the reference is the analytic solution or a fine-grid run.
    """

    grid: Grid1D
    dt: float
    n_steps: int
    obs_steps: np.ndarray
    obs_times: np.ndarray
    velocity: VelocityField
    truth_h: np.ndarray
    truth_u: np.ndarray
    kind: str

    @property
    def all_times(self) -> np.ndarray:
        return np.concatenate(([0.0], self.obs_times))

    def h_at_time(self, t: float) -> np.ndarray:
        hits = np.nonzero(np.abs(self.all_times - t) <= 1e-9 * max(1.0, abs(t)))[0]
        if hits.size == 0:
            raise ConfigError(f"no stored truth at t={t}")
        return self.truth_h[int(hits[0])]


def _truth_fingerprint(config: ExperimentConfig) -> str:
    keys = ("case", "n", "cfl", "t_end", "obs_stride_steps", "h0", "h1", "g", "x_dam", "fine_refine")
    parts = [f"version={__version__}"]
    for k in keys:
        v = getattr(config, k)
        parts.append(f"{k}={fmt17(v) if isinstance(v, float) else v}")
    return ";".join(parts)


def generate_truth(config: ExperimentConfig, cache_dir: Path | None = None) -> TruthBundle:
    """Coupled run for the velocity, plus the reference depth rows.

    Dense/sparse cases evaluate the analytic dam-break solution at the
    observation times; the oscillatory case runs a ``fine_refine``-times
    finer reference and subsamples it by exact index mapping.  Results are
    cached under ``cache_dir`` keyed by the geometry fingerprint.
    """
    grid = config.grid()
    dt = config.dt
    n_steps = config.n_steps
    obs_steps = config.obs_step_indices
    obs_times = config.obs_times

    fingerprint = _truth_fingerprint(config)
    if cache_dir is not None:
        cached = _load_truth_cache(Path(cache_dir), fingerprint, grid, dt, n_steps, obs_steps, obs_times)
        if cached is not None:
            return cached

    coarse = solve_coupled_swe(initial_condition(config, grid), grid, config.solver_config(), config.t_end, record="ends")
    velocity = coarse.velocity

    if config.case == "oscillatory":
        refine = config.fine_refine
        fine_grid = Grid1D(refine * (grid.n - 1) + 1, grid.x_min, grid.x_max)
        fine_run = solve_coupled_swe(
            initial_condition(config, fine_grid),
            fine_grid,
            config.solver_config(),
            config.t_end,
            record=np.concatenate(([0], obs_steps * refine)),
            store_velocity=False,
        )
        truth_h = fine_run.h[:, ::refine]
        truth_u = velocity.u_history[np.concatenate(([0], obs_steps))]
        kind = "reference"
    else:
        params = config.dam_params()
        inter = stoker_solve(params)
        rows_h, rows_u = [], []
        for t in np.concatenate(([0.0], obs_times)):
            h_row, u_row = stoker_evaluate(params, inter, grid.points, float(t))
            rows_h.append(h_row)
            rows_u.append(u_row)
        truth_h = np.asarray(rows_h)
        truth_u = np.asarray(rows_u)
        kind = "analytic"

    bundle = TruthBundle(grid, dt, n_steps, obs_steps, obs_times, velocity, truth_h, truth_u, kind)
    if cache_dir is not None:
        _save_truth_cache(Path(cache_dir), fingerprint, bundle)
    return bundle


def _cache_paths(cache_dir: Path) -> dict:
    return {
        "meta": cache_dir / "truth_meta.txt",
        "u": cache_dir / "velocity_u.npy",
        "h": cache_dir / "truth_h.npy",
        "tu": cache_dir / "truth_u.npy",
    }


def _save_truth_cache(cache_dir: Path, fingerprint: str, bundle: TruthBundle) -> None:
    cache_dir.mkdir(parents=True, exist_ok=True)
    paths = _cache_paths(cache_dir)
    np.save(paths["u"], bundle.velocity.u_history)
    np.save(paths["h"], bundle.truth_h)
    np.save(paths["tu"], bundle.truth_u)
    paths["meta"].write_text(f"fingerprint = {fingerprint}\nkind = {bundle.kind}\n")


def _load_truth_cache(cache_dir: Path, fingerprint: str, grid, dt, n_steps, obs_steps, obs_times):
    paths = _cache_paths(cache_dir)
    if not all(p.exists() for p in paths.values()):
        return None
    meta = {}
    for line in paths["meta"].read_text().splitlines():
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    if meta.get("fingerprint") != fingerprint:
        return None
    velocity = VelocityField(np.load(paths["u"]), dt)
    return TruthBundle(
        grid, dt, n_steps, obs_steps, obs_times, velocity,
        np.load(paths["h"]), np.load(paths["tu"]), meta.get("kind", "analytic"),
    )


@dataclass
class RunArtifacts:
    """Paths of the per-run CSV artifacts, plus in-memory results.

    Only the files a command actually writes are set; the rest stay None.
    """

    manifest: Path
    solution_csv: Path | None = None
    error_csv: Path | None = None
    moments_csv: Path | None = None
    summary_csv: Path | None = None
    truth_csv: Path | None = None
    run: FilterRun | None = None
    truth: TruthBundle | None = None
    series: list | None = None

    def written(self) -> list[Path]:
        paths = [self.solution_csv, self.error_csv, self.moments_csv, self.summary_csv, self.truth_csv, self.manifest]
        return [p for p in paths if p is not None]


def build_initial_ensemble(config: ExperimentConfig, grid: Grid1D, seed: int) -> Ensemble:
    """Case initial depth plus i.i.d. Gaussian point noise, seeded.

    The generator is keyed on (seed, 1) so the ensemble stream stays
    independent of the observation noise stream keyed on seed alone.
    """
    base = initial_condition(config, grid).h
    rng = np.random.default_rng([seed, 1])
    members = base + config.ic_perturb_std * rng.standard_normal((config.ensemble_size, grid.n))
    return ensemble_moments(members)


def write_manifest(path: Path, config: ExperimentConfig, status: str, error: str | None = None) -> None:
    lines = [f"shockda_version = {__version__}"]
    lines += [f"{k} = {v}" for k, v in config.to_items()]
    lines.append(f"status = {status}")
    if error is not None:
        lines.append(f"error = {error.splitlines()[0]}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def read_manifest(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"manifest not found: {path}")
    mapping = {}
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        mapping[key.strip()] = value.strip()
    return mapping


def config_from_manifest(path) -> ExperimentConfig:
    mapping = read_manifest(path)
    mapping = {k: v for k, v in mapping.items() if k not in ("shockda_version", "status", "error")}
    return ExperimentConfig.from_mapping(mapping)


def _moment_rows(times, means, variances, gsms, grid):
    for t, mean, var, gsm in zip(times, means, variances, gsms):
        for i in range(grid.n):
            yield (fmt17(t), fmt17(grid.points[i]), fmt17(mean[i]), fmt17(var[i]), fmt17(gsm[i]))


def run_experiment(config: ExperimentConfig) -> RunArtifacts:
    """Run one filter variant end to end and write all artifacts.

    Any failure still writes the manifest (status=failed plus the message)
    before the error propagates.
    """
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    paths = RunArtifacts(
        manifest=out / "manifest.txt",
        solution_csv=out / "solution.csv",
        error_csv=out / "error.csv",
        moments_csv=out / "moments.csv",
        summary_csv=out / "summary.csv",
    )
    try:
        grid = config.grid()
        bundle = generate_truth(config, cache_dir=config.resolved_cache_dir())
        H = config.observation_operator()
        observations = synthesize_observations(
            bundle.h_at_time, grid, bundle.obs_times, H, config.gamma, config.seed
        )
        ens0 = build_initial_ensemble(config, grid, config.seed)
        solver_cfg = config.solver_config()

        def dynamics(members, step):
            return transport_step(members, bundle.velocity, step, grid, solver_cfg)

        fc = config.filter_config()
        runner = run_baseline_filter if config.variant == "etkf_baseline" else run_weighted_filter
        run = runner(ens0.members, dynamics, observations, fc, grid, steps_per_obs=config.obs_stride_steps)

        label = f"{config.case}_{config.variant}"
        truth_rows = bundle.truth_h[1:]
        rel_full = [relative_error(r.posterior_mean, truth_rows[j]) for j, r in enumerate(run.records)]
        rel_win = [
            relative_error(r.posterior_mean, truth_rows[j], window=SMOOTH_WINDOW, x=grid.points)
            for j, r in enumerate(run.records)
        ]
        series = [
            ErrorSeries(run.times, rel_full, label=label),
            ErrorSeries(run.times, rel_win, label=label, spatial_window=SMOOTH_WINDOW),
        ]

        _write_solution_csv(paths.solution_csv, grid, run, observations, truth_rows)
        _write_error_csv(paths.error_csv, grid, run, truth_rows)
        write_csv(
            paths.summary_csv,
            ("t", "relative_error_full", "relative_error_window"),
            ((fmt17(t), fmt17(ef), fmt17(ew)) for t, ef, ew in zip(run.times, rel_full, rel_win)),
        )
        _write_prior_moments_csv(paths.moments_csv, grid, run, config.snapshot_times)
        write_manifest(paths.manifest, config, status="completed")

        paths.run = run
        paths.truth = bundle
        paths.series = series
        return paths
    except ShockdaError as exc:
        write_manifest(paths.manifest, config, status="failed", error=str(exc))
        raise


def _write_solution_csv(path, grid, run, observations: ObservationStream, truth_rows) -> None:
    obs_idx = observations.operator.indices
    x = grid.points

    def rows():
        for j, rec in enumerate(run.records):
            obs_col = np.full(grid.n, "", dtype=object)
            for c, i in enumerate(obs_idx):
                obs_col[i] = fmt17(observations.values[j, c])
            for i in range(grid.n):
                yield (
                    fmt17(rec.t),
                    fmt17(x[i]),
                    fmt17(truth_rows[j][i]),
                    obs_col[i],
                    fmt17(rec.prior_mean[i]),
                    fmt17(rec.posterior_mean[i]),
                )

    write_csv(path, ("t", "x", "truth", "obs", "prior_mean", "posterior_mean"), rows())


def _write_error_csv(path, grid, run, truth_rows) -> None:
    x = grid.points

    def rows():
        for j, rec in enumerate(run.records):
            err = pointwise_error(rec.posterior_mean, truth_rows[j])
            for i in range(grid.n):
                yield (fmt17(rec.t), fmt17(x[i]), fmt17(err[i]))

    write_csv(path, ("t", "x", "pointwise_error"), rows())


def _write_prior_moments_csv(path, grid, run, snapshot_times) -> None:
    """Prior-ensemble mean/variance/gradient-second-moment at snapshot times."""
    times, means, variances, gsms = [], [], [], []
    for rec in run.records:
        if any(abs(rec.t - s) <= 1e-9 for s in snapshot_times):
            times.append(rec.t)
            means.append(rec.prior_mean)
            variances.append(rec.prior_variance)
            gsms.append(rec.prior_gsm)
    write_csv(path, ("t", "x", "mean", "variance", "gsm"), _moment_rows(times, means, variances, gsms, grid))


def free_ensemble_moments(config: ExperimentConfig) -> tuple:
    """Propagate the initial ensemble with no assimilation; moments at snapshots.

    Returns (times, means, variances, gsms) at the snapshot times, which
    must land on solver steps.
    """
    grid = config.grid()
    bundle = generate_truth(config, cache_dir=config.resolved_cache_dir())
    members = build_initial_ensemble(config, grid, config.seed).members
    solver_cfg = config.solver_config()
    dt = config.dt

    snap_steps = []
    for t in config.snapshot_times:
        s = int(round(t / dt))
        if abs(s * dt - t) > 1e-9 * max(1.0, t) or not 0 <= s <= config.n_steps:
            raise ConfigError(f"snapshot time {t} does not land on a solver step inside the run")
        snap_steps.append(s)

    times, means, variances, gsms = [], [], [], []

    def record(t):
        ens = ensemble_moments(members)
        times.append(t)
        means.append(ens.mean)
        variances.append(sample_variance_diag(ens))
        gsms.append(gradient_second_moment(ens, grid.dx))

    if 0 in snap_steps:
        record(0.0)
    for step in range(max(snap_steps)):
        members = transport_step(members, bundle.velocity, step, grid, solver_cfg)
        if (step + 1) in snap_steps:
            record((step + 1) * dt)
    return np.asarray(times), means, variances, gsms


def run_free_moments(config: ExperimentConfig) -> RunArtifacts:
    """The no-assimilation moment diagnostic: write moments.csv and a manifest."""
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    paths = RunArtifacts(manifest=out / "manifest.txt", moments_csv=out / "moments.csv")
    try:
        grid = config.grid()
        times, means, variances, gsms = free_ensemble_moments(config)
        write_csv(paths.moments_csv, ("t", "x", "mean", "variance", "gsm"), _moment_rows(times, means, variances, gsms, grid))
        write_manifest(paths.manifest, config, status="completed")
        return paths
    except ShockdaError as exc:
        write_manifest(paths.manifest, config, status="failed", error=str(exc))
        raise


def run_truth_only(config: ExperimentConfig) -> RunArtifacts:
    """Generate and cache the truth, writing it as a (t, x, h, u) CSV."""
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    paths = RunArtifacts(manifest=out / "manifest.txt", truth_csv=out / "truth.csv")
    try:
        bundle = generate_truth(config, cache_dir=config.resolved_cache_dir())
        truth_to_csv(bundle.all_times, bundle.grid, bundle.truth_h, bundle.truth_u, paths.truth_csv)
        write_manifest(paths.manifest, config, status="completed")
        paths.truth = bundle
        return paths
    except ShockdaError as exc:
        write_manifest(paths.manifest, config, status="failed", error=str(exc))
        raise


def compare_runs(summary_paths, out_path=None, windows=None, labels=None, column: str = "relative_error_full"):
    """Join summary CSVs on their (shared) time grid and aggregate over windows.

    Returns (times, {label: values}, {window: {label: mean}}); mismatched
    time grids are rejected naming the first offending time.
    """
    summary_paths = [Path(p) for p in summary_paths]
    if not summary_paths:
        raise ConfigError("no summaries to compare")
    if labels is None:
        labels = []
        for p in summary_paths:
            label = p.parent.name or p.stem
            while label in labels:
                label += "+"
            labels.append(label)
    elif len(labels) != len(summary_paths):
        raise ConfigError("labels must match the number of summaries")

    times_ref = None
    columns: dict = {}
    for label, path in zip(labels, summary_paths):
        if not path.exists():
            raise ConfigError(f"summary not found: {path}")
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None or column not in reader.fieldnames:
                raise ConfigError(f"{path} has no '{column}' column")
            t_list, v_list = [], []
            for row in reader:
                t_list.append(float(row["t"]))
                v_list.append(float(row[column]))
        times = np.asarray(t_list)
        if times_ref is None:
            times_ref = times
        elif times.shape != times_ref.shape or not np.array_equal(times, times_ref):
            bad = 0 if times.shape != times_ref.shape else int(np.argmax(times != times_ref))
            t_bad = times[bad] if bad < times.size else float("nan")
            raise ConfigError(f"time grids differ: {path} at t={t_bad!r} (row {bad + 2})")
        columns[label] = np.asarray(v_list)

    aggregates = {}
    for window in windows or []:
        lo, hi = window
        mask = (times_ref >= lo - 1e-12) & (times_ref <= hi + 1e-12)
        if not mask.any():
            raise ConfigError(f"window [{lo}, {hi}] contains no comparison times")
        aggregates[(lo, hi)] = {label: float(columns[label][mask].mean()) for label in labels}

    if out_path is not None:
        def rows():
            for r, t in enumerate(times_ref):
                yield (fmt17(t), *(fmt17(columns[label][r]) for label in labels))
            for (lo, hi), means in aggregates.items():
                yield (f"mean[{fmt17(lo)},{fmt17(hi)}]", *(fmt17(means[label]) for label in labels))

        write_csv(out_path, ("t", *labels), rows())

    return times_ref, columns, aggregates
