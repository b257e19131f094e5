"""Measurement-replay validation of planned coverage circuits.

Generates jittered truth trajectories around the commanded path, synthesizes
rate-scheduled sensor measurements from the truth (with the same
field-of-view gating the planner applies), replays them through the online
filter, and reduces each run to table-ready error statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from . import ekf, planner
from .errors import FilterSingularityError

DOWN = np.array([0.0, 0.0, 1.0])


def _gauss_markov(n: int, ts: float, tau: float, sigma: float, rng) -> np.ndarray:
    """First-order Gauss-Markov series, stationary start.

    a[k+1] = phi * a[k] + sigma * sqrt(1 - phi^2) * w, phi = exp(-ts / tau).
    """
    if tau <= 0.0 or ts <= 0.0:
        raise ValueError("tau and ts must be positive")
    draws = rng.standard_normal(n)
    if n == 0:
        return draws
    phi = math.exp(-ts / tau)
    drive = sigma * math.sqrt(1.0 - phi * phi)
    out = np.empty(n)
    out[0] = sigma * draws[0]
    acc = out[0]
    for k in range(1, n):
        acc = phi * acc + drive * draws[k]
        out[k] = acc
    return out


# ---------------------------------------------------------------------------
# truth trajectories


@dataclass
class TruthTrajectory:
    """Actual flown positions beside the commanded trajectory they jitter."""

    pos: np.ndarray
    commanded: planner.NominalTrajectory
    circuit_index: int = 0
    run_index: int = 0

    @property
    def times(self) -> np.ndarray:
        return self.commanded.times


def simulate_truth(nominal: planner.NominalTrajectory, rng,
                   cross_track_sigma: float = 0.3, cross_track_tau: float = 2.0,
                   speed_sigma: float = 0.05, circuit_index: int = 0,
                   run_index: int = 0) -> TruthTrajectory:
    """Jitter the commanded trajectory with correlated tracking error.

    Two independent Gauss-Markov offsets act in the plane perpendicular to
    the commanded direction of travel (cross-track), a third acts along it
    with standard deviation speed_sigma * cross_track_tau, the position lag
    a speed error of that size sustains over one correlation time. Zero
    sigmas reproduce the commanded positions exactly.
    """
    n = nominal.steps
    if n == 0 or (cross_track_sigma == 0.0 and speed_sigma == 0.0):
        return TruthTrajectory(pos=nominal.pos.copy(), commanded=nominal,
                               circuit_index=circuit_index, run_index=run_index)
    ts = nominal.ts
    a1 = _gauss_markov(n + 1, ts, cross_track_tau, cross_track_sigma, rng)
    a2 = _gauss_markov(n + 1, ts, cross_track_tau, cross_track_sigma, rng)
    a3 = _gauss_markov(n + 1, ts, cross_track_tau, speed_sigma * cross_track_tau, rng)

    speeds = np.linalg.norm(nominal.vel, axis=1)
    u = nominal.vel / np.where(speeds > 0.0, speeds, 1.0)[:, None]
    u = np.vstack([u, u[-1:]])
    p1 = np.cross(u, DOWN)
    p1n = np.linalg.norm(p1, axis=1)
    vertical = p1n < 1e-9
    if vertical.any():
        p1[vertical] = [1.0, 0.0, 0.0]
        p1n[vertical] = 1.0
    p1 /= p1n[:, None]
    p2 = np.cross(u, p1)

    offsets = a1[:, None] * p1 + a2[:, None] * p2 + a3[:, None] * u
    return TruthTrajectory(pos=nominal.pos + offsets, commanded=nominal,
                           circuit_index=circuit_index, run_index=run_index)


# ---------------------------------------------------------------------------
# measurement synthesis


@dataclass
class MeasurementEvent:
    """One synthesized sensor reading tagged with its prediction step."""

    step: int
    t: float
    sensor: str
    value: object
    gamma: float | None = None
    dropped: bool = False
    outlier: bool = False


def synthesize_measurements(truth: TruthTrajectory, env, rates, noise, attitude,
                            rng, mode: str = "noisy", dropout: float = 0.0,
                            outlier_prob: float = 0.0,
                            outlier_scale: float = 10.0) -> list[MeasurementEvent]:
    """Sensor readings a real flight along the truth path would deliver.

    Field-of-view gating and the lidar noise scale come from the truth
    positions. In perfect mode values equal the measurement models exactly;
    noisy mode adds draws matching each sensor's configured covariance.
    Dropout marks events as lost without removing them, so replay can skip
    them while statistics still count them.
    """
    if mode not in ("noisy", "perfect"):
        raise ValueError(f"unknown mode {mode!r}; expected 'noisy' or 'perfect'")
    if not 0.0 <= dropout <= 1.0:
        raise ValueError("dropout must be within [0, 1]")
    n = truth.commanded.steps
    ts = truth.commanded.ts
    table = rates.fire_table(n)
    noisy = mode == "noisy"

    try:
        ekf.altimeter_model(np.zeros(6), attitude)
        alt_ok = True
    except FilterSingularityError:
        alt_ok = False

    cam_steps = np.flatnonzero(table["cam"])
    lidar_steps = np.flatnonzero(table["lidar"])
    cam_gate = dict(zip(cam_steps.tolist(),
                        env.camera_sees_many(truth.pos[cam_steps]).tolist()))
    lidar_gate = dict(zip(lidar_steps.tolist(),
                          env.lidar_sees_many(truth.pos[lidar_steps]).tolist()))
    rig_pos = env.rig.position

    sd_alt = math.sqrt(noise.r_alt)
    sd_uwb = math.sqrt(noise.r_uwb)
    chol_cam = np.linalg.cholesky(noise.r_cam)
    chol_lidar = np.linalg.cholesky(noise.r_lidar)
    cos_tilt = math.cos(attitude.roll) * math.cos(attitude.pitch)

    events: list[MeasurementEvent] = []

    def finalize(step, sensor, value, gamma=None):
        outlier = bool(outlier_prob > 0.0 and rng.random() < outlier_prob)
        dropped = bool(dropout > 0.0 and rng.random() < dropout)
        events.append(MeasurementEvent(step=step, t=step * ts, sensor=sensor,
                                       value=value, gamma=gamma,
                                       dropped=dropped, outlier=outlier))
        return outlier

    steps = np.flatnonzero(table["alt"] | table["uwb"] | table["cam"] | table["lidar"])
    for k in steps.tolist():
        r = truth.pos[k]
        d = float(np.linalg.norm(r))
        if table["alt"][k] and alt_ok:
            z = -r[2] / cos_tilt
            if noisy:
                w = sd_alt * rng.standard_normal()
                z += w
                if finalize(k, "alt", z):
                    events[-1].value += (outlier_scale - 1.0) * w
            else:
                finalize(k, "alt", z)
        if table["uwb"][k] and d >= ekf.MIN_RANGE:
            z = d
            if noisy:
                w = sd_uwb * rng.standard_normal()
                z += w
                if finalize(k, "uwb", z):
                    events[-1].value += (outlier_scale - 1.0) * w
            else:
                finalize(k, "uwb", z)
        if table["cam"][k] and cam_gate.get(k, False) and d >= ekf.MIN_RANGE:
            sin_a = -r[2] / d
            if abs(sin_a) > ekf.MIN_SIN_ELEVATION:
                z = r / d
                if noisy:
                    w = math.sqrt(1.0 / abs(sin_a)) * (chol_cam @ rng.standard_normal(3))
                    z = z + w
                    if finalize(k, "cam", z / np.linalg.norm(z)):
                        z = z + (outlier_scale - 1.0) * w
                        events[-1].value = z / np.linalg.norm(z)
                else:
                    finalize(k, "cam", z)
        if table["lidar"][k] and lidar_gate.get(k, False):
            gamma = noise.lidar_gamma.gamma(float(np.linalg.norm(r - rig_pos)))
            z = r
            if noisy:
                w = math.sqrt(gamma) * (chol_lidar @ rng.standard_normal(3))
                z = z + w
                if finalize(k, "lidar", z, gamma):
                    events[-1].value = events[-1].value + (outlier_scale - 1.0) * w
            else:
                finalize(k, "lidar", z, gamma)
    return events


# ---------------------------------------------------------------------------
# replay


def run_online_ekf(truth: TruthTrajectory, events, rates, noise, attitude,
                   P0=None, pec_norm: str = "spectral"):
    """Replay synthesized measurements through the filter along the circuit.

    The commanded velocity is the control input: it is pinned at each
    stretch start while the position estimate integrates it and absorbs the
    measurement corrections. Dropped events are skipped.
    """
    by_step: dict[int, list[MeasurementEvent]] = {}
    for ev in events:
        by_step.setdefault(ev.step, []).append(ev)
    return planner.run_belief_engine(truth.commanded, None, rates, noise, attitude,
                                     events_by_step=by_step, P0=P0,
                                     pec_norm=pec_norm)


# ---------------------------------------------------------------------------
# statistics


@dataclass
class RunStats:
    """Error and bookkeeping summary of one replayed flight."""

    circuit_index: int
    run_index: int
    mode: str
    flight_time: float
    rms_n: float
    rms_e: float
    rms_d: float
    rms_3d: float
    err_mean: float
    err_median: float
    err_sigma: float
    mpe: float
    pec_total: float
    pec_max: float
    alt_updates: int
    uwb_updates: int
    cam_updates: int
    lidar_updates: int
    dropped_events: int


def compute_stats(truth: TruthTrajectory, result, events=None,
                  mode: str = "") -> RunStats:
    """Reduce one replay to scalar error statistics against the truth."""
    est = result.est
    if est is None:
        raise ValueError("result carries no state estimates; run in replay mode")
    err = est[:, 3:] - truth.pos[1:]
    if len(err):
        sq = err * err
        rms_axis = np.sqrt(sq.mean(axis=0))
        dist = np.sqrt(sq.sum(axis=1))
        rms_3d = float(np.sqrt(sq.sum(axis=1).mean()))
        err_mean = float(dist.mean())
        err_median = float(np.median(dist))
        err_sigma = float(dist.std())
        mpe = float(dist.max())
    else:
        rms_axis = np.zeros(3)
        rms_3d = err_mean = err_median = err_sigma = mpe = 0.0
    series = result.pec
    return RunStats(
        circuit_index=truth.circuit_index,
        run_index=truth.run_index,
        mode=mode,
        flight_time=float(result.t[-1]) if len(result.t) else 0.0,
        rms_n=float(rms_axis[0]),
        rms_e=float(rms_axis[1]),
        rms_d=float(rms_axis[2]),
        rms_3d=rms_3d,
        err_mean=err_mean,
        err_median=err_median,
        err_sigma=err_sigma,
        mpe=mpe,
        pec_total=float(series.sum()) if len(series) else 0.0,
        pec_max=float(series.max()) if len(series) else 0.0,
        alt_updates=result.alt_updates,
        uwb_updates=result.uwb_updates,
        cam_updates=result.cam_updates,
        lidar_updates=result.lidar_updates,
        dropped_events=sum(1 for ev in events if ev.dropped) if events else 0,
    )


_AGGREGATE_SKIP = {"circuit_index", "run_index", "mode"}


def aggregate_trials(stats_list) -> dict:
    """Fieldwise mean and median over a set of runs."""
    stats_list = list(stats_list)
    if not stats_list:
        raise ValueError("no runs to aggregate")
    out: dict = {"runs": len(stats_list)}
    for f in fields(RunStats):
        if f.name in _AGGREGATE_SKIP:
            continue
        values = np.array([getattr(s, f.name) for s in stats_list], dtype=float)
        out[f"{f.name}_mean"] = float(values.mean())
        out[f"{f.name}_median"] = float(np.median(values))
    return out


# ---------------------------------------------------------------------------
# trial orchestration


@dataclass
class TrialRecord:
    """Everything produced by one Monte Carlo run of one circuit."""

    truth: TruthTrajectory
    events: list
    result: object
    stats: RunStats


def run_seed_rngs(master_seed: int, circuit_index: int, run_index: int):
    """Independent truth and measurement generators for one run."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(2, circuit_index, run_index))
    truth_ss, meas_ss = ss.spawn(2)
    return np.random.default_rng(truth_ss), np.random.default_rng(meas_ss)


def run_trials(circuit, circuit_index, graph, env, kin, rates, noise,
               master_seed: int, runs: int, mode: str = "noisy",
               cross_track_sigma: float = 0.3, cross_track_tau: float = 2.0,
               speed_sigma: float = 0.05, dropout: float = 0.0,
               outlier_prob: float = 0.0, outlier_scale: float = 10.0,
               pec_norm: str = "spectral") -> list[TrialRecord]:
    """Monte Carlo replay of one circuit: simulate, measure, filter, score."""
    nominal = planner.build_nominal_trajectory(circuit, graph, kin.cruise, noise.ts)
    records = []
    for run_index in range(runs):
        truth_rng, meas_rng = run_seed_rngs(master_seed, circuit_index, run_index)
        truth = simulate_truth(nominal, truth_rng,
                               cross_track_sigma=cross_track_sigma,
                               cross_track_tau=cross_track_tau,
                               speed_sigma=speed_sigma,
                               circuit_index=circuit_index, run_index=run_index)
        events = synthesize_measurements(truth, env, rates, noise, kin.attitude,
                                         meas_rng, mode=mode, dropout=dropout,
                                         outlier_prob=outlier_prob,
                                         outlier_scale=outlier_scale)
        result = run_online_ekf(truth, events, rates, noise, kin.attitude,
                                pec_norm=pec_norm)
        stats = compute_stats(truth, result, events=events, mode=mode)
        records.append(TrialRecord(truth=truth, events=events, result=result,
                                   stats=stats))
    return records
