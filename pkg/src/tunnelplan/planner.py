"""Belief propagation along coverage circuits and candidate ranking.

Turns a circuit over the roadmap into a constant-speed nominal trajectory,
pushes the navigation covariance along it with rate-scheduled, field-of-view
gated sensor updates, and summarizes the accumulated position-error
covariance (pec) so candidate circuits can be ranked.

The same stepping engine drives both planning (covariance-only, mean pinned
to the nominal trajectory) and measurement replay (mean free, commanded
velocity treated as a control input), so planned and replayed covariance
series agree step for step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ekf
from .errors import FilterSingularityError, InvalidCircuitError

SENSOR_ORDER = ("alt", "uwb", "cam", "lidar")

_I6_ROW = np.eye(6)


# ---------------------------------------------------------------------------
# position-error covariance norms


def _sym3_minmax(blocks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Smallest and largest eigenvalue of symmetric 3x3 blocks, closed form.

    blocks has shape (n, 3, 3). Uses the trigonometric solution of the
    characteristic cubic, vectorized over the batch.
    """
    a = blocks[:, 0, 0]
    b = blocks[:, 1, 1]
    c = blocks[:, 2, 2]
    d = blocks[:, 0, 1]
    e = blocks[:, 0, 2]
    f = blocks[:, 1, 2]
    p1 = d * d + e * e + f * f
    q = (a + b + c) / 3.0
    aa = a - q
    bb = b - q
    cc = c - q
    p2 = aa * aa + bb * bb + cc * cc + 2.0 * p1
    p = np.sqrt(np.maximum(p2, 0.0) / 6.0)
    # p == 0 means the block is q * I; guard the division
    safe = np.where(p > 0.0, p, 1.0)
    A = aa / safe
    B = bb / safe
    C = cc / safe
    D = d / safe
    E = e / safe
    F = f / safe
    det = A * (B * C - F * F) - D * (D * C - F * E) + E * (D * F - B * E)
    r = np.clip(det / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    lmax = q + 2.0 * p * np.cos(phi)
    lmin = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    return np.where(p > 0.0, lmin, q), np.where(p > 0.0, lmax, q)


def _max_eig_sym3(blocks: np.ndarray) -> np.ndarray:
    return _sym3_minmax(blocks)[1]


def pec_series(blocks: np.ndarray, norm: str = "spectral") -> np.ndarray:
    """Scalar position-error covariance for a batch of 3x3 position blocks."""
    blocks = np.asarray(blocks, dtype=float)
    if blocks.ndim != 3 or blocks.shape[1:] != (3, 3):
        raise ValueError("expected an (n, 3, 3) batch of position blocks")
    if norm == "spectral":
        return _max_eig_sym3(blocks)
    if norm == "fro":
        return np.sqrt((blocks * blocks).sum(axis=(1, 2)))
    raise ValueError(f"unknown pec norm {norm!r}; expected 'spectral' or 'fro'")


def pec(P: np.ndarray, norm: str = "spectral") -> float:
    """Scalar uncertainty of the position block of a full 6x6 covariance."""
    P = np.asarray(P, dtype=float)
    if P.shape != (6, 6):
        raise ValueError("expected a 6x6 covariance")
    return float(pec_series(P[3:, 3:][None, :, :], norm)[0])


# ---------------------------------------------------------------------------
# profiles and schedules


@dataclass
class KinematicProfile:
    """Constant-speed flight profile with a fixed hover attitude."""

    cruise: float = 0.5
    attitude: ekf.Attitude = field(default_factory=ekf.Attitude)

    def __post_init__(self):
        if not self.cruise > 0.0:
            raise ValueError("cruise speed must be positive")


@dataclass
class RateSchedule:
    """Update rates in Hz; sensors may not outrun the prediction rate."""

    predict_hz: float = 50.0
    alt_hz: float = 5.0
    uwb_hz: float = 10.0
    cam_hz: float = 10.0
    lidar_hz: float = 10.0

    def __post_init__(self):
        for name in ("predict_hz", "alt_hz", "uwb_hz", "cam_hz", "lidar_hz"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        for name in ("alt_hz", "uwb_hz", "cam_hz", "lidar_hz"):
            if getattr(self, name) > self.predict_hz:
                raise ValueError(f"{name} exceeds predict_hz")

    @property
    def ts(self) -> float:
        return 1.0 / self.predict_hz

    def fire_steps(self, hz: float, n_steps: int) -> np.ndarray:
        """Boolean array over steps 0..n_steps; True where the sensor fires.

        A sensor at rate hz fires at step k when the integer tick count
        floor(k * hz / predict_hz) advances. Step 0 never fires.
        """
        k = np.arange(n_steps + 1, dtype=np.float64)
        ticks = np.floor(k * hz / self.predict_hz)
        fired = np.zeros(n_steps + 1, dtype=bool)
        if n_steps:
            fired[1:] = np.diff(ticks) > 0.5
        return fired

    def fire_table(self, n_steps: int) -> dict[str, np.ndarray]:
        return {
            "alt": self.fire_steps(self.alt_hz, n_steps),
            "uwb": self.fire_steps(self.uwb_hz, n_steps),
            "cam": self.fire_steps(self.cam_hz, n_steps),
            "lidar": self.fire_steps(self.lidar_hz, n_steps),
        }


# ---------------------------------------------------------------------------
# nominal trajectory


@dataclass
class NominalTrajectory:
    """Constant-speed samples along a circuit's polyline.

    pos has shape (steps + 1, 3); vel has shape (steps, 3) and holds the
    commanded velocity for each step, so pos[k + 1] == pos[k] + ts * vel[k].
    """

    pos: np.ndarray
    vel: np.ndarray
    ts: float
    length: float

    @property
    def steps(self) -> int:
        return len(self.vel)

    @property
    def flight_time(self) -> float:
        return self.steps * self.ts

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.ts


def build_nominal_trajectory(circuit, graph, cruise: float, ts: float) -> NominalTrajectory:
    """Sample the circuit polyline at constant arc-length increments.

    The spacing is cruise * ts; the final step is shortened so the last
    sample lands exactly on the closing waypoint. Commanded velocities are
    exact segment directions except where a step crosses a corner or covers
    the shortened tail, where the finite difference of positions is used.
    """
    if not cruise > 0.0 or not ts > 0.0:
        raise ValueError("cruise and ts must be positive")
    wp = graph.nodes[np.asarray(circuit.nodes, dtype=int)]
    if len(wp) < 2:
        return NominalTrajectory(pos=wp.reshape(-1, 3).copy(),
                                 vel=np.zeros((0, 3)), ts=ts, length=0.0)
    seg = np.diff(wp, axis=0)
    seglen = np.linalg.norm(seg, axis=1)
    if np.any(seglen <= 0.0):
        raise InvalidCircuitError("circuit repeats a waypoint consecutively")
    cum = np.concatenate(([0.0], np.cumsum(seglen)))
    length = float(cum[-1])
    ds = cruise * ts
    n = int(math.ceil(length / ds - 1e-9))
    s = np.minimum(np.arange(n + 1) * ds, length)
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seglen) - 1)
    frac = (s - cum[idx]) / seglen[idx]
    pos = wp[idx] + frac[:, None] * seg[idx]
    dirs = seg / seglen[:, None]
    vel = cruise * dirs[idx[:-1]]
    k1 = np.arange(1, n + 1)
    irregular = (idx[1:] != idx[:-1]) | (k1 * ds > length)
    if irregular.any():
        vel[irregular] = (pos[1:][irregular] - pos[:-1][irregular]) / ts
    return NominalTrajectory(pos=pos, vel=vel, ts=ts, length=length)


def _validate_circuit(circuit, graph) -> None:
    nodes = list(circuit.nodes)
    refs = list(circuit.edge_refs)
    if len(nodes) != len(refs) + 1:
        raise InvalidCircuitError("node list and edge list lengths disagree")
    if refs and (nodes[0] != graph.source or nodes[-1] != graph.source):
        raise InvalidCircuitError("circuit does not start and end at the source node")
    for step, (edge_idx, copy) in enumerate(refs):
        if not 0 <= edge_idx < len(graph.edges):
            raise InvalidCircuitError(f"edge index {edge_idx} out of range")
        edge = graph.edges[edge_idx]
        if not 0 <= copy < edge.multiplicity:
            raise InvalidCircuitError(f"edge copy {copy} out of range")
        if {edge.i, edge.j} != {nodes[step], nodes[step + 1]}:
            raise InvalidCircuitError(
                f"edge {edge_idx} does not join nodes {nodes[step]} and {nodes[step + 1]}"
            )


# ---------------------------------------------------------------------------
# stepping engine


@dataclass
class EngineResult:
    """Per-step outputs of one propagation pass."""

    t: np.ndarray
    pec: np.ndarray
    cam_fired: np.ndarray
    lidar_fired: np.ndarray
    est: np.ndarray | None
    alt_updates: int
    uwb_updates: int
    cam_updates: int
    lidar_updates: int
    skipped: list


def _apply_update(belief, sensor, attitude, noise, gamma, innovation_target):
    """One gated measurement update; returns (belief, applied_flag).

    innovation_target is None for covariance-only planning (zero innovation)
    or the measured value during replay.
    """
    if sensor == "alt":
        zp, H = ekf.altimeter_model(belief.x, attitude)
        R = np.array([[noise.r_alt]])
    elif sensor == "uwb":
        zp, H = ekf.uwb_model(belief.x)
        R = np.array([[noise.r_uwb]])
    elif sensor == "cam":
        zp, H, scale = ekf.camera_model(belief.x)
        R = scale * noise.r_cam
    else:
        zp, H = ekf.lidar_model(belief.x)
        R = gamma * noise.r_lidar
    if np.isscalar(zp) or np.ndim(zp) == 0:
        H = H[None, :]
        innov = np.array([0.0 if innovation_target is None else innovation_target - zp])
    else:
        innov = np.zeros(3) if innovation_target is None else np.asarray(innovation_target, dtype=float) - zp
    return ekf.joseph_update(belief, H, R, innov)


def run_belief_engine(nominal, env, rates, noise, attitude,
                      events_by_step=None, P0=None, pec_norm="spectral"):
    """Propagate the covariance along the nominal trajectory.

    Planning mode (events_by_step is None) pins the mean to the nominal
    trajectory, gates the camera and lidar on the field-of-view evaluated at
    nominal positions, and applies zero-innovation updates. Replay mode pins
    the velocity to the commanded value each stretch (control input), leaves
    the position estimate free, and applies the supplied measurement events.

    Sensor updates at one step run in the fixed order alt, uwb, cam, lidar.
    Singular updates are skipped and logged, never fatal. The pec is recorded
    after each full step, including that step's updates.
    """
    if abs(noise.ts * rates.predict_hz - 1.0) > 1e-9:
        raise ValueError("noise.ts and rates.predict_hz disagree")
    n = nominal.steps
    ts = noise.ts
    replay = events_by_step is not None
    P = np.eye(6) if P0 is None else np.array(P0, dtype=float)
    if P.shape != (6, 6):
        raise ValueError("P0 must be 6x6")
    v0 = nominal.vel[0] if n else np.zeros(3)
    belief = ekf.BeliefState(x=np.concatenate([v0, nominal.pos[0]]), P=P, t=0.0)

    table = rates.fire_table(n)
    fire_any = table["alt"] | table["uwb"] | table["cam"] | table["lidar"]
    boundary = set(np.flatnonzero(fire_any).tolist())
    if replay:
        for step in events_by_step:
            if not 1 <= step <= n:
                raise ValueError(f"measurement event at step {step} outside 1..{n}")
        boundary.update(events_by_step)
        if n > 1:
            turns = np.flatnonzero(np.any(nominal.vel[1:] != nominal.vel[:-1], axis=1)) + 1
            boundary.update(turns.tolist())
    if n:
        boundary.add(n)
    boundary.discard(0)

    blocks = np.empty((n, 3, 3))
    est = np.empty((n, 6)) if replay else None
    cam_fired = np.zeros(n + 1, dtype=bool)
    lidar_fired = np.zeros(n + 1, dtype=bool)
    counts = {"alt": 0, "uwb": 0, "cam": 0, "lidar": 0}
    skipped: list = []
    rig_pos = env.rig.position if env is not None else None

    prev = 0
    for e in sorted(boundary):
        span = e - prev
        if span:
            x0 = belief.x.copy()
            belief, span_blocks = ekf.predict_span(belief, noise, span)
            blocks[prev:e] = span_blocks
            if replay:
                ahead = ts * np.arange(1, span + 1)[:, None]
                est[prev:e, :3] = x0[:3]
                est[prev:e, 3:] = x0[3:] + ahead * x0[:3]
        v_e = nominal.vel[e] if e < n else nominal.vel[-1]
        belief.x[:3] = v_e
        if not replay:
            belief.x[3:] = nominal.pos[e]

        for sensor in SENSOR_ORDER:
            if replay:
                for ev in events_by_step.get(e, ()):
                    if ev.sensor != sensor or ev.dropped:
                        continue
                    try:
                        belief = _apply_update(belief, sensor, attitude, noise,
                                               ev.gamma, ev.value)
                    except FilterSingularityError as err:
                        skipped.append((e, sensor, str(err)))
                        continue
                    counts[sensor] += 1
                    if sensor == "cam":
                        cam_fired[e] = True
                    elif sensor == "lidar":
                        lidar_fired[e] = True
            else:
                if not table[sensor][e]:
                    continue
                pos_e = nominal.pos[e]
                gamma = None
                if sensor == "cam" and not env.camera_sees(pos_e):
                    continue
                if sensor == "lidar":
                    if not env.lidar_sees(pos_e):
                        continue
                    gamma = noise.lidar_gamma.gamma(float(np.linalg.norm(pos_e - rig_pos)))
                try:
                    belief = _apply_update(belief, sensor, attitude, noise, gamma, None)
                except FilterSingularityError as err:
                    skipped.append((e, sensor, str(err)))
                    continue
                counts[sensor] += 1
                if sensor == "cam":
                    cam_fired[e] = True
                elif sensor == "lidar":
                    lidar_fired[e] = True

        blocks[e - 1] = belief.P[3:, 3:]
        if replay:
            est[e - 1] = belief.x
        prev = e

    return EngineResult(
        t=np.arange(1, n + 1) * ts,
        pec=pec_series(blocks, pec_norm) if n else np.zeros(0),
        cam_fired=cam_fired[1:],
        lidar_fired=lidar_fired[1:],
        est=est,
        alt_updates=counts["alt"],
        uwb_updates=counts["uwb"],
        cam_updates=counts["cam"],
        lidar_updates=counts["lidar"],
        skipped=skipped,
    )


# ---------------------------------------------------------------------------
# scoring


@dataclass
class PathScore:
    """Per-step pec series and summary statistics for one circuit."""

    circuit_index: int
    t: np.ndarray
    pec: np.ndarray
    cam_fired: np.ndarray
    lidar_fired: np.ndarray
    total: float
    max_pec: float
    mean: float
    median: float
    sigma: float
    rms: float
    cam_updates: int
    lidar_updates: int
    flight_time: float
    length: float
    duplicate: bool = False
    threshold_ok: bool | None = None
    skipped: list = field(default_factory=list)


def _summarize(circuit, nominal, result) -> PathScore:
    series = result.pec
    if len(series):
        stats = (float(series.sum()), float(series.max()), float(series.mean()),
                 float(np.median(series)), float(series.std()),
                 float(np.sqrt(np.mean(series * series))))
    else:
        stats = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    return PathScore(
        circuit_index=circuit.run,
        t=result.t,
        pec=series,
        cam_fired=result.cam_fired,
        lidar_fired=result.lidar_fired,
        total=stats[0],
        max_pec=stats[1],
        mean=stats[2],
        median=stats[3],
        sigma=stats[4],
        rms=stats[5],
        cam_updates=result.cam_updates,
        lidar_updates=result.lidar_updates,
        flight_time=nominal.flight_time,
        length=nominal.length,
        duplicate=circuit.duplicate,
        skipped=result.skipped,
    )


def propagate_path(circuit, graph, env, kin, rates, noise,
                   pec_norm="spectral", P0=None) -> PathScore:
    """Score one circuit by propagating the belief along its trajectory."""
    _validate_circuit(circuit, graph)
    nominal = build_nominal_trajectory(circuit, graph, kin.cruise, noise.ts)
    result = run_belief_engine(nominal, env, rates, noise, kin.attitude,
                               events_by_step=None, P0=P0, pec_norm=pec_norm)
    return _summarize(circuit, nominal, result)


# ---------------------------------------------------------------------------
# batched covariance-only propagation over many candidates
#
# All candidates over one Eulerized graph share the edge multiset, hence the
# same trajectory length, step count, and fire schedule; only waypoint order
# differs. Propagating their covariances together turns the per-step work
# into a handful of array operations over the candidate axis.


def _predict_span_batch(P: np.ndarray, noise, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form n-step prediction for a (C, 6, 6) covariance stack.

    Returns the final stack and the (C, n, 3, 3) position blocks after each
    intermediate step; mirrors the single-state closed form.
    """
    tau = noise.ts
    qv = noise.q_diag[:3]
    qr = noise.q_diag[3:]
    Pvv = P[:, :3, :3]
    Pvr = P[:, :3, 3:]
    Prr = P[:, 3:, 3:]
    sym = Pvr + Pvr.transpose(0, 2, 1)
    ks, s2 = ekf._span_arrays(n)
    kt = (ks * tau)[None, :, None, None]
    blocks = Prr[:, None] + kt * sym[:, None] + kt * kt * Pvv[:, None]
    idx = np.arange(3)
    blocks[:, :, idx, idx] += (ks[:, None] * qr[None, :] + (tau * tau * s2)[:, None] * qv[None, :])[None]
    out = np.empty_like(P)
    out[:, :3, :3] = Pvv + np.diag(n * qv)
    out[:, :3, 3:] = Pvr + n * tau * Pvv + np.diag(tau * (n * (n - 1) / 2.0) * qv)
    out[:, 3:, :3] = out[:, :3, 3:].transpose(0, 2, 1)
    out[:, 3:, 3:] = blocks[:, -1]
    return out, blocks


def _joseph_rank1_batch(P: np.ndarray, K: np.ndarray, H: np.ndarray, r: float) -> np.ndarray:
    """Joseph-form update for scalar measurements over a covariance stack."""
    IKH = _I6_ROW - K[:, :, None] * H[:, None, :]
    out = IKH @ P @ IKH.transpose(0, 2, 1) + r * (K[:, :, None] * K[:, None, :])
    return 0.5 * (out + out.transpose(0, 2, 1))


def _joseph_rank3_batch(P: np.ndarray, K: np.ndarray, H: np.ndarray, Reff: np.ndarray) -> np.ndarray:
    """Joseph-form update for 3-vector measurements over a covariance stack."""
    IKH = _I6_ROW - K @ H
    out = IKH @ P @ IKH.transpose(0, 2, 1) + K @ Reff @ K.transpose(0, 2, 1)
    return 0.5 * (out + out.transpose(0, 2, 1))


def _scalar_update_subset(P, idx, H, r, skipped, step, name) -> np.ndarray:
    """Apply a scalar-measurement update to the selected candidates.

    Returns the global indices actually updated; candidates whose innovation
    variance fails the positivity check are logged and left untouched.
    """
    Psub = P[idx]
    w = (Psub @ H[:, :, None])[:, :, 0]
    s = (w * H).sum(axis=1) + r
    good = (s > 0.0) & np.isfinite(s)
    for c in np.flatnonzero(~good):
        skipped[idx[c]].append((step, name, "innovation variance not positive"))
    gi = np.flatnonzero(good)
    if not len(gi):
        return idx[:0]
    sel = idx[gi]
    P[sel] = _joseph_rank1_batch(Psub[gi], w[gi] / s[gi, None], H[gi], r)
    return sel


def _vector_update_subset(P, idx, H, Reff, skipped, step, name) -> np.ndarray:
    """Apply a 3-vector update to the selected candidates; returns applied."""
    Psub = P[idx]
    S = H @ Psub @ H.transpose(0, 2, 1) + Reff
    lmin, lmax = _sym3_minmax(S)
    good = (lmin > 0.0) & (lmax / np.where(lmin > 0.0, lmin, 1.0) <= ekf.CONDITION_LIMIT)
    for c in np.flatnonzero(~good):
        skipped[idx[c]].append((step, name, "innovation covariance singular"))
    gi = np.flatnonzero(good)
    if not len(gi):
        return idx[:0]
    K = np.linalg.solve(S[gi], H[gi] @ Psub[gi]).transpose(0, 2, 1)
    sel = idx[gi]
    P[sel] = _joseph_rank3_batch(Psub[gi], K, H[gi], Reff[gi])
    return sel


def _run_plan_batch(noms, env, rates, noise, attitude, pec_norm) -> list:
    """Covariance-only propagation of many same-length candidates at once.

    Follows the scalar engine exactly: same fire schedule, same update order,
    same gates and guards, evaluated at each candidate's nominal positions.
    """
    C = len(noms)
    n = noms[0].steps
    ts = noise.ts
    t_axis = np.arange(1, n + 1) * ts
    if n == 0:
        return [
            EngineResult(t=t_axis, pec=np.zeros(0), cam_fired=np.zeros(0, bool),
                         lidar_fired=np.zeros(0, bool), est=None, alt_updates=0,
                         uwb_updates=0, cam_updates=0, lidar_updates=0, skipped=[])
            for _ in range(C)
        ]
    table = rates.fire_table(n)
    ticks = np.flatnonzero(table["alt"] | table["uwb"] | table["cam"] | table["lidar"])
    pos = np.stack([nm.pos for nm in noms])
    tick_pos = pos[:, ticks, :]
    flat = tick_pos.reshape(-1, 3)
    cam_gate = env.camera_sees_many(flat).reshape(C, -1)
    lidar_gate = env.lidar_sees_many(flat).reshape(C, -1)
    rel = flat - env.rig.position
    gammas = noise.lidar_gamma.gamma(np.sqrt((rel * rel).sum(axis=1)).reshape(C, -1))

    try:
        _, H_alt = ekf.altimeter_model(np.zeros(6), attitude)
        alt_err = None
    except FilterSingularityError as exc:
        H_alt = None
        alt_err = str(exc)

    P = np.repeat(np.eye(6)[None, :, :], C, axis=0)
    pec_rows = np.empty((C, n))
    cam_fired = np.zeros((C, n + 1), dtype=bool)
    lidar_fired = np.zeros((C, n + 1), dtype=bool)
    counts = np.zeros((C, 4), dtype=int)
    skipped: list[list] = [[] for _ in range(C)]
    everyone = np.arange(C)
    I3 = np.eye(3)

    bounds = ticks.tolist()
    if not bounds or bounds[-1] != n:
        bounds.append(n)
    prev = 0
    for ti, e in enumerate(bounds):
        span = e - prev
        if span:
            P, span_blocks = _predict_span_batch(P, noise, span)
            pec_rows[:, prev:e] = pec_series(
                span_blocks.reshape(-1, 3, 3), pec_norm
            ).reshape(C, span)
        if ti < len(ticks):
            p_e = tick_pos[:, ti, :]
            if table["alt"][e]:
                if H_alt is not None:
                    applied = _scalar_update_subset(P, everyone, np.broadcast_to(H_alt, (C, 6)),
                                                    noise.r_alt, skipped, e, "alt")
                    counts[applied, 0] += 1
                else:
                    for c in range(C):
                        skipped[c].append((e, "alt", alt_err))
            if table["uwb"][e]:
                d = np.sqrt((p_e * p_e).sum(axis=1))
                near = d < ekf.MIN_RANGE
                for c in np.flatnonzero(near):
                    skipped[c].append((e, "uwb", "estimate within minimum anchor range"))
                sub = np.flatnonzero(~near)
                if len(sub):
                    Hu = np.zeros((len(sub), 6))
                    Hu[:, 3:] = p_e[sub] / d[sub, None]
                    applied = _scalar_update_subset(P, sub, Hu, noise.r_uwb,
                                                    skipped, e, "uwb")
                    counts[applied, 1] += 1
            if table["cam"][e]:
                gate = cam_gate[:, ti]
                d = np.sqrt((p_e * p_e).sum(axis=1))
                dsafe = np.where(d > 0.0, d, 1.0)
                sin_a = -p_e[:, 2] / dsafe
                guarded = (d >= ekf.MIN_RANGE) & (np.abs(sin_a) > ekf.MIN_SIN_ELEVATION)
                for c in np.flatnonzero(gate & ~guarded):
                    skipped[c].append((e, "cam", "bearing geometry singular"))
                sub = np.flatnonzero(gate & guarded)
                if len(sub):
                    zhat = p_e[sub] / d[sub, None]
                    Hc = np.zeros((len(sub), 3, 6))
                    Hc[:, :, 3:] = (I3 - zhat[:, :, None] * zhat[:, None, :]) / d[sub, None, None]
                    Reff = (1.0 / np.abs(sin_a[sub]))[:, None, None] * noise.r_cam
                    applied = _vector_update_subset(P, sub, Hc, Reff, skipped, e, "cam")
                    cam_fired[applied, e] = True
                    counts[applied, 2] += 1
            if table["lidar"][e]:
                sub = np.flatnonzero(lidar_gate[:, ti])
                if len(sub):
                    Hl = np.zeros((len(sub), 3, 6))
                    Hl[:, :, 3:] = I3
                    Reff = gammas[sub, ti][:, None, None] * noise.r_lidar
                    applied = _vector_update_subset(P, sub, Hl, Reff, skipped, e, "lidar")
                    lidar_fired[applied, e] = True
                    counts[applied, 3] += 1
            pec_rows[:, e - 1] = pec_series(P[:, 3:, 3:], pec_norm)
        prev = e

    return [
        EngineResult(t=t_axis, pec=pec_rows[c], cam_fired=cam_fired[c, 1:],
                     lidar_fired=lidar_fired[c, 1:], est=None,
                     alt_updates=int(counts[c, 0]), uwb_updates=int(counts[c, 1]),
                     cam_updates=int(counts[c, 2]), lidar_updates=int(counts[c, 3]),
                     skipped=skipped[c])
        for c in range(C)
    ]


def propagate_paths(circuit_list, graph, env, kin, rates, noise,
                    pec_norm="spectral") -> list:
    """Score every candidate circuit, batching those with equal step counts."""
    if abs(noise.ts * rates.predict_hz - 1.0) > 1e-9:
        raise ValueError("noise.ts and rates.predict_hz disagree")
    noms = []
    for circuit in circuit_list:
        _validate_circuit(circuit, graph)
        noms.append(build_nominal_trajectory(circuit, graph, kin.cruise, noise.ts))
    groups: dict[int, list[int]] = {}
    for i, nm in enumerate(noms):
        groups.setdefault(nm.steps, []).append(i)
    scores: list = [None] * len(noms)
    for _, idxs in sorted(groups.items()):
        results = _run_plan_batch([noms[i] for i in idxs], env, rates, noise,
                                  kin.attitude, pec_norm)
        for i, res in zip(idxs, results):
            scores[i] = _summarize(circuit_list[i], noms[i], res)
    return scores


def check_uncertainty_threshold(score: PathScore, limit: float) -> bool:
    """True when every pec sample stays below the limit; records the verdict."""
    ok = bool(np.all(score.pec < limit)) if len(score.pec) else True
    score.threshold_ok = ok
    return ok


# ---------------------------------------------------------------------------
# ranking


@dataclass
class RankingReport:
    """Best and worst candidates by total accumulated pec; ties break low."""

    best: int
    worst: int
    second_best: int | None
    second_worst: int | None
    order: list
    totals: list
    degenerate: bool

    def selection(self, name: str) -> int:
        named = {
            "best": self.best,
            "worst": self.worst,
            "second_best": self.second_best,
            "second_worst": self.second_worst,
        }
        if name in named:
            value = named[name]
            if value is None:
                raise ValueError(f"selection {name!r} not available with {len(self.totals)} candidates")
            return value
        try:
            idx = int(name)
        except ValueError:
            raise ValueError(f"unknown selection {name!r}") from None
        if not 0 <= idx < len(self.totals):
            raise ValueError(f"candidate index {idx} out of range")
        return idx


def score_and_select(scores) -> RankingReport:
    """Rank scored candidates by total pec, low to high."""
    scores = list(scores)
    if not scores:
        raise ValueError("no candidates to rank")
    totals = [float(s.total) for s in scores]
    ascending = sorted(range(len(totals)), key=lambda i: (totals[i], i))
    descending = sorted(range(len(totals)), key=lambda i: (-totals[i], i))
    best = ascending[0]
    worst = descending[0]
    return RankingReport(
        best=best,
        worst=worst,
        second_best=ascending[1] if len(totals) > 1 else None,
        second_worst=descending[1] if len(totals) > 1 else None,
        order=ascending,
        totals=totals,
        degenerate=best == worst,
    )
