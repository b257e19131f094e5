"""Six-state belief filter for UAV position error propagation.

State is [v_n, v_e, v_d, r_n, r_e, r_d] in the NED navigation frame.
Dynamics are constant-velocity; measurements are nonlinear functions of
position, linearized at the current estimate.  Covariance updates use the
Joseph form followed by re-symmetrization.  Innovations are measured minus
predicted, and every Jacobian is the derivative of the predicted-measurement
function, so central finite differences reproduce them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AttitudeSingularityError,
    HorizonSingularityError,
    NearOriginSingularityError,
    SingularInnovationError,
)

CONDITION_LIMIT = 1e12
MIN_TILT_COS = 0.01
MIN_RANGE = 0.1
MIN_SIN_ELEVATION = 0.05

_I6 = np.eye(6)
_SPAN_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


@dataclass
class BeliefState:
    """Mean, covariance, and time of the six-dimensional belief."""

    x: np.ndarray
    P: np.ndarray
    t: float = 0.0

    @property
    def velocity(self) -> np.ndarray:
        return self.x[:3]

    @property
    def position(self) -> np.ndarray:
        return self.x[3:]


@dataclass
class Attitude:
    """UAV roll and pitch in radians, used by the altimeter projection."""

    roll: float = 0.0
    pitch: float = 0.0


@dataclass
class LidarGammaModel:
    """Noise inflation for lidar point-cloud position fixes.

    The returned point count falls off with the inverse square of range, so
    the effective noise scale is (range / ref_range)^2 clamped to
    [1, max_gamma].
    """

    ref_range: float = 5.0
    max_gamma: float = 100.0

    def gamma(self, rng):
        """Noise scale for a scalar range or an array of ranges."""
        out = np.clip((rng / self.ref_range) ** 2, 1.0, self.max_gamma)
        return float(out) if np.ndim(out) == 0 else out


@dataclass
class NoiseConfig:
    """Process and measurement noise plus the prediction step size."""

    q_diag: np.ndarray = field(
        default_factory=lambda: np.array([0.01, 0.01, 0.01, 1.0, 1.0, 1.0])
    )
    ts: float = 0.02
    r_alt: float = 0.01
    r_uwb: float = 0.01
    r_cam: np.ndarray = field(default_factory=lambda: 1e-4 * np.eye(3))
    r_lidar: np.ndarray = field(default_factory=lambda: 0.0225 * np.eye(3))
    lidar_gamma: LidarGammaModel = field(default_factory=LidarGammaModel)

    def __post_init__(self):
        self.q_diag = np.asarray(self.q_diag, dtype=float).reshape(6)
        self.r_cam = np.asarray(self.r_cam, dtype=float).reshape(3, 3)
        self.r_lidar = np.asarray(self.r_lidar, dtype=float).reshape(3, 3)
        if self.ts <= 0.0:
            raise ValueError("prediction step must be positive")
        if np.any(self.q_diag < 0.0) or self.r_alt < 0.0 or self.r_uwb < 0.0:
            raise ValueError("noise variances must be non-negative")
        self.Q = np.diag(self.q_diag)
        self.phi = np.eye(6)
        self.phi[3, 0] = self.phi[4, 1] = self.phi[5, 2] = self.ts


# ---------------------------------------------------------------------------
# prediction


def predict(b: BeliefState, cfg: NoiseConfig) -> BeliefState:
    """One constant-velocity step: position integrates velocity, P inflates."""
    x = b.x.copy()
    x[3:] += cfg.ts * x[:3]
    P = cfg.phi @ b.P @ cfg.phi.T + cfg.Q
    return BeliefState(x=x, P=P, t=b.t + cfg.ts)


def _span_arrays(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Step indices 1..n and their summed-square coefficients, cached."""
    cached = _SPAN_CACHE.get(n)
    if cached is None:
        ks = np.arange(1, n + 1, dtype=float)
        s2 = (ks - 1.0) * ks * (2.0 * ks - 1.0) / 6.0
        cached = (ks, s2)
        if len(_SPAN_CACHE) < 4096:
            _SPAN_CACHE[n] = cached
    return cached


def predict_span(
    b: BeliefState, cfg: NoiseConfig, n: int
) -> tuple[BeliefState, np.ndarray]:
    """n prediction steps in closed form, plus the position covariance block
    after each intermediate step (shape (n, 3, 3)).

    Valid because the transition is block-unipotent and Q is diagonal; agrees
    with n sequential predict() calls to rounding error.
    """
    if n == 0:
        return BeliefState(x=b.x.copy(), P=b.P.copy(), t=b.t), np.zeros((0, 3, 3))
    tau = cfg.ts
    qv = cfg.q_diag[:3]
    qr = cfg.q_diag[3:]
    Pvv = b.P[:3, :3]
    Pvr = b.P[:3, 3:]
    Prr = b.P[3:, 3:]
    sym = Pvr + Pvr.T

    ks, s2 = _span_arrays(n)
    pos = (
        Prr[None, :, :]
        + (ks * tau)[:, None, None] * sym[None, :, :]
        + ((ks * tau) ** 2)[:, None, None] * Pvv[None, :, :]
    )
    idx = np.arange(3)
    pos[:, idx, idx] += ks[:, None] * qr[None, :] + (tau**2 * s2)[:, None] * qv[None, :]

    P = np.empty((6, 6))
    P[:3, :3] = Pvv + np.diag(n * qv)
    P[:3, 3:] = Pvr + n * tau * Pvv + np.diag(tau * (n * (n - 1) / 2.0) * qv)
    P[3:, :3] = P[:3, 3:].T
    P[3:, 3:] = pos[-1]
    x = b.x.copy()
    x[3:] += n * tau * x[:3]
    return BeliefState(x=x, P=P, t=b.t + n * tau), pos


# ---------------------------------------------------------------------------
# gain and covariance update


def _sym3_eig_bounds(S: np.ndarray) -> tuple[float, float]:
    """Smallest and largest eigenvalue of a symmetric 3x3, closed form."""
    a, b, c = S[0, 0], S[1, 1], S[2, 2]
    d, e, f = S[0, 1], S[0, 2], S[1, 2]
    q = (a + b + c) / 3.0
    aa, bb, cc = a - q, b - q, c - q
    p2 = aa * aa + bb * bb + cc * cc + 2.0 * (d * d + e * e + f * f)
    if p2 <= 0.0:
        return q, q
    p = math.sqrt(p2 / 6.0)
    A, B, C = aa / p, bb / p, cc / p
    D, E, F = d / p, e / p, f / p
    det = A * (B * C - F * F) - D * (D * C - F * E) + E * (D * F - B * E)
    r = min(1.0, max(-1.0, det / 2.0))
    phi = math.acos(r) / 3.0
    lmax = q + 2.0 * p * math.cos(phi)
    lmin = q + 2.0 * p * math.cos(phi + 2.0 * math.pi / 3.0)
    return float(lmin), float(lmax)


def kalman_gain(P: np.ndarray, H: np.ndarray, R: np.ndarray) -> np.ndarray:
    """K = P H' inv(H P H' + R), rejecting singular innovation covariance."""
    S = H @ P @ H.T + R
    if S.shape == (1, 1):
        s = S[0, 0]
        if not (s > 0.0) or not math.isfinite(s):
            raise SingularInnovationError(f"innovation variance {s} not positive")
        return (P @ H.T) / s
    if S.shape == (3, 3):
        lmin, lmax = _sym3_eig_bounds(S)
    else:
        eigs = np.linalg.eigvalsh(S)
        lmin, lmax = float(eigs[0]), float(eigs[-1])
    if lmin <= 0.0 or lmax / lmin > CONDITION_LIMIT:
        raise SingularInnovationError(
            f"innovation covariance condition {lmax:.3g}/{lmin:.3g} too high"
        )
    return np.linalg.solve(S, H @ P).T


def joseph_update(
    b: BeliefState, H: np.ndarray, R_eff: np.ndarray, innovation: np.ndarray
) -> BeliefState:
    """Measurement update in Joseph form, re-symmetrized."""
    R_eff = np.atleast_2d(np.asarray(R_eff, dtype=float))
    K = kalman_gain(b.P, H, R_eff)
    x = b.x + K @ np.atleast_1d(innovation)
    IKH = _I6 - K @ H
    P = IKH @ b.P @ IKH.T + K @ R_eff @ K.T
    P = 0.5 * (P + P.T)
    return BeliefState(x=x, P=P, t=b.t)


# ---------------------------------------------------------------------------
# sensor models: each returns the predicted measurement and its Jacobian


def altimeter_model(x: np.ndarray, att: Attitude) -> tuple[float, np.ndarray]:
    """Tilt-compensated laser range to the floor: z = -r_d / (cos pitch cos roll)."""
    c = math.cos(att.pitch) * math.cos(att.roll)
    if c <= MIN_TILT_COS:
        raise AttitudeSingularityError(f"beam projection cos {c:.4f} below limit")
    H = np.zeros(6)
    H[5] = -1.0 / c
    return -x[5] / c, H


def uwb_model(x: np.ndarray) -> tuple[float, np.ndarray]:
    """Range from the UGV anchor at the origin to the estimated position."""
    r = x[3:]
    d = float(np.linalg.norm(r))
    if d <= MIN_RANGE:
        raise NearOriginSingularityError(f"estimated range {d:.3f} m too small")
    H = np.zeros(6)
    H[3:] = r / d
    return d, H


def camera_model(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Unit line-of-sight vector from the origin, with elevation noise scale.

    The noise scale grows as 1 / |sin(elevation)| toward the horizon; updates
    too close to the horizon are refused outright.
    """
    r = x[3:]
    d = float(np.linalg.norm(r))
    if d <= MIN_RANGE:
        raise NearOriginSingularityError(f"estimated range {d:.3f} m too small")
    sin_alpha = -r[2] / d
    if abs(sin_alpha) <= MIN_SIN_ELEVATION:
        raise HorizonSingularityError(f"sight line elevation sin {sin_alpha:.3f} too low")
    zhat = r / d
    H = np.zeros((3, 6))
    H[:, 3:] = (np.eye(3) - np.outer(zhat, zhat)) / d
    return zhat, H, 1.0 / abs(sin_alpha)


def lidar_model(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Direct position fix from the cloud-registration pipeline."""
    H = np.zeros((3, 6))
    H[:, 3:] = np.eye(3)
    return x[3:].copy(), H


# ---------------------------------------------------------------------------
# sensor updates


def altimeter_update(
    b: BeliefState, z: float, att: Attitude, cfg: NoiseConfig
) -> BeliefState:
    zp, H = altimeter_model(b.x, att)
    return joseph_update(b, H[None, :], [[cfg.r_alt]], np.array([z - zp]))


def uwb_update(b: BeliefState, z: float, cfg: NoiseConfig) -> BeliefState:
    zp, H = uwb_model(b.x)
    return joseph_update(b, H[None, :], [[cfg.r_uwb]], np.array([z - zp]))


def camera_update(b: BeliefState, z: np.ndarray, cfg: NoiseConfig) -> BeliefState:
    zp, H, scale = camera_model(b.x)
    return joseph_update(b, H, scale * cfg.r_cam, np.asarray(z, float) - zp)


def lidar_update(
    b: BeliefState, z: np.ndarray, cfg: NoiseConfig, gamma: float = 1.0
) -> BeliefState:
    if gamma < 1.0:
        raise ValueError(f"gamma must be at least 1, got {gamma}")
    zp, H = lidar_model(b.x)
    return joseph_update(b, H, gamma * cfg.r_lidar, np.asarray(z, float) - zp)
