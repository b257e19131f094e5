"""Tunnel map model: bounds, box obstacles, and the UGV sensor rig.

Everything lives in a NED navigation frame anchored at the UGV base, with d
positive down.  Collision queries inflate obstacles by a safety margin;
sight-line queries test the raw boxes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .errors import MapFormatError

DEFAULT_COLLISION_MARGIN = 0.3
SEGMENT_SAMPLE_STEP = 0.1


def default_map_path() -> Path:
    """Path of the tunnel map shipped with the package."""
    return Path(str(resources.files(__package__) / "data" / "tunnel_default.yaml"))


def as_point(p) -> np.ndarray:
    """Coerce a point-like (Vec3, sequence, array) to a float array of shape (3,)."""
    if isinstance(p, Vec3):
        return p.as_array()
    a = np.asarray(p, dtype=float)
    if a.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class Vec3:
    """Point or vector in the NED navigation frame."""

    n: float
    e: float
    d: float

    def as_array(self) -> np.ndarray:
        return np.array([self.n, self.e, self.d], dtype=float)

    @staticmethod
    def of(p) -> "Vec3":
        a = np.asarray(p, dtype=float).reshape(3)
        return Vec3(float(a[0]), float(a[1]), float(a[2]))


@dataclass
class BoxObstacle:
    """Axis-aligned box, closed on all faces."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = as_point(self.lo)
        self.hi = as_point(self.hi)
        if not np.all(self.lo <= self.hi):
            raise MapFormatError(f"obstacle has min > max: {self.lo} vs {self.hi}")

    def contains(self, p, margin: float = 0.0) -> bool:
        q = as_point(p)
        return bool(np.all(q >= self.lo - margin) and np.all(q <= self.hi + margin))


@dataclass
class UgvRig:
    """Ground-vehicle sensor head: an upward-pitched lidar and a tracking camera.

    The lidar scans a full 360 degrees of azimuth in a vertical band of
    +/- lidar_halfangle around a boresight pitched lidar_pitch above horizontal.
    The camera points up from a mast and only tracks targets above its own
    mounting plane.  Angles are radians internally.
    """

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    lidar_pitch: float = math.radians(15.0)
    lidar_halfangle: float = math.radians(22.5)
    lidar_max_range: float = 50.0
    camera_mount_height: float = 0.8
    camera_max_range: float = 6.0

    def __post_init__(self):
        self.position = as_point(self.position)

    @property
    def camera_position(self) -> np.ndarray:
        return self.position + np.array([0.0, 0.0, -self.camera_mount_height])


@dataclass
class EnvironmentMap:
    """Bounded tunnel volume with box obstacles and the UGV rig."""

    bounds_min: np.ndarray
    bounds_max: np.ndarray
    obstacles: list[BoxObstacle] = field(default_factory=list)
    collision_margin: float = DEFAULT_COLLISION_MARGIN
    rig: UgvRig = field(default_factory=UgvRig)
    seg_step: float = SEGMENT_SAMPLE_STEP

    def __post_init__(self):
        self.bounds_min = as_point(self.bounds_min)
        self.bounds_max = as_point(self.bounds_max)
        if not np.all(self.bounds_min < self.bounds_max):
            raise MapFormatError(
                f"bounds_min must be strictly below bounds_max: "
                f"{self.bounds_min} vs {self.bounds_max}"
            )
        if self.collision_margin < 0.0:
            raise MapFormatError("collision margin must be non-negative")
        # stacked box corners for vectorized batch checks
        if self.obstacles:
            self._lo = np.stack([b.lo for b in self.obstacles])
            self._hi = np.stack([b.hi for b in self.obstacles])
        else:
            self._lo = np.zeros((0, 3))
            self._hi = np.zeros((0, 3))

    # -- collision queries --------------------------------------------------

    def is_free(self, p, margin: float | None = None) -> bool:
        """True if p is inside bounds and outside every margin-inflated box."""
        q = as_point(p)
        m = self.collision_margin if margin is None else margin
        if not (np.all(q >= self.bounds_min) and np.all(q <= self.bounds_max)):
            return False
        if len(self.obstacles) == 0:
            return True
        hit = np.all((q >= self._lo - m) & (q <= self._hi + m), axis=1)
        return not bool(hit.any())

    def points_free(self, pts: np.ndarray, margin: float | None = None) -> bool:
        """Vectorized is_free over an (N, 3) array; True when all points pass."""
        m = self.collision_margin if margin is None else margin
        if not np.all((pts >= self.bounds_min) & (pts <= self.bounds_max)):
            return False
        for lo, hi in zip(self._lo, self._hi):
            if np.all((pts >= lo - m) & (pts <= hi + m), axis=1).any():
                return False
        return True

    def segment_is_free(self, a, b, margin: float | None = None) -> bool:
        """Sampled collision check along the segment a..b at seg_step spacing."""
        pa = as_point(a)
        pb = as_point(b)
        length = float(np.linalg.norm(pb - pa))
        num = max(2, int(math.ceil(length / self.seg_step)) + 1)
        ts = np.linspace(0.0, 1.0, num)
        pts = pa[None, :] + ts[:, None] * (pb - pa)[None, :]
        return self.points_free(pts, margin)

    # -- sight lines --------------------------------------------------------

    def sight_clear(self, a, b) -> bool:
        """True if the open segment a..b intersects no obstacle box.

        Exact slab-interval test against the raw boxes; the collision margin
        does not block sight.
        """
        return bool(self.sight_clear_many(a, as_point(b)[None, :])[0])

    def sight_clear_many(self, origin, pts: np.ndarray) -> np.ndarray:
        """Vectorized sight_clear from one origin to each row of pts."""
        origin = as_point(origin)
        pts = np.asarray(pts, dtype=float).reshape(-1, 3)
        d = pts - origin
        clear = np.ones(len(pts), dtype=bool)
        for k in range(len(self.obstacles)):
            clear &= ~_segments_hit_box(origin, d, self._lo[k], self._hi[k])
        return clear

    # -- sensor visibility --------------------------------------------------

    def camera_sees(self, uav) -> bool:
        """Upward camera gate: above the mount plane, in range, unoccluded."""
        return bool(self.camera_sees_many(as_point(uav)[None, :])[0])

    def camera_sees_many(self, pts: np.ndarray) -> np.ndarray:
        """Vectorized camera_sees over an (N, 3) array of UAV positions."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 3)
        rig = self.rig
        ok = (rig.position[2] - pts[:, 2]) > rig.camera_mount_height
        cam = rig.camera_position
        rel = pts - cam
        ok &= np.sqrt((rel * rel).sum(axis=1)) <= rig.camera_max_range
        idx = np.flatnonzero(ok)
        if len(idx):
            ok[idx] = self.sight_clear_many(cam, pts[idx])
        return ok

    def lidar_sees(self, uav) -> bool:
        """Lidar gate: inside the pitched vertical band, in range, unoccluded."""
        return bool(self.lidar_sees_many(as_point(uav)[None, :])[0])

    def lidar_sees_many(self, pts: np.ndarray) -> np.ndarray:
        """Vectorized lidar_sees over an (N, 3) array of UAV positions."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 3)
        rig = self.rig
        rel = pts - rig.position
        rng = np.sqrt((rel * rel).sum(axis=1))
        ok = rng <= rig.lidar_max_range
        elev = np.arctan2(-rel[:, 2], np.hypot(rel[:, 0], rel[:, 1]))
        ok &= np.abs(elev - rig.lidar_pitch) <= rig.lidar_halfangle
        idx = np.flatnonzero(ok)
        if len(idx):
            ok[idx] = self.sight_clear_many(rig.position, pts[idx])
        return ok


def _segments_hit_box(a: np.ndarray, d: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Slab test per row of d: does a + t*d[m] for t in [0, 1] enter the box?

    Axes where a direction component vanishes constrain nothing when the
    shared origin sits inside that slab and exclude the segment otherwise.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (lo - a) / d
        tb = (hi - a) / d
    lo_t = np.minimum(ta, tb)
    hi_t = np.maximum(ta, tb)
    degenerate = np.abs(d) < 1e-15
    if degenerate.any():
        inside = (a >= lo) & (a <= hi)
        lo_t = np.where(degenerate, np.where(inside, -np.inf, np.inf), lo_t)
        hi_t = np.where(degenerate, np.where(inside, np.inf, -np.inf), hi_t)
    t0 = np.maximum(lo_t.max(axis=1), 0.0)
    t1 = np.minimum(hi_t.min(axis=1), 1.0)
    return t0 <= t1


def load_map(path) -> EnvironmentMap:
    """Parse a YAML map file and validate it into an EnvironmentMap."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise MapFormatError(f"cannot read map file {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise MapFormatError(f"map file {path} is not a mapping")

    try:
        bounds_min = raw["bounds_min"]
        bounds_max = raw["bounds_max"]
    except KeyError as exc:
        raise MapFormatError(f"map file {path} is missing {exc}") from exc

    obstacles = []
    for i, entry in enumerate(raw.get("obstacles") or []):
        try:
            obstacles.append(BoxObstacle(entry["min"], entry["max"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise MapFormatError(f"obstacle {i} in {path} is malformed: {exc}") from exc

    rig_raw = raw.get("ugv") or {}
    try:
        rig = UgvRig(
            position=rig_raw.get("position", [0.0, 0.0, 0.0]),
            lidar_pitch=math.radians(float(rig_raw.get("lidar_pitch_deg", 15.0))),
            lidar_halfangle=math.radians(float(rig_raw.get("lidar_halfangle_deg", 22.5))),
            lidar_max_range=float(rig_raw.get("lidar_max_range_m", 50.0)),
            camera_mount_height=float(rig_raw.get("camera_mount_height_m", 0.8)),
            camera_max_range=float(rig_raw.get("camera_max_range_m", 6.0)),
        )
    except (TypeError, ValueError) as exc:
        raise MapFormatError(f"ugv block in {path} is malformed: {exc}") from exc

    try:
        margin = float(raw.get("collision_margin_m", DEFAULT_COLLISION_MARGIN))
    except (TypeError, ValueError) as exc:
        raise MapFormatError(f"collision_margin_m in {path} is malformed: {exc}") from exc

    return EnvironmentMap(
        bounds_min=bounds_min,
        bounds_max=bounds_max,
        obstacles=obstacles,
        collision_margin=margin,
        rig=rig,
    )
