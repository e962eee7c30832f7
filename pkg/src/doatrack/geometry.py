"""Directions on the unit sphere: distances, conversions, equiangular grids."""

import math
from dataclasses import dataclass

import numpy as np

UNIT_NORM_TOL = 1e-9


@dataclass(frozen=True)
class DoaVector:
    """Cartesian direction. Reference DOAs are unit vectors; raw network
    outputs may have any norm up to sqrt(3) (each component in [-1, 1])."""

    x: float
    y: float
    z: float

    def as_array(self):
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    def norm(self):
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def normalized(self):
        n = self.norm()
        if n < 1e-12:
            raise ValueError("cannot normalize a zero-norm direction")
        return DoaVector(self.x / n, self.y / n, self.z / n)

    def is_unit(self, tol=UNIT_NORM_TOL):
        return abs(self.norm() - 1.0) <= tol

    @staticmethod
    def from_azel(azimuth_deg, elevation_deg):
        az = math.radians(azimuth_deg)
        el = math.radians(elevation_deg)
        return DoaVector(
            math.cos(el) * math.cos(az),
            math.cos(el) * math.sin(az),
            math.sin(el),
        )

    def to_azel(self):
        """Return (azimuth_deg in [-180, 180), elevation_deg in [-90, 90])."""
        az = math.degrees(math.atan2(self.y, self.x))
        n = self.norm()
        el = math.degrees(math.asin(max(-1.0, min(1.0, self.z / n))))
        if az >= 180.0:
            az -= 360.0
        return az, el


def angular_distance(a, b):
    """Angle in radians between two directions; symmetric, in [0, pi].

    Raises ValueError on zero-norm input.
    """
    va, vb = _as_vec(a), _as_vec(b)
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na < 1e-12 or nb < 1e-12:
        raise ValueError("angular distance undefined for zero-norm input")
    cos = float(np.dot(va, vb) / (na * nb))
    return math.acos(max(-1.0, min(1.0, cos)))


def euclidean_distance(a, b):
    """Chord length between two direction vectors.

    For unit vectors this equals 2*sin(theta/2) with theta the angular
    distance, so it lies in [0, 2].
    """
    return float(np.linalg.norm(_as_vec(a) - _as_vec(b)))


def angular_to_euclidean(theta):
    """Chord length of an angle (radians) between unit vectors."""
    return 2.0 * math.sin(theta / 2.0)


def euclidean_to_angular(d):
    """Angle (radians) subtended by a chord between unit vectors."""
    return 2.0 * math.asin(max(-1.0, min(1.0, d / 2.0)))


def sample_equiangular_grid(resolution_deg):
    """All integer-multiple (azimuth, elevation) directions at the given
    resolution: azimuths at multiples of the resolution in [0, 360), elevations
    at multiples in [-90, 90], with the poles collapsed to single points.

    Accepts the resolutions used for association-network data generation
    (1, 2, 3, 4, 5, 10, 15, 20 and 30 degrees, or anything else dividing 360).
    """
    res = int(resolution_deg)
    if res <= 0:
        raise ValueError("grid resolution must be positive")
    if resolution_deg != res or 360 % res != 0:
        raise ValueError(f"grid resolution {resolution_deg} does not divide 360")
    points = []
    n_el = 90 // res
    for m in range(-n_el, n_el + 1):
        el = m * res
        if abs(el) == 90:
            points.append(DoaVector(0.0, 0.0, 1.0 if el > 0 else -1.0))
            continue
        for k in range(360 // res):
            points.append(DoaVector.from_azel(k * res, el))
    return points


def _as_vec(v):
    if isinstance(v, DoaVector):
        return v.as_array()
    return np.asarray(v, dtype=np.float64)
