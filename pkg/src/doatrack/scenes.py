"""Synthetic spatial scenes: timelines of multi-track DOA annotations.

A scene is a set of sound events (static or moving along great-circle arcs)
with onset/duration/level, rendered to a per-frame timeline at the label
resolution (100 ms by default). Scene generation is deterministic given the
seed; each scene owns an independent RNG stream derived from
(master_seed, scene_index).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .geometry import DoaVector

FRAME_PERIOD = 0.1


@dataclass
class TrackSpec:
    """One sound event: where it starts, how it moves, how loud it is."""

    track_id: int
    onset: float
    duration: float
    start_doa: DoaVector
    moving: bool = False
    speed_deg_s: float = 0.0
    orientation: tuple = (0.0, 0.0, 0.0)  # unit tangent of the great-circle arc
    envelope: np.ndarray = field(default_factory=lambda: np.ones(0))

    def doa_at(self, t_rel):
        """Direction at time t_rel seconds after onset."""
        if not self.moving or self.speed_deg_s == 0.0:
            return self.start_doa
        w = math.radians(self.speed_deg_s)
        u = self.start_doa.as_array()
        v = np.asarray(self.orientation)
        p = u * math.cos(w * t_rel) + v * math.sin(w * t_rel)
        return DoaVector(*p)


@dataclass
class SceneTimeline:
    """Per-frame reference annotations: frames[t] is a list of
    (track_id, DoaVector) with at most n_max entries."""

    frame_period: float
    frames: list
    n_max: int

    @property
    def n_frames(self):
        return len(self.frames)

    def counts(self):
        return np.array([len(f) for f in self.frames], dtype=np.int64)

    def track_ids(self):
        ids = set()
        for f in self.frames:
            for tid, _ in f:
                ids.add(tid)
        return sorted(ids)

    def validate(self):
        for t, entries in enumerate(self.frames):
            if len(entries) > self.n_max:
                raise ValueError(f"frame {t} has {len(entries)} entries > n_max={self.n_max}")
            tids = [tid for tid, _ in entries]
            if len(set(tids)) != len(tids):
                raise ValueError(f"frame {t} repeats a track id")


@dataclass
class SceneGenConfig:
    duration_s: float = 60.0
    frame_period: float = FRAME_PERIOD
    n_max: int = 2
    event_duration: tuple = (1.0, 10.0)
    p_moving: float = 0.5
    speed_range: tuple = (5.0, 40.0)
    level_range: tuple = (0.3, 1.0)
    events_per_second: float = 0.25


def scene_rng(master_seed, scene_index):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((master_seed, scene_index))))


def random_unit_vector(rng):
    z = rng.uniform(-1.0, 1.0)
    az = rng.uniform(0.0, 2.0 * math.pi)
    r = math.sqrt(max(0.0, 1.0 - z * z))
    return DoaVector(r * math.cos(az), r * math.sin(az), z)


def _random_tangent(rng, u):
    while True:
        w = np.array([rng.normal(), rng.normal(), rng.normal()])
        w -= np.dot(w, u) * u
        n = np.linalg.norm(w)
        if n > 1e-6:
            return tuple(w / n)


def generate_scene(config, seed):
    """Sample a scene deterministically from the seed.

    Events are proposed one by one and kept only while the per-frame overlap
    stays within n_max. Returns (SceneTimeline, [TrackSpec]).
    """
    if config.n_max < 1:
        raise ConfigError("n_max must be at least 1")
    if config.duration_s <= 0:
        raise ConfigError("scene duration must be positive")
    if config.event_duration[0] > config.duration_s:
        raise ConfigError("minimum event duration exceeds the scene duration")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    fp = config.frame_period
    n_frames = int(round(config.duration_s / fp))
    occupancy = np.zeros(n_frames, dtype=np.int64)
    n_proposals = max(1, int(round(config.events_per_second * config.duration_s)))
    specs = []
    for _ in range(n_proposals):
        dur = rng.uniform(*config.event_duration)
        onset = rng.uniform(0.0, max(0.0, config.duration_s - config.event_duration[0]))
        dur = min(dur, config.duration_s - onset)
        start = random_unit_vector(rng)
        moving = bool(rng.uniform() < config.p_moving)
        speed = float(rng.uniform(*config.speed_range)) if moving else 0.0
        orientation = _random_tangent(rng, start.as_array()) if moving else (0.0, 0.0, 0.0)
        level = float(rng.uniform(*config.level_range))
        first = int(math.ceil(onset / fp - 1e-9))
        last = int(math.ceil((onset + dur) / fp - 1e-9))  # exclusive
        first = max(0, first)
        last = min(n_frames, last)
        if last <= first:
            continue
        if (occupancy[first:last] >= config.n_max).any():
            continue  # would exceed the overlap budget somewhere
        occupancy[first:last] += 1
        spec = TrackSpec(
            track_id=len(specs),
            onset=onset,
            duration=dur,
            start_doa=start,
            moving=moving,
            speed_deg_s=speed,
            orientation=orientation,
            envelope=np.full(last - first, level),
        )
        specs.append(spec)
    timeline = render_timeline(specs, n_frames, fp, config.n_max)
    return timeline, specs


def render_timeline(specs, n_frames, frame_period, n_max):
    frames = [[] for _ in range(n_frames)]
    for spec in specs:
        first = max(0, int(math.ceil(spec.onset / frame_period - 1e-9)))
        last = min(n_frames, int(math.ceil((spec.onset + spec.duration) / frame_period - 1e-9)))
        for t in range(first, last):
            doa = spec.doa_at(t * frame_period - spec.onset)
            frames[t].append((spec.track_id, doa))
    for f in frames:
        f.sort(key=lambda e: e[0])
    return SceneTimeline(frame_period, frames, n_max)


def merge_timelines(a, b):
    """Union of two timelines with b's track ids re-assigned to stay unique.

    Frame counts must match; the combined per-frame overlap is the caller's
    responsibility to check against n_max.
    """
    if a.n_frames != b.n_frames:
        raise ValueError("timelines have different frame counts")
    shift = (max(a.track_ids()) + 1) if a.track_ids() else 0
    frames = []
    for fa, fb in zip(a.frames, b.frames):
        merged = list(fa) + [(tid + shift, doa) for tid, doa in fb]
        merged.sort(key=lambda e: e[0])
        frames.append(merged)
    return SceneTimeline(a.frame_period, frames, max(a.n_max, b.n_max))


# -- timeline CSV ---------------------------------------------------------------
#
# Native rows: frame_index,track_id,azimuth_deg,elevation_deg at 100 ms frame
# resolution. The 5-column challenge metadata layout
# (frame,class,track,azimuth,elevation) is accepted on read, with the class
# column folded into the track identity.


def write_timeline_csv(timeline, path):
    lines = []
    for t, entries in enumerate(timeline.frames):
        for tid, doa in entries:
            az, el = doa.to_azel()
            lines.append(f"{t},{tid},{az:.6f},{el:.6f}")
    with open(path, "w") as f:
        f.write("\n".join(lines))
        if lines:
            f.write("\n")


def read_timeline_csv(path, frame_period=FRAME_PERIOD, n_frames=None, n_max=None):
    rows = []
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) == 4:
                t, tid, az, el = parts
                key = int(tid)
            elif len(parts) == 5:
                t, cls, tid, az, el = parts
                key = (int(cls), int(tid))
            else:
                raise DataError(f"{path}:{ln}: expected 4 or 5 columns, got {len(parts)}")
            rows.append((int(t), key, float(az), float(el)))
    id_map = {}
    for _, key, _, _ in rows:
        if key not in id_map:
            id_map[key] = len(id_map)
    count = (max((r[0] for r in rows), default=-1) + 1) if n_frames is None else n_frames
    frames = [[] for _ in range(count)]
    for t, key, az, el in rows:
        if t >= count:
            raise DataError(f"{path}: frame index {t} outside range [0, {count})")
        frames[t].append((id_map[key], DoaVector.from_azel(az, el)))
    for f in frames:
        f.sort(key=lambda e: e[0])
    width = max((len(f) for f in frames), default=0)
    return SceneTimeline(frame_period, frames, n_max if n_max is not None else max(width, 1))
