"""Anechoic multichannel synthesis of scene timelines, plus mixing.

FOA clips use ACN channel order with SN3D normalization:
    W = s,  Y = sin(az) cos(el) s,  Z = sin(el) s,  X = cos(az) cos(el) s.
MIC clips render plane-wave arrivals on a regular tetrahedral array of
radius 0.042 m via fractional delays; they exist for time-difference feature
tests, not for training. Sources are band-limited white noise bursts shaped
by their per-frame envelope, with gains interpolated per sample for moving
sources. Diffuse noise is added at the requested SNR relative to the total
source energy.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile

from .errors import AugmentationError
from .scenes import merge_timelines

SPEED_OF_SOUND = 343.0
MIC_RADIUS = 0.042

# vertices of a regular tetrahedron, scaled to the array radius
_TET = np.array([
    [1.0, 1.0, 1.0],
    [1.0, -1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
]) / math.sqrt(3.0)
MIC_POSITIONS = MIC_RADIUS * _TET

SOURCE_BAND = (100.0, 11000.0)


@dataclass
class MultichannelClip:
    sample_rate: int
    samples: np.ndarray  # (channels, length)
    format_tag: str  # "FOA" | "MIC"

    @property
    def channels(self):
        return self.samples.shape[0]

    @property
    def length(self):
        return self.samples.shape[1]


def _band_limited_noise(rng, n, sample_rate):
    noise = rng.standard_normal(n)
    spec = np.fft.rfft(noise)
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    lo, hi = SOURCE_BAND
    spec[(freqs < lo) | (freqs > min(hi, sample_rate / 2))] = 0.0
    return np.fft.irfft(spec, n)


def _source_frames(spec, timeline, sample_rate):
    """Frame-anchored direction vectors and envelope for one event, plus the
    sample span and the per-sample interpolation grid."""
    fp = timeline.frame_period
    n_frames = timeline.n_frames
    first = max(0, int(math.ceil(spec.onset / fp - 1e-9)))
    last = min(n_frames, int(math.ceil((spec.onset + spec.duration) / fp - 1e-9)))
    if last <= first:
        return None
    frame_times = np.arange(first, last) * fp
    dirs = np.stack([
        spec.doa_at(t * fp - spec.onset).as_array() for t in range(first, last)
    ])
    env = spec.envelope
    if len(env) != last - first:
        env = np.full(last - first, env[0] if len(env) else 1.0)
    start = int(round(first * fp * sample_rate))
    stop = int(round(last * fp * sample_rate))
    t_samples = np.arange(start, stop) / sample_rate
    return start, stop, frame_times, dirs, np.asarray(env, dtype=np.float64), t_samples


def _interp_per_sample(t_samples, frame_times, values):
    return np.interp(t_samples, frame_times, values)


def synthesize_foa(timeline, specs, sample_rate=24000, snr_db=None, seed=0):
    """Render a 4-channel first-order clip of the scene.

    snr_db=None (or +inf) disables the diffuse noise floor.
    """
    if sample_rate <= 0:
        raise ValueError("sample rate must be positive")
    length = int(round(timeline.n_frames * timeline.frame_period * sample_rate))
    out = np.zeros((4, length))
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    for spec in specs:
        track = _source_frames(spec, timeline, sample_rate)
        if track is None:
            continue
        start, stop, frame_times, dirs, env, t_samples = track
        s = _band_limited_noise(rng, stop - start, sample_rate)
        s *= _interp_per_sample(t_samples, frame_times, env)
        # ACN/SN3D first-order gains W=1, Y=sin(az)cos(el), Z=sin(el),
        # X=cos(az)cos(el) == the (y, z, x) direction components
        out[0, start:stop] += s
        out[1, start:stop] += _interp_per_sample(t_samples, frame_times, dirs[:, 1]) * s
        out[2, start:stop] += _interp_per_sample(t_samples, frame_times, dirs[:, 2]) * s
        out[3, start:stop] += _interp_per_sample(t_samples, frame_times, dirs[:, 0]) * s
    _add_diffuse_noise(out, rng, snr_db, foa=True)
    return MultichannelClip(sample_rate, out, "FOA")


def synthesize_mic(timeline, specs, sample_rate=24000, snr_db=None, seed=0):
    """Render the scene on the tetrahedral array via fractional delays."""
    if sample_rate <= 0:
        raise ValueError("sample rate must be positive")
    length = int(round(timeline.n_frames * timeline.frame_period * sample_rate))
    out = np.zeros((4, length))
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    for spec in specs:
        track = _source_frames(spec, timeline, sample_rate)
        if track is None:
            continue
        start, stop, frame_times, dirs, env, t_samples = track
        s = _band_limited_noise(rng, stop - start, sample_rate)
        s *= _interp_per_sample(t_samples, frame_times, env)
        for ch in range(4):
            # wavefront reaches mics closer to the source earlier
            frame_delay = -(dirs @ MIC_POSITIONS[ch]) / SPEED_OF_SOUND * sample_rate
            delay = _interp_per_sample(t_samples, frame_times, frame_delay)
            out[ch, start:stop] += _apply_fractional_delay(s, delay)
    _add_diffuse_noise(out, rng, snr_db, foa=False)
    return MultichannelClip(sample_rate, out, "MIC")


def _apply_fractional_delay(signal, delay, taps=16):
    """y[n] = signal(n - delay[n]) by windowed-sinc interpolation."""
    n = len(signal)
    idx = np.arange(n) - np.asarray(delay)
    base = np.floor(idx).astype(np.int64)
    frac = idx - base
    y = np.zeros(n)
    half = taps // 2
    for k in range(-half + 1, half + 1):
        tap_idx = np.clip(base + k, 0, n - 1)
        x = k - frac
        w = np.sinc(x) * _hann_window(x / half)
        y += w * signal[tap_idx]
    return y


def _hann_window(x):
    w = 0.5 * (1.0 + np.cos(np.pi * np.clip(x, -1.0, 1.0)))
    w[np.abs(x) > 1.0] = 0.0
    return w


def _add_diffuse_noise(out, rng, snr_db, foa):
    if snr_db is None or snr_db == math.inf:
        return
    source_energy = float((out ** 2).sum())
    if source_energy == 0.0:
        return
    noise = rng.standard_normal(out.shape)
    if foa:
        # SN3D diffuse field: each first-order channel carries 1/3 the
        # omni energy
        noise[1:] /= math.sqrt(3.0)
    noise_energy = float((noise ** 2).sum())
    target = source_energy / (10.0 ** (snr_db / 10.0))
    out += noise * math.sqrt(target / noise_energy)


def mix_scenes(a, b, n_max=None):
    """Mix two (clip, timeline) pairs: samplewise clip sum, timeline union
    with re-assigned track ids.

    Raises AugmentationError when the combined per-frame source count exceeds
    the overlap budget, mirroring augmentation by mixing recordings whose
    sources never overlap with the partner's.
    """
    clip_a, tl_a = a
    clip_b, tl_b = b
    if clip_a.sample_rate != clip_b.sample_rate:
        raise ValueError("sample rates differ")
    if clip_a.format_tag != clip_b.format_tag:
        raise ValueError("formats differ")
    if clip_a.length != clip_b.length:
        raise ValueError("clip lengths differ")
    budget = n_max if n_max is not None else max(tl_a.n_max, tl_b.n_max)
    for t, (fa, fb) in enumerate(zip(tl_a.frames, tl_b.frames)):
        if len(fa) + len(fb) > budget:
            raise AugmentationError(
                f"frame {t}: combined overlap {len(fa) + len(fb)} exceeds n_max={budget}")
    merged = merge_timelines(tl_a, tl_b)
    merged.n_max = budget
    clip = MultichannelClip(clip_a.sample_rate,
                            clip_a.samples + clip_b.samples,
                            clip_a.format_tag)
    return clip, merged


def write_wav(path, clip, dtype="float32"):
    data = clip.samples.T
    if dtype == "float32":
        wavfile.write(path, clip.sample_rate, data.astype(np.float32))
    elif dtype == "pcm16":
        peak = np.max(np.abs(data))
        scale = 0.99 / peak if peak > 1.0 else 1.0
        wavfile.write(path, clip.sample_rate, (data * scale * 32767).astype(np.int16))
    else:
        raise ValueError(f"unsupported wav dtype: {dtype}")


def read_wav(path, format_tag="FOA"):
    rate, data = wavfile.read(path)
    if data.ndim == 1:
        data = data[:, None]
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    else:
        data = data.astype(np.float64)
    return MultichannelClip(int(rate), data.T.copy(), format_tag)
