"""Acoustic input features for the localizer.

FOA: 4 log mel-band energies plus 3 channels of active intensity vector
components (x, y, z per mel band), 7 x T x 64 total. MIC: 4 log mel energies
plus GCC-PHAT curves for the 6 channel pairs truncated to the center 64 lags,
10 x T x 64 total. STFT uses a 40 ms Hann window with a 20 ms hop, so 5 hops
cover one 100 ms label frame.
"""

import math

import numpy as np

from .errors import ShapeError

SAMPLE_RATE = 24000
STFT_WIN = 960   # 40 ms at 24 kHz
STFT_HOP = 480   # 20 ms
N_MELS = 64
MEL_FLOOR = 1e-8
HOPS_PER_LABEL_FRAME = 5
GCC_LAGS = 64

FOA_CHANNELS = 7
MIC_CHANNELS = 10


def stft(x, win=STFT_WIN, hop=STFT_HOP):
    """Frames start at multiples of the hop; the tail is zero-padded so the
    frame count is exactly len(x) // hop."""
    n_frames = len(x) // hop
    pad = max(0, (n_frames - 1) * hop + win - len(x))
    xp = np.pad(x, (0, pad))
    window = np.hanning(win)
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    return np.fft.rfft(xp[idx] * window, axis=1)


def mel_filterbank(n_mels=N_MELS, n_fft=STFT_WIN, sample_rate=SAMPLE_RATE):
    """Triangular filters on the HTK mel scale covering 0..Nyquist.

    Returns (n_mels, n_fft//2 + 1).
    """
    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    n_bins = n_fft // 2 + 1
    mel_pts = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    bin_freqs = np.linspace(0.0, sample_rate / 2.0, n_bins)
    fb = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, mid, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (bin_freqs - lo) / max(mid - lo, 1e-9)
        down = (hi - bin_freqs) / max(hi - mid, 1e-9)
        fb[m] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


_FB_CACHE = {}


def _filterbank(sample_rate):
    if sample_rate not in _FB_CACHE:
        _FB_CACHE[sample_rate] = mel_filterbank(sample_rate=sample_rate)
    return _FB_CACHE[sample_rate]


def extract_features_foa(clip):
    """7 x T x 64 block: per-channel log mel energies and the mel-aggregated
    active intensity vector, normalized per band by total energy."""
    if clip.channels != 4:
        raise ShapeError(f"FOA features need a 4-channel clip, got {clip.channels}")
    fb = _filterbank(clip.sample_rate)
    specs = [stft(clip.samples[ch]) for ch in range(4)]  # W, Y, Z, X
    mels = []
    powers = []
    for spec in specs:
        p = np.abs(spec) ** 2
        powers.append(p)
        mels.append(np.log(p @ fb.T + MEL_FLOOR))
    w = specs[0]
    # active intensity I = Re{conj(W) * (X, Y, Z)}; for a single plane wave it
    # points along the source direction
    intensity = [np.real(np.conj(w) * specs[i]) for i in (3, 1, 2)]  # x, y, z
    total = sum(powers)
    total_mel = total @ fb.T
    intensity_mel = [(i @ fb.T) / (total_mel + MEL_FLOOR) for i in intensity]
    return np.stack(mels + intensity_mel, axis=0)


def gcc_phat_pair(spec_a, spec_b, n_lags=GCC_LAGS):
    """Per-frame GCC-PHAT curves between two STFT channel spectra.

    The returned lag axis is [-n_lags/2, n_lags/2); a positive argmax lag
    means b is delayed relative to a.
    """
    cross = np.conj(spec_a) * spec_b
    cross /= np.abs(cross) + 1e-12
    cc = np.fft.irfft(cross, axis=1)
    half = n_lags // 2
    return np.concatenate([cc[:, -half:], cc[:, :half]], axis=1)


def extract_features_mic(clip):
    """10 x T x 64 block: 4 log mel energies plus 6 channel-pair GCC-PHAT
    curves truncated to the center 64 lags."""
    if clip.channels != 4:
        raise ShapeError(f"MIC features need a 4-channel clip, got {clip.channels}")
    fb = _filterbank(clip.sample_rate)
    specs = [stft(clip.samples[ch]) for ch in range(4)]
    blocks = [np.log(np.abs(s) ** 2 @ fb.T + MEL_FLOOR) for s in specs]
    for a in range(4):
        for b in range(a + 1, 4):
            blocks.append(gcc_phat_pair(specs[a], specs[b]))
    return np.stack(blocks, axis=0)


def intensity_direction(features):
    """Mean intensity direction of a 7 x T x 64 FOA feature block."""
    vec = features[4:7].sum(axis=(1, 2))
    norm = np.linalg.norm(vec)
    if norm < 1e-12:
        return np.zeros(3)
    return vec / norm


def label_frame_count(n_stft_frames):
    if n_stft_frames % HOPS_PER_LABEL_FRAME:
        raise ShapeError(
            f"{n_stft_frames} STFT frames do not divide into "
            f"{HOPS_PER_LABEL_FRAME}-hop label frames")
    return n_stft_frames // HOPS_PER_LABEL_FRAME
