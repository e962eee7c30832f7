"""Differentiable tracking losses driven by the soft association matrices.

All sequence losses take a (T, n_max, n_max) distance tensor, the matching
soft associations, and per-frame valid row/column counts (rows = predictions,
columns = references). Soft quantities reduce exactly to the CLEAR counts
when the associations are binary:

  soft localization error:  sum(W . D) / max(eps, sum(W)), W = A~ on the
                            valid block;
  soft misses:              per valid column, 1 - max_i w_ij;
  soft false positives:     per row, activity_i * (1 - max_j w_ij);
  soft identity switches:   per column matched (binarized) in consecutive
                            frames, 1 - sum_i a~_ij(t) abin_ij(t-1), where
                            abin one-hots each matched column at its argmax
                            row and is gradient-stopped. Each gated column
                            therefore contributes a value in [0, 1].
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError

EPS = 1e-7
ACTIVITY_THRESHOLD = 0.5


@dataclass
class SoftAssociation:
    """Soft association stack with its gradient-stopped binarization."""

    a_tilde: Tensor  # (T, n_max, n_max), entries in (0, 1)
    binarized: np.ndarray  # uint8, threshold 0.5

    @staticmethod
    def from_tensor(a_tilde):
        return SoftAssociation(a_tilde, (a_tilde.values >= ACTIVITY_THRESHOLD).astype(np.uint8))


def block_masks(valid_rows, valid_cols, n_max):
    """(row_mask, col_mask) of shapes (T, n, 1) and (T, 1, n)."""
    valid_rows = np.asarray(valid_rows, dtype=np.int64)
    valid_cols = np.asarray(valid_cols, dtype=np.int64)
    idx = np.arange(n_max)
    row_mask = (idx[None, :] < valid_rows[:, None]).astype(np.float64)[:, :, None]
    col_mask = (idx[None, :] < valid_cols[:, None]).astype(np.float64)[:, None, :]
    return row_mask, col_mask


def stack_distance_matrices(d_seq):
    """(values, valid_rows, valid_cols) arrays from a DistanceMatrix list."""
    values = np.stack([d.values for d in d_seq])
    rows = np.array([d.valid_rows for d in d_seq], dtype=np.int64)
    cols = np.array([d.valid_cols for d in d_seq], dtype=np.int64)
    return values, rows, cols


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def derive_activity_reference(a_tilde, threshold=ACTIVITY_THRESHOLD):
    """Binary per-frame per-regressor activity target: the row max of the
    soft association, thresholded. Gradient-stopped (it is a target)."""
    values = a_tilde.values if isinstance(a_tilde, Tensor) else np.asarray(a_tilde)
    row_max = values.max(axis=-1)
    return (row_max >= threshold).astype(np.float64)


def dmotp_loss(d, a_tilde, valid_rows, valid_cols, eps=EPS):
    """Soft localization error over a sequence.

    d: (T, n, n) distances (Tensor or array); a_tilde: (T, n, n) soft
    associations; padded cells are excluded by the valid row/column masks.
    """
    d = _as_tensor(d)
    a_tilde = _as_tensor(a_tilde)
    row_mask, col_mask = block_masks(valid_rows, valid_cols, d.shape[-1])
    w = a_tilde * Tensor(row_mask * col_mask)
    num = ad.sum_reduce(w * d)
    den = ad.clamp(ad.sum_reduce(w), lo=eps)
    return num / den


def dmota_components(d, a_tilde, activity_pred, valid_rows, valid_cols,
                     fp_mode="activity-gated"):
    """Soft miss/false-positive/identity-switch sums for a sequence.

    Returns (fn, fp, ids) scalar Tensors. activity_pred is the (T, n) soft
    activity of each regressor row; with fp_mode="assoc-only" the false
    positive term instead treats every valid row as active.
    """
    if fp_mode not in ("activity-gated", "assoc-only"):
        raise ConfigError(f"unknown fp_mode: {fp_mode}")
    a_tilde = _as_tensor(a_tilde)
    T, n, _ = a_tilde.shape
    row_mask, col_mask = block_masks(valid_rows, valid_cols, n)
    block = Tensor(row_mask * col_mask)
    w = a_tilde * block
    masked_vals = a_tilde.values * row_mask * col_mask

    # misses: valid reference columns not covered by any row
    col_cover = ad.max_reduce(w, axis=1)  # (T, n)
    fn = ad.sum_reduce((1.0 - col_cover) * Tensor(col_mask[:, 0, :]))

    # false positives: active rows not matched to any column
    row_cover = ad.max_reduce(w, axis=2)  # (T, n)
    if fp_mode == "assoc-only":
        p = Tensor(row_mask[:, :, 0])
    else:
        p = _as_tensor(activity_pred)
    fp = ad.sum_reduce(p * (1.0 - row_cover))

    # identity switches: columns matched (after binarization) at t-1 and t;
    # the previous match is one-hot at the argmax row, gradient-stopped
    if T > 1:
        match_row = masked_vals.argmax(axis=1)  # (T, n)
        match_val = masked_vals.max(axis=1)
        matched = (match_val >= ACTIVITY_THRESHOLD).astype(np.float64) * col_mask[:, 0, :]
        prev_onehot = np.zeros_like(masked_vals[:-1])
        np.put_along_axis(prev_onehot, match_row[:-1][:, None, :],
                          matched[:-1][:, None, :], axis=1)
        gate = matched[:-1] * matched[1:]
        overlap = ad.sum_reduce(w[1:] * Tensor(prev_onehot), axis=1)  # (T-1, n)
        ids = ad.sum_reduce(Tensor(gate) * (1.0 - overlap))
    else:
        ids = Tensor(0.0)
    return fn, fp, ids


def dmota_loss(d, a_tilde, activity_pred, ref_counts, valid_rows=None,
               gamma=1.0, eps=EPS, fp_mode="activity-gated"):
    """Soft tracking-error rate: (FN~ + FP~ + gamma * IDS~) / sum(N_t).

    ref_counts are the per-frame reference counts N_t (also the valid column
    counts); valid_rows defaults to all rows valid (regressors always
    present). Defined as 0 when sum(N_t) == 0.
    """
    a_tilde = _as_tensor(a_tilde)
    T, n, _ = a_tilde.shape
    ref_counts = np.asarray(ref_counts, dtype=np.int64)
    if valid_rows is None:
        valid_rows = np.full(T, n, dtype=np.int64)
    fn, fp, ids = dmota_components(d, a_tilde, activity_pred, valid_rows,
                                   ref_counts, fp_mode=fp_mode)
    total_refs = float(ref_counts.sum())
    if total_refs <= 0:
        return Tensor(0.0)
    return (fn + fp + gamma * ids) * (1.0 / total_refs)


def activity_loss(activity_pred, activity_ref):
    """Binary cross-entropy between predicted and reference track activity."""
    return ad.bce_loss(_as_tensor(activity_pred), _as_tensor(activity_ref))


def combined_loss(weights, dmotp=None, dmota=None, activity=None):
    """Weighted sum w_p * dmotp + w_a * dmota + w_act * activity.

    Zeroed weights skip their terms, realizing the dMOTp / dMOTp+Act /
    dMOTp+dMOTa+Act training configurations.
    """
    w_p, w_a, w_act = weights
    if w_p < 0 or w_a < 0 or w_act < 0:
        raise ConfigError("loss weights must be non-negative")
    if w_p == 0 and w_a == 0 and w_act == 0:
        raise ConfigError("at least one loss weight must be positive")
    total = None
    for w, term, name in ((w_p, dmotp, "dmotp"), (w_a, dmota, "dmota"),
                          (w_act, activity, "activity")):
        if w == 0:
            continue
        if term is None:
            raise ConfigError(f"weight for {name} is positive but no term was given")
        piece = w * term
        total = piece if total is None else total + piece
    return total
