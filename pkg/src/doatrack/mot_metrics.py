"""Exact (non-differentiable) localization and tracking evaluation.

Per frame, predictions and references are associated by the exact Hungarian
solver; TP_t = K_t = min(M_t, N_t), FP_t = max(0, M_t - N_t),
FN_t = max(0, N_t - M_t). Localization error is the mean matched angular
distance in degrees, identity switches compare each reference track's matched
prediction id against its most recent previous match (assignment memory
persists across miss gaps).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .assignment import build_distance_matrix, hungarian
from .errors import EvaluationError
from .geometry import euclidean_to_angular


@dataclass
class FrameAssociation:
    """One frame's association: matrices plus the reference-track identity of
    every valid column."""

    t: int
    assoc: object  # AssociationMatrix
    distances: object  # DistanceMatrix
    ref_track_ids: list
    pred_ids: list = None  # identity of every valid row; defaults to row index

    def __post_init__(self):
        if len(set(self.ref_track_ids)) != len(self.ref_track_ids):
            raise ValueError("reference track ids must be unique within a frame")
        if self.pred_ids is None:
            self.pred_ids = list(range(self.assoc.valid_rows))


@dataclass
class MotReport:
    le_deg: float
    motp: float
    mota: float
    ids: int
    tp: int
    fp: int
    fn: int
    lr: float
    lp: float
    lf1: float
    n_ref_total: int
    motp_eucl: float = float("nan")  # matched-pair mean in chord units

    def as_dict(self):
        return {
            "le_deg": self.le_deg, "motp": self.motp, "mota": self.mota,
            "ids": self.ids, "tp": self.tp, "fp": self.fp, "fn": self.fn,
            "lr": self.lr, "lp": self.lp, "lf1": self.lf1,
            "n_ref_total": self.n_ref_total, "motp_eucl": self.motp_eucl,
        }


def aggregate_reports(reports):
    """Pool per-scene reports into one: counts add, matched-distance means
    are TP-weighted, identity histories stay per-scene."""
    tp = sum(r.tp for r in reports)
    fp = sum(r.fp for r in reports)
    fn = sum(r.fn for r in reports)
    ids = sum(r.ids for r in reports)
    n_ref = sum(r.n_ref_total for r in reports)
    n_pred = sum(r.tp + r.fp for r in reports)
    le_sum = sum(r.motp * r.tp for r in reports if r.tp)
    le_sum_eucl = sum(r.motp_eucl * r.tp for r in reports if r.tp)
    motp = le_sum / tp if tp else float("nan")
    motp_eucl = le_sum_eucl / tp if tp else float("nan")
    if n_ref > 0:
        mota = 1.0 - (fp + fn + ids) / n_ref
    else:
        mota = 1.0 if (fp + ids) == 0 else float("-inf")
    lr = tp / n_ref if n_ref else 0.0
    lp = tp / n_pred if n_pred else 0.0
    lf1 = (2.0 * lp * lr / (lp + lr)) if (lp + lr) > 0 else 0.0
    return MotReport(le_deg=motp, motp=motp, mota=mota, ids=ids, tp=tp, fp=fp,
                     fn=fn, lr=lr, lp=lp, lf1=lf1, n_ref_total=n_ref,
                     motp_eucl=motp_eucl)


def frame_le(assoc, distances):
    """Mean matched angular distance for one frame, in degrees.

    Returns None when K_t = 0 (the frame contributes nothing to LE/MOTp).
    Euclidean distance matrices are converted to angles before averaging.
    """
    k = assoc.n_matched
    if k == 0:
        return None
    total = 0.0
    for i, j in assoc.pairs():
        d = distances.values[i, j]
        theta = euclidean_to_angular(d) if distances.metric == "euclidean" else d
        total += math.degrees(theta)
    return total / k


def count_ids(frame, history):
    """Identity switches contributed by one frame.

    history maps reference track_id -> last matched prediction id; it is
    updated in place and retained across frames where the track is missed.
    """
    switches = 0
    for i, j in frame.assoc.pairs():
        tid = frame.ref_track_ids[j]
        pid = frame.pred_ids[i]
        prev = history.get(tid)
        if prev is not None and prev != pid:
            switches += 1
        history[tid] = pid
    return switches


def associate_frame(t, preds, refs, ref_ids, n_max, pred_ids=None, gate_deg=None):
    """Build the angular distance matrix and its optimal association."""
    d = build_distance_matrix(preds, refs, n_max, metric="angular")
    a = hungarian(d)
    if gate_deg is not None:
        keep = np.zeros_like(a.values)
        for i, j in a.pairs():
            if math.degrees(d.values[i, j]) <= gate_deg:
                keep[i, j] = 1
        a.values = keep
    return FrameAssociation(t, a, d, list(ref_ids), pred_ids)


def evaluate_sequence(refs, preds, gate_deg=None):
    """CLEAR-MOT style report over two timelines with matching frame ranges.

    MOTp is the TP-weighted mean matched angular distance (identical to LE
    averaged over frames with K_t >= 1); MOTa = 1 - sum(FP+FN+IDS)/sum(N_t).
    The optional gate excludes matches above the threshold (off by default
    and excluded from acceptance runs).
    """
    if refs.n_frames != preds.n_frames:
        raise EvaluationError(
            f"frame ranges differ: refs {refs.n_frames}, preds {preds.n_frames}")
    n_max = max(refs.n_max, preds.n_max, 1)
    total = {"tp": 0, "fp": 0, "fn": 0, "ids": 0, "n_ref": 0, "n_pred": 0}
    le_sum_deg = 0.0
    le_sum_eucl = 0.0
    history = {}
    for t in range(refs.n_frames):
        ref_entries = refs.frames[t]
        pred_entries = preds.frames[t]
        ref_vecs = [doa for _, doa in ref_entries]
        ref_ids = [tid for tid, _ in ref_entries]
        pred_vecs = [doa for _, doa in pred_entries]
        pred_ids = [tid for tid, _ in pred_entries]
        width = max(len(ref_vecs), len(pred_vecs), n_max)
        frame = associate_frame(t, pred_vecs, ref_vecs, ref_ids, width,
                                pred_ids=pred_ids, gate_deg=gate_deg)
        k = frame.assoc.n_matched
        m, n = len(pred_vecs), len(ref_vecs)
        total["tp"] += k
        total["fp"] += m - k
        total["fn"] += n - k
        total["n_ref"] += n
        total["n_pred"] += m
        total["ids"] += count_ids(frame, history)
        for i, j in frame.assoc.pairs():
            theta = frame.distances.values[i, j]
            le_sum_deg += math.degrees(theta)
            le_sum_eucl += 2.0 * math.sin(theta / 2.0)
    tp, fp, fn = total["tp"], total["fp"], total["fn"]
    n_ref, n_pred = total["n_ref"], total["n_pred"]
    motp = le_sum_deg / tp if tp else float("nan")
    motp_eucl = le_sum_eucl / tp if tp else float("nan")
    if n_ref > 0:
        mota = 1.0 - (fp + fn + total["ids"]) / n_ref
    else:
        mota = 1.0 if (fp + total["ids"]) == 0 else float("-inf")
    lr = tp / n_ref if n_ref else 0.0
    lp = tp / n_pred if n_pred else 0.0
    lf1 = (2.0 * lp * lr / (lp + lr)) if (lp + lr) > 0 else 0.0
    return MotReport(
        le_deg=motp, motp=motp, mota=mota, ids=total["ids"],
        tp=tp, fp=fp, fn=fn, lr=lr, lp=lp, lf1=lf1,
        n_ref_total=n_ref, motp_eucl=motp_eucl,
    )
