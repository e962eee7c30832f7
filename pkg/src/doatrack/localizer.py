"""DOA regression network (CRNN) with a track-activity branch, trained
through a frozen association network against the differentiable tracking
losses, plus trajectory inference.

Architecture: three conv blocks (temporal pooling 5x, feature pooling down
to 8 bands), two bidirectional GRU layers, then two heads per label frame:
tanh DOA regression of shape (T/5, 3 * n_max) and sigmoid activity of shape
(T/5, n_max). Distance matrices during training use Euclidean distances on
the raw (un-normalized) DOA outputs; evaluation always normalizes to unit
vectors and reports degrees.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .errors import ConfigError, ShapeError, TrainingDivergence
from .features import (
    FOA_CHANNELS,
    HOPS_PER_LABEL_FRAME,
    MIC_CHANNELS,
    extract_features_foa,
    extract_features_mic,
)
from .geometry import DoaVector
from .losses import (
    ACTIVITY_THRESHOLD,
    activity_loss,
    block_masks,
    combined_loss,
    derive_activity_reference,
    dmota_components,
    dmotp_loss,
)
from .mot_metrics import aggregate_reports, evaluate_sequence
from .scenes import SceneTimeline

PAD_VALUE = 10.0
# affine applied to log-mel channels before the conv stack; intensity and
# correlation channels are already O(1)
MEL_OFFSET = -8.0
MEL_SCALE = 4.0

CONV_POOLS = ((5, 4), (1, 2), (1, 1))


class LocalizerModel(nn.Module):
    def __init__(self, format_tag="FOA", n_max=2, width=32, seed=0):
        if format_tag not in ("FOA", "MIC"):
            raise ConfigError(f"unknown format: {format_tag}")
        rng = np.random.default_rng(seed)
        self.format_tag = format_tag
        self.n_max = n_max
        self.width = width
        in_ch = FOA_CHANNELS if format_tag == "FOA" else MIC_CHANNELS
        self.in_channels = in_ch
        self.conv1 = nn.ConvBlock(in_ch, width, rng, pool=CONV_POOLS[0])
        self.conv2 = nn.ConvBlock(width, width, rng, pool=CONV_POOLS[1])
        self.conv3 = nn.ConvBlock(width, width, rng, pool=CONV_POOLS[2])
        self.gru1 = nn.GRULayer(width * 8, width, rng, bidirectional=True)
        self.gru2 = nn.GRULayer(2 * width, width, rng, bidirectional=True)
        self.doa_head = nn.Dense(2 * width, 3 * n_max, rng)
        self.activity_head = nn.Dense(2 * width, n_max, rng)

    def normalize(self, features):
        out = np.array(features, dtype=np.float64)
        out[..., :4, :, :] = (out[..., :4, :, :] - MEL_OFFSET) / MEL_SCALE
        return out

    def forward_batch(self, features):
        """features: (B, C, T, F) raw feature blocks.

        Returns (doa, activity) Tensors of shapes (B, T/5, 3 n_max) and
        (B, T/5, n_max).
        """
        if features.ndim != 4 or features.shape[1] != self.in_channels:
            raise ShapeError(
                f"expected (B, {self.in_channels}, T, F) features, got {features.shape}")
        if features.shape[2] % HOPS_PER_LABEL_FRAME:
            raise ShapeError("temporal frames must divide by the label-frame hop count")
        x = Tensor(self.normalize(features))
        x = self.conv3(self.conv2(self.conv1(x)))  # (B, W, T', 8)
        seq = ad.reshape(ad.transpose(x, (2, 0, 1, 3)),
                         (x.shape[2], x.shape[0], self.width * 8))
        h = self.gru2(self.gru1(seq))  # (T', B, 2W)
        h = ad.transpose(h, (1, 0, 2))  # (B, T', 2W)
        doa = ad.tanh(self.doa_head(h))
        activity = ad.sigmoid(self.activity_head(h))
        return doa, activity

    def manifest(self, **extra):
        out = {"kind": "doanet", "format": self.format_tag, "n_max": self.n_max,
               "width": self.width}
        out.update(extra)
        return out


def localizer_forward(model, features):
    """Single-clip forward: (C, T, F) -> ((T', 3 n_max), (T', n_max))."""
    doa, activity = model.forward_batch(np.asarray(features)[None])
    return doa[0], activity[0]


def load_localizer_model(path):
    state, manifest = nn.load_checkpoint(path)
    if manifest.get("kind") != "doanet":
        raise ConfigError(f"{path} is not a localizer checkpoint")
    model = LocalizerModel(
        format_tag=manifest.get("format", "FOA"),
        n_max=int(manifest["n_max"]),
        width=int(manifest["width"]),
    )
    model.load_state_dict(state)
    return model, manifest


# -- scene records --------------------------------------------------------------


@dataclass
class SceneRecord:
    """One training/validation scene: features plus packed reference data."""

    features: np.ndarray  # (C, T, 64)
    refs: np.ndarray      # (T', n_max, 3) unit vectors, zero rows when absent
    counts: np.ndarray    # (T',) reference counts
    timeline: SceneTimeline


def prepare_scene(clip, timeline, n_max, features=None):
    if features is None:
        features = (extract_features_foa(clip) if clip.format_tag == "FOA"
                    else extract_features_mic(clip))
    n_labels = features.shape[1] // HOPS_PER_LABEL_FRAME
    if timeline.n_frames != n_labels:
        raise ShapeError(
            f"timeline has {timeline.n_frames} frames but features give {n_labels}")
    refs = np.zeros((n_labels, n_max, 3))
    counts = np.zeros(n_labels, dtype=np.int64)
    for t, entries in enumerate(timeline.frames):
        for j, (_, doa) in enumerate(entries[:n_max]):
            refs[t, j] = doa.as_array()
        counts[t] = min(len(entries), n_max)
    return SceneRecord(features, refs, counts, timeline)


# -- differentiable training objective -------------------------------------------


def distance_tensor(doa_flat, refs, counts, n_max):
    """Padded per-frame distance matrices from raw DOA outputs.

    doa_flat: Tensor (T, 3 n_max); refs: (T, n_max, 3); counts: (T,).
    Returns (d, col_mask) with d a (T, n_max, n_max) Tensor whose padded
    entries are the fixed out-of-range value.
    """
    T = refs.shape[0]
    p = ad.reshape(doa_flat, (T, n_max, 1, 3))
    diff = p - Tensor(refs[:, None, :, :])
    d = ad.sqrt(ad.sum_reduce(diff * diff, axis=3))  # (T, n, n)
    _, col_mask = block_masks(np.full(T, n_max), counts, n_max)
    mask = col_mask * np.ones((T, n_max, n_max))
    d_in = d * Tensor(mask) + Tensor((1.0 - mask) * PAD_VALUE)
    return d_in, mask


@dataclass
class TrainConfig:
    weights: tuple = (1.0, 0.0, 0.0)  # (dmotp, dmota, activity)
    mse: bool = False
    epochs: int = 20
    min_epochs: int = 6
    batch_scenes: int = 10
    lr: float = 1e-3
    seed: int = 0
    gamma: float = 1.0
    fp_mode: str = "activity-gated"
    plateau_tol: float = 0.01
    plateau_window: int = 3
    activity_threshold: float = ACTIVITY_THRESHOLD
    eval_every: int = 1


def batch_loss(model, hnet_model, records, config):
    """Forward one batch of scenes and assemble the training loss.

    Returns (loss, parts dict). With config.mse the control objective pairs
    regressor i with the i-th listed reference (zero vectors when absent)
    under mean squared error, skipping the association network entirely.
    """
    feats = np.stack([r.features for r in records])
    doa, activity = model.forward_batch(feats)
    B, Tp = doa.shape[0], doa.shape[1]
    n = model.n_max
    refs = np.stack([r.refs for r in records])  # (B, T', n, 3)
    counts = np.stack([r.counts for r in records])
    if config.mse:
        target = refs.reshape(B, Tp, 3 * n)
        err = doa - Tensor(target)
        loss = ad.mean_reduce(err * err)
        return loss, {"loss_total": loss.item(), "loss_dmotp": float("nan"),
                      "loss_dmota": float("nan"), "loss_act": float("nan")}

    if hnet_model.n_max != n:
        raise ConfigError(
            f"association network n_max={hnet_model.n_max} differs from localizer {n}")
    flat_doa = ad.reshape(doa, (B * Tp, 3 * n))
    flat_refs = refs.reshape(B * Tp, n, 3)
    flat_counts = counts.reshape(B * Tp)
    d, _ = distance_tensor(flat_doa, flat_refs, flat_counts, n)
    a_tilde, _, _ = hnet_model.forward(d)

    w_p, w_a, w_act = config.weights
    dmotp = dmotp_loss(d, a_tilde, np.full(B * Tp, n), flat_counts) if w_p else None
    act_pred = ad.reshape(activity, (B * Tp, n))
    dmota = None
    if w_a:
        soft_errors = None
        a_scenes = ad.reshape(a_tilde, (B, Tp, n, n))
        for b in range(B):
            fn, fp, ids = dmota_components(
                None, a_scenes[b], activity[b],
                np.full(Tp, n), counts[b], fp_mode=config.fp_mode)
            piece = fn + fp + config.gamma * ids
            soft_errors = piece if soft_errors is None else soft_errors + piece
        total_refs = float(counts.sum())
        dmota = soft_errors * (1.0 / max(total_refs, 1.0))
    act = None
    if w_act:
        act_ref = derive_activity_reference(a_tilde)
        act = activity_loss(act_pred, act_ref)
    loss = combined_loss(config.weights, dmotp=dmotp, dmota=dmota, activity=act)
    return loss, {
        "loss_total": loss.item(),
        "loss_dmotp": dmotp.item() if dmotp is not None else float("nan"),
        "loss_dmota": dmota.item() if dmota is not None else float("nan"),
        "loss_act": act.item() if act is not None else float("nan"),
    }


# -- inference --------------------------------------------------------------------


@dataclass
class TrajectorySet:
    """Per-regressor maximal runs of consecutive active frames."""

    n_frames: int
    frame_period: float
    runs: list = field(default_factory=list)  # (regressor, start_frame, [DoaVector])

    def to_timeline(self, n_max):
        frames = [[] for _ in range(self.n_frames)]
        for reg, start, doas in self.runs:
            for k, doa in enumerate(doas):
                frames[start + k].append((reg, doa))
        for f in frames:
            f.sort(key=lambda e: e[0])
        return SceneTimeline(self.frame_period, frames, n_max)


def _normalize_rows(doa_values, n_max):
    vecs = doa_values.reshape(-1, n_max, 3)
    norms = np.linalg.norm(vecs, axis=-1, keepdims=True)
    return vecs / np.maximum(norms, 1e-12)


def infer_trajectories(model, features, activity_threshold=ACTIVITY_THRESHOLD,
                       frame_period=0.1):
    """Threshold the activity branch and emit unit-normalized DOAs as maximal
    contiguous runs per regressor."""
    doa, activity = localizer_forward(model, features)
    vecs = _normalize_rows(doa.values, model.n_max)
    act = activity.values
    n_frames = act.shape[0]
    traj = TrajectorySet(n_frames, frame_period)
    for reg in range(model.n_max):
        active = act[:, reg] >= activity_threshold
        t = 0
        while t < n_frames:
            if not active[t]:
                t += 1
                continue
            start = t
            doas = []
            while t < n_frames and active[t]:
                doas.append(DoaVector(*vecs[t, reg]))
                t += 1
            traj.runs.append((reg, start, doas))
    return traj


def predictions_timeline(model, features, activity_threshold, frame_period=0.1):
    """Prediction timeline for evaluation; threshold <= 0 emits every
    regressor at every frame (the constantly-active regime)."""
    return infer_trajectories(model, features, activity_threshold,
                              frame_period).to_timeline(model.n_max)


# -- training loop -----------------------------------------------------------------


def evaluate_on_scenes(model, records, activity_threshold=ACTIVITY_THRESHOLD):
    """(ungated LE in degrees, gated MotReport) over validation scenes."""
    gated = []
    ungated = []
    for rec in records:
        refs_tl = rec.timeline
        pred_open = predictions_timeline(model, rec.features, -1.0,
                                         refs_tl.frame_period)
        ungated.append(evaluate_sequence(refs_tl, pred_open))
        pred_gated = predictions_timeline(model, rec.features, activity_threshold,
                                          refs_tl.frame_period)
        gated.append(evaluate_sequence(refs_tl, pred_gated))
    open_report = aggregate_reports(ungated)
    return open_report.motp, aggregate_reports(gated)


def train_localizer(model, train_records, val_records, hnet_model, config,
                    log_path=None, checkpoint_path=None):
    """Optimize the localizer against the configured objective.

    The association network stays frozen; only localizer parameters update.
    Stops at the plateau criterion (relative train-loss improvement below
    plateau_tol across plateau_window epochs, after min_epochs) or at the
    epoch cap. Returns (history, converged) where history rows carry the
    per-epoch losses and validation metrics.
    """
    if not config.mse and hnet_model is None:
        raise ConfigError("association network checkpoint required unless mse=True")
    if hnet_model is not None:
        for p in hnet_model.parameters():
            p.requires_grad = False
    rng = np.random.default_rng(config.seed)
    opt = nn.Adam(model.parameters(), lr=config.lr)
    history = []
    epoch_losses = []
    converged = False
    log_f = open(log_path, "w") if log_path else None
    try:
        for epoch in range(config.epochs):
            order = rng.permutation(len(train_records))
            total = 0.0
            parts_sum = {}
            n_batches = 0
            last_state = model.state_dict()
            for i in range(0, len(order), config.batch_scenes):
                batch = [train_records[j] for j in order[i:i + config.batch_scenes]]
                loss, parts = batch_loss(model, hnet_model, batch, config)
                if not np.isfinite(loss.values):
                    if checkpoint_path:
                        nn.save_checkpoint(checkpoint_path, last_state,
                                           model.manifest(step=opt.step_count))
                    raise TrainingDivergence(
                        f"non-finite loss at epoch {epoch}", checkpoint_path)
                model.zero_grad()
                loss.backward()
                opt.step()
                total += loss.item()
                n_batches += 1
                for k, v in parts.items():
                    parts_sum[k] = parts_sum.get(k, 0.0) + v
            mean_loss = total / max(1, n_batches)
            epoch_losses.append(mean_loss)
            entry = {"epoch": epoch}
            for k, v in parts_sum.items():
                entry[k] = v / max(1, n_batches)
            if val_records and (epoch % config.eval_every == 0
                                or epoch == config.epochs - 1):
                le_open, gated = evaluate_on_scenes(
                    model, val_records, config.activity_threshold)
                entry.update({"val_le_deg": le_open, "val_lr": gated.lr,
                              "val_mota": gated.mota, "val_ids": gated.ids})
            history.append(entry)
            if log_f:
                log_f.write(json.dumps(entry) + "\n")
                log_f.flush()
            if _plateaued(epoch_losses, config):
                converged = True
                break
    finally:
        if log_f:
            log_f.close()
    if checkpoint_path:
        nn.save_checkpoint(checkpoint_path, model.state_dict(),
                           model.manifest(seed=config.seed, step=opt.step_count,
                                          converged=converged))
    return history, converged


def _plateaued(losses, config):
    w = config.plateau_window
    if len(losses) < max(config.min_epochs, w + 1):
        return False
    past = losses[-w - 1]
    recent = min(losses[-w:])
    if past <= 0:
        return True
    return (past - recent) / abs(past) < config.plateau_tol
