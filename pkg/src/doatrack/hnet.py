"""Learned Hungarian association network.

Consumes a padded n_max x n_max distance matrix (rows as the GRU time
sequence, columns as features), and emits a soft association matrix through
a GRU, single-head self-attention, and a per-step dense head with sigmoid.
The same pre-sigmoid logits feed the two auxiliary heads: a max over the
time axis (per column) and a max over the feature axis (per row), each with
its own sigmoid. Training combines the three binary cross-entropies against
the exact solver's matrix and its column/row maxima.
"""

import glob
import json
import os

import numpy as np

from . import autodiff as ad
from . import nn
from .assignment import DistanceMatrix, build_distance_matrix, hungarian, read_shard, write_shard
from .autodiff import Tensor
from .errors import ConfigError, DataError, TrainingDivergence
from .geometry import sample_equiangular_grid

GRID_RESOLUTIONS = (1, 2, 3, 4, 5, 10, 15, 20, 30)
DEFAULT_UNITS = 128


def count_combos(n_max):
    """(predictions, references) size pairs represented in the dataset:
    every pair differing by at most one, plus the empty frame."""
    return [(m, n) for m in range(n_max + 1) for n in range(n_max + 1)
            if abs(m - n) <= 1]


class HnetModel(nn.Module):
    def __init__(self, n_max=2, units=DEFAULT_UNITS, seed=0, sequence_axis="rows"):
        if sequence_axis not in ("rows", "cols"):
            raise ConfigError(f"unknown sequence axis: {sequence_axis}")
        rng = np.random.default_rng(seed)
        self.n_max = n_max
        self.units = units
        self.sequence_axis = sequence_axis
        self.gru = nn.GRULayer(n_max, units, rng)
        self.attention = nn.SelfAttention(units, rng)
        self.head = nn.Dense(units, n_max, rng)

    def logits(self, d_batch):
        """d_batch: Tensor (B, n_max, n_max) -> logits (B, n_max, n_max)."""
        if d_batch.ndim != 3 or d_batch.shape[1:] != (self.n_max, self.n_max):
            raise ConfigError(
                f"expected (B, {self.n_max}, {self.n_max}) input, got {d_batch.shape}")
        x = d_batch
        if self.sequence_axis == "cols":
            x = ad.transpose(x, (0, 2, 1))
        seq = ad.transpose(x, (1, 0, 2))  # (T=n_max, B, n_max)
        h = self.gru(seq)
        h = ad.transpose(h, (1, 0, 2))  # (B, T, units)
        h = self.attention(h)
        out = self.head(h)  # (B, T, n_max)
        if self.sequence_axis == "cols":
            out = ad.transpose(out, (0, 2, 1))
        return out

    def forward(self, d_batch):
        """Returns (a_tilde, maxt_logits, maxf_logits) for a batch.

        a_tilde: (B, n, n) in (0, 1); maxt collapses the time axis (per
        column), maxf the feature axis (per row).
        """
        z = self.logits(d_batch)
        a_tilde = ad.sigmoid(z)
        maxt = ad.max_reduce(z, axis=1)
        maxf = ad.max_reduce(z, axis=2)
        return a_tilde, maxt, maxf

    def manifest(self, **extra):
        out = {"kind": "hnet", "n_max": self.n_max, "units": self.units,
               "sequence_axis": self.sequence_axis}
        out.update(extra)
        return out


def hnet_forward(model, d):
    """Single-matrix forward pass.

    d may be a DistanceMatrix or a raw (n_max, n_max) array; returns
    (a_tilde, maxt_logits, maxf_logits) Tensors of shapes (n, n), (n,), (n,).
    Differentiable w.r.t. the input when a Tensor with requires_grad is given.
    """
    if isinstance(d, DistanceMatrix):
        values = Tensor(d.values)
    elif isinstance(d, Tensor):
        values = d
    else:
        values = Tensor(np.asarray(d, dtype=np.float64))
    batch = ad.reshape(values, (1, model.n_max, model.n_max))
    a_tilde, maxt, maxf = model.forward(batch)
    return a_tilde[0], maxt[0], maxf[0]


def load_hnet_model(path):
    state, manifest = nn.load_checkpoint(path)
    if manifest.get("kind") != "hnet":
        raise DataError(f"{path} is not an association-network checkpoint")
    model = HnetModel(
        n_max=int(manifest["n_max"]),
        units=int(manifest["units"]),
        sequence_axis=manifest.get("sequence_axis", "rows"),
    )
    model.load_state_dict(state)
    return model, manifest


# -- dataset ------------------------------------------------------------------


def sample_distance_records(count, n_max, rng, resolutions=GRID_RESOLUTIONS):
    """Distance/association pairs balanced over grid resolutions and size
    combos. DOAs are drawn uniformly from the grid points (distinct within
    each side, so no two references or two predictions coincide); padding
    entries are random high values."""
    combos = count_combos(n_max)
    cells = [(c, r) for r in resolutions for c in combos]
    per_cell = max(1, int(round(count / len(cells))))
    grids = {r: np.stack([g.as_array() for g in sample_equiangular_grid(r)])
             for r in resolutions}
    records = []
    for (m, n), res in cells:
        grid = grids[res]
        for _ in range(per_cell):
            preds = grid[rng.choice(len(grid), size=m, replace=False)] if m else []
            refs = grid[rng.choice(len(grid), size=n, replace=False)] if n else []
            d = build_distance_matrix(list(preds), list(refs), n_max, pad_rng=rng)
            records.append((d, hungarian(d)))
    return records


def generate_hnet_dataset(out_dir, n_train, n_max=2, seed=0,
                          resolutions=GRID_RESOLUTIONS, val_fraction=0.1,
                          shard_size=100000):
    """Write train/val shards under out_dir; the validation split uses a
    disjoint seed stream. Returns (n_train_written, n_val_written)."""
    os.makedirs(out_dir, exist_ok=True)
    rng_train = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 0))))
    rng_val = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 1))))
    train = sample_distance_records(n_train, n_max, rng_train, resolutions)
    val = sample_distance_records(
        max(1, int(round(n_train * val_fraction))), n_max, rng_val, resolutions)
    for name, records in (("train", train), ("val", val)):
        for i in range(0, len(records), shard_size):
            write_shard(os.path.join(out_dir, f"{name}_{i // shard_size:03d}.bin"),
                        records[i:i + shard_size])
    return len(train), len(val)


def load_hnet_split(data_dir, split):
    """Load one split into (d, a, a_maxt, a_maxf) arrays, re-deriving the
    max targets from a and checking consistency."""
    paths = sorted(glob.glob(os.path.join(data_dir, f"{split}_*.bin")))
    if not paths:
        raise DataError(f"no {split} shards under {data_dir}")
    ds, As = [], []
    for p in paths:
        for d, a in read_shard(p):
            ds.append(d)
            As.append(a)
    d = np.stack(ds)
    a = np.stack(As).astype(np.float64)
    maxt = a.max(axis=1)
    maxf = a.max(axis=2)
    if not ((maxt <= 1).all() and (maxf <= 1).all()):
        raise DataError("association labels are not binary")
    return d, a, maxt, maxf


# -- training -----------------------------------------------------------------


def hnet_loss(model, d_batch, a, maxt, maxf, weights=(1.0, 1.0, 1.0)):
    a_tilde, maxt_logits, maxf_logits = model.forward(Tensor(d_batch))
    w_a, w_t, w_f = weights
    loss = w_a * ad.bce_loss(a_tilde, Tensor(a))
    if w_t:
        loss = loss + w_t * ad.bce_loss(ad.sigmoid(maxt_logits), Tensor(maxt))
    if w_f:
        loss = loss + w_f * ad.bce_loss(ad.sigmoid(maxf_logits), Tensor(maxf))
    return loss


def predict_binary(model, d, batch=4096):
    """Binarized association predictions (threshold 0.5) for an array of
    distance matrices."""
    outs = []
    for i in range(0, len(d), batch):
        a_tilde, _, _ = model.forward(Tensor(d[i:i + batch]))
        outs.append(a_tilde.values >= 0.5)
    return np.concatenate(outs).astype(np.uint8)


def eval_hnet_fscore(model, d, a, batch=4096):
    """Micro-averaged element-wise F1 over all matrix cells at threshold 0.5."""
    pred = predict_binary(model, d, batch)
    truth = a.astype(bool)
    tp = int((pred.astype(bool) & truth).sum())
    fp = int((pred.astype(bool) & ~truth).sum())
    fn = int((~pred.astype(bool) & truth).sum())
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2 * tp / denom


def row_col_discipline(model, d, batch=4096):
    """Fraction of samples whose binarized prediction keeps every row and
    column sum at most one."""
    pred = predict_binary(model, d, batch)
    ok = (pred.sum(axis=1) <= 1).all(axis=1) & (pred.sum(axis=2) <= 1).all(axis=1)
    return float(ok.mean())


def train_hnet(model, data_dir, weights=(1.0, 1.0, 1.0), epochs=30, batch=256,
               lr=1e-3, seed=0, patience=5, log_path=None, checkpoint_path=None):
    """Multi-task training; early-stops on validation F-score.

    Returns (best_fscore, history). On divergence, saves the last finite
    parameter state (when checkpoint_path is given) and raises
    TrainingDivergence.
    """
    d_train, a_train, maxt_train, maxf_train = load_hnet_split(data_dir, "train")
    d_val, a_val, _, _ = load_hnet_split(data_dir, "val")
    rng = np.random.default_rng(seed)
    opt = nn.Adam(model.parameters(), lr=lr)
    best_f = -1.0
    best_state = model.state_dict()
    bad_epochs = 0
    history = []
    log_f = open(log_path, "w") if log_path else None
    try:
        for epoch in range(epochs):
            order = rng.permutation(len(d_train))
            epoch_loss = 0.0
            n_batches = 0
            last_state = model.state_dict()
            for i in range(0, len(order), batch):
                idx = order[i:i + batch]
                loss = hnet_loss(model, d_train[idx], a_train[idx],
                                 maxt_train[idx], maxf_train[idx], weights)
                if not np.isfinite(loss.values):
                    if checkpoint_path:
                        nn.save_checkpoint(checkpoint_path, last_state,
                                           model.manifest(seed=seed, step=opt.step_count))
                    raise TrainingDivergence(
                        f"non-finite loss at epoch {epoch}", checkpoint_path)
                model.zero_grad()
                loss.backward()
                opt.step()
                epoch_loss += loss.item()
                n_batches += 1
            fscore = eval_hnet_fscore(model, d_val, a_val)
            entry = {"epoch": epoch, "loss": epoch_loss / max(1, n_batches),
                     "val_fscore": fscore}
            history.append(entry)
            if log_f:
                log_f.write(json.dumps(entry) + "\n")
                log_f.flush()
            if fscore > best_f:
                best_f = fscore
                best_state = model.state_dict()
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= patience:
                    break
    finally:
        if log_f:
            log_f.close()
    model.load_state_dict(best_state)
    if checkpoint_path:
        nn.save_checkpoint(checkpoint_path, best_state,
                           model.manifest(seed=seed, step=opt.step_count,
                                          val_fscore=best_f))
    return best_f, history
