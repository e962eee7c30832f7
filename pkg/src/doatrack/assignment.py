"""Padded distance matrices and the exact minimum-cost Hungarian solver."""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .geometry import angular_distance, euclidean_distance

PAD_LOW = 3.0
PAD_HIGH = 10.0
PAD_FIXED = 10.0


@dataclass
class DistanceMatrix:
    """n_max x n_max block: a valid M x N sub-block of genuine pairwise
    distances, padded elsewhere with out-of-range values (> 2 for the
    euclidean chord convention, > pi for angular)."""

    values: np.ndarray
    valid_rows: int
    valid_cols: int
    pad_policy: tuple = (PAD_LOW, PAD_HIGH)
    metric: str = "euclidean"

    @property
    def n_max(self):
        return self.values.shape[0]

    def valid_block(self):
        return self.values[: self.valid_rows, : self.valid_cols]

    def validate(self):
        n = self.n_max
        if self.values.shape != (n, n):
            raise ValueError("distance matrix must be square n_max x n_max")
        upper = 2.0 if self.metric == "euclidean" else np.pi
        block = self.valid_block()
        if block.size and (block.min() < 0.0 or block.max() > upper + 1e-9):
            raise ValueError(f"valid distances out of range [0, {upper}]")
        mask = np.ones((n, n), dtype=bool)
        mask[: self.valid_rows, : self.valid_cols] = False
        if mask.any() and self.values[mask].min() <= upper:
            raise ValueError("padded entries must exceed the distance range")


@dataclass
class AssociationMatrix:
    """Binary matching over the valid block: row/column sums <= 1,
    exactly min(M, N) ones, none in padded rows/columns."""

    values: np.ndarray
    valid_rows: int
    valid_cols: int

    @property
    def n_max(self):
        return self.values.shape[0]

    @property
    def n_matched(self):
        return int(self.values.sum())

    def pairs(self):
        """Matched (row, col) index pairs, sorted by row."""
        rows, cols = np.nonzero(self.values)
        return sorted(zip(rows.tolist(), cols.tolist()))

    def validate(self):
        v = self.values
        if not np.isin(v, (0, 1)).all():
            raise ValueError("association entries must be binary")
        if (v.sum(axis=0) > 1).any() or (v.sum(axis=1) > 1).any():
            raise ValueError("row/column sums must not exceed 1")
        if self.n_matched != min(self.valid_rows, self.valid_cols):
            raise ValueError("number of ones must equal min(valid_rows, valid_cols)")
        if v[self.valid_rows:, :].any() or v[:, self.valid_cols:].any():
            raise ValueError("no association allowed in padded rows/columns")


def build_distance_matrix(preds, refs, n_max, pad_rng=None, metric="euclidean"):
    """Pairwise distance block between predictions (rows) and references
    (columns) embedded in an n_max x n_max matrix.

    Padding entries are drawn uniformly from [3, 10] when pad_rng is given
    (association-network training data) and fixed at 10 otherwise.
    """
    m, n = len(preds), len(refs)
    if m > n_max or n > n_max:
        raise ValueError(f"more directions than n_max={n_max}: got ({m}, {n})")
    dist = angular_distance if metric == "angular" else euclidean_distance
    if pad_rng is not None:
        values = pad_rng.uniform(PAD_LOW, PAD_HIGH, size=(n_max, n_max))
    else:
        values = np.full((n_max, n_max), PAD_FIXED)
    for i in range(m):
        for j in range(n):
            values[i, j] = dist(preds[i], refs[j])
    return DistanceMatrix(values, m, n, metric=metric)


def hungarian(d):
    """Exact minimum-cost assignment over the valid block of a DistanceMatrix.

    Augmenting-path Kuhn-Munkres with row/column potentials, rows augmented
    in increasing index order (this fixes which of several equally optimal
    matchings is returned; only the cost is contractual). An empty valid
    block yields the all-zero matrix.
    """
    m, n = d.valid_rows, d.valid_cols
    out = np.zeros((d.n_max, d.n_max), dtype=np.uint8)
    if m and n:
        block = d.valid_block()
        if m <= n:
            col_to_row = _solve(block)
            for j, i in enumerate(col_to_row):
                if i >= 0:
                    out[i, j] = 1
        else:
            row_to_col = _solve(block.T)
            for i, j in enumerate(row_to_col):
                if j >= 0:
                    out[i, j] = 1
    return AssociationMatrix(out, m, n)


def assignment_cost(d, a):
    """Total distance of the matched pairs."""
    return float((d.values * a.values).sum())


def _solve(cost):
    """Rectangular assignment for an m x n cost matrix with m <= n.

    Returns col_to_row: for each column the matched row index or -1.
    """
    m, n = cost.shape
    INF = np.inf
    u = np.zeros(m + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=np.int64)  # 1-based row matched to column j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, m + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            delta = INF
            j1 = -1
            row = cost[i0 - 1]
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = row[j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    col_to_row = np.full(n, -1, dtype=np.int64)
    for j in range(1, n + 1):
        if match[j] > 0:
            col_to_row[j - 1] = match[j] - 1
    return col_to_row


# -- shard file layout ---------------------------------------------------------
#
# One file per shard: uint32 LE record count, uint32 LE n_max, then per record
# a float32 LE n_max*n_max distance block followed by a uint8 n_max*n_max
# association block.


def write_shard(path, records):
    """records: list of (DistanceMatrix, AssociationMatrix)."""
    if not records:
        raise ValueError("refusing to write an empty shard")
    n_max = records[0][0].n_max
    with open(path, "wb") as f:
        f.write(struct.pack("<II", len(records), n_max))
        for d, a in records:
            f.write(np.ascontiguousarray(d.values, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(a.values, dtype=np.uint8).tobytes())


def read_shard(path):
    """Yields (distances, association) float/uint8 arrays of shape (n_max, n_max)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8:
        raise DataError(f"shard too short: {path}")
    count, n_max = struct.unpack_from("<II", raw, 0)
    rec = n_max * n_max * 4 + n_max * n_max
    if len(raw) != 8 + count * rec:
        raise DataError(f"shard {path} is truncated or corrupt "
                        f"(expected {8 + count * rec} bytes, found {len(raw)})")
    out = []
    off = 8
    for _ in range(count):
        d = np.frombuffer(raw, dtype="<f4", count=n_max * n_max, offset=off)
        off += n_max * n_max * 4
        a = np.frombuffer(raw, dtype=np.uint8, count=n_max * n_max, offset=off)
        off += n_max * n_max
        out.append((d.reshape(n_max, n_max).astype(np.float64),
                    a.reshape(n_max, n_max).copy()))
    return out
