import math

import numpy as np
import pytest

from doatrack import hnet
from doatrack.assignment import build_distance_matrix, read_shard
from doatrack.autodiff import Tensor
from doatrack.errors import ConfigError, DataError
from doatrack.geometry import DoaVector


def test_combo_list_matches_dataset_spec():
    assert hnet.count_combos(2) == [(0, 0), (0, 1), (1, 0), (1, 1), (1, 2), (2, 1), (2, 2)]


def test_sample_records_balanced_and_labeled():
    rng = np.random.default_rng(0)
    records = hnet.sample_distance_records(63 * 4, 2, rng)
    assert len(records) == 63 * 4
    for d, a in records[:50]:
        d.validate()
        a.validate()


def test_empty_combo_sample():
    rng = np.random.default_rng(1)
    records = hnet.sample_distance_records(63, 2, rng)
    empties = [(d, a) for d, a in records if d.valid_rows == 0 and d.valid_cols == 0]
    assert empties
    for d, a in empties:
        assert (d.values > 2).all()
        assert not a.values.any()


def test_single_pair_perfect_match_label():
    v = DoaVector(1, 0, 0)
    d = build_distance_matrix([v], [v], 2, pad_rng=np.random.default_rng(2))
    from doatrack.assignment import hungarian
    a = hungarian(d)
    assert np.array_equal(a.values, [[1, 0], [0, 0]])


def test_dataset_generation_writes_shards(tmp_path):
    n_train, n_val = hnet.generate_hnet_dataset(tmp_path, n_train=63 * 2, seed=3)
    assert n_train == 63 * 2
    assert n_val == 63  # 10% of train rounds up to one per cell
    d, a, maxt, maxf = hnet.load_hnet_split(tmp_path, "train")
    assert d.shape == (126, 2, 2)
    assert np.array_equal(maxt, a.max(axis=1))
    assert np.array_equal(maxf, a.max(axis=2))


def test_dataset_deterministic(tmp_path):
    hnet.generate_hnet_dataset(tmp_path / "a", n_train=63, seed=9)
    hnet.generate_hnet_dataset(tmp_path / "b", n_train=63, seed=9)
    raw_a = (tmp_path / "a" / "train_000.bin").read_bytes()
    raw_b = (tmp_path / "b" / "train_000.bin").read_bytes()
    assert raw_a == raw_b


def test_forward_shapes_and_range():
    model = hnet.HnetModel(n_max=2, units=8, seed=0)
    d = np.random.default_rng(4).uniform(0, 2, size=(5, 2, 2))
    a_tilde, maxt, maxf = model.forward(Tensor(d))
    assert a_tilde.shape == (5, 2, 2)
    assert maxt.shape == (5, 2)
    assert maxf.shape == (5, 2)
    assert (a_tilde.values > 0).all() and (a_tilde.values < 1).all()


def test_single_matrix_forward():
    model = hnet.HnetModel(n_max=2, units=8, seed=0)
    d = build_distance_matrix([DoaVector(1, 0, 0)], [DoaVector(0, 1, 0)], 2)
    a_tilde, maxt, maxf = hnet.hnet_forward(model, d)
    assert a_tilde.shape == (2, 2)
    assert (a_tilde.values > 0).all() and (a_tilde.values < 1).all()


def test_forward_differentiable_wrt_input():
    model = hnet.HnetModel(n_max=2, units=8, seed=1)
    d = Tensor(np.random.default_rng(5).uniform(0, 2, size=(2, 2)), requires_grad=True)
    a_tilde, _, _ = hnet.hnet_forward(model, d)
    from doatrack import autodiff as ad
    ad.sum_reduce(a_tilde).backward()
    assert d.grad is not None and np.abs(d.grad).max() > 0


def test_initial_loss_near_log2():
    # random sigmoid outputs sit near 0.5, so each BCE term starts near ln 2
    model = hnet.HnetModel(n_max=2, units=32, seed=2)
    rng = np.random.default_rng(6)
    records = hnet.sample_distance_records(63 * 4, 2, rng)
    d = np.stack([r[0].values for r in records])
    a = np.stack([r[1].values for r in records]).astype(np.float64)
    loss = hnet.hnet_loss(model, d, a, a.max(axis=1), a.max(axis=2),
                          weights=(1.0, 0.0, 0.0))
    assert loss.item() == pytest.approx(math.log(2), rel=0.2)


def test_weights_one_zero_zero_is_plain_bce():
    model = hnet.HnetModel(n_max=2, units=8, seed=3)
    rng = np.random.default_rng(7)
    records = hnet.sample_distance_records(63, 2, rng)
    d = np.stack([r[0].values for r in records])
    a = np.stack([r[1].values for r in records]).astype(np.float64)
    from doatrack import autodiff as ad
    a_tilde, _, _ = model.forward(Tensor(d))
    expected = ad.bce_loss(a_tilde, Tensor(a)).item()
    loss = hnet.hnet_loss(model, d, a, a.max(axis=1), a.max(axis=2), (1.0, 0.0, 0.0))
    assert loss.item() == pytest.approx(expected, abs=1e-12)


def test_fscore_perfect_and_degenerate():
    class Fixed:
        n_max = 2

        def __init__(self, out):
            self.out = out

        def forward(self, d_batch):
            vals = np.repeat(self.out[None], d_batch.shape[0], axis=0)
            return Tensor(vals), None, None

    a = np.zeros((10, 2, 2))
    a[:, 0, 0] = 1
    perfect = Fixed(np.array([[0.9, 0.1], [0.1, 0.1]]))
    assert hnet.eval_hnet_fscore(perfect, np.zeros((10, 2, 2)), a) == 1.0
    silent = Fixed(np.full((2, 2), 0.1))
    assert hnet.eval_hnet_fscore(silent, np.zeros((10, 2, 2)), a) == 0.0


def test_training_improves_fscore(tmp_path):
    hnet.generate_hnet_dataset(tmp_path, n_train=63 * 40, seed=11)
    model = hnet.HnetModel(n_max=2, units=32, seed=0)
    best, history = hnet.train_hnet(model, tmp_path, epochs=6, batch=128, seed=0)
    assert best > 0.6  # far above the untrained model's chance-level score
    assert len(history) <= 6


def test_checkpoint_roundtrip(tmp_path):
    model = hnet.HnetModel(n_max=2, units=8, seed=5)
    path = str(tmp_path / "hnet.ckpt")
    from doatrack import nn
    nn.save_checkpoint(path, model.state_dict(), model.manifest(seed=5, step=0))
    loaded, manifest = hnet.load_hnet_model(path)
    assert manifest["kind"] == "hnet"
    d = np.random.default_rng(8).uniform(0, 2, size=(3, 2, 2))
    out1 = model.forward(Tensor(d))[0].values
    out2 = loaded.forward(Tensor(d))[0].values
    assert np.array_equal(out1, out2)


def test_load_rejects_wrong_kind(tmp_path):
    from doatrack import nn
    path = str(tmp_path / "bad.ckpt")
    nn.save_checkpoint(path, {"w": np.zeros(3)}, {"kind": "doanet"})
    with pytest.raises(DataError):
        hnet.load_hnet_model(path)


def test_model_rejects_bad_axis():
    with pytest.raises(ConfigError):
        hnet.HnetModel(sequence_axis="diagonal")


def test_sequence_axis_cols_transposes():
    rows = hnet.HnetModel(n_max=2, units=8, seed=6, sequence_axis="rows")
    cols = hnet.HnetModel(n_max=2, units=8, seed=6, sequence_axis="cols")
    d = np.random.default_rng(9).uniform(0, 2, size=(4, 2, 2))
    out_rows = rows.forward(Tensor(d))[0].values
    out_cols = cols.forward(Tensor(np.swapaxes(d, 1, 2)))[0].values
    assert np.allclose(out_rows, np.swapaxes(out_cols, 1, 2))
