import numpy as np
import pytest

from mela.datasets import TaskDataset, load_datasets, save_datasets
from mela.tasks.bounce import bounce_ensemble
from mela.tasks.sinusoid import sinusoid_ensemble


def test_split_must_partition_rows():
    X, Y = np.zeros((4, 1)), np.zeros((4, 1))
    with pytest.raises(ValueError):
        TaskDataset(X, Y, np.array([0, 1]), np.array([1, 2, 3]), "x", 0, 0, np.zeros(1))
    with pytest.raises(ValueError):
        TaskDataset(X, Y, np.array([0]), np.array([1, 2]), "x", 0, 0, np.zeros(1))


def test_round_trip_and_determinism(tmp_path):
    data = sinusoid_ensemble(7, 4) + bounce_ensemble(7, 2, steps=8, n_trajectories=2)
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    save_datasets(a, data)
    save_datasets(b, data)
    assert a.read_bytes() == b.read_bytes()
    back = load_datasets(a)
    assert len(back) == len(data)
    for x, y in zip(data, back):
        assert np.array_equal(x.X, y.X) and np.array_equal(x.Y, y.Y)
        assert np.array_equal(x.train_idx, y.train_idx) and np.array_equal(x.test_idx, y.test_idx)
        assert np.array_equal(x.oracle_params(), y.oracle_params())
        assert (x.family, x.task_id, x.seed) == (y.family, y.task_id, y.seed)
        assert x.split_hash() == y.split_hash()


def test_stamp_does_not_change_contents(tmp_path):
    data = sinusoid_ensemble(1, 2)
    save_datasets(tmp_path / "s.bin", data, config_hash="deadbeef")
    assert b"deadbeef" in (tmp_path / "s.bin").read_bytes()
    assert np.array_equal(load_datasets(tmp_path / "s.bin")[1].X, data[1].X)


def test_rejects_bad_files(tmp_path):
    p = tmp_path / "junk.bin"
    p.write_bytes(b"garbage!" + bytes(8))
    with pytest.raises(ValueError):
        load_datasets(p)
    good = tmp_path / "good.bin"
    save_datasets(good, sinusoid_ensemble(1, 1))
    (tmp_path / "long.bin").write_bytes(good.read_bytes() + b"\0" * 8)
    with pytest.raises(ValueError):
        load_datasets(tmp_path / "long.bin")


def test_split_hash_tracks_split():
    d = sinusoid_ensemble(3, 1)[0]
    swapped = d.with_split(d.test_idx, d.train_idx)
    assert swapped.split_hash() != d.split_hash()
    assert np.array_equal(swapped.X_train, d.X_test)
