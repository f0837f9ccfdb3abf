import numpy as np
import pytest

from masi.cluster import ClusterConfig
from masi.dataset import (Checkpoint, check_compatible, chronological_split, load_checkpoint, load_dataset,
                          load_dictionary, make_dataset, pad_dataset, save_checkpoint, save_dataset,
                          save_dictionary, split_sizes)
from masi.errors import CompatibilityError, CorruptionError, UsageError
from masi.qtc import Variant, default_dictionary

from conftest import line, make_set


def test_split_sizes():
    assert split_sizes(1000) == (800, 100, 100)
    assert split_sizes(43) == (35, 4, 4)
    assert split_sizes(10) == (8, 1, 1)


def test_splits_are_chronological_and_disjoint(qtc4_set):
    tr, va, te = qtc4_set.train, qtc4_set.validation, qtc4_set.test
    assert max(s.window_start for s in tr) <= min(s.window_start for s in va)
    assert max(s.window_start for s in va) <= min(s.window_start for s in te)
    keys = [(s.center, s.window_start) for s in tr + va + te]
    assert len(keys) == len(set(keys))
    n = len(keys)
    assert qtc4_set.sizes == split_sizes(n) and qtc4_set.meta["n_samples"] == n


def test_tied_starts_are_split_by_seed():
    class S:
        def __init__(self, k):
            self.window_start, self.k = k // 4, k

    samples = [S(k) for k in range(40)]
    a = chronological_split(samples, 1)
    assert [s.k for s in a[0]] == [s.k for s in chronological_split(samples, 1)[0]]
    assert [s.k for part in a for s in part] != [s.k for part in chronological_split(samples, 2) for s in part]


def test_same_inputs_give_identical_datasets(small_scene, small_config, qtc4_set):
    assert make_dataset(small_scene, "qtc4", small_config) == qtc4_set


def test_metadata_records_n_star_and_digest(qtc6_set):
    assert qtc6_set.n_star == qtc6_set.meta["observed_n_star"] >= 1
    assert qtc6_set.digests == {6: default_dictionary(Variant.C2).digest}


def test_too_few_samples_is_rejected():
    ts = make_set({"c": line((0, 0), (0.2, 0), 7), "a": line((0, 0.5), (0.2, 0), 7)})  # 8 windows
    with pytest.raises(UsageError):
        make_dataset(ts, "qtc4", ClusterConfig(1.2, 2, 2, 1))


def test_padding_widens_every_sample(qtc4_set):
    wide = pad_dataset(qtc4_set, qtc4_set.n_star + 2)
    imp = qtc4_set.dictionary.impossible_index
    for s, w in zip(qtc4_set.test, wide.test):
        assert w.n_star == s.n_star + 2
        np.testing.assert_array_equal(w.indices[:s.n_star], s.indices)
        assert (w.indices[s.n_star:] == imp).all() and not w.mask[s.n_star:].any()
    with pytest.raises(UsageError):
        pad_dataset(qtc4_set, qtc4_set.n_star - 1)


@pytest.mark.parametrize("name", ["qtc4_set", "qtc6_set", "ts_set"])
def test_dataset_round_trip(name, request, tmp_path):
    ds = request.getfixturevalue(name)
    save_dataset(ds, tmp_path / "d.masi")
    assert load_dataset(tmp_path / "d.masi") == ds


def test_truncated_file_is_corrupt(qtc4_set, tmp_path):
    path = tmp_path / "d.masi"
    save_dataset(qtc4_set, path)
    data = path.read_bytes()
    path.write_bytes(data[:-100])
    with pytest.raises(CorruptionError):
        load_dataset(path)
    flipped = bytearray(data)
    flipped[len(data) // 2] ^= 0xFF
    path.write_bytes(bytes(flipped))
    with pytest.raises(CorruptionError):
        load_dataset(path)


def test_dictionary_round_trip(tmp_path):
    d = default_dictionary(Variant.C2)
    save_dictionary(d, tmp_path / "c2.masi")
    back = load_dictionary(tmp_path / "c2.masi")
    assert back == d and back.digest == d.digest


def test_wrong_kind_is_a_compatibility_error(qtc4_set, tmp_path):
    save_dictionary(default_dictionary(Variant.C1), tmp_path / "c1.masi")
    with pytest.raises(CompatibilityError):
        load_dataset(tmp_path / "c1.masi")


def _checkpoint(framework, ds, digests=None):
    cfg = {"framework": framework, "n_star": ds.n_star, "t_history": ds.config.t_history,
           "t_future": ds.config.t_future, "hidden": 4}
    return Checkpoint(cfg, {"w": np.arange(6.0).reshape(2, 3)}, [(1, 2.5, 2.75)], digests or ds.digests)


def test_checkpoint_round_trip(qtc4_set, tmp_path):
    ck = _checkpoint("qtc4", qtc4_set)
    save_checkpoint(ck, tmp_path / "m.masi")
    assert load_checkpoint(tmp_path / "m.masi") == ck


def test_checkpoint_compatibility(qtc4_set):
    check_compatible(_checkpoint("qtc4", qtc4_set), qtc4_set)
    with pytest.raises(CompatibilityError):
        check_compatible(_checkpoint("qtc6", qtc4_set, {6: default_dictionary(Variant.C2).digest}), qtc4_set)
    with pytest.raises(CompatibilityError):
        check_compatible(_checkpoint("qtc4", qtc4_set, {4: "0" * 16}), qtc4_set)
    wide = _checkpoint("qtc4", qtc4_set)
    wide.config["n_star"] += 1
    with pytest.raises(CompatibilityError):
        check_compatible(wide, qtc4_set)


def test_unknown_split_name(qtc4_set):
    with pytest.raises(UsageError):
        qtc4_set.split("dev")
