"""Data pipeline: CSV loading, windowing, splits, synthetic generator."""

import numpy as np
import pytest

from fathom.data import (
    Schema,
    SplitSpec,
    SynthResult,
    load_task_csv,
    make_windows,
    prepare_task,
    synth_generate,
    synth_splits,
)
from fathom.errors import ContractError, DataError, InsufficientDataError, SchemaError

SCHEMA = Schema(timestamp="ts", features=["a", "b"], labels=["y"], kind="classification")


def write_csv(tmp_path, text, name="task0.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def simple_csv(tmp_path, rows=100, start=0):
    lines = ["ts,a,b,y"]
    for i in range(rows):
        lines.append(f"{start + i},{i * 0.1},{i * -0.2},{i % 2}")
    return write_csv(tmp_path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# loading


def test_load_sorts_rows_by_timestamp(tmp_path):
    p = write_csv(tmp_path, "ts,a,b,y\n3,30,0,1\n1,10,0,0\n2,20,0,1\n")
    table = load_task_csv(p, SCHEMA)
    np.testing.assert_array_equal(table.timestamps, [1, 2, 3])
    np.testing.assert_array_equal(table.features[:, 0], [10, 20, 30])


def test_load_rejects_unknown_and_missing_columns(tmp_path):
    p = write_csv(tmp_path, "ts,a,b,y,extra\n1,0,0,1,9\n")
    with pytest.raises(SchemaError, match="extra"):
        load_task_csv(p, SCHEMA)
    p = write_csv(tmp_path, "ts,a,y\n1,0,1\n", name="task1.csv")
    with pytest.raises(SchemaError, match="'b'"):
        load_task_csv(p, SCHEMA)


def test_load_header_only_file_is_an_error(tmp_path):
    p = write_csv(tmp_path, "ts,a,b,y\n")
    with pytest.raises(InsufficientDataError):
        load_task_csv(p, SCHEMA)


def test_load_duplicate_timestamps_lists_offenders(tmp_path):
    p = write_csv(tmp_path, "ts,a,b,y\n1,0,0,1\n2,0,0,1\n2,1,1,0\n3,0,0,1\n")
    with pytest.raises(DataError, match=r"duplicate timestamps.*2"):
        load_task_csv(p, SCHEMA)


def test_load_drops_rows_with_missing_labels(tmp_path):
    p = write_csv(tmp_path, "ts,a,b,y\n1,0,0,1\n2,5,5,\n3,0,0,0\n")
    table = load_task_csv(p, SCHEMA)
    assert table.n_rows == 2
    np.testing.assert_array_equal(table.timestamps, [1, 3])


def test_load_rejects_non_binary_classification_labels(tmp_path):
    p = write_csv(tmp_path, "ts,a,b,y\n1,0,0,0.5\n2,0,0,1\n")
    with pytest.raises(DataError, match="0/1"):
        load_task_csv(p, SCHEMA)


def test_missing_feature_imputed_with_training_mean(tmp_path):
    # ten rows; training split = first six; 'a' observed in train: 1,3 twice
    # each and a gap -> train mean 2.0 fills the empty cell
    rows = ["ts,a,b,y"]
    a_vals = ["1", "3", "", "1", "3", "2", "9", "9", "9", "9"]
    for i, a in enumerate(a_vals):
        rows.append(f"{i},{a},0,1")
    p = write_csv(tmp_path, "\n".join(rows) + "\n")
    table = load_task_csv(p, SCHEMA)
    assert table.features[2, 0] == 2.0
    assert table.impute_means[0] == 2.0


def test_timestamps_can_be_dates(tmp_path):
    p = write_csv(tmp_path, "ts,a,b,y\n2021-01-02,1,0,1\n2021-01-01,2,0,0\n")
    table = load_task_csv(p, SCHEMA)
    np.testing.assert_array_equal(table.features[:, 0], [2, 1])


# ---------------------------------------------------------------------------
# windowing


def test_window_count_formula(tmp_path):
    table = load_task_csv(simple_csv(tmp_path, rows=100), SCHEMA)
    assert make_windows(table, 10, 1).n_windows == 91


def test_window_of_one_keeps_every_row(tmp_path):
    table = load_task_csv(simple_csv(tmp_path, rows=17), SCHEMA)
    assert make_windows(table, 1, 1).n_windows == 17


def test_stride_equal_to_window_tiles(tmp_path):
    table = load_task_csv(simple_csv(tmp_path, rows=10), SCHEMA)
    assert make_windows(table, 3, 3).n_windows == 3


def test_window_enumeration_rows7_t3_stride2(tmp_path):
    table = load_task_csv(simple_csv(tmp_path, rows=7), SCHEMA)
    ds = make_windows(table, 3, 2)
    assert ds.n_windows == 3
    # offsets 0, 2, 4 -> labels from rows 2, 4, 6
    np.testing.assert_array_equal(ds.Y[:, 0], [0, 0, 0])
    z = table.normalizer.apply(table.features)
    for i, off in enumerate([0, 2, 4]):
        np.testing.assert_array_equal(ds.X[i], z[off:off + 3])


def test_window_label_is_last_row_label(tmp_path):
    table = load_task_csv(simple_csv(tmp_path, rows=30), SCHEMA)
    ds = make_windows(table, 5, 1)
    for i in range(ds.n_windows):
        np.testing.assert_array_equal(ds.Y[i], table.labels[i + 5 - 1])


def test_too_few_rows_raise(tmp_path):
    table = load_task_csv(simple_csv(tmp_path, rows=4), SCHEMA)
    with pytest.raises(InsufficientDataError):
        make_windows(table, 10, 1)
    with pytest.raises(ContractError):
        make_windows(table, 0, 1)


# ---------------------------------------------------------------------------
# splits


def test_chronological_split_orders_timestamps(tmp_path):
    table = load_task_csv(simple_csv(tmp_path, rows=100), SCHEMA)
    i1, i2 = table.split.boundaries(table.n_rows)
    assert (i1, i2) == (60, 80)
    splits = prepare_task(table, window=5)
    assert table.timestamps[:i1].max() < table.timestamps[i1:i2].min()
    assert table.timestamps[i1:i2].max() < table.timestamps[i2:].min()
    assert splits.train.n_windows == 56
    assert splits.val.n_windows == 16
    assert splits.test.n_windows == 16


def test_split_fractions_validated():
    with pytest.raises(ContractError):
        SplitSpec(fractions=(0.5, 0.2, 0.2))
    with pytest.raises(ContractError):
        SplitSpec(strategy="shuffled")


def test_standardization_uses_train_stats_only(tmp_path):
    table = load_task_csv(simple_csv(tmp_path, rows=50), SCHEMA)
    i1, _ = table.split.boundaries(table.n_rows)
    train_rows = table.features[:i1]
    assert train_rows.mean(axis=0).tobytes() == table.normalizer.mean.tobytes()
    assert train_rows.std(axis=0).tobytes() == table.normalizer.std.tobytes()


# ---------------------------------------------------------------------------
# synthetic generator


def test_synth_same_seed_is_identical():
    a = synth_generate(3, 40, 10, 8, 2, seed=5)
    b = synth_generate(3, 40, 10, 8, 2, seed=5)
    assert a.manifest == b.manifest
    for da, db in zip(a.datasets, b.datasets):
        assert da.X.tobytes() == db.X.tobytes()
        assert da.Y.tobytes() == db.Y.tobytes()


def test_synth_labels_balanced_at_median_threshold():
    res = synth_generate(2, 400, 10, 8, 2, seed=1)
    for ds in res.datasets:
        np.testing.assert_allclose(ds.Y.mean(axis=0), 0.5, atol=1.0 / 400 + 1e-12)


def test_synth_zero_pulse_overlap_is_negative_class():
    res = synth_generate(1, 300, 10, 8, 1, seed=3)
    phases = np.asarray(res.manifest["trigger_phases"])
    missed = phases >= res.manifest["window_len"]
    assert missed.any()
    # direct evaluation of the generator's labeling rule: no overlap -> score
    # 0, below the (positive) threshold
    assert res.manifest["task_info"][0]["thresholds"][0] > 0
    np.testing.assert_array_equal(res.datasets[0].Y[missed, 0], 0.0)


def test_synth_manifest_carries_ground_truth():
    res = synth_generate(4, 30, 12, 9, 1, seed=9)
    assert len(res.manifest["trigger_phases"]) == 30
    for info in res.manifest["task_info"]:
        inf = info["informative_features"]
        assert len(inf) == int(np.ceil(9 / 4))
        assert all(0 <= d < 9 for d in inf)


def test_synth_regression_labels_are_noisy_scores():
    res = synth_generate(1, 200, 10, 8, 1, seed=2, kind="regression")
    ds = res.datasets[0]
    assert ds.kind == "regression"
    # recompute the generator's own rule: weighted informative sum over the
    # pulse, and check the residual is the stated sigma=0.1 noise
    info = res.manifest["task_info"][0]
    weights = np.asarray(info["label_weights"])
    informative = info["informative_features"]
    phases = np.asarray(res.manifest["trigger_phases"])
    L = res.manifest["pulse_len"]
    assert (phases + L <= 10).all()  # regression pulses sit fully inside
    scores = np.array([
        weights @ ds.X[i, p:p + L][:, informative].sum(axis=0)
        for i, p in enumerate(phases)
    ])
    resid = ds.Y - scores
    assert np.abs(resid).max() < 0.1 * 6
    assert 0.05 < resid.std() < 0.2


def test_synth_requires_four_features():
    with pytest.raises(ContractError):
        synth_generate(1, 10, 5, 3, 1, seed=0)


def test_synth_splits_are_disjoint_and_exhaustive():
    res = synth_generate(2, 100, 10, 8, 2, seed=7)
    splits = synth_splits(res)
    for sp, ds in zip(splits, res.datasets):
        assert sp.train.n_windows == 60
        assert sp.val.n_windows == 20
        assert sp.test.n_windows == 20
        stitched = np.concatenate([sp.train.X, sp.val.X, sp.test.X])
        assert stitched.tobytes() == ds.X.tobytes()
