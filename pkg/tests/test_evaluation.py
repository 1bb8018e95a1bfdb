import json
from datetime import datetime, timezone

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from sangria.evaluation import (
    AblationResult,
    ErrorMatrix,
    ErrorStats,
    ablation_sae,
    cross_device_matrix,
    emit_report,
    error_stats,
    latency_benchmark,
    load_report,
    localization_errors,
    run_directory,
    scans_from_database,
)
from sangria.fingerprint_data import split_by_device, split_per_rp
from sangria.localization import train_sangria
from sangria.sae import augment

from conftest import TINY_GBT, TINY_SAE


@pytest.mark.parametrize(
    "errors, expected", [([5], (5, 5, 5)), ([1, 2, 3], (1, 2, 3)), ([0, 0, 0], (0, 0, 0))]
)
def test_error_stats_examples(errors, expected):
    s = error_stats(errors)
    assert (s.min, s.mean, s.max) == expected


@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=50))
def test_error_stats_naive(errors):
    s = error_stats(errors)
    assert s.min == min(errors) and s.max == max(errors)
    assert_allclose(s.mean, sum(errors) / len(errors), rtol=1e-12)
    assert s.n == len(errors)


def test_error_stats_empty():
    with pytest.raises(ValueError):
        error_stats([])


@pytest.fixture(scope="module")
def matrix_run(uji_db):
    return cross_device_matrix(uji_db, ["1", "2"], TINY_SAE, TINY_GBT, 5, 1, return_errors=True)


def test_matrix_two_devices(matrix_run):
    matrix, errors = matrix_run
    assert matrix.cells.shape == (2, 2)
    assert np.all(np.isfinite(matrix.cells)) and np.all(matrix.cells >= 0)
    assert matrix.counts[0, 0] == 8 and matrix.counts[0, 1] == 48
    for e in errors.values():
        assert np.all(np.isfinite(e)) and np.all(e >= 0)


def test_matrix_ignores_unrelated_devices(uji_db, matrix_run):
    matrix, _ = matrix_run
    only = uji_db.subset([i for i, d in enumerate(uji_db.devices) if d in ("1", "2")])
    again = cross_device_matrix(only, ["1", "2"], TINY_SAE, TINY_GBT, 5, 1)
    assert again.cells.tobytes() == matrix.cells.tobytes()


def test_matrix_twin_devices(uji_db):
    one = split_by_device(uji_db, ["1"], ["1"])[0]
    twins = one.concat(one.with_devices({"1": "1b"}))
    m = cross_device_matrix(twins, ["1", "1b"], TINY_SAE, TINY_GBT, 5, 1)
    # off-diagonal tests on the training records themselves, so it can only do better
    assert m.cell("1", "1b") <= m.cell("1", "1") + 1e-12


def test_matrix_absent_cell(uji_db):
    m = cross_device_matrix(uji_db, ["1"], TINY_SAE, TINY_GBT, 6, 1)
    assert np.isnan(m.cells[0, 0]) and "1->1" in m.absent


def test_matrix_unknown_device(uji_db):
    with pytest.raises(ValueError, match="9"):
        cross_device_matrix(uji_db, ["1", "9"], TINY_SAE, TINY_GBT)


def test_ablation_arms_share_everything_but_augmentation(uji_db):
    train, test = split_by_device(uji_db, ["1"], ["2"])
    result, with_m, without_m = ablation_sae(train, test, TINY_SAE, TINY_GBT, return_models=True)
    assert result.without_training_digest == train.digest()
    assert result.n_fit_with == 2 * result.n_fit_without
    fit_with = augment(with_m.sae, train)
    assert fit_with.digest() == result.with_training_digest
    assert fit_with.row_digests()[: len(train)] == train.row_digests()
    assert with_m.ensemble.config == without_m.ensemble.config
    expected = (result.without_sae.mean - result.with_sae.mean) / result.without_sae.mean
    assert_allclose(result.relative_mean_delta, expected)


def test_latency_one_query(uji_db):
    model = train_sangria(split_by_device(uji_db, ["1"], ["1"])[0], TINY_SAE, TINY_GBT)
    report = latency_benchmark(model, scans_from_database(uji_db)[:1], repetitions=1, warmup=2)
    assert len(report.times_ms) == 1
    assert report.times_ms[0] == round(report.times_ms[0], 1)


def test_scans_round_trip(uji_db):
    scans = scans_from_database(uji_db)
    vec, _ = uji_db.registry.vector_from_scan(scans[4].items())
    assert_allclose(vec, uji_db.rssi[4], atol=1e-12)


def test_reports_are_byte_stable(matrix_run, tmp_path):
    matrix, _ = matrix_run
    a = emit_report(matrix, tmp_path / "a.json", "json").read_bytes()
    b = emit_report(matrix, tmp_path / "b.json", "json").read_bytes()
    assert a == b
    back = load_report(tmp_path / "a.json")
    assert back.cells.tobytes() == matrix.cells.tobytes()


def test_matrix_csv_layout(matrix_run, tmp_path):
    matrix, _ = matrix_run
    lines = emit_report(matrix, tmp_path / "m.csv", "csv").read_text().splitlines()
    assert len(lines) == 3
    assert lines[0] == "train\\test,1,2"


def test_nan_cells_serialize_as_null(tmp_path):
    m = ErrorMatrix(["a", "b"], np.array([[1.0, np.nan], [2.0, 3.0]]), np.ones((2, 2), int), {"a->b": "x"})
    doc = json.loads(emit_report(m, tmp_path / "m.json").read_text())
    assert doc["data"]["cells"][0][1] is None
    assert np.isnan(load_report(tmp_path / "m.json").cells[0, 1])


def test_stats_csv(tmp_path):
    text = emit_report(ErrorStats(0.0, 1.5, 3.0, 4), tmp_path / "s.csv", "csv").read_text()
    assert text.splitlines() == ["key,value", "max,3.0", "mean,1.5", "min,0.0", "n,4"]


def test_ablation_report_round_trip(tmp_path):
    r = AblationResult(ErrorStats(0, 1, 2, 3), ErrorStats(0, 2, 4, 3), 0.5, "x", "y", 6, 3, {"k": 1})
    emit_report(r, tmp_path / "ablation.json")
    assert load_report(tmp_path / "ablation.json") == r


def test_unknown_format(tmp_path):
    with pytest.raises(ValueError):
        emit_report(ErrorStats(0, 0, 0, 1), tmp_path / "x", "xml")


def test_run_directory_name(tmp_path):
    now = datetime(2024, 5, 1, 12, 30, 0, tzinfo=timezone.utc)
    a = run_directory(tmp_path, {"seed": 1}, now)
    b = run_directory(tmp_path, {"seed": 2}, now)
    assert a.name.startswith("20240501T123000Z-") and a != b and a.is_dir()
    assert run_directory(tmp_path, {"seed": 1}, now) == a
