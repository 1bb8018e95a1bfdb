import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from sangria.artifact import ArtifactError, FORMAT_VERSION
from sangria.fingerprint_data import FingerprintDatabase, Location, split_by_device
from sangria.gbt import GbtConfig, fit_ensemble
from sangria.localization import (
    PredictionError,
    SangriaModel,
    euclidean_error,
    knn_predict,
    knn_predict_many,
    load_model,
    locate,
    model_from_bytes,
    model_to_bytes,
    predict_location,
    save_model,
    train_sangria,
)
from sangria.sae import SaeConfig

from conftest import TINY_GBT, TINY_SAE

coord = st.floats(-1e4, 1e4)
point = st.tuples(coord, coord, coord)


@pytest.fixture(scope="module")
def phone1(uji_db):
    return split_by_device(uji_db, ["1"], ["1"])[0]


@pytest.fixture(scope="module")
def model(phone1):
    return train_sangria(phone1, TINY_SAE, TINY_GBT)


def scan_of(db, i):
    return {db.registry.ap_ids[k]: -100.0 + 100.0 * v for k, v in enumerate(db.rssi[i]) if v > 0}


# -- metric ----------------------------------------------------------------------


@pytest.mark.parametrize(
    "a, b, d", [((1, 2, 3), (1, 2, 3), 0.0), ((0, 0, 0), (3, 4, 0), 5.0), ((1, 2, 2), (1, 2, 0), 2.0)]
)
def test_euclidean_examples(a, b, d):
    assert euclidean_error(Location(*a), Location(*b)) == d


@given(point, point, point)
def test_euclidean_is_a_metric(a, b, c):
    ab, ba = euclidean_error(a, b), euclidean_error(b, a)
    assert ab == ba and ab >= 0
    assert (ab == 0) == (np.array_equal(a, b))
    assert euclidean_error(a, c) <= ab + euclidean_error(b, c) + 1e-9


# -- KNN baseline ------------------------------------------------------------------


def test_knn_exact_match(phone1):
    assert knn_predict(phone1, phone1.rssi[7], k=1) == Location(*phone1.locations[7])


def test_knn_full_k_is_centroid(phone1):
    loc = knn_predict(phone1, phone1.rssi[0], k=len(phone1))
    assert_allclose(loc.as_array(), phone1.locations.mean(axis=0))


def test_knn_collinear_midpoint():
    from sangria.fingerprint_data import ApRegistry

    db = FingerprintDatabase(
        registry=ApRegistry(("a",)),
        rssi=[[0.1], [0.2], [0.9]],
        locations=[[0, 0, 0], [2, 0, 0], [9, 0, 0]],
        rp_labels=("p", "q", "r"),
        devices=("x",) * 3,
        rp_coordinates={"p": Location(0, 0, 0), "q": Location(2, 0, 0), "r": Location(9, 0, 0)},
    )
    query = np.array([0.14])
    d = np.abs(db.rssi[:, 0] - query[0])
    nearest = np.argsort(d)[:2]
    assert sorted(nearest) == [0, 1]
    assert knn_predict(db, query, k=2) == Location(1.0, 0.0, 0.0)


def test_knn_many_matches_single(phone1, rng):
    q = rng.random((5, len(phone1.registry)))
    many = knn_predict_many(phone1, q, k=3)
    for row, got in zip(q, many):
        assert_allclose(got, knn_predict(phone1, row, 3).as_array(), atol=1e-12)


def test_knn_bad_k(phone1):
    with pytest.raises(ValueError):
        knn_predict(phone1, phone1.rssi[0], k=0)


# -- pipeline ----------------------------------------------------------------------


def test_training_is_deterministic(phone1, model):
    again = train_sangria(phone1, TINY_SAE, TINY_GBT)
    assert model_to_bytes(again) == model_to_bytes(model)


def test_augmentation_off_equals_plain_boosting(phone1):
    m = train_sangria(phone1, SaeConfig(epochs=0), TINY_GBT, augment_data=False)
    plain = fit_ensemble(phone1, TINY_GBT)
    assert m.sae is None
    assert all(a == b for a, b in zip(m.ensemble.trees, plain.trees))


def test_metadata_records_training_sets(phone1, model):
    assert model.metadata["n_fit_records"] == 2 * len(phone1)
    assert model.metadata["dataset_digest"] == phone1.digest()


def test_all_minus_100_is_zero_vector(model):
    scan = {ap: -100.0 for ap in model.registry.ap_ids[:50]}
    labels, coords = model.predict_vectors(np.zeros(len(model.registry)))
    assert predict_location(model, scan) == Location(*coords[0])


def test_unknown_ap_is_ignored(phone1, model):
    scan = scan_of(phone1, 3)
    noisy = dict(scan, NOT_AN_AP=-20.0)
    assert locate(model, noisy).rp_label == locate(model, scan).rp_label
    assert locate(model, noisy).n_known_aps == locate(model, scan).n_known_aps


def test_key_order_is_irrelevant(phone1, model):
    items = list(scan_of(phone1, 11).items())
    assert predict_location(model, items) == predict_location(model, items[::-1])


def test_prediction_is_a_known_rp(phone1, model):
    known = set(model.rp_coordinates.values())
    for i in range(0, len(phone1), 5):
        assert predict_location(model, scan_of(phone1, i)) in known


def test_single_class_model_returns_its_rp(phone1):
    one = phone1.subset([i for i, lab in enumerate(phone1.rp_labels) if lab == phone1.rp_labels[0]])
    m = train_sangria(one, TINY_SAE, TINY_GBT, augment_data=False)
    assert predict_location(m, scan_of(one, 0)) == one.rp_coordinates[one.rp_labels[0]]


def test_empty_scan_is_low_confidence(model):
    pred = locate(model, {})
    assert pred.low_confidence and pred.n_known_aps == 0


def test_empty_training_set(phone1):
    with pytest.raises(ValueError):
        train_sangria(phone1.subset([]), TINY_SAE, TINY_GBT)


# -- artifacts ---------------------------------------------------------------------


def test_artifact_round_trip(model, phone1, tmp_path):
    path = tmp_path / "model.bin"
    digest = save_model(model, path)
    assert len(digest) == 64
    back = load_model(path)
    assert model_to_bytes(back) == model_to_bytes(model)
    a = model.ensemble.raw_scores(phone1.rssi)
    assert back.ensemble.raw_scores(phone1.rssi).tobytes() == a.tobytes()
    assert back.rp_coordinates == model.rp_coordinates


def test_artifact_version_mismatch(model):
    data = model_to_bytes(model).replace(
        f'"version":{FORMAT_VERSION}'.encode(), f'"version":{FORMAT_VERSION + 1}'.encode()
    )
    with pytest.raises(ArtifactError, match="version"):
        model_from_bytes(data)


def test_artifact_garbage():
    with pytest.raises(ArtifactError):
        model_from_bytes(b"\x00\x01 not json")
