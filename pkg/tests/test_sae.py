import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from sangria.sae import (
    Autoencoder,
    DenseLayer,
    SaeConfig,
    WidthConfig,
    augment,
    fine_tune,
    greedy_pretrain,
    layer_param_count,
    loss_and_gradients,
    reconstruct,
    reconstruction_loss,
    sae_from_dict,
    sae_to_dict,
    train_autoencoder,
    train_sae,
)

from conftest import TINY_SAE


def random_net(rng, dims, acts):
    layers = [DenseLayer.init(i, o, a, rng) for (i, o), a in zip(zip(dims, dims[1:]), acts)]
    return Autoencoder(layers)


def fd_gradients(ae, x, step=1e-5):
    """Central differences of the reconstruction objective for every parameter."""
    out = []
    for layer in ae.layers:
        grads = []
        for param in (layer.weights, layer.biases):
            g = np.zeros_like(param)
            for idx in np.ndindex(param.shape):
                old = param[idx]
                param[idx] = old + step
                up = reconstruction_loss(ae, x)
                param[idx] = old - step
                down = reconstruction_loss(ae, x)
                param[idx] = old
                g[idx] = (up - down) / (2 * step)
            grads.append(g)
        out.append(tuple(grads))
    return out


def max_rel_error(analytic, numeric):
    worst = 0.0
    for (aw, ab), (nw, nb) in zip(analytic, numeric):
        for a, n in ((aw, nw), (ab, nb)):
            worst = max(worst, np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), 1e-12))
    return worst


@pytest.mark.parametrize(
    "in_dim, out_dim, expected", [(172, 86, 14878), (1, 1, 2), (3, 4, 16)]
)
def test_layer_param_count(in_dim, out_dim, expected):
    assert layer_param_count(in_dim, out_dim) == expected


def test_zero_network_sigmoid_half():
    layer = DenseLayer(np.zeros((5, 5)), np.zeros(5), "sigmoid")
    assert_allclose(reconstruct(Autoencoder([layer]), np.linspace(0, 1, 5)), 0.5)


def test_identity_network():
    layer = DenseLayer(np.eye(4), np.zeros(4), "identity")
    x = np.array([0.1, 0.0, 0.7, 1.0])
    assert_array_equal(reconstruct(Autoencoder([layer]), x), x)


def test_output_length_matches_input(rng):
    ae = random_net(rng, [520, 260, 130, 520], ["relu", "relu", "sigmoid"])
    assert reconstruct(ae, rng.random(520)).shape == (520,)


def test_shape_mismatch_rejected(rng):
    ae = random_net(rng, [6, 3, 6], ["relu", "sigmoid"])
    with pytest.raises(ValueError, match="dimension"):
        ae.forward(np.zeros(5))


def test_gradient_matches_finite_differences(rng):
    ae = random_net(rng, [7, 5, 3, 7], ["relu", "relu", "sigmoid"])
    x = rng.random((6, 7))
    _, analytic = loss_and_gradients(ae, x)
    assert max_rel_error(analytic, fd_gradients(ae, x)) < 1e-4


def test_epochs_zero_is_noop(rng):
    ae = random_net(rng, [6, 3, 6], ["relu", "sigmoid"])
    trained, history = train_autoencoder(ae, rng.random((10, 6)), SaeConfig(epochs=0))
    assert history == []
    for a, b in zip(ae.layers, trained.layers):
        assert_array_equal(a.weights, b.weights)
        assert_array_equal(a.biases, b.biases)


def test_default_training_reduces_loss(rng):
    data = rng.random((100, 12))
    ae = random_net(rng, [12, 6, 3, 12], ["relu", "relu", "sigmoid"])
    _, history = train_autoencoder(ae, data, SaeConfig())
    assert len(history) == 100
    assert history[-1] < history[0]


def test_sgd_option_runs(rng):
    data = rng.random((40, 8))
    ae = random_net(rng, [8, 4, 8], ["relu", "sigmoid"])
    _, history = train_autoencoder(ae, data, SaeConfig(optimizer="sgd", learning_rate=0.05, epochs=20))
    assert history[-1] < history[0]


def test_training_does_not_touch_input_model(rng):
    ae = random_net(rng, [6, 3, 6], ["relu", "sigmoid"])
    before = ae.layers[0].weights.copy()
    train_autoencoder(ae, rng.random((10, 6)), SaeConfig(epochs=2))
    assert_array_equal(ae.layers[0].weights, before)


@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4))
def test_sigmoid_output_in_unit_interval(xs):
    rng = np.random.default_rng(0)
    ae = random_net(rng, [4, 3, 4], ["relu", "sigmoid"])
    for layer in ae.layers:
        layer.weights *= 20
    y = reconstruct(ae, np.array(xs))
    assert np.all((y >= 0) & (y <= 1))


def test_default_widths():
    assert WidthConfig.default(520).as_tuple() == (520, 260, 130, 65)
    assert WidthConfig.default(9).as_tuple() == (9, 5, 3, 2)


@pytest.fixture(scope="module")
def pretrained():
    data = np.random.default_rng(5).random((30, 16))
    cfg = SaeConfig(epochs=2, seed=1)
    return data, cfg, greedy_pretrain(data, cfg)


def test_greedy_wiring_is_bitwise(pretrained):
    _, _, sae = pretrained
    donors = [sae.ae1.layers[1], sae.ae3.layers[1], None, sae.ae3.layers[2], sae.ae1.layers[2]]
    for got, donor in zip(sae.ae2.layers, donors):
        if donor is None:
            continue
        assert got.weights.tobytes() == donor.weights.tobytes()
        assert got.biases.tobytes() == donor.biases.tobytes()
        assert got is not donor


def test_stack_shapes_follow_widths(pretrained):
    _, _, sae = pretrained
    d, h, q, o = sae.widths.as_tuple()
    assert [l.weights.shape for l in sae.ae1.layers] == [(h, d), (q, h), (d, q)]
    assert [l.weights.shape for l in sae.ae3.layers] == [(q, q), (o, q), (q, o)]
    assert [l.weights.shape for l in sae.ae2.layers] == [(q, h), (o, q), (o, o), (q, o), (d, q)]
    assert sae.ae1.check_funnel() and sae.ae2.check_funnel()


def test_param_table_sums_to_total(pretrained):
    _, _, sae = pretrained
    table = sae.param_table()
    assert sum(table.values()) == sae.n_params
    layers = [l for ae in (sae.ae1, sae.ae2, sae.ae3) for l in ae.layers]
    assert sae.n_params == sum(layer_param_count(l.in_dim, l.out_dim) for l in layers)


def test_pretrain_is_deterministic(pretrained):
    data, cfg, sae = pretrained
    again = greedy_pretrain(data, cfg)
    assert sae_to_dict(again) == sae_to_dict(sae)


def test_fine_tune_zero_epochs_is_noop(pretrained):
    data, _, sae = pretrained
    tuned = fine_tune(sae, data, SaeConfig(epochs=0, seed=1))
    for a, b in zip(sae.ae2.layers, tuned.ae2.layers):
        assert_array_equal(a.weights, b.weights)


def test_fine_tune_freezes_donors(pretrained):
    data, cfg, sae = pretrained
    tuned = fine_tune(sae, data, cfg)
    for a, b in zip(sae.ae1.layers + sae.ae3.layers, tuned.ae1.layers + tuned.ae3.layers):
        assert_array_equal(a.weights, b.weights)
    moved = [not np.array_equal(a.biases, b.biases) for a, b in zip(sae.ae2.layers, tuned.ae2.layers)]
    assert any(moved)


def test_augment_doubles(uji_db):
    sub = uji_db.subset(range(100))
    sae = train_sae(sub.rssi, TINY_SAE)
    out = augment(sae, sub)
    assert len(out) == 200
    assert_array_equal(out.rssi[:100], sub.rssi)
    assert out.rp_labels[:100] == sub.rp_labels and out.rp_labels[100:] == sub.rp_labels
    assert not out.synthetic[:100].any() and out.synthetic[100:].all()
    synth = out.rssi[100:]
    assert synth.min() >= 0 and synth.max() <= 1
    assert_allclose(synth * 100, np.round(synth * 100), atol=1e-9)


def test_augment_rejects_wrong_width(uji_db):
    sae = train_sae(np.random.default_rng(0).random((10, 8)), SaeConfig(epochs=1))
    with pytest.raises(ValueError, match="APs"):
        augment(sae, uji_db)


def test_serialization_round_trip(pretrained):
    _, _, sae = pretrained
    back = sae_from_dict(sae_to_dict(sae))
    for a, b in zip(sae.ae2.layers, back.ae2.layers):
        assert a.weights.tobytes() == b.weights.tobytes()
    x = np.random.default_rng(1).random((3, 16))
    assert_array_equal(back.synthesize(x), sae.synthesize(x))


def test_config_validation():
    with pytest.raises(ValueError):
        SaeConfig(learning_rate=0)
    with pytest.raises(ValueError):
        SaeConfig(optimizer="rmsprop")
