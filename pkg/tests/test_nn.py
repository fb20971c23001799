import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gme_detect.featurize import NormStats
from gme_detect.nn import (
    AdamState,
    BatchNorm,
    CheckpointError,
    Conv1D,
    Dense,
    GlobalAvgPool,
    MaxPool1D,
    Model,
    ModelSpec,
    ReLU,
    SqueezeExcite,
    adam_step,
    build_model,
    checkpoint_bytes,
    parse_checkpoint,
    sigmoid,
    softmax,
    softmax_cross_entropy,
)
from gme_detect.nn.gradcheck import check_layer, check_model, check_softmax_ce, relative_error

GRAD_TOL = 1e-4


def _randomized(layer, seed=0):
    rng = np.random.default_rng(seed)
    for k, v in layer.params.items():
        layer.params[k] = rng.standard_normal(v.shape)
    return layer


def _input(shape, seed=1):
    return np.random.default_rng(seed).standard_normal(shape)


@pytest.mark.parametrize(
    "layer, shape",
    [
        (Conv1D(1, 4), (3, 7, 1)),
        (Conv1D(3, 5, k=3), (2, 6, 3)),
        (Dense(6, 2), (4, 6)),
        (GlobalAvgPool(), (3, 5, 4)),
        (ReLU(), (3, 5, 2)),
    ],
    ids=["conv1d", "conv1d_k3", "dense", "global_pool", "relu"],
)
def test_layer_gradients(layer, shape):
    errs = check_layer(_randomized(layer), _input(shape))
    assert max(errs.values()) <= GRAD_TOL, errs


def test_batchnorm_gradients_train_and_eval():
    bn = _randomized(BatchNorm(4))
    assert max(check_layer(bn, _input((5, 6, 4))).values()) <= GRAD_TOL
    bn.running_mean = np.arange(4.0)
    bn.running_var = np.linspace(0.5, 2.0, 4)
    assert max(check_layer(bn, _input((5, 6, 4)), train=False).values()) <= GRAD_TOL


def test_maxpool_gradients_and_routing():
    x = _input((2, 9, 3))
    assert check_layer(MaxPool1D(), x)["input"] <= GRAD_TOL
    pool = MaxPool1D()
    x = np.array([[[1.0], [3.0], [5.0], [2.0], [4.0], [4.0], [7.0]]])
    y = pool.forward(x)
    assert y[0, :, 0].tolist() == [3.0, 5.0, 4.0]
    dx = pool.backward(np.ones_like(y))
    # ties go to the first element; the odd trailing entry gets nothing
    assert dx[0, :, 0].tolist() == [0, 1, 1, 0, 1, 0, 0]


def test_se_gradients_through_both_paths():
    se = _randomized(SqueezeExcite(8, 4))
    errs = check_layer(se, _input((3, 5, 8)))
    assert max(errs.values()) <= GRAD_TOL, errs
    # trunk-only gradient (gate held fixed) differs from the full one
    u = _input((3, 5, 8))
    y = se.forward(u, True)
    dy = np.ones_like(y)
    full = se.backward(dy)
    s = y[:, :1, :] / u[:, :1, :]
    assert not np.allclose(full, dy * s)


def test_softmax_cross_entropy_gradient_and_value():
    logits = _input((5, 2))
    targets = np.array([0, 1, 1, 0, 1])
    assert check_softmax_ce(logits, targets) <= GRAD_TOL
    loss, probs, _ = softmax_cross_entropy(logits, targets)
    expect = -np.mean(np.log(softmax(logits)[np.arange(5), targets]))
    assert loss == pytest.approx(expect)
    assert np.allclose(probs.sum(axis=1), 1.0)


def test_softmax_is_stable_for_large_logits():
    loss, probs, grad = softmax_cross_entropy(np.array([[1000.0, -1000.0]]), np.array([0]))
    assert np.isfinite(loss) and np.all(np.isfinite(grad))
    assert sigmoid(np.array([-1000.0, 1000.0])).tolist() == [0.0, 1.0]


@pytest.mark.parametrize("se", [False, True])
def test_full_model_gradients(se):
    model = build_model(16, se, seed=3, channels=(4, 8), reduction=4)
    x = _input((4, 16))
    errs = check_model(model, x, np.array([0, 1, 0, 1]), l2=1e-3)
    assert max(errs.values()) <= GRAD_TOL, errs


def test_relative_error_floor():
    assert relative_error(np.zeros(3), np.full(3, 1e-11)) < 1e-5
    assert relative_error(np.ones(3), np.ones(3) * 1.1) == pytest.approx(0.1 / 1.1)


def test_conv1d_matches_loop():
    conv = _randomized(Conv1D(2, 3, k=3), seed=5)
    x = _input((2, 5, 2))
    y = conv.forward(x)
    w, b = conv.params["w"], conv.params["b"]
    xp = np.concatenate([np.zeros((2, 2, 2)), x], axis=1)
    ref = np.zeros((2, 5, 3))
    for t in range(5):
        for j in range(3):
            ref[:, t] += xp[:, t + j] @ w[j]
    assert np.allclose(y, ref + b)


def test_batchnorm_statistics():
    bn = BatchNorm(2, momentum=0.1)
    x = _input((4, 5, 2))
    y = bn.forward(x, train=True)
    assert np.allclose(y.mean(axis=(0, 1)), 0.0, atol=1e-12)
    assert np.allclose(y.var(axis=(0, 1)), 1.0, atol=1e-3)
    assert np.allclose(bn.running_mean, 0.1 * x.mean(axis=(0, 1)))
    assert np.allclose(bn.running_var, 0.9 + 0.1 * x.reshape(-1, 2).var(axis=0, ddof=1))
    with pytest.raises(ValueError):
        bn.forward(x[:1], train=True)


def test_batchnorm_against_torch():
    torch = pytest.importorskip("torch")
    x = _input((6, 7, 3))
    ours = BatchNorm(3)
    ref = torch.nn.BatchNorm1d(3, eps=1e-5, momentum=0.1).double()
    ref.train()
    out = ref(torch.tensor(x).permute(0, 2, 1)).permute(0, 2, 1).detach().numpy()
    assert np.allclose(ours.forward(x, train=True), out)
    assert np.allclose(ours.running_var, ref.running_var.numpy())
    assert np.allclose(ours.running_mean, ref.running_mean.numpy())


def test_adam_against_torch():
    torch = pytest.importorskip("torch")
    rng = np.random.default_rng(0)
    theta = rng.standard_normal(5)
    tt = torch.tensor(theta.copy(), requires_grad=True)
    opt = torch.optim.Adam([tt], lr=1e-2, betas=(0.9, 0.999), eps=1e-8)
    state = AdamState(lr=1e-2)
    params = {"p": theta}
    for step in range(5):
        g = rng.standard_normal(5)
        adam_step(params, {"p": g}, state)
        opt.zero_grad()
        tt.grad = torch.tensor(g)
        opt.step()
    assert state.t == 5
    assert np.allclose(params["p"], tt.detach().numpy(), atol=1e-12)


def test_adam_first_step_moves_by_learning_rate():
    params = {"p": np.array([1.0, -2.0])}
    adam_step(params, {"p": np.array([3.0, -0.5])}, AdamState(lr=0.1))
    assert np.allclose(params["p"], [0.9, -1.9], atol=1e-7)
    with pytest.raises(ValueError):
        adam_step(params, {"p": np.zeros(3)}, AdamState())


def test_model_spec_round_trip_and_validation():
    model = build_model(32, True, seed=0)
    d = model.spec.to_dict()
    assert d["layers"][-1] == {"kind": "softmax"}
    assert ModelSpec.from_dict(d).to_dict() == d
    bad = dict(d, layers=d["layers"][:-1])
    with pytest.raises(ValueError):
        ModelSpec.from_dict(bad)


def test_model_output_and_shapes():
    model = build_model(16, False, seed=1, channels=(4, 8))
    x = _input((5, 16))
    p = model.predict_proba(x)
    assert p.shape == (5, 2) and np.allclose(p.sum(axis=1), 1.0)
    assert np.array_equal(model.predict(x), np.argmax(p, axis=1))
    assert np.allclose(model.forward(x[..., None]), model.forward(x))
    with pytest.raises(ValueError):
        build_model(16, True, seed=0, channels=(4, 6), reduction=4)


@pytest.mark.parametrize("batch_size", [3, 7, 100])
def test_batchnorm_recalibration_uses_population_statistics(batch_size):
    x = _input((17, 16), seed=batch_size)
    model = build_model(16, True, seed=2, channels=(4, 8))
    model.recalibrate_batchnorm(x, batch_size=batch_size)
    # oracle: whole-set inference forward up to each batchnorm, then ddof=1 moments
    h = x[:, :, None]
    checked = 0
    for layer in model.layers:
        if isinstance(layer, BatchNorm):
            flat = h.reshape(-1, layer.channels)
            assert np.allclose(layer.running_mean, flat.mean(axis=0), atol=1e-12)
            assert np.allclose(layer.running_var, flat.var(axis=0, ddof=1), rtol=1e-10)
            checked += 1
        h = layer.forward(h)
    assert checked == 2
    with pytest.raises(ValueError):
        model.recalibrate_batchnorm(x[:1])


def test_initialization_is_seeded():
    a = build_model(16, True, seed=4)
    b = build_model(16, True, seed=4)
    c = build_model(16, True, seed=5)
    for k, v in a.param_dict().items():
        assert np.array_equal(v, b.param_dict()[k])
    assert not np.array_equal(a.param_dict()["0.conv1d.w"], c.param_dict()["0.conv1d.w"])


def test_l2_penalty_covers_weights_only():
    model = build_model(16, True, seed=2, channels=(4, 8))
    expected = 0.5 * 1e-3 * sum(
        np.sum(layer.params[k] ** 2) for layer in model.layers for k in layer.decay
    )
    assert model.l2_penalty(1e-3) == pytest.approx(expected)
    names = [name for name, _layer, key in model.named_params() if key in ("b", "b1", "b2", "gamma", "beta")]
    assert names


@given(st.integers(0, 1000), st.booleans())
def test_checkpoint_round_trip(seed, se):
    model = build_model(8, se, seed=seed, channels=(4, 8))
    x = _input((6, 8), seed)
    model.forward(x, train=True)
    norm = NormStats.fit(x)
    adam = AdamState()
    _loss, _probs, _ = model.loss_and_grads(x, np.arange(6) % 2)
    adam_step(model.param_dict(), model.grad_dict(), adam)
    blob = checkpoint_bytes(model, norm, adam, {"note": "x"})
    ck = parse_checkpoint(blob)
    assert checkpoint_bytes(ck.model, ck.norm, ck.adam, ck.meta) == blob
    assert np.array_equal(ck.model.predict_proba(x), model.predict_proba(x))
    assert ck.meta == {"note": "x"} and ck.adam.t == 1


def test_checkpoint_rejects_corruption():
    blob = checkpoint_bytes(build_model(8, False, seed=0, channels=(4, 8)))
    for bad in (b"XXXX" + blob[4:], blob[:-8], blob + b"\0" * 8, blob[:10]):
        with pytest.raises(CheckpointError):
            parse_checkpoint(bad)


def test_model_rejects_bad_input_length():
    model = Model(ModelSpec.from_dict(build_model(16, False, seed=0).spec.to_dict()))
    with pytest.raises(ValueError):
        model.forward(np.zeros((2, 8)))
