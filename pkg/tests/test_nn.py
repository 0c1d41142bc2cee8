import numpy as np
import pytest

from eegsynth.dataset import SyntheticTaskSpec, build_synthetic_session, split_dataset
from eegsynth.eeg_features import FeatureSequence, extract_features, get_preset
from eegsynth.exceptions import EmptyLossError, NoDataError, ShapeError
from eegsynth.metrics import normalized_rmse
from eegsynth.nn import (
    AdamState,
    gradient_check,
    GRURegressor,
    GruLayerParams,
    adam_step,
    backward,
    forward,
    gru_cell_forward,
    gru_layer_forward,
    model_forward,
    mse_loss,
)
from eegsynth.nn.gru import sigmoid
from eegsynth.nn.regressor import init_params, pad_batch


def _rng(seed=0):
    return np.random.default_rng(seed)


# ---------------------------------------------------------------- cell


def test_zero_params_halve_the_state():
    p = GruLayerParams.zeros(3, 4)
    v = np.array([1.0, -2.0, 0.5, 4.0])
    np.testing.assert_allclose(gru_cell_forward(np.ones(3), v, p), 0.5 * v)


def test_saturated_update_gate():
    p = GruLayerParams.zeros(2, 3)
    p.b_z[:] = 1e3
    p.b_h[:] = [0.1, -0.4, 2.0]
    np.testing.assert_allclose(gru_cell_forward(np.zeros(2), np.zeros(3), p), np.tanh(p.b_h))


def test_cell_matches_scalar_reference():
    rng = _rng(1)
    p = GruLayerParams.initialize(3, 2, rng)
    for name in ("b_z", "b_r", "b_h"):
        getattr(p, name)[:] = rng.standard_normal(2)
    x, h = rng.standard_normal(3), rng.standard_normal(2)

    def sig(a):
        return 1.0 / (1.0 + np.exp(-a))

    ref = []
    r = [sig(sum(p.W_r[i, j] * x[j] for j in range(3)) + sum(p.U_r[i, j] * h[j] for j in range(2)) + p.b_r[i])
         for i in range(2)]
    for i in range(2):
        z = sig(sum(p.W_z[i, j] * x[j] for j in range(3)) + sum(p.U_z[i, j] * h[j] for j in range(2)) + p.b_z[i])
        hc = np.tanh(sum(p.W_h[i, j] * x[j] for j in range(3))
                     + sum(p.U_h[i, j] * r[j] * h[j] for j in range(2)) + p.b_h[i])
        ref.append((1 - z) * h[i] + z * hc)
    np.testing.assert_allclose(gru_cell_forward(x, h, p), ref, atol=1e-12)


def test_layer_equals_unrolled_cells():
    rng = _rng(2)
    p = GruLayerParams.initialize(4, 5, rng)
    x = rng.standard_normal((7, 2, 4))
    hs, _ = gru_layer_forward(x, p)
    h = np.zeros((2, 5))
    for t in range(7):
        h = gru_cell_forward(x[t], h, p)
        np.testing.assert_allclose(hs[t], h, atol=1e-12)


def test_cell_shape_mismatch():
    with pytest.raises(ShapeError):
        gru_cell_forward(np.zeros(4), np.zeros(3), GruLayerParams.zeros(2, 3))


def test_sigmoid_is_stable():
    out = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    np.testing.assert_allclose(out, [0.0, 0.5, 1.0])


# ---------------------------------------------------------------- loss


def test_mse_loss_values():
    y = _rng(3).standard_normal((5, 2, 3))
    assert mse_loss(y, y)[0] == 0.0
    assert mse_loss(y + 1, y)[0] == pytest.approx(1.0)


def test_masked_mse_by_hand():
    pred = np.zeros((4, 1, 2))
    target = np.array([[1.0, 2.0], [3.0, 0.0], [10.0, 10.0], [10.0, 10.0]])[:, None, :]
    mask = np.array([[True], [True], [False], [False]])
    loss, grad = mse_loss(pred, target, mask)
    assert loss == pytest.approx((1 + 4 + 9 + 0) / 4)
    assert not np.any(grad[2:])


def test_all_masked():
    with pytest.raises(EmptyLossError):
        mse_loss(np.zeros((2, 1, 1)), np.zeros((2, 1, 1)), np.zeros((2, 1), bool))


def test_pad_batch():
    xb, mask = pad_batch([np.ones((2, 3)), np.ones((4, 3))], np.float64)
    assert xb.shape == (4, 2, 3)
    assert mask[:, 0].tolist() == [True, True, False, False]
    assert not np.any(xb[2:, 0])


# ---------------------------------------------------------------- gradients


@pytest.mark.parametrize("use_masks", [False, True])
def test_gradient_check(use_masks):
    errors = gradient_check(use_masks=use_masks)
    assert len(errors) == 2 * 9 + 2
    assert max(errors.values()) < 1e-4


def test_gradient_check_detects_a_wrong_gradient(monkeypatch):
    import eegsynth.nn.gradcheck as gc

    real = gc.backward

    def broken(params, cache, dy):
        g = real(params, cache, dy)
        g["gru1.U_h"] = g["gru1.U_h"] * 1.01
        return g

    monkeypatch.setattr(gc, "backward", broken)
    errors = gc.gradient_check()
    assert errors["gru1.U_h"] > 1e-3 and errors["gru0.W_z"] < 1e-4


def test_zero_error_gives_zero_gradients():
    rng = _rng(4)
    params = init_params(3, (4, 2), 2, rng, np.float64)
    x = rng.standard_normal((5, 1, 3))
    pred, cache = forward(params, x)
    _, dpred = mse_loss(pred, pred.copy())
    assert all(not np.any(g) for g in backward(params, cache, dpred).values())


def test_duplicated_batch_leaves_gradients_unchanged():
    rng = _rng(5)
    params = init_params(3, (4, 2), 2, rng, np.float64)
    x = rng.standard_normal((5, 1, 3))
    y = rng.standard_normal((5, 1, 2))
    pred, cache = forward(params, x)
    g1 = backward(params, cache, mse_loss(pred, y)[1])
    x2, y2 = np.concatenate([x, x], axis=1), np.concatenate([y, y], axis=1)
    pred2, cache2 = forward(params, x2)
    g2 = backward(params, cache2, mse_loss(pred2, y2)[1])
    for k in g1:
        np.testing.assert_allclose(g2[k], g1[k], atol=1e-12)


def test_masked_padding_changes_nothing():
    rng = _rng(6)
    params = init_params(3, (5, 4), 2, rng, np.float64)
    x = rng.standard_normal((7, 1, 3))
    y = rng.standard_normal((7, 1, 2))
    pred, cache = forward(params, x)
    loss, dpred = mse_loss(pred, y)
    g = backward(params, cache, dpred)

    xp = np.concatenate([x, rng.standard_normal((4, 1, 3))])
    yp = np.concatenate([y, rng.standard_normal((4, 1, 2))])
    mask = np.arange(11)[:, None] < 7
    pred_p, cache_p = forward(params, xp)
    loss_p, dpred_p = mse_loss(pred_p, yp, mask)
    gp = backward(params, cache_p, dpred_p)
    assert abs(loss_p - loss) < 1e-10
    for k in g:
        np.testing.assert_allclose(gp[k], g[k], rtol=0, atol=1e-10)


# ---------------------------------------------------------------- Adam


def test_first_adam_step_is_lr_times_sign():
    params = {"w": np.array([1.0, -2.0, 3.0])}
    grads = {"w": np.array([0.5, -3.0, 100.0])}
    before = params["w"].copy()
    adam_step(params, grads, AdamState.like(params), lr=0.01)
    step = params["w"] - before
    assert np.all(np.sign(step) == -np.sign(grads["w"]))
    assert np.all((np.abs(step) >= 0.0099) & (np.abs(step) <= 0.01))


def test_zero_gradient_leaves_params():
    params = {"w": np.array([1.0, 2.0])}
    state = AdamState.like(params)
    for _ in range(10):
        adam_step(params, {"w": np.zeros(2)}, state)
    assert params["w"].tolist() == [1.0, 2.0]


def test_adam_minimises_quadratic():
    params = {"theta": np.array([1.0])}
    state = AdamState.like(params)
    for step in range(500):
        adam_step(params, {"theta": 2 * params["theta"]}, state, lr=0.01)
        if abs(params["theta"][0]) < 0.01:
            break
    assert abs(params["theta"][0]) < 0.01


# ---------------------------------------------------------------- estimator


def _toy(n=12, T=30, D=4, seed=0):
    rng = _rng(seed)
    A = rng.standard_normal((D, 13))
    X = [rng.standard_normal((T + i, D)) for i in range(n)]
    Y = [np.cumsum(x, axis=0) @ A * 0.1 for x in X]
    return X, Y


def test_eval_mode_is_deterministic_and_dropout_is_seeded():
    X, Y = _toy()
    m = GRURegressor(hidden_sizes=(8, 4), epochs=2, batch_size=5).fit(X, Y)
    a, b = m.predict(X[:2]), m.predict(X[:2])
    assert all(np.array_equal(p, q) for p, q in zip(a, b))
    t1 = m.predict(X[:2], mode="train", seed=1)
    t2 = m.predict(X[:2], mode="train", seed=1)
    t3 = m.predict(X[:2], mode="train", seed=2)
    assert all(np.array_equal(p, q) for p, q in zip(t1, t2))
    assert not all(np.array_equal(p, q) for p, q in zip(t1, t3))


def test_zero_dropout_train_equals_eval():
    X, Y = _toy()
    m = GRURegressor(hidden_sizes=(8, 4), epochs=1, dropout=0.0).fit(X, Y)
    assert all(np.array_equal(p, q) for p, q in zip(m.predict(X, mode="train", seed=3), m.predict(X)))


def test_zero_learning_rate_keeps_initial_params():
    X, Y = _toy()
    m = GRURegressor(hidden_sizes=(8, 4), epochs=3, learning_rate=0.0).fit(X, Y)
    init = GRURegressor(hidden_sizes=(8, 4)).initialize(4, 13).params_
    assert all(np.array_equal(m.params_[k], init[k]) for k in init)


def test_same_seed_same_trajectory():
    X, Y = _toy()
    h1 = GRURegressor(hidden_sizes=(8, 4), epochs=5, batch_size=5, random_state=3).fit(X, Y, X, Y).history_
    h2 = GRURegressor(hidden_sizes=(8, 4), epochs=5, batch_size=5, random_state=3).fit(X, Y, X, Y).history_
    np.testing.assert_allclose(h1.train_loss, h2.train_loss, rtol=0, atol=1e-10)
    np.testing.assert_allclose(h1.val_loss, h2.val_loss, rtol=0, atol=1e-10)


def test_training_reduces_loss():
    X, Y = _toy()
    h = GRURegressor(hidden_sizes=(16, 8), epochs=40, batch_size=4).fit(X, Y).history_
    assert h.train_loss[-1] < 0.5 * h.train_loss[0]


def test_empty_training_set():
    with pytest.raises(NoDataError):
        GRURegressor().fit([], [])


def test_dim_mismatch_on_predict():
    X, Y = _toy()
    m = GRURegressor(hidden_sizes=(4, 2), epochs=1).fit(X, Y)
    with pytest.raises(ShapeError):
        m.predict([np.zeros((5, 3))])


def test_model_forward_keeps_frame_count():
    X, Y = _toy()
    m = GRURegressor(hidden_sizes=(4, 2), epochs=1).fit(X, Y)
    out = model_forward(FeatureSequence(X[0], 100.0, "reduced"), m)
    assert out.n_frames == len(X[0]) and out.dim == 13 and out.kind == "mfcc"


def test_save_load_round_trip(tmp_path):
    X, Y = _toy()
    m = GRURegressor(hidden_sizes=(6, 3), epochs=2, standardize_targets=True).fit(X, Y)
    m.save(tmp_path / "m.ckpt")
    back = GRURegressor.load(tmp_path / "m.ckpt")
    assert back.get_params() == m.get_params()
    for p, q in zip(back.predict(X), m.predict(X)):
        np.testing.assert_allclose(p, q, rtol=1e-6, atol=1e-5)


def test_history_csv(tmp_path):
    X, Y = _toy()
    m = GRURegressor(hidden_sizes=(4, 2), epochs=3).fit(X, Y, X[:2], Y[:2])
    m.history_.to_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss" and len(lines) == 4


def test_learns_synthetic_affine_task():
    # unfiltered synthetic EEG: window means are an affine image of the MFCC trajectory
    session = build_synthetic_session(SyntheticTaskSpec(n_recordings=40, seed=2, snr_db=20.0))
    preset = get_preset("set1", per_channel_features=("window_mean",))
    ids = [r.id for r in session.recordings]
    split = split_dataset(ids, seed=2)
    by_id = {r.id: r for r in session.recordings}

    def pairs(part):
        xs, ys = [], []
        for i in part:
            r = by_id[i]
            x = extract_features(r.eeg, preset).data
            n = min(len(x), len(r.target))
            xs.append(x[:n] / 10.0)
            ys.append(r.target[:n])
        return xs, ys

    xs, ys = pairs(split.train)
    vx, vy = pairs(split.validation)
    m = GRURegressor(hidden_sizes=(64, 32), epochs=150, batch_size=100, standardize_targets=True,
                     random_state=2).fit(xs, ys)
    pred = m.predict(vx)
    allv = np.concatenate(vy)
    value_range = float(allv.max() - allv.min())
    nrmse = np.mean([normalized_rmse(p, t, value_range) for p, t in zip(pred, vy)])
    assert nrmse < 0.05
