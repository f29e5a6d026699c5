import math

import numpy as np
import pytest

from barkknots.errors import DimensionError, DomainError, StateError, TrainingError
from barkknots.metrics import rmse
from barkknots.minimodel import (
    AdamState,
    EncoderDecoder,
    ModelSpec,
    TrainConfig,
    TrainData,
    adam_step,
    baseline_mean,
    build_patch_dataset,
    encode_patches,
    learning_rate,
    load_checkpoint,
    save_checkpoint,
    train,
)
from barkknots.minimodel.layers import PReLU
from barkknots.raster import PATCH_WIDTH, render_surface_patch
from barkknots.synthesis import sample_log_spec

TOY = ModelSpec(channels=(2, 3, 4))


def toy_batch(n=2, size=8, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, 3, size, size)), rng.random((n, size, size))


# forward ----------------------------------------------------------------------------------


def test_output_shape_matches_input():
    model = EncoderDecoder(ModelSpec(), seed=0)
    x = encode_patches(np.full((3, 64, 64), 0.85))
    assert x.shape == (3, 3, 64, 64)
    assert model.forward(x).shape == (3, 64, 64)


def test_bad_shapes_raise():
    model = EncoderDecoder(TOY)
    with pytest.raises(DimensionError):
        model.forward(np.zeros((1, 2, 8, 8)))
    with pytest.raises(DimensionError):
        model.forward(np.zeros((1, 3, 12, 8)))


def test_prelu_with_zero_slope_is_relu():
    layer = PReLU(3, init=0.0)
    x = np.random.default_rng(1).normal(size=(4, 3, 5, 5))
    assert np.array_equal(layer.forward(x), np.maximum(x, 0))


def test_zero_weights_give_zero_output():
    model = EncoderDecoder(TOY, dtype=np.float64)
    model.set_weights({k: np.zeros_like(v) for k, v in model.parameters().items()})
    x, _ = toy_batch()
    assert np.all(model.forward(x) == 0)
    assert np.all(model.forward(x, train=True) == 0)


def test_inference_is_deterministic():
    model = EncoderDecoder(TOY, seed=3)
    x, _ = toy_batch()
    assert model.forward(x).tobytes() == model.forward(x).tobytes()


def test_skip_can_be_disabled():
    plain = EncoderDecoder(ModelSpec(channels=(2, 3, 4), input_skip=False))
    assert "ConcatInput" not in {type(l).__name__ for l in plain.layers}
    assert EncoderDecoder(TOY).parameter_count() - plain.parameter_count() == 3 * 2 * 9
    x, _ = toy_batch()
    assert plain.forward(x).shape == (2, 8, 8)


def test_parameter_count():
    # (c_out * c_in * 9 + c_out) per 3x3 conv, one slope per channel, 1x1 head;
    # the last decoder conv also takes the 3 input channels
    chans = [(3, 2), (2, 3), (3, 4), (4, 3), (3, 2), (2 + 3, 2)]
    expect = sum(o * i * 9 + o + o for i, o in chans) + 2 + 1
    assert EncoderDecoder(TOY).parameter_count() == expect


# backward --------------------------------------------------------------------------------


def test_backward_needs_forward():
    model = EncoderDecoder(TOY)
    x, y = toy_batch()
    with pytest.raises(StateError):
        model.backward(y)
    model.forward(x)  # inference mode records nothing
    with pytest.raises(StateError):
        model.backward(y)


def test_zero_residual_gives_zero_gradients():
    model = EncoderDecoder(TOY, dtype=np.float64)
    x, _ = toy_batch()
    model.freeze_dropout()
    out = model.forward(x, train=True).copy()
    loss, grads = model.backward(out)
    assert loss == 0.0
    assert all(np.all(g == 0) for g in grads.values())
    assert set(grads) == set(model.parameters())


def test_doubling_residual_scales_loss_and_gradients():
    model = EncoderDecoder(TOY, dtype=np.float64)
    model.freeze_dropout()
    x, y = toy_batch()
    out = model.forward(x, train=True).copy()
    l1, g1 = model.backward(y)
    g1 = {k: v.copy() for k, v in g1.items()}
    model.forward(x, train=True)
    l2, g2 = model.backward(out - 2 * (out - y))
    assert l2 == pytest.approx(4 * l1, rel=1e-12)
    head = [k for k in g1 if k.startswith(f"{len(model.layers) - 1:02d}.")]
    assert head
    for k in head:
        np.testing.assert_allclose(g2[k], 2 * g1[k], rtol=1e-12, atol=1e-15)


def finite_difference_check(model, x, y, h=1e-4):
    model.freeze_dropout()
    model.forward(x, train=True)
    _, grads = model.backward(y)
    grads = {k: v.copy() for k, v in grads.items()}
    params = model.parameters()
    worst = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        g = grads[name].reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            model.forward(x, train=True)
            lp, _ = model.backward(y)
            flat[i] = old - h
            model.forward(x, train=True)
            lm, _ = model.backward(y)
            flat[i] = old
            num = (lp - lm) / (2 * h)
            rel = abs(g[i] - num) / max(abs(g[i]), abs(num), 1e-8)
            worst = max(worst, rel)
    return worst


def test_gradients_match_finite_differences():
    model = EncoderDecoder(TOY, seed=5, dtype=np.float64)
    x, y = toy_batch(seed=2)
    model.forward(x, train=True)  # draw dropout masks, then freeze them
    model.backward(y)
    assert finite_difference_check(model, x, y) < 1e-4


def test_every_layer_type_has_gradients():
    model = EncoderDecoder(TOY, dtype=np.float64)
    kinds = {type(l).__name__ for l in model.layers}
    assert kinds == {"Conv2D", "PReLU", "Dropout", "MaxPool2", "Upsample2", "ConcatInput"}
    assert any(k.endswith("prelu.alpha") for k in model.parameters())


# optimiser ---------------------------------------------------------------------------------


def test_learning_rate_schedule():
    assert learning_rate(1) == 1e-3
    assert learning_rate(20) == 1e-3
    assert learning_rate(21) == 1e-4
    assert learning_rate(25) == 1e-4
    with pytest.raises(DomainError):
        TrainConfig(lr=1e-4, lr_after_drop=1e-3)
    with pytest.raises(DomainError):
        TrainConfig(epochs=0)


def test_zero_gradients_leave_parameters():
    p = {"w": np.array([1.0, -2.0])}
    state = AdamState.zeros_like(p)
    adam_step(state, p, {"w": np.zeros(2)}, 1)
    assert p["w"].tolist() == [1.0, -2.0]


def scalar_adam(w, steps, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t in range(1, steps + 1):
        g = 2 * w
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    return w


def test_adam_matches_scalar_simulation():
    cfg = TrainConfig(lr=0.01, lr_after_drop=0.01)
    p = {"w": np.array([1.0])}
    state = AdamState.zeros_like(p)
    for _ in range(500):
        adam_step(state, p, {"w": 2 * p["w"]}, 1, cfg)
    assert p["w"][0] == pytest.approx(scalar_adam(1.0, 500, 0.01), abs=1e-12)
    assert abs(p["w"][0]) < 1e-2


def test_adam_quadratic_at_default_rate_moves_at_most_lr_per_step():
    p = {"w": np.array([1.0])}
    state = AdamState.zeros_like(p)
    for _ in range(500):
        adam_step(state, p, {"w": 2 * p["w"]}, 1)
    assert p["w"][0] == pytest.approx(scalar_adam(1.0, 500, 1e-3), abs=1e-12)
    assert p["w"][0] >= 1.0 - 500 * 1e-3 - 1e-9


def test_non_finite_gradient_names_parameter():
    p = {"layer.w": np.ones(2)}
    with pytest.raises(TrainingError, match="layer.w"):
        adam_step(AdamState.zeros_like(p), p, {"layer.w": np.array([1.0, np.nan])}, 1)


# training --------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def tiny_data():
    specs = [sample_log_spec(s, 2) for s in range(3)]
    x, y = build_patch_dataset(specs[:2], 4)
    xv, yv = build_patch_dataset(specs[2:], 2)
    # 16x16 crops keep the test fast
    return TrainData(x[:, :, :16, 40:56], y[:, :16, 40:56], xv[:, :, :16, 40:56], yv[:, :16, 40:56])


def test_training_is_reproducible_and_keeps_best(tiny_data):
    cfg = TrainConfig(epochs=4, batch_size=4, micro_batch=2, seed=1)
    a = train(TOY, cfg, tiny_data)
    b = train(TOY, cfg, tiny_data)
    assert a.history == b.history
    assert a.history_lines() == b.history_lines()
    best = min(h["val_loss"] for h in a.history)
    assert a.history[a.best_epoch - 1]["val_loss"] == best
    from barkknots.minimodel import evaluate_loss

    assert evaluate_loss(a.model, tiny_data.x_val, tiny_data.y_val) == pytest.approx(best, rel=1e-12)


def test_data_parallel_matches_serial(tiny_data):
    serial = train(TOY, TrainConfig(epochs=2, batch_size=4, micro_batch=2, seed=2), tiny_data)
    parallel = train(TOY, TrainConfig(epochs=2, batch_size=4, micro_batch=2, workers=2, seed=2), tiny_data)
    assert serial.history == parallel.history


def test_empty_split_raises(tiny_data):
    empty = TrainData(tiny_data.x_train[:0], tiny_data.y_train[:0], tiny_data.x_val, tiny_data.y_val)
    with pytest.raises(DomainError):
        train(TOY, TrainConfig(epochs=1), empty)


def test_checkpoint_round_trip(tmp_path, tiny_data):
    model = EncoderDecoder(TOY, seed=4)
    p = tmp_path / "m.ckpt"
    save_checkpoint(model, p, {"note": "x"})
    back, extra = load_checkpoint(p)
    assert extra == {"note": "x"}
    assert back.spec == model.spec
    x = tiny_data.x_val
    assert back.predict(x).tobytes() == model.predict(x).tobytes()


# baseline ------------------------------------------------------------------------------------


def test_baseline_single_and_pair():
    t = np.arange(4.0).reshape(1, 2, 2)
    assert np.array_equal(baseline_mean(t).predict(np.zeros((3, 1))), np.repeat(t, 3, axis=0))
    two = np.stack([np.zeros((2, 2)), np.full((2, 2), 2.0)])
    assert np.all(baseline_mean(two).predict([0]) == 1.0)


def test_baseline_rmse_by_hand():
    train_t = np.array([[[0.0, 1.0]], [[1.0, 1.0]]])  # mean [[0.5, 1.0]]
    test_t = np.array([[[1.0, 0.0]]])
    pred = baseline_mean(train_t).predict(test_t)
    assert rmse(pred, test_t) == pytest.approx(math.sqrt((0.25 + 1.0) / 2), abs=1e-15)


def test_baseline_needs_targets():
    with pytest.raises(DomainError):
        baseline_mean(np.zeros((0, 2, 2)))


# inputs ---------------------------------------------------------------------------------------


def test_shifted_window_shifts_patch_by_one_column():
    spec = sample_log_spec(3, 3)
    a = render_surface_patch(spec, 1.0).grid
    b = render_surface_patch(spec, 1.0 + PATCH_WIDTH / 64).grid
    np.testing.assert_allclose(a[:, 1:], b[:, :-1], rtol=0, atol=1e-12)


def test_encoding_channels():
    grid = np.full((1, 4, 4), 0.95)
    grid[0, :, 2] = 0.55  # centre column
    x = encode_patches(grid, r_max=1.0)
    assert x.shape == (1, 3, 4, 4)
    assert x[0, 0, :, 0] == pytest.approx([1.0] * 4)
    assert x[0, 1, 0].tolist() == pytest.approx([-3.0, -3.0, -3.0, -1.0])
    # radii 0, 0.25, 0.5, 0.75 measured from the centre radius 0.55, clipped to +-3
    assert x[0, 2, 0].tolist() == pytest.approx([-3.0, -3.0, -0.5, 2.0])
    assert np.array_equal(x[0, 2, 0], x[0, 2, 3])
