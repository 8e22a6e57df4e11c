import numpy as np
import pytest

from picn.generator import (
    ACTIVATIONS,
    PicnModel,
    backward,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
)


def nested_loop_output(model):
    h = model.w_h + model.b_h
    p, q = model.w_o.shape
    rows, cols = model.output_shape
    pre = np.full((rows, cols), model.b_o)
    for i in range(rows):
        for j in range(cols):
            for a in range(p):
                for b in range(q):
                    pre[i, j] += h[i + a, j + b] * model.w_o[a, b]
    return {"tanh": np.tanh, "sine": np.sin, "identity": lambda z: z}[model.activation](pre)


def test_init_is_deterministic():
    a = init_params(6, 7, 3, 3, "tanh", seed=11)
    b = init_params(6, 7, 3, 3, "tanh", seed=11)
    assert np.array_equal(a.w_h, b.w_h) and np.array_equal(a.w_o, b.w_o)
    assert a.b_h == 0.0 and a.b_o == 0.0
    s = np.sqrt(1 / 9)
    assert np.all(np.abs(a.w_h) <= s) and np.all(np.abs(a.w_o) <= s)


def test_line_model_shape():
    m = init_params(1, 1000, 1, 3, "tanh", seed=0)
    assert m.output_shape == (1, 998)
    assert forward(m)[1].shape == (1, 998)


@pytest.mark.parametrize("args", [(5, 5, 2, 3), (5, 5, 3, 4), (2, 5, 3, 3), (0, 5, 1, 1)])
def test_bad_shapes_rejected(args):
    with pytest.raises(ValueError):
        init_params(*args)


def test_zero_model_gives_zero_field():
    m = PicnModel(np.zeros((5, 6)), 0.0, np.zeros((3, 3)), 0.0, "tanh")
    assert np.all(forward(m)[1] == 0.0)


def test_delta_kernel_copies_window():
    rng = np.random.default_rng(0)
    w_o = np.zeros((3, 3))
    w_o[1, 1] = 1.0
    m = PicnModel(rng.normal(size=(6, 7)), 0.0, w_o, 0.0, "identity")
    np.testing.assert_array_equal(forward(m)[1], m.w_h[1:-1, 1:-1])


@pytest.mark.parametrize("activation", ACTIVATIONS)
def test_forward_matches_nested_loops(activation):
    rng = np.random.default_rng(5)
    m = PicnModel(rng.normal(size=(6, 6)), 0.3, rng.normal(size=(3, 3)), -0.2, activation)
    np.testing.assert_allclose(forward(m)[1], nested_loop_output(m), rtol=1e-12, atol=1e-12)


def test_identity_forward_is_linear_in_hidden():
    rng = np.random.default_rng(6)
    m = PicnModel(rng.normal(size=(5, 5)), 0.0, rng.normal(size=(3, 3)), 0.0, "identity")
    m2 = m.copy()
    m2.w_h = 2.5 * m.w_h
    np.testing.assert_allclose(forward(m2)[1], 2.5 * forward(m)[1], rtol=1e-13)


def test_zero_upstream_gives_zero_gradients():
    m = init_params(5, 6, 3, 3, "tanh", 1)
    h, u = forward(m)
    g = backward(m, h, u, np.zeros_like(u))
    assert not np.any(g.g_w_h) and not np.any(g.g_w_o) and g.g_b_h == 0.0 and g.g_b_o == 0.0


def test_delta_kernel_backward():
    rng = np.random.default_rng(7)
    w_o = np.zeros((3, 3))
    w_o[1, 1] = 1.0
    m = PicnModel(rng.normal(size=(6, 7)), 0.0, w_o, 0.0, "identity")
    h, u = forward(m)
    up = rng.normal(size=u.shape)
    g = backward(m, h, u, up)
    np.testing.assert_array_equal(g.g_w_h[1:-1, 1:-1], up)
    border = g.g_w_h.copy()
    border[1:-1, 1:-1] = 0.0
    assert not np.any(border)


def test_backward_shape_mismatch():
    m = init_params(5, 6, 3, 3)
    h, u = forward(m)
    with pytest.raises(ValueError):
        backward(m, h, u, np.zeros((2, 2)))


def _fd_check(m, upstream, step=1e-6):
    """Central differences of L = sum(upstream * u_hat) over every parameter."""
    def loss(model):
        return float(np.sum(upstream * forward(model)[1]))

    h, u = forward(m)
    g = backward(m, h, u, upstream)
    errs = []

    def compare(analytic, numeric):
        if max(abs(analytic), abs(numeric)) > 1e-8:
            errs.append(abs(analytic - numeric) / max(abs(analytic), abs(numeric)))

    for attr, garr in (("w_h", g.g_w_h), ("w_o", g.g_w_o)):
        arr = getattr(m, attr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + step
            lp = loss(m)
            arr[idx] = old - step
            lm = loss(m)
            arr[idx] = old
            compare(garr[idx], (lp - lm) / (2 * step))
    for attr, ga in (("b_h", g.g_b_h), ("b_o", g.g_b_o)):
        old = getattr(m, attr)
        setattr(m, attr, old + step)
        lp = loss(m)
        setattr(m, attr, old - step)
        lm = loss(m)
        setattr(m, attr, old)
        compare(ga, (lp - lm) / (2 * step))
    return max(errs)


@pytest.mark.parametrize("activation", ACTIVATIONS)
def test_backward_matches_finite_differences(activation):
    rng = np.random.default_rng(hash(activation) % 2**32)
    worst = 0.0
    for trial in range(20):
        m, n = rng.integers(3, 8, size=2)
        p, q = rng.choice([1, 3], size=2)
        model = init_params(int(m), int(n), int(p), int(q), activation, seed=trial)
        model.b_h = float(rng.normal(scale=0.1))
        model.b_o = float(rng.normal(scale=0.1))
        upstream = rng.normal(size=model.output_shape)
        worst = max(worst, _fd_check(model, upstream))
    assert worst < 1e-5


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    models = [PicnModel(rng.normal(size=(4, 5)), rng.normal(), rng.normal(size=(3, 3)), rng.normal(), act)
              for act in ("tanh", "sine")]
    lam = np.array([1.0, 5.0017323456789])
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, models, lam)
    back, lam2 = load_checkpoint(path)
    assert len(back) == 2
    for a, b in zip(models, back):
        assert np.array_equal(a.w_h, b.w_h) and np.array_equal(a.w_o, b.w_o)
        assert a.b_h == b.b_h and a.b_o == b.b_o and a.activation == b.activation
    assert np.array_equal(lam, lam2)


def test_checkpoint_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.ckpt"
    p.write_text("hello\n")
    with pytest.raises(ValueError):
        load_checkpoint(p)
