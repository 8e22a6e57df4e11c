from dataclasses import replace

import numpy as np
import pytest

from picn.generator import forward
from picn.geometry import DIRICHLET, Rectangle
from picn.grid import GridSpec
from picn.problems import ProblemDef, ResidualEval, ResidualSpec, get_problem, problem_names
from picn.training import (
    AdamState,
    TrainingConfig,
    adam_step,
    assemble_fields_loss,
    assemble_loss,
    build_sets,
    config_for,
    grad_check,
    init_models,
    reduced_problem,
    total_gradient,
    train,
    weights_from_ratio,
)


def _field_residual(x, y, q, lam):
    u = q["u"][0]
    return ResidualEval(u[None], {("u", 0): np.ones((1, u.size))}, np.zeros((1, 0, u.size)))


def toy_problem(bc=None, n_boundary=0, grid=None):
    """Residual r = u on a 4x4 grid."""
    grid = grid or GridSpec(0.0, 3.0, 0.0, 3.0, 4, 4)
    return ProblemDef(name="toy", domain=Rectangle(grid.x_min, grid.x_max, grid.y_min, grid.y_max),
                      grid=grid, residual=ResidualSpec(1, 1, ("u",), _field_residual),
                      bc_assignment=bc, n_boundary=n_boundary)


def test_ratio_maps_to_weights():
    assert weights_from_ratio(9, 1) == (0.9, 0.1)
    cfg = config_for(get_problem("sweep2d"))
    assert cfg.k_G == pytest.approx(0.999) and cfg.k_R == pytest.approx(0.001)
    assert cfg.learning_rate == 1e-2 and cfg.epochs == 5000


@pytest.mark.parametrize("kwargs", [dict(epochs=0), dict(learning_rate=0.0), dict(beta1=1.0),
                                    dict(beta2=0.0), dict(k_R=0.0, k_G=0.0), dict(k_R=-1.0)])
def test_invalid_config_rejected(kwargs):
    with pytest.raises(ValueError):
        TrainingConfig(**kwargs)


def test_unknown_training_key_rejected():
    with pytest.raises(ValueError):
        config_for(get_problem("sweep1d"), momentum=0.5)


def _one_point(sets):
    # keep only the first interior node as a collocation point
    sets.mask[:] = False
    sets.mask[0, 0] = True
    sets.x, sets.y = sets.x[:1], sets.y[:1]
    return sets


def test_single_interior_point_loss():
    p = toy_problem()
    sets = _one_point(build_sets(p))
    assert sets.n_omega == 1
    f = np.zeros((4, 4))
    f[1, 1] = 0.7
    f[2, 2] = 5.0
    bd = assemble_fields_loss(p, [f], (), sets, TrainingConfig(k_G=1.0, k_R=0.0))
    assert bd.total == pytest.approx(0.49, rel=1e-15)


def test_single_dirichlet_sample_loss():
    grid = GridSpec.line(0.0, 1.0, 5)
    p = replace(toy_problem(grid=grid), domain=Rectangle(0.0, 1.0),
                bc_assignment=lambda x, y, n: (DIRICHLET, 0.25) if x == 0.0 else None, n_boundary=2)
    sets = build_sets(p)
    assert sets.n_dirichlet == 1
    f = np.zeros((1, 5))
    f[0, 0] = 0.25 + 0.3
    bd = assemble_fields_loss(p, [f], (), sets, TrainingConfig(k_G=0.0, k_R=1.0))
    assert bd.total == pytest.approx(0.09, rel=1e-12)


def test_empty_interior_with_governing_weight_raises():
    p = toy_problem()
    sets = build_sets(p)
    sets.mask[:] = False
    sets.x, sets.y = sets.x[:0], sets.y[:0]
    with pytest.raises(ValueError):
        assemble_fields_loss(p, [np.zeros((4, 4))], (), sets, TrainingConfig(k_G=1.0))


@pytest.mark.parametrize("name,params,bound", [
    ("sweep1d", {}, 1e-3), ("sine_ode", {"m": 1}, 1e-3), ("schrodinger", {}, 1e-3),
    ("aniso_inverse", {}, 1e-3), ("bird", {}, 1e-3),
])
def test_exact_field_has_truncation_sized_loss(name, params, bound):
    p = get_problem(name, **params)
    sets = build_sets(p)
    X, Y = p.grid.mesh()
    bd = assemble_fields_loss(p, list(p.exact(X, Y)), p.true_lam or p.lam0, sets, config_for(p))
    assert bd.l_g <= bound
    assert bd.l_r1 <= 1e-3


def test_composition_identity_and_counts():
    p = get_problem("mixed_bvp")
    sets = build_sets(p)
    cfg = config_for(p)
    bd = assemble_loss(p, init_models(p, 3), (), sets, cfg)
    assert abs(bd.recomposed(cfg) - bd.total) <= 1e-12 * bd.total
    assert bd.n_omega == 98 * 58
    assert bd.n_gamma1 + bd.n_gamma2 == 320 and bd.n_gamma2 > 0


def test_zero_loss_gives_zero_gradient():
    p = reduced_problem(get_problem("aniso_inverse"))
    m = init_models(p, 0)[0]
    m.w_h = np.zeros_like(m.w_h)
    grads, lg, bd = total_gradient(p, [m], np.array(p.lam0), build_sets(p), config_for(p))
    assert bd.total == 0.0
    norm = np.sqrt(sum(np.sum(a**2) for a in (grads[0].g_w_h, grads[0].g_w_o))
                   + grads[0].g_b_h**2 + grads[0].g_b_o**2 + np.sum(lg**2))
    assert norm < 1e-8


def test_sweep1d_tiny_model_gradients_at_fine_step():
    p = reduced_problem(get_problem("sweep1d"), line_nodes=18)
    models = init_models(p, 4)
    assert models[0].w_h.shape == (1, 20)
    report = grad_check(p, models, config_for(p), step=1e-6)
    assert report.passed, report.failures[:3]


def test_lambda_gradient_matches_finite_differences():
    p = reduced_problem(get_problem("aniso_inverse"))
    models = init_models(p, 2)
    report = grad_check(p, models, config_for(p), lam=(1.0, 2.5), step=1e-6)
    lam_entries = [e for e in report.entries if e.param.startswith("lambda")]
    assert [e.param for e in lam_entries] == ["lambda[1]"]
    assert lam_entries[0].rel_err < 1e-5
    assert report.passed


def test_identity_linear_toy_is_very_accurate():
    p = reduced_problem(get_problem("aniso_inverse"))
    report = grad_check(p, init_models(p, 5), config_for(p), step=1e-4)
    assert report.max_rel_err < 1e-7


def test_tanh_random_model_passes():
    p = reduced_problem(get_problem("sweep2d"))
    report = grad_check(p, init_models(p, 6), config_for(p))
    assert report.passed


def test_corrupted_gradient_is_reported():
    p = reduced_problem(get_problem("schrodinger"))
    models = init_models(p, 7)
    cfg = config_for(p)
    sets = build_sets(p)
    grads, lg, _ = total_gradient(p, models, np.array(p.lam0), sets, cfg)
    grads[0].g_b_o += 1.0
    report = grad_check(p, models, cfg, sets=sets, grads=(grads, lg))
    assert [(e.param, e.index) for e in report.failures] == [("m0.b_o", ())]


@pytest.mark.parametrize("name", problem_names())
def test_reduced_models_pass_gradient_check(name):
    p = reduced_problem(get_problem(name))
    assert p.hidden_shape[0] * p.hidden_shape[1] <= 64 or p.hidden_shape == (1, 30)
    report = grad_check(p, init_models(p, 1), config_for(p), lam=np.array(p.lam0) + 0.3)
    assert report.passed, report.failures[:3]


def test_weight_scaling_scales_loss_and_gradients():
    p = reduced_problem(get_problem("mixed_bvp"))
    sets = build_sets(p)
    models = init_models(p, 8)
    a = TrainingConfig(k_R=0.3, k_G=0.7)
    b = TrainingConfig(k_R=0.3 * 4.0, k_G=0.7 * 4.0)
    ga, _, ba = total_gradient(p, models, (), sets, a)
    gb, _, bb = total_gradient(p, models, (), sets, b)
    assert abs(bb.total - 4.0 * ba.total) <= 1e-12 * bb.total
    np.testing.assert_allclose(gb[0].g_w_h, 4.0 * ga[0].g_w_h, rtol=1e-12, atol=1e-300)
    np.testing.assert_allclose(gb[0].g_w_o, 4.0 * ga[0].g_w_o, rtol=1e-12)


# -- Adam ------------------------------------------------------------------------

def test_adam_zero_gradient_keeps_params():
    cfg = TrainingConfig(learning_rate=0.1)
    p = [np.array([1.0, -2.0])]
    state = AdamState.zeros_like(p)
    out, state = adam_step(p, [np.zeros(2)], state, cfg)
    assert np.array_equal(out[0], p[0]) and state.step == 1


def test_adam_first_step_moves_by_learning_rate():
    cfg = TrainingConfig(learning_rate=0.01)
    p = [np.array([0.5, 0.5, 0.5])]
    g = [np.array([3.0, -1e-3, 0.0])]
    out, _ = adam_step(p, g, AdamState.zeros_like(p), cfg)
    step = out[0] - p[0]
    np.testing.assert_allclose(step[:2], [-0.01, 0.01], rtol=1e-4)
    assert step[2] == 0.0


def test_adam_three_step_trace():
    # minimise f(x) = x^2 from x = 1 with lr 0.1, recurrence written out by hand
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    x, m, v = 1.0, 0.0, 0.0
    expected = []
    for t in (1, 2, 3):
        g = 2 * x
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        expected.append(x)
    cfg = TrainingConfig(learning_rate=lr)
    params = [np.array(1.0)]
    state = AdamState.zeros_like(params)
    got = []
    for _ in range(3):
        params, state = adam_step(params, [2 * params[0]], state, cfg)
        got.append(float(params[0]))
    np.testing.assert_allclose(got, expected, rtol=1e-12)
    # the first step of Adam is exactly lr in magnitude
    assert expected[0] == pytest.approx(0.9, abs=1e-8)


# -- training loop ----------------------------------------------------------------

def test_training_is_bit_reproducible():
    p = get_problem("sine_ode", m=2)
    cfg = config_for(p, epochs=60, log_every=20)
    a = train(p, cfg)
    b = train(p, cfg)
    assert a.history == b.history
    assert np.array_equal(a.models[0].w_h, b.models[0].w_h)
    assert [h["epoch"] for h in a.history] == [0, 20, 40, 60]


def test_training_reduces_loss_and_keeps_identity():
    p = get_problem("schrodinger")
    cfg = config_for(p, epochs=300, log_every=50)
    seen = []

    def cb(epoch, models, lam, bd):
        seen.append(abs(bd.recomposed(cfg) - bd.total) <= 1e-12 * max(bd.total, 1e-300))

    res = train(p, cfg, callback=cb)
    assert all(seen) and len(seen) == len(res.history)
    assert res.history[-1]["loss_total"] < res.history[0]["loss_total"]
    assert "rel_l2" in res.history[-1]


def test_lambda_is_trained_only_where_unfrozen():
    p = get_problem("aniso_inverse")
    res = train(p, config_for(p, epochs=20, log_every=10))
    assert res.lam[0] == 1.0 and res.lam[1] != 1.0


def test_nonfinite_loss_aborts_with_epoch():
    p = get_problem("sine_ode", m=1)
    m = init_models(p, 0)[0]
    m.w_h[0, 5] = np.nan
    with pytest.raises(FloatingPointError, match="epoch 0"):
        train(p, config_for(p, epochs=5), models=[m])


def test_forward_of_trained_model_matches_metric():
    p = get_problem("sine_ode", m=1)
    res = train(p, config_for(p, epochs=50, log_every=50))
    X, Y = p.grid.mesh()
    u = forward(res.models[0])[1]
    e = p.exact(X, Y)[0]
    assert res.metrics["rel_l2"] == pytest.approx(np.linalg.norm(u - e) / np.linalg.norm(e), rel=1e-12)
