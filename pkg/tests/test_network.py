import math

import numpy as np
import pytest

from logicloss.autodiff import grad, track_branch_margins, var
from logicloss.constraints import csim_formula, synthetic_tables
from logicloss.formula import Cmp, Const, Env, Output, push_negations
from logicloss.logics import BACKEND_NAMES, loss_function, make_backend
from logicloss.network import (
    Model,
    Optimizer,
    TrainingDiverged,
    forward,
    forward_batch,
    init_model,
    load_checkpoint,
    loss_gradients,
    save_checkpoint,
    tape_loss,
    train_step,
)


def test_param_counts():
    assert init_model([2, 8, 3], seed=0).n_params == 51
    assert init_model([4, 8, 10], seed=0).n_params == 130


def test_init_deterministic_and_seed_sensitive():
    a = init_model([3, 5, 4], seed=7)
    b = init_model([3, 5, 4], seed=7)
    c = init_model([3, 5, 4], seed=8)
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)
    assert any(not np.array_equal(wa, wc) for wa, wc in zip(a.weights, c.weights))
    assert all(np.all(b == 0.0) for b in a.biases)


def test_init_scaled_by_fan_in():
    m = init_model([100, 4, 2], seed=3)
    assert np.abs(m.weights[0]).max() <= 1.0 / math.sqrt(100)
    assert np.abs(m.weights[1]).max() <= 1.0 / math.sqrt(4)


def test_init_validation():
    with pytest.raises(ValueError):
        init_model([5], seed=0)
    with pytest.raises(ValueError):
        init_model([5, 0, 2], seed=0)


def test_forward_zero_weights_uniform():
    m = init_model([4, 6, 5], seed=0)
    for w in m.weights:
        w[:] = 0.0
    p = forward(m, [1.0, -2.0, 0.5, 3.0])
    assert np.allclose(p, 0.2, atol=1e-15)


def test_forward_simplex():
    m = init_model([4, 8, 10], seed=1)
    rng = np.random.default_rng(0)
    X = rng.normal(size=(32, 4)) * 5.0
    P = forward_batch(m, X)
    assert np.all(P >= 0.0)
    assert np.abs(P.sum(axis=1) - 1.0).max() <= 1e-9


def test_forward_dimension_mismatch():
    m = init_model([4, 8, 3], seed=1)
    with pytest.raises(ValueError, match="expects"):
        forward(m, [1.0, 2.0])
    with pytest.raises(ValueError, match="expects"):
        forward_batch(m, np.zeros((5, 3)))


def test_forward_single_matches_batch_row():
    m = init_model([3, 7, 4], seed=5)
    rng = np.random.default_rng(1)
    X = rng.normal(size=(6, 3))
    P = forward_batch(m, X)
    for i in range(6):
        # single-row and batched matmuls may take different BLAS paths
        assert np.allclose(forward(m, X[i]), P[i], rtol=1e-9, atol=1e-12)


def test_hidden_unit_permutation_symmetry():
    # Swapping two hidden units together with their outgoing weight
    # columns is a reparameterization; the function is unchanged.
    m = init_model([3, 6, 4], seed=9)
    x = np.array([0.3, -1.2, 0.8])
    before = forward(m, x)
    for arr in (m.weights[0], m.biases[0]):
        arr[[1, 4]] = arr[[4, 1]]
    m.weights[1][:, [1, 4]] = m.weights[1][:, [4, 1]]
    assert np.allclose(forward(m, x), before, atol=1e-15)


def _fd_full_gradient(value, m, h=1e-5):
    grads = []
    for arr in m.weights + m.biases:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            keep = arr[idx]
            arr[idx] = keep + h
            up = value()
            arr[idx] = keep - h
            down = value()
            arr[idx] = keep
            g[idx] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def _clear_of_kinks(m, X, fn):
    # Weight-space finite differences move each pre-activation and each
    # probability by O(h), so demand margins well beyond that.  Margins of
    # exactly 0 are saturation plateaus (satisfied comparisons pinned at
    # truth 1 tie inside every t-norm on a healthy CSim batch) and are
    # locally constant provided the probability level itself is clear:
    # no p_i within reach of the 1/n threshold or of another p_j, which
    # is where every comparison kink in the composite lives.  A relu-dead
    # sample fails both clearances (bit-exact uniform output).
    z1 = X @ m.weights[0].T + m.biases[0]
    if np.abs(z1).min() <= 1e-3:
        return False
    probs = forward_batch(m, X)
    n = probs.shape[1]
    for row in probs:
        if np.abs(row - 1.0 / n).min() <= 1e-4:
            return False
        if np.abs(row[:, None] - row[None, :])[~np.eye(n, dtype=bool)].min() <= 1e-4:
            return False
        nodes = [var(float(p)) for p in row]
        with track_branch_margins() as margins:
            fn(Env(outputs=nodes))
        if any(0.0 < m_ <= 1e-4 for m_ in margins):
            return False
    return True


def _nondegenerate_batch(m, fn, n):
    for seed in range(2, 40):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(n, m.layer_sizes[0])) * 2.0
        if _clear_of_kinks(m, X, fn):
            return X, rng.integers(0, m.layer_sizes[-1], size=n)
    raise AssertionError("no batch clear of branch boundaries found")


@pytest.mark.parametrize("name", BACKEND_NAMES)
def test_full_gradient_matches_finite_differences(name):
    backend = make_backend(name)
    constraint = csim_formula(synthetic_tables(3).triples, 3)
    if backend.impl is None:
        constraint = push_negations(constraint, rewrite_implication=True)
    m = init_model([2, 4, 3], seed=11)
    X, y = _nondegenerate_batch(m, loss_function(constraint, backend), n=4)
    lam = 0.7

    ce, logic, gw, gb = loss_gradients(m, X, y, lam, backend, constraint)

    def value():
        c, l, _, _ = loss_gradients(m, X, y, lam, backend, constraint)
        return c + lam * l

    fd = _fd_full_gradient(value, m)
    analytic = gw + gb
    num = math.sqrt(sum(float(((a - f) ** 2).sum()) for a, f in zip(analytic, fd)))
    den = math.sqrt(sum(float((f**2).sum()) for f in fd))
    assert num / den <= 1e-3, name


def test_tape_triangulates_vectorized_backprop():
    backend = make_backend("rc")
    constraint = csim_formula(synthetic_tables(3).triples, 3)
    m = init_model([2, 4, 3], seed=13)
    x = np.array([0.6, -0.9])
    y = 2
    lam = 0.7

    _, _, gw, gb = loss_gradients(m, x[None, :], np.array([y]), lam, backend, constraint)

    loss, wnodes, bnodes = tape_loss(m, x, y, lam, backend, constraint)
    flat = [nd for layer in wnodes for row in layer for nd in row]
    flat += [nd for layer in bnodes for nd in layer]
    g = grad(loss, flat)

    k = 0
    for layer, gwk in zip(wnodes, gw):
        for i, row in enumerate(layer):
            for j, nd in enumerate(row):
                assert g[nd] == pytest.approx(gwk[i, j], rel=1e-9, abs=1e-12)
                k += 1
    for layer, gbk in zip(bnodes, gb):
        for i, nd in enumerate(layer):
            assert g[nd] == pytest.approx(gbk[i], rel=1e-9, abs=1e-12)
            k += 1
    assert k == m.n_params


def _clone(m):
    return Model(
        m.layer_sizes,
        [w.copy() for w in m.weights],
        [b.copy() for b in m.biases],
    )


def test_lambda_zero_update_equals_pure_ce():
    backend = make_backend("rc")
    constraint = csim_formula(synthetic_tables(4).triples, 4)
    rng = np.random.default_rng(3)
    X = rng.normal(size=(8, 3))
    y = rng.integers(0, 4, size=8)

    a = init_model([3, 5, 4], seed=21)
    b = _clone(a)
    train_step(a, (X, y), 0.0, backend, constraint, Optimizer(lr=0.1))
    train_step(b, (X, y), 0.0, None, None, Optimizer(lr=0.1))
    for wa, wb in zip(a.weights + a.biases, b.weights + b.biases):
        assert np.array_equal(wa, wb)


def test_satisfied_dl2_constraint_is_inert():
    # out[0] >= 0 holds crisply on the simplex, so the DL2 loss and its
    # gradient vanish and the update matches plain cross-entropy.
    backend = make_backend("dl2")
    constraint = Cmp(">=", Output(0), Const(0.0))
    rng = np.random.default_rng(4)
    X = rng.normal(size=(6, 3))
    y = rng.integers(0, 3, size=6)

    a = init_model([3, 5, 3], seed=22)
    b = _clone(a)
    ce, logic = train_step(a, (X, y), 5.0, backend, constraint, Optimizer(lr=0.1))
    train_step(b, (X, y), 0.0, None, None, Optimizer(lr=0.1))
    assert logic == 0.0
    for wa, wb in zip(a.weights + a.biases, b.weights + b.biases):
        assert np.array_equal(wa, wb)


def test_fuzzy_all_true_gives_zero_logic_loss():
    backend = make_backend("rc")
    constraint = Cmp("<=", Const(0.0), Output(0))
    m = init_model([3, 5, 3], seed=23)
    rng = np.random.default_rng(5)
    X = rng.normal(size=(6, 3))
    y = rng.integers(0, 3, size=6)
    _, logic = train_step(m, (X, y), 1.0, backend, constraint, Optimizer(lr=0.1))
    assert logic == 0.0


def test_train_step_validation():
    m = init_model([2, 3], seed=0)
    opt = Optimizer(lr=0.1)
    with pytest.raises(ValueError, match="empty"):
        train_step(m, (np.zeros((0, 2)), np.zeros(0, dtype=int)), 0.0, None, None, opt)
    with pytest.raises(ValueError, match="non-negative"):
        train_step(m, (np.zeros((1, 2)), np.zeros(1, dtype=int)), -0.5, None, None, opt)


def test_optimizer_validation():
    with pytest.raises(ValueError, match="learning rate"):
        Optimizer(lr=0.0)
    with pytest.raises(ValueError, match="momentum"):
        Optimizer(lr=0.1, momentum=1.0)


def test_momentum_accumulates_velocity():
    m = Model((1, 1), [np.array([[0.0]])], [np.array([0.0])])
    opt = Optimizer(lr=0.1, momentum=0.5)
    g = [np.array([[1.0]])], [np.array([0.0])]
    opt.step(m, *g)
    assert m.weights[0][0, 0] == pytest.approx(-0.1)
    opt.step(m, *g)
    # velocity: 1.0 then 1.5
    assert m.weights[0][0, 0] == pytest.approx(-0.1 - 0.15)


def test_ce_drops_on_separable_blobs():
    rng = np.random.default_rng(6)
    X0 = rng.normal(size=(20, 2)) * 0.3 + np.array([-2.0, 0.0])
    X1 = rng.normal(size=(20, 2)) * 0.3 + np.array([2.0, 0.0])
    X = np.vstack([X0, X1])
    y = np.array([0] * 20 + [1] * 20)
    m = init_model([2, 8, 2], seed=30)
    opt = Optimizer(lr=0.2)
    first = None
    for _ in range(50):
        ce, _ = train_step(m, (X, y), 0.0, None, None, opt)
        if first is None:
            first = ce
    assert ce <= 0.5 * first


def test_training_deterministic():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(16, 3))
    y = rng.integers(0, 3, size=16)
    backend = make_backend("gg")
    constraint = csim_formula(synthetic_tables(3).triples, 3)

    models = []
    for _ in range(2):
        m = init_model([3, 6, 3], seed=40)
        opt = Optimizer(lr=0.1, momentum=0.9)
        for _ in range(10):
            train_step(m, (X, y), 0.5, backend, constraint, opt)
        models.append(m)
    for wa, wb in zip(
        models[0].weights + models[0].biases, models[1].weights + models[1].biases
    ):
        assert np.array_equal(wa, wb)


def test_nan_aborts_with_diagnostics():
    m = init_model([2, 3], seed=0)
    m.weights[0][0, 0] = np.nan
    with pytest.raises(TrainingDiverged, match="ce="):
        loss_gradients(m, np.ones((2, 2)), np.array([0, 1]))


def test_checkpoint_round_trip(tmp_path):
    m = init_model([3, 5, 4], seed=17)
    path = tmp_path / "model.json"
    save_checkpoint(m, path)
    back = load_checkpoint(path)
    assert back.layer_sizes == m.layer_sizes
    for wa, wb in zip(m.weights + m.biases, back.weights + back.biases):
        assert np.array_equal(wa, wb)


def test_checkpoint_rejects_other_files(tmp_path):
    path = tmp_path / "junk.json"
    path.write_text('{"format": "something-else"}')
    with pytest.raises(ValueError, match="not a model checkpoint"):
        load_checkpoint(path)
