import io

import numpy as np
import pytest

from oracles import central_difference, max_rel_error, softmax_rows
from pavrl.exceptions import SequencingError, ValidationError
from pavrl.neural import (
    Optimizer, backward, check_gradients, clip_by_global_norm, forward, from_bytes, grad_check, load, mlp_new,
    optimizer_step, save, to_bytes,
)


def squared_error(target):
    def loss(out):
        d = out - target
        return float((d * d).sum()), 2.0 * d
    return loss


def cross_entropy(labels):
    def loss(out):
        n = len(labels)
        p = out[np.arange(n), labels]
        g = np.zeros_like(out)
        g[np.arange(n), labels] = -1.0 / p
        return float(-np.log(p).sum()), g
    return loss


def zeroed(m):
    for p in m.params:
        p[...] = 0.0
    return m


def test_parameter_count_and_init():
    m = mlp_new([40, 64, 64, 1], seed=3)
    assert m.n_params == 6849
    assert all(not b.any() for b in m.params[1::2])
    other = mlp_new([40, 64, 64, 1], seed=3)
    assert all(np.array_equal(p, q) for p, q in zip(m.params, other.params))
    with pytest.raises(ValidationError):
        mlp_new([40, 0, 1])
    with pytest.raises(ValidationError):
        mlp_new([4, 2], head="tanh")


def test_zero_weight_outputs():
    x = np.ones(21)
    assert forward(zeroed(mlp_new([21, 8, 1])), x)[0].tolist() == [0.0]
    out = forward(zeroed(mlp_new([21, 8, 32], "softmax")), x)[0]
    assert np.all(out == 1.0 / 32)


def test_softmax_rows_sum_to_one(rng):
    m = mlp_new([5, 16, 32], "softmax", seed=1)
    out = forward(m, rng.normal(size=(50, 5)) * 10)[0]
    assert np.all(out > 0) and np.allclose(out.sum(axis=1), 1.0, atol=1e-12, rtol=0)


def test_softmax_matches_reference(rng):
    m = mlp_new([5, 16, 32], "softmax", seed=1)
    out, cache = forward(m, rng.normal(size=(20, 5)))
    assert np.allclose(out, softmax_rows(cache.logits), atol=1e-15, rtol=0)


def test_forward_is_pure_and_checks_width(rng):
    m = mlp_new([3, 8, 2], seed=0)
    x = rng.normal(size=(4, 3))
    assert np.array_equal(forward(m, x)[0], forward(m, x)[0])
    assert forward(m, x[0])[0].shape == (2,)
    with pytest.raises(ValidationError):
        forward(m, np.ones(4))


def test_single_layer_closed_form(rng):
    m = mlp_new([3, 2], seed=0)
    x = rng.normal(size=3)
    g = np.array([0.5, -1.5])
    _, cache = forward(m, x)
    gW, gb = backward(m, cache, g)
    assert np.allclose(gW, np.outer(x, g), atol=1e-15) and np.array_equal(gb, g)


def test_zero_output_gradient(rng):
    m = mlp_new([3, 8, 2], seed=0)
    _, cache = forward(m, rng.normal(size=(4, 3)))
    assert all(not g.any() for g in backward(m, cache, np.zeros((4, 2))))


@pytest.mark.parametrize("head", ["linear", "softmax"])
def test_backward_matches_independent_finite_differences(head, rng):
    m = mlp_new([4, 7, 5, 3], head, seed=2)
    x = rng.normal(size=(6, 4))
    loss = squared_error(rng.normal(size=(6, 3))) if head == "linear" else cross_entropy(rng.integers(0, 3, 6))
    out, cache = forward(m, x)
    grads = backward(m, cache, loss(out)[1])
    numeric = central_difference(lambda: loss(forward(m, x)[0])[0], m.params)
    assert max_rel_error(grads, numeric) < 1e-4


def test_softmax_gradient_wrt_logits(rng):
    m = mlp_new([4, 6, 3], "softmax", seed=5)
    x = rng.normal(size=(5, 4))
    labels = rng.integers(0, 3, 5)
    out, cache = forward(m, x)
    onehot = np.eye(3)[labels]
    grads = backward(m, cache, out - onehot, wrt_logits=True)
    assert check_gradients(lambda: cross_entropy(labels)(forward(m, x)[0])[0], m.params, grads) < 1e-4


def test_grad_check_examples(rng):
    m = mlp_new([6, 12, 12, 2], seed=4)
    x = rng.normal(size=(8, 6))
    loss = squared_error(rng.normal(size=(8, 2)))
    assert grad_check(m, x, loss) < 1e-4
    linear = mlp_new([6, 2], seed=4)
    assert grad_check(linear, x, loss) < 1e-7

    def corrupted(net, cache, g):
        grads = backward(net, cache, g)
        grads[0] = grads[0] * 1.1
        return grads

    assert grad_check(m, x, loss, backward_fn=corrupted) > 1e-2


def test_grad_check_subsamples_large_nets(rng):
    m = mlp_new([40, 64, 64, 1], seed=0)
    x = rng.normal(size=(3, 40))
    assert grad_check(m, x, squared_error(np.zeros((3, 1))), max_checks=200) < 1e-4


def test_stale_cache_is_rejected(rng):
    m = mlp_new([3, 4, 1], seed=0)
    _, cache = forward(m, rng.normal(size=3))
    optimizer_step(m, [np.ones_like(p) for p in m.params], Optimizer(m.params, "sgd", lr=0.1))
    with pytest.raises(SequencingError):
        backward(m, cache, np.ones(1))
    with pytest.raises(SequencingError):
        backward(mlp_new([3, 4, 1]), forward(m, np.ones(3))[1], np.ones(1))


def test_sgd_examples():
    theta = [np.array([1.0])]
    opt = Optimizer(theta, "sgd", lr=0.1)
    opt.step(theta, [np.array([0.5])])
    assert theta[0][0] == 0.95 and opt.t == 1
    opt.step(theta, [np.array([0.0])])
    assert theta[0][0] == 0.95


def test_adam_on_quadratic():
    theta = [np.array([0.0])]
    opt = Optimizer(theta, "adam", lr=0.01)
    for step in range(2000):
        opt.step(theta, [2.0 * (theta[0] - 3.0)])
        if abs(theta[0][0] - 3.0) < 1e-3:
            break
    assert abs(theta[0][0] - 3.0) < 1e-3 and step < 2000


def test_non_finite_gradient_is_rejected():
    theta = [np.array([1.0])]
    opt = Optimizer(theta, "sgd", lr=0.1)
    with pytest.raises(ValidationError):
        opt.step(theta, [np.array([np.nan])])
    assert theta[0][0] == 1.0 and opt.t == 0
    with pytest.raises(ValidationError):
        Optimizer(theta, "sgd", lr=0.0)


def test_optimizer_state_roundtrip(rng):
    m = mlp_new([3, 4, 1], seed=0)
    a = Optimizer(m.params, "adam", lr=1e-2)
    grads = [rng.normal(size=p.shape) for p in m.params]
    a.step([p.copy() for p in m.params], grads)
    b = Optimizer.from_state(m.params, a.state_dict())
    p1, p2 = [p.copy() for p in m.params], [p.copy() for p in m.params]
    a.step(p1, grads)
    b.step(p2, grads)
    assert all(np.array_equal(x, y) for x, y in zip(p1, p2))


def test_clip_by_global_norm():
    grads, norm = clip_by_global_norm([np.array([3.0]), np.array([4.0])], 1.0)
    assert norm == 5.0 and np.sqrt(sum(float(g @ g) for g in grads)) == pytest.approx(1.0)
    same, _ = clip_by_global_norm([np.array([0.3])], 1.0)
    assert same[0][0] == 0.3


def test_save_load_bit_identical(tmp_path):
    m = mlp_new([5, 9, 32], "softmax", seed=11)
    path = tmp_path / "m.npz"
    save(m, path, extra={"note": "x"})
    back, extra = load(path)
    assert back.sizes == m.sizes and back.head == "softmax" and extra == {"note": "x"}
    assert all(np.array_equal(p, q) for p, q in zip(m.params, back.params))
    assert to_bytes(back, {"note": "x"}) == path.read_bytes()


def test_tampered_model_file_is_rejected():
    with np.load(io.BytesIO(to_bytes(mlp_new([2, 2], seed=0)))) as z:
        arrays = {k: z[k].copy() for k in z.files}
    arrays["p0"][0, 0] += 1.0
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    with pytest.raises(ValidationError, match="checksum"):
        from_bytes(buf.getvalue())
