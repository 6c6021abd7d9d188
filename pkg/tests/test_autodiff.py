import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advstyle import autodiff as ad
from conftest import rel_err


def fd_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def check(op, *shapes, positive=False, seed=0, tol=1e-6):
    rng = np.random.default_rng(seed)
    xs = [rng.uniform(0.5, 2.0, s) if positive else rng.normal(size=s) for s in shapes]
    w = None
    for k in range(len(xs)):
        vals = [ad.Value(x, requires_grad=(j == k)) for j, x in enumerate(xs)]
        out = op(*vals)
        if w is None:
            w = np.random.default_rng(seed + 1).normal(size=out.shape)
        ad.backward(ad.reduce_sum(ad.mul(out, w)))

        def f(xk, k=k):
            args = [ad.Value(xk if j == k else x) for j, x in enumerate(xs)]
            return float((op(*args).data * w).sum())

        assert rel_err(vals[k].grad, fd_grad(f, xs[k])) < tol, op


@pytest.mark.parametrize(
    "op,shapes,pos",
    [
        (ad.add, [(3, 4), (3, 4)], False),
        (ad.add, [(3, 4), ()], False),
        (ad.sub, [(5,), (1,)], False),
        (ad.mul, [(3, 4), (3, 4)], False),
        (ad.mul, [(), (6,)], False),
        (ad.matmul, [(3, 4), (4, 2)], False),
        (ad.matmul, [(3, 4), (4,)], False),
        (ad.tanh, [(7,)], False),
        (ad.sigmoid, [(7,)], False),
        (ad.exp, [(2, 3)], False),
        (ad.log, [(2, 3)], True),
        (ad.square, [(5,)], False),
        (ad.sin, [(5,)], False),
        (ad.cos, [(5,)], False),
        (ad.log_softmax, [(4, 6)], False),
        (lambda x: ad.reduce_sum(x, axis=0), [(3, 4)], False),
        (lambda x: ad.reduce_sum(x, axis=1), [(3, 4)], False),
        (lambda x: ad.getitem(x, slice(1, 4)), [(6,)], False),
        (lambda x: ad.reshape(x, (2, 6)), [(3, 4)], False),
        (lambda a, b: ad.concat([a, b]), [(2, 3), (4, 3)], False),
        (lambda x: ad.frames(x, 5, 2), [(13,)], False),
    ],
)
def test_op_gradients_match_finite_differences(op, shapes, pos):
    check(op, *shapes, positive=pos)


def test_abs_gradient_away_from_zero():
    x = np.array([-2.0, -0.5, 0.3, 1.7])
    v = ad.Value(x, True)
    ad.backward(ad.reduce_sum(ad.abs(v)))
    np.testing.assert_array_equal(v.grad, np.sign(x))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 4), st.integers(0, 1000))
def test_composite_mlp_gradient(n, d, h, seed):
    rng = np.random.default_rng(seed)
    X, W = rng.normal(size=(n, d)), rng.normal(size=(d, h))

    def f(Wd):
        return float(ad.reduce_sum(ad.log_softmax(ad.tanh(ad.matmul(X, Wd)))).data)

    Wv = ad.Value(W, True)
    ad.backward(ad.reduce_sum(ad.log_softmax(ad.tanh(ad.matmul(X, Wv)))))
    assert rel_err(Wv.grad, fd_grad(f, W)) < 1e-6


def test_shape_mismatch_reports_operands():
    with pytest.raises(ad.ShapeError) as ei:
        ad.add(ad.Value(np.zeros((2, 3))), ad.Value(np.zeros((3, 2))))
    assert "(2, 3)" in str(ei.value) and "(3, 2)" in str(ei.value)


def test_log_of_nonpositive_is_domain_error():
    with pytest.raises(ad.DomainError):
        ad.log(ad.Value([1.0, 0.0]))
    with pytest.raises(ad.DomainError):
        ad.log(ad.Value([-1.0]))


def test_gradients_accumulate_across_backward_calls():
    x = ad.Value(np.array([1.0, 2.0]), True)
    for _ in range(2):
        ad.backward(ad.reduce_sum(ad.square(x)))
    np.testing.assert_allclose(x.grad, 2 * 2 * x.data)
    x.zero_grad()
    np.testing.assert_array_equal(x.grad, 0.0)


def test_shared_subexpression_counted_once_per_path():
    x = ad.Value(np.array(3.0), True)
    y = ad.mul(x, x)
    ad.backward(ad.add(y, y))  # d/dx 2x^2
    assert x.grad == pytest.approx(12.0)


def test_backward_requires_scalar_root():
    with pytest.raises(ValueError):
        ad.backward(ad.Value(np.ones(3), True))


def test_constants_do_not_get_gradients():
    c = ad.Value(np.ones(3))
    v = ad.Value(np.ones(3), True)
    ad.backward(ad.reduce_sum(ad.mul(c, v)))
    assert c.requires_grad is False and c._grad is None


def test_adam_matches_reference_update():
    rng = np.random.default_rng(0)
    p = ad.Value(rng.normal(size=4), True)
    opt = ad.Adam([p], lr=0.1)
    ref = p.data.copy()
    m = np.zeros(4)
    v = np.zeros(4)
    for t in range(1, 6):
        opt.zero_grad()
        ad.backward(ad.reduce_sum(ad.square(p)))
        g = 2 * ref
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.1 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        opt.step()
        np.testing.assert_allclose(p.data, ref, rtol=1e-13)


def test_adam_first_step_is_lr_times_sign():
    p = ad.Value(np.array([3.0, -2.0, 0.5]), True)
    opt = ad.Adam([p], lr=0.01)
    ad.backward(ad.reduce_sum(ad.square(p)))
    opt.step()
    np.testing.assert_allclose(p.data, [2.99, -1.99, 0.49], atol=1e-9)


def test_custom_primitive_chains():
    x = ad.Value(np.array([0.3, -1.2]), True)
    y = ad.custom(x.data**3, (x,), lambda g: (g * 3 * x.data**2,), "cube")
    ad.backward(ad.reduce_sum(ad.tanh(y)))
    np.testing.assert_allclose(x.grad, (1 - np.tanh(x.data**3) ** 2) * 3 * x.data**2)
