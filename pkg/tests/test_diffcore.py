import numpy as np
import pytest

from polarfine import diffcore as dc
from polarfine.diffcore import Parameter, ShapeMismatch, Tensor, backward
from polarfine.gradcheck import grad_check


def leaf(rng, *shape):
    return Tensor(rng.uniform(-1.5, 1.5, size=shape))


def positive_leaf(rng, *shape):
    return Tensor(rng.uniform(0.5, 2.0, size=shape))


# Each entry builds (fn, inputs) with inputs kept away from kinks so the
# central difference is trustworthy.
def _case_add(rng):
    return lambda a, b: dc.tsum(dc.add(a, b)), [leaf(rng, 3, 4), leaf(rng, 3, 4)]


def _case_sub(rng):
    return lambda a, b: dc.tsum(dc.sub(a, b)), [leaf(rng, 5), leaf(rng, 5)]


def _case_multiply(rng):
    return lambda a, b: dc.tsum(dc.multiply(a, b)), [leaf(rng, 2, 3), leaf(rng, 2, 3)]


def _case_neg(rng):
    return lambda a: dc.tsum(dc.neg(a)), [leaf(rng, 4)]


def _case_add_const(rng):
    c = rng.uniform(-1, 1, size=(3, 2))
    return lambda a: dc.tsum(dc.multiply(dc.add_const(a, c), dc.add_const(a, 0.5))), \
        [leaf(rng, 3, 2)]


def _case_mul_const(rng):
    c = rng.uniform(0.5, 2, size=(3, 2))
    return lambda a: dc.tsum(dc.mul_const(a, c)), [leaf(rng, 3, 2)]


def _case_relu(rng):
    vals = rng.uniform(0.2, 1.5, size=(3, 3)) * rng.choice([-1.0, 1.0], size=(3, 3))
    return lambda a: dc.tsum(dc.relu(a)), [Tensor(vals)]


def _case_sigmoid(rng):
    return lambda a: dc.tsum(dc.sigmoid(a)), [leaf(rng, 6)]


def _case_exp(rng):
    return lambda a: dc.tsum(dc.exp(a)), [leaf(rng, 4)]


def _case_log(rng):
    return lambda a: dc.tsum(dc.log(a)), [positive_leaf(rng, 4)]


def _case_softplus(rng):
    return lambda a: dc.tsum(dc.softplus(a)), [leaf(rng, 7)]


def _case_power_const(rng):
    return lambda a: dc.tsum(dc.power_const(a, 1.7)), [positive_leaf(rng, 5)]


def _case_maximum(rng):
    a = rng.uniform(-1, 1, size=(4, 3))
    b = a + rng.uniform(0.3, 0.8, size=(4, 3)) * rng.choice([-1.0, 1.0], size=(4, 3))
    return lambda x, y: dc.tsum(dc.maximum(x, y)), [Tensor(a), Tensor(b)]


def _case_minimum(rng):
    a = rng.uniform(-1, 1, size=(4, 3))
    b = a + rng.uniform(0.3, 0.8, size=(4, 3)) * rng.choice([-1.0, 1.0], size=(4, 3))
    return lambda x, y: dc.tsum(dc.minimum(x, y)), [Tensor(a), Tensor(b)]


def _case_clamp_min(rng):
    vals = 0.5 + rng.uniform(0.2, 1.0, size=5) * rng.choice([-1.0, 1.0], size=5)
    return lambda a: dc.tsum(dc.clamp_min(a, 0.5)), [Tensor(vals)]


def _case_sum_axis(rng):
    return lambda a: dc.tsum(dc.multiply(dc.tsum(a, axis=0), dc.tsum(a, axis=0))), \
        [leaf(rng, 3, 4)]


def _case_mean(rng):
    return lambda a: dc.mean(dc.multiply(a, a)), [leaf(rng, 3, 4)]


def _case_reshape(rng):
    return lambda a: dc.tsum(dc.multiply(dc.reshape(a, (6,)), dc.reshape(a, (6,)))), \
        [leaf(rng, 2, 3)]


def _case_transpose2d(rng):
    c = rng.uniform(-1, 1, size=(4, 2))
    return lambda a: dc.tsum(dc.mul_const(dc.transpose2d(a), c)), [leaf(rng, 2, 4)]


def _case_concat(rng):
    def fn(a, b):
        cat = dc.concat([a, b], axis=1)
        return dc.tsum(dc.multiply(cat, cat))
    return fn, [leaf(rng, 2, 3), leaf(rng, 2, 2)]


def _case_take_columns(rng):
    idx = np.array([0, 2, 2, 1])  # repeated column checks scatter-add
    c = rng.uniform(-1, 1, size=(3, 4))
    return lambda a: dc.tsum(dc.mul_const(dc.take_columns(a, idx), c)), \
        [leaf(rng, 3, 5)]


def _case_scalar_scale(rng):
    return lambda a, s: dc.tsum(dc.scalar_scale(a, s)), \
        [leaf(rng, 3, 3), Tensor(rng.uniform(0.5, 1.5))]


def _case_conv2d(rng):
    def fn(x, w, b):
        return dc.tsum(dc.conv2d(x, w, b, stride=1, padding=1))
    return fn, [leaf(rng, 1, 2, 5, 5), leaf(rng, 3, 2, 3, 3), leaf(rng, 3)]


def _case_conv2d_strided(rng):
    def fn(x, w, b):
        out = dc.conv2d(x, w, b, stride=2, padding=1)
        return dc.tsum(dc.multiply(out, out))
    return fn, [leaf(rng, 1, 2, 6, 6), leaf(rng, 2, 2, 3, 3), leaf(rng, 2)]


def _case_grouped_conv1x1(rng):
    def fn(x, w, b):
        return dc.tsum(dc.grouped_conv1x1(x, 3, w, b))
    return fn, [leaf(rng, 4, 6), leaf(rng, 3, 2), leaf(rng, 3)]


def _case_linear(rng):
    def fn(x, w, b):
        out = dc.linear(x, w, b)
        return dc.tsum(dc.multiply(out, out))
    return fn, [leaf(rng, 4, 3), leaf(rng, 2, 3), leaf(rng, 2)]


def _case_upsample(rng):
    c = rng.uniform(-1, 1, size=(1, 2, 6, 4))
    return lambda x: dc.tsum(dc.mul_const(dc.upsample_nearest2x(x), c)), \
        [leaf(rng, 1, 2, 3, 2)]


def _case_bilinear(rng):
    feats = leaf(rng, 2, 5, 5)
    pts = Tensor(rng.uniform(0.3, 3.6, size=(4, 2)) + 0.07)  # off the lattice
    def fn(f, p):
        out = dc.bilinear_sample(f, p)
        return dc.tsum(dc.multiply(out, out))
    return fn, [feats, pts]


OP_CASES = [
    ("add", _case_add), ("sub", _case_sub), ("multiply", _case_multiply),
    ("neg", _case_neg), ("add_const", _case_add_const),
    ("mul_const", _case_mul_const), ("relu", _case_relu),
    ("sigmoid", _case_sigmoid), ("exp", _case_exp), ("log", _case_log),
    ("softplus", _case_softplus), ("power_const", _case_power_const),
    ("maximum", _case_maximum), ("minimum", _case_minimum),
    ("clamp_min", _case_clamp_min), ("sum_axis", _case_sum_axis),
    ("mean", _case_mean), ("reshape", _case_reshape),
    ("transpose2d", _case_transpose2d), ("concat", _case_concat),
    ("take_columns", _case_take_columns), ("scalar_scale", _case_scalar_scale),
    ("conv2d", _case_conv2d), ("conv2d_strided", _case_conv2d_strided),
    ("grouped_conv1x1", _case_grouped_conv1x1), ("linear", _case_linear),
    ("upsample_nearest2x", _case_upsample), ("bilinear_sample", _case_bilinear),
]


@pytest.mark.parametrize("name,case", OP_CASES, ids=[n for n, _ in OP_CASES])
def test_op_gradients_match_finite_differences(name, case):
    rng = np.random.default_rng(hash(name) % 2**32)
    fn, inputs = case(rng)
    report = grad_check(fn, inputs, h=1e-5, tol=1e-4)
    assert report.ok, str(report)


def test_gradcheck_flags_a_wrong_gradient():
    def broken(a):
        out = Tensor(a.data * a.data, (a,), lambda g: (g,))  # should be 2*a*g
        return dc.tsum(out)
    report = grad_check(broken, [Tensor(np.array([1.5, -2.0]))])
    assert not report.ok
    worst = report.worst()
    assert worst is not None and worst.rel_err > 0.1


def test_backward_accumulates_across_calls():
    x = Tensor(np.array([2.0, 3.0]))
    y = dc.tsum(dc.multiply(x, x))
    backward(y)
    once = x.grad.copy()
    backward(y)
    assert np.allclose(x.grad, 2 * once)


def test_diamond_graph_fan_out():
    x = Tensor(np.array([3.0]))
    y = Tensor(np.array([4.0]))
    z = dc.tsum(dc.add(dc.multiply(x, y), x))  # d/dx = y + 1, d/dy = x
    backward(z)
    assert x.grad[0] == pytest.approx(5.0)
    assert y.grad[0] == pytest.approx(3.0)


def test_no_implicit_broadcasting():
    with pytest.raises(ShapeMismatch):
        dc.add(Tensor(np.zeros(3)), Tensor(np.zeros((3, 1))))
    with pytest.raises(ShapeMismatch):
        dc.multiply(Tensor(np.zeros((2, 2))), Tensor(np.zeros(2)))
    with pytest.raises(ShapeMismatch):
        dc.mul_const(Tensor(np.zeros(3)), np.zeros(4))
    with pytest.raises(ShapeMismatch):
        dc.maximum(Tensor(np.zeros(3)), Tensor(np.zeros(4)))


def test_backward_needs_scalar_or_seed():
    x = Tensor(np.zeros((2, 2)))
    y = dc.add_const(x, 1.0)
    with pytest.raises(ShapeMismatch):
        backward(y)
    backward(y, seed=np.ones((2, 2)))
    assert np.allclose(x.grad, 1.0)
    with pytest.raises(ShapeMismatch):
        backward(y, seed=np.ones(3))


def test_detach_blocks_gradient():
    x = Tensor(np.array([2.0]))
    held = dc.mul_const(x, 3.0)
    y = dc.tsum(dc.multiply(held.detach(), held))
    backward(y)
    # only the live branch contributes: d/dx = 3 * detached_value = 18
    assert x.grad[0] == pytest.approx(18.0)


def test_parameter_trainable_flag():
    p = Parameter(np.ones(3), "p", trainable=True)
    q = Parameter(np.ones(3), "q", trainable=False)
    backward(dc.tsum(dc.multiply(p, q)))
    assert np.allclose(p.grad, 1.0)
    assert q.grad is None


def test_maximum_tie_goes_to_first_minimum_to_second():
    a = Tensor(np.array([1.0, 2.0]))
    b = Tensor(np.array([1.0, 5.0]))
    backward(dc.tsum(dc.maximum(a, b)))
    assert np.allclose(a.grad, [1.0, 0.0])
    assert np.allclose(b.grad, [0.0, 1.0])
    a.zero_grad(); b.zero_grad()
    backward(dc.tsum(dc.minimum(a, b)))
    assert np.allclose(a.grad, [0.0, 1.0])
    assert np.allclose(b.grad, [1.0, 0.0])


def test_conv2d_matches_direct_computation():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 5, 6))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    out = dc.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ho, wo = out.shape[2], out.shape[3]
    ref = np.zeros_like(out)
    for n in range(2):
        for o in range(4):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
                    ref[n, o, i, j] = (patch * w[o]).sum() + b[o]
    assert np.allclose(out, ref, atol=1e-12)


def test_conv2d_shape_errors():
    x = Tensor(np.zeros((1, 2, 4, 4)))
    with pytest.raises(ShapeMismatch):
        dc.conv2d(x, Tensor(np.zeros((3, 3, 3, 3))), None)
    with pytest.raises(ShapeMismatch):
        dc.conv2d(x, Tensor(np.zeros((3, 2, 3, 3))), Tensor(np.zeros(4)))
    with pytest.raises(ShapeMismatch):
        dc.conv2d(x, Tensor(np.zeros((3, 2, 9, 9))), None)


def test_grouped_conv_is_per_group_dot():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(5, 6))
    w = rng.normal(size=(3, 2))
    b = rng.normal(size=3)
    out = dc.grouped_conv1x1(Tensor(x), 3, Tensor(w), Tensor(b)).data
    for l in range(5):
        for g in range(3):
            ref = x[l, 2 * g:2 * g + 2] @ w[g] + b[g]
            assert out[l, g] == pytest.approx(ref)
    with pytest.raises(ShapeMismatch):
        dc.grouped_conv1x1(Tensor(x), 4, Tensor(w), Tensor(b))


def test_bilinear_values_and_border_zero():
    feats = np.zeros((1, 4, 4))
    feats[0, 1, 2] = 8.0
    t = dc.bilinear_sample(Tensor(feats), Tensor(np.array([[2.0, 1.0],
                                                           [2.5, 1.0],
                                                           [-3.0, 1.0],
                                                           [3.5, 3.5]])))
    assert t.data[0, 0] == pytest.approx(8.0)   # exactly on the tap
    assert t.data[1, 0] == pytest.approx(4.0)   # halfway to a zero neighbour
    assert t.data[2, 0] == pytest.approx(0.0)   # fully outside reads zero
    # corner point: three taps out of range
    assert t.data[3, 0] == pytest.approx(0.0)


def test_bilinear_outside_point_gets_zero_coord_grad():
    feats = Tensor(np.random.default_rng(2).normal(size=(2, 4, 4)))
    pts = Tensor(np.array([[-7.0, -7.0], [1.3, 1.6]]))
    out = dc.bilinear_sample(feats, pts)
    backward(dc.tsum(out))
    assert np.allclose(pts.grad[0], 0.0)
    assert not np.allclose(pts.grad[1], 0.0)


def test_upsample_nearest_values():
    x = np.arange(4.0).reshape(1, 1, 2, 2)
    up = dc.upsample_nearest2x(Tensor(x)).data
    assert up.shape == (1, 1, 4, 4)
    assert np.array_equal(up[0, 0, :2, :2], np.zeros((2, 2)))
    assert np.array_equal(up[0, 0, :2, 2:], np.ones((2, 2)))
    assert np.array_equal(up[0, 0, 2:, 2:], np.full((2, 2), 3.0))


def test_sigmoid_softplus_extreme_inputs_stay_finite():
    x = Tensor(np.array([-1000.0, -10.0, 0.0, 10.0, 1000.0]))
    s = dc.sigmoid(x).data
    sp = dc.softplus(x).data
    assert np.isfinite(s).all() and np.isfinite(sp).all()
    assert s[0] == pytest.approx(0.0) and s[-1] == pytest.approx(1.0)
    assert sp[0] == pytest.approx(0.0) and sp[-1] == pytest.approx(1000.0)
