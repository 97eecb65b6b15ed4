import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from timemae_pfm.core import Adam, NumericError, ShapeError, Tape, Tensor, grad_check, no_grad, ops


def param(rng, *shape, name="p"):
    return Tensor(rng.normal(size=shape), requires_grad=True, name=name)


def test_matmul_identity():
    A = np.array([[1.5, -2.0], [0.25, 3.0]])
    out = ops.matmul(Tensor(np.eye(2)), Tensor(A))
    np.testing.assert_array_equal(out.data, A)


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    ref = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            for k in range(4):
                ref[i, j] += a[i, k] * b[k, j]
    np.testing.assert_allclose(ops.matmul(Tensor(a), Tensor(b)).data, ref, rtol=1e-14, atol=1e-14)


def test_softmax_uniform():
    np.testing.assert_allclose(ops.softmax(Tensor(np.zeros(3))).data, np.full(3, 1 / 3), rtol=0, atol=1e-16)


def test_shape_mismatch_reports_both_shapes():
    with pytest.raises(ShapeError, match=r"\(3, 4\).*\(5, 2\)"):
        ops.matmul(Tensor(np.ones((3, 4))), Tensor(np.ones((5, 2))))
    with pytest.raises(ShapeError):
        ops.add(Tensor(np.ones(3)), Tensor(np.ones(4)))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_forward_is_an_error():
    with pytest.raises(NumericError):
        ops.mul(Tensor([1e308]), Tensor([1e308]))


def test_square_gradient():
    x = Tensor(3.0, requires_grad=True)
    with Tape() as tape:
        y = x * x
    assert tape.backward(y, {"x": x})["x"] == 6.0


def test_unreachable_parameter_gets_exact_zero():
    x = Tensor([1.0, 2.0], requires_grad=True)
    p = Tensor([[4.0, 5.0]], requires_grad=True)
    with Tape() as tape:
        y = ops.sum(x * x)
    g = tape.backward(y, {"x": x, "p": p})
    assert np.array_equal(g["p"], np.zeros((1, 2)))


def test_backward_requires_scalar_and_consumes_tape():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(ShapeError):
        tape.backward(y, {"x": x})
    with Tape() as tape:
        y = ops.sum(x)
    tape.backward(y, {"x": x})
    assert len(tape) == 0
    with pytest.raises(RuntimeError):
        tape.backward(y, {"x": x})


def test_tape_visits_each_entry_once():
    x = Tensor(np.ones(4), requires_grad=True)
    calls = []
    with Tape() as tape:
        y = ops.sum(ops.mul(x, x))
    for e in tape.entries:
        orig = e.vjp
        e.vjp = lambda g, orig=orig, op=e.op: calls.append(op) or orig(g)
    tape.backward(y, {"x": x})
    assert calls == ["sum", "mul"]


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with Tape() as tape:
        with no_grad():
            ops.mul(x, x)
    assert len(tape) == 0


# every primitive against central differences, >= 20 probes each
def _prim_cases():
    rng = np.random.default_rng(7)
    x = param(rng, 3, 5, 6, name="x")
    w = param(rng, 6, 4, name="w")
    b = param(rng, 4, name="b")
    k = param(rng, 4, 2, 3, name="k")
    s = param(rng, 2, 12, 2, name="s")
    y = param(rng, 3, 5, 6, name="y")
    pos = Tensor(rng.normal(size=(5, 6)) + 2.0, requires_grad=True, name="pos")
    lab = (rng.random((3, 5)) > 0.5).astype(float)
    idx = np.array([[0, 2], [4, 1], [3, 3]])
    wts = rng.normal(size=(3, 5, 6))
    wt4 = rng.normal(size=(3, 5, 4))
    return [
        ("add", lambda: ops.sum(ops.mul(ops.add(x, b.data[:1] + y), wts)), {"x": x, "y": y}),
        ("sub", lambda: ops.sum(ops.mul(ops.sub(x, y), wts)), {"x": x, "y": y}),
        ("mul", lambda: ops.sum(ops.mul(ops.mul(x, y), wts)), {"x": x, "y": y}),
        ("matmul", lambda: ops.sum(ops.mul(ops.matmul(x, w), wt4)), {"x": x, "w": w}),
        ("affine", lambda: ops.sum(ops.mul(ops.affine(x, w, b), wt4)), {"x": x, "w": w, "b": b}),
        ("conv1d", lambda: ops.sum(ops.mul(ops.conv1d(s, k, b), rng_fixed((2, 4, 4)))), {"s": s, "k": k, "b": b}),
        ("conv1d_overlap", lambda: ops.sum(ops.mul(ops.conv1d(s, k, b, stride=2), rng_fixed((2, 5, 4)))),
         {"s": s, "k": k, "b": b}),
        ("softmax", lambda: ops.sum(ops.mul(ops.softmax(x), wts)), {"x": x}),
        ("layer_norm", lambda: ops.sum(ops.mul(ops.layer_norm(x), wts)), {"x": x}),
        ("gelu", lambda: ops.sum(ops.mul(ops.gelu(x), wts)), {"x": x}),
        ("relu", lambda: ops.sum(ops.mul(ops.relu(x), wts)), {"x": x}),
        ("sigmoid", lambda: ops.sum(ops.mul(ops.sigmoid(x), wts)), {"x": x}),
        ("mean", lambda: ops.sum(ops.mul(ops.mean(x, axis=1), wts[:, 0])), {"x": x}),
        ("concat", lambda: ops.sum(ops.mul(ops.concat([x, y], axis=1), np.concatenate([wts, wts], 1))),
         {"x": x, "y": y}),
        ("reshape_transpose", lambda: ops.sum(ops.mul(ops.transpose(ops.reshape(x, (3, 5, 2, 3)), (0, 2, 1, 3)),
                                                      rng_fixed((3, 2, 5, 3)))), {"x": x}),
        ("take", lambda: ops.sum(ops.mul(ops.take(pos, idx), rng_fixed((3, 2, 6)))), {"pos": pos}),
        ("gather_rows", lambda: ops.sum(ops.mul(ops.gather_rows(x, idx), rng_fixed((3, 2, 6)))), {"x": x}),
        ("huber", lambda: ops.huber(x, y * 3.0, 2.0), {"x": x, "y": y}),
        ("bce", lambda: ops.bce_with_logits(ops.mean(x, axis=2), lab), {"x": x}),
    ]


def rng_fixed(shape):
    return np.random.default_rng(sum(shape)).normal(size=shape)


@pytest.mark.parametrize("case", _prim_cases(), ids=lambda c: c[0])
def test_primitive_adjoints(case):
    name, fn, params = case
    res = grad_check(fn, params, probes=20, seed=3)
    assert res.n_probes >= 20
    assert res.max_rel_error <= 1e-4, (name, res)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 7), elements=st.floats(-50, 50)))
def test_softmax_rows_are_distributions(x):
    y = ops.softmax(Tensor(x)).data
    assert (y >= 0).all()
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, rtol=0, atol=1e-12)


def test_layer_norm_moments():
    rng = np.random.default_rng(0)
    x = rng.normal(loc=3.0, scale=2.0, size=(50, 64))
    y = ops.layer_norm(Tensor(x)).data
    assert np.abs(y.mean(axis=-1)).max() <= 1e-10
    assert np.abs(y.var(axis=-1) - 1.0).max() <= 1e-8


def test_forward_backward_bit_deterministic():
    def run():
        rng = np.random.default_rng(11)
        x, w = param(rng, 4, 8), param(rng, 8, 8, name="w")
        with Tape() as tape:
            loss = ops.mean(ops.gelu(ops.layer_norm(ops.matmul(x, w))))
        return loss.data.copy(), tape.backward(loss, {"w": w})["w"]

    (l1, g1), (l2, g2) = run(), run()
    assert l1.tobytes() == l2.tobytes() and g1.tobytes() == g2.tobytes()


def test_adam_zero_gradient_and_zero_lr():
    p = Tensor(np.array([1.0, -2.0, 3.5]), requires_grad=True)
    before = p.data.copy()
    opt = Adam(lr=1e-3)
    for _ in range(10):
        opt.step({"p": p}, {"p": np.zeros(3)})
    np.testing.assert_allclose(p.data, before, atol=1e-12)
    q = Tensor(np.array([0.3, 0.7]), requires_grad=True)
    before = q.data.copy()
    opt = Adam(lr=0.0)
    for _ in range(5):
        opt.step({"q": q}, {"q": np.array([1.0, -4.0])})
    assert q.data.tobytes() == before.tobytes()
    assert opt.state.step == 5


def test_adam_first_step_is_minus_lr():
    p = Tensor(np.array(2.0), requires_grad=True)
    opt = Adam(lr=0.1)
    opt.step({"p": p}, {"p": np.array(1.0)})
    # m_hat = v_hat = 1, so the step is lr / (1 + eps)
    assert p.item() == pytest.approx(2.0 - 0.1 / (1 + 1e-8), abs=1e-15)


def test_adam_rejects_non_finite_gradient():
    p = Tensor(np.zeros(2), requires_grad=True)
    with pytest.raises(NumericError, match="'w1'"):
        Adam().step({"w1": p}, {"w1": np.array([np.nan, 0.0])})
    assert Adam().state.step == 0


def test_adam_converges_on_convex_quadratic():
    A = np.array([[3.0, 0.5], [0.5, 1.0]])
    c = np.array([1.0, -2.0])
    p = Tensor(np.array([5.0, 5.0]), requires_grad=True)
    opt = Adam(lr=1e-2)
    for step in range(10000):
        g = A @ p.data - c
        if np.abs(g).max() < 1e-6:
            break
        opt.step({"p": p}, {"p": g})
    assert np.abs(A @ p.data - c).max() < 1e-6
    assert step < 10000


def test_gradcheck_linear_layer_tight():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(6, 5))
    w, b = param(rng, 5, 3, name="w"), param(rng, 3, name="b")
    target = rng.normal(size=(6, 3))
    res = grad_check(lambda: ops.mean(ops.mul(ops.sub(ops.affine(x, w, b), target),
                                              ops.sub(ops.affine(x, w, b), target))),
                     {"w": w, "b": b}, probes=15)
    assert res.max_rel_error <= 1e-7
