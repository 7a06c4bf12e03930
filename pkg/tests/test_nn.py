import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crawl import nn
from crawl.audit import gradient_audit
from crawl.nn import ops
from crawl.nn.gradcheck import grad_check, relative_error
from crawl.nn.tensor import NumericalFault, Tape, Tensor


def naive_conv1d(x, w):
    m, L, cin = x.shape
    _, cout, k = w.shape
    out = np.zeros((m, L - k + 1, cout))
    for a in range(m):
        for p in range(L - k + 1):
            for o in range(cout):
                acc = 0.0
                for t in range(k):
                    for c in range(cin):
                        acc += x[a, p + t, c] * w[c, o, t]
                out[a, p, o] = acc
    return out


@settings(max_examples=30, deadline=None)
@given(
    st.integers(1, 4), st.integers(1, 8), st.integers(1, 8), st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31)
)
def test_conv1d_matches_naive(m, L, cin, cout, k, seed):
    k = min(k, L)
    rng = np.random.default_rng(seed)
    x, w = rng.normal(size=(m, L, cin)), rng.normal(size=(cin, cout, k))
    out = ops.conv1d(Tensor(x), Tensor(w)).value
    assert out.shape == (m, L - k + 1, cout)
    np.testing.assert_allclose(out, naive_conv1d(x, w), atol=1e-12, rtol=0)


def test_conv1d_identity_and_boundary():
    x = np.random.default_rng(0).normal(size=(2, 5, 3))
    eye = np.eye(3)[:, :, None]
    np.testing.assert_array_equal(ops.conv1d(Tensor(x), Tensor(eye)).value, x)
    assert ops.conv1d(Tensor(x), Tensor(np.ones((3, 2, 5)))).shape == (2, 1, 2)
    with pytest.raises(ValueError):
        ops.conv1d(Tensor(x), Tensor(np.ones((3, 2, 6))))
    with pytest.raises(ValueError):
        ops.conv1d(Tensor(x), Tensor(np.ones((4, 2, 1))))


def test_depthwise_equals_diagonal_conv():
    rng = np.random.default_rng(1)
    x, w = rng.normal(size=(3, 9, 4)), rng.normal(size=(4, 3))
    full = np.zeros((4, 4, 3))
    for c in range(4):
        full[c, c] = w[c]
    np.testing.assert_allclose(
        ops.depthwise_conv1d(Tensor(x), Tensor(w)).value, naive_conv1d(x, full), atol=1e-12
    )
    np.testing.assert_array_equal(ops.depthwise_conv1d(Tensor(x), Tensor(np.ones((4, 1)))).value, x)
    with pytest.raises(ValueError):
        ops.depthwise_conv1d(Tensor(x), Tensor(np.ones((4, 10))))


def test_conv_module_parameter_count():
    for d, w, k in [(16, 16, 9), (10, 32, 5), (7, 3, 3)]:
        mod = nn.ConvModule(d, w, k, np.random.default_rng(0))
        assert mod.conv_parameter_count() == d * w + k * w + w * w
        assert mod.depthwise.value.size == k * w
        # batch norm adds its scale and shift on top
        assert mod.num_parameters() == d * w + k * w + w * w + 2 * w


def test_conv_module_receptive_field():
    mod = nn.ConvModule(3, 4, 5, np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(6, 12, 3))
    out = mod(Tensor(x), training=True).value
    assert out.shape == (6, 8, 4)
    # in inference mode a perturbation at row r only affects outputs r-k+1 .. r
    base = mod(Tensor(x), training=False).value
    x2 = x.copy()
    x2[:, 7] += 1.0
    diff = np.abs(mod(Tensor(x2), training=False).value - base).sum(axis=(0, 2))
    assert set(np.nonzero(diff)[0].tolist()) <= set(range(3, 8))


def test_batch_norm_standardizes():
    rng = np.random.default_rng(2)
    x = rng.normal(3.0, 2.0, size=(100, 100, 3))
    state = ops.BatchNormState.create(3)
    out = ops.batch_norm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), state, True).value
    flat = out.reshape(-1, 3)
    assert np.all(np.abs(flat.mean(axis=0)) < 0.05)
    assert np.all(np.abs(flat.var(axis=0) - 1) < 0.05)
    np.testing.assert_allclose(state.running_mean, 0.1 * x.reshape(-1, 3).mean(axis=0))
    n = flat.shape[0]
    np.testing.assert_allclose(state.running_var, 0.9 + 0.1 * x.reshape(-1, 3).var(axis=0) * n / (n - 1))


def test_batch_norm_constant_input_gives_shift():
    state = ops.BatchNormState.create(2)
    beta = np.array([0.5, -1.0])
    out = ops.batch_norm(Tensor(np.full((8, 2), 4.0)), Tensor(np.ones(2)), Tensor(beta), state, True).value
    np.testing.assert_allclose(out, np.broadcast_to(beta, (8, 2)))


def test_batch_norm_inference_is_batch_independent():
    rng = np.random.default_rng(3)
    state = ops.BatchNormState(rng.normal(size=3), rng.uniform(1, 2, size=3))
    x = rng.normal(size=(10, 3))
    g, b = Tensor(rng.normal(size=3)), Tensor(rng.normal(size=3))
    full = ops.batch_norm(Tensor(x), g, b, state, False).value
    part = ops.batch_norm(Tensor(x[:3]), g, b, state, False).value
    np.testing.assert_array_equal(full[:3], part)
    with pytest.raises(ValueError):
        ops.batch_norm(Tensor(x[:1]), g, b, state, True)


def test_dropout_behaviour():
    x = Tensor(np.ones((4, 5)))
    assert ops.dropout(x, 0.0, None, True) is x
    assert ops.dropout(x, 0.5, None, False) is x
    big = Tensor(np.ones(100_000))
    out = ops.dropout(big, 0.5, np.random.default_rng(0), True).value
    assert abs(out.mean() - 1.0) < 0.02
    assert set(np.unique(out)) == {0.0, 2.0}
    a = ops.dropout(big, 0.3, np.random.default_rng(5), True).value
    b = ops.dropout(big, 0.3, np.random.default_rng(5), True).value
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        ops.dropout(x, 1.0, np.random.default_rng(0), True)


def test_mlp_zero_weights_give_bias():
    mlp = nn.MLP(3, 4, 2, np.random.default_rng(0), batch_norm=False)
    mlp.fc1.weight.value[:] = 0
    mlp.fc2.weight.value[:] = 0
    mlp.fc2.bias.value[:] = [1.5, -2.0]
    out = mlp(Tensor(np.random.default_rng(1).normal(size=(5, 3))), training=False).value
    np.testing.assert_array_equal(out, np.tile([1.5, -2.0], (5, 1)))
    with pytest.raises(ValueError):
        mlp(Tensor(np.ones((5, 4))), training=False)


def test_losses():
    loss = ops.cross_entropy(Tensor(np.zeros((3, 10))), np.array([0, 4, 9])).value
    assert np.isclose(loss, np.log(10))
    assert ops.l1_loss(Tensor(np.arange(4.0)), np.arange(4.0)).value == 0
    rng = np.random.default_rng(0)
    z, target = rng.normal(size=(4, 5)), np.array([1, 0, 4, 2])
    t = Tensor(z)
    tape = Tape()
    tape.backward(ops.cross_entropy(t, target, tape))
    expected = (ops.softmax(z) - np.eye(5)[target]) / 4
    np.testing.assert_allclose(t.grad, expected, atol=1e-15)


def test_nonfinite_values_fault():
    with pytest.raises(NumericalFault):
        ops.linear(Tensor(np.array([[np.inf]])), Tensor(np.ones((1, 1))))


def test_adam_zero_gradient_leaves_params():
    p = np.array([1.0, -2.0])
    state = nn.AdamState()
    for _ in range(5):
        nn.adam_step([p], [np.zeros(2)], state, lr=0.1)
    np.testing.assert_array_equal(p, [1.0, -2.0])
    assert state.step == 5


def test_adam_quadratic_converges():
    # minimize (x - 3)^2
    x = Tensor(np.array([-4.0]))
    opt = nn.Adam([x], lr=1e-2)
    for step in range(5000):
        opt.zero_grad()
        x.grad = 2 * (x.value - 3.0)
        opt.step()
        if abs(x.value[0] - 3.0) < 1e-6:
            break
    assert abs(x.value[0] - 3.0) < 1e-6
    assert opt.state.step <= 5000


def test_tape_requires_scalar_or_grad():
    x = Tensor(np.ones((2, 2)))
    tape = Tape()
    out = ops.relu(x, tape)
    with pytest.raises(ValueError):
        tape.backward(out)
    tape.backward(out, np.ones((2, 2)))
    assert len(tape) == 0 and np.array_equal(x.grad, np.ones((2, 2)))


def test_grad_accumulates_over_reuse():
    x = Tensor(np.array([1.0, 2.0]))
    tape = Tape()
    out = ops.add(x, x, tape)
    tape.backward(out, np.ones(2))
    np.testing.assert_array_equal(x.grad, [2.0, 2.0])


def test_gradcheck_catches_wrong_backward():
    def bad_square(x, tape):
        out = Tensor(x.value**2)
        if tape is not None:
            tape.record(lambda: x.accumulate(out.grad * x.value))  # missing factor 2
        return out

    report = grad_check(bad_square, {"x": np.array([1.0, 2.0, 3.0])})
    assert not report.passed
    assert "FAIL" in str(report)
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0


def test_audit_every_kernel_passes():
    reports = gradient_audit()
    names = {r.name for r in reports}
    assert {"conv1d", "depthwise_conv1d", "batch_norm_train", "conv_module", "crawl_model_2layer"} <= names
    for r in reports:
        assert r.passed, str(r)


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 3), st.integers(3, 7), st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**31))
def test_conv_gradients_random_shapes(m, L, cin, cout, k, seed):
    rng = np.random.default_rng(seed)
    k = min(k, L)
    rep = grad_check(
        lambda x, w, tape: ops.conv1d(x, w, tape),
        {"x": rng.normal(size=(m, L, cin)), "w": rng.normal(size=(cin, cout, k))},
        seed=seed,
    )
    assert rep.passed, str(rep)
    rep = grad_check(
        lambda x, w, tape: ops.depthwise_conv1d(x, w, tape),
        {"x": rng.normal(size=(m, L, cin)), "w": rng.normal(size=(cin, k))},
        seed=seed,
    )
    assert rep.passed, str(rep)


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 6), st.integers(1, 4), st.integers(0, 2**31))
def test_batch_norm_gradients_random_shapes(n, c, seed):
    rng = np.random.default_rng(seed)
    state = ops.BatchNormState.create(c)
    rep = grad_check(
        lambda x, g, b, tape: ops.batch_norm(x, g, b, state, True, tape),
        {"x": rng.normal(size=(n, 3, c)), "g": rng.normal(size=c), "b": rng.normal(size=c)},
        seed=seed,
    )
    assert rep.passed, str(rep)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {"a.weight": rng.normal(size=(3, 4)).astype(np.float32), "b": np.arange(5, dtype=np.float32)}
    save_dir = tmp_path / "ckpt"
    nn.save_checkpoint(save_dir, arrays, {"note": "x"})
    back, meta = nn.load_checkpoint(save_dir)
    assert meta == {"note": "x"}
    for k, v in arrays.items():
        assert back[k].tobytes() == v.tobytes() and back[k].shape == v.shape
    manifest = json.loads((save_dir / "manifest.json").read_text())
    assert manifest["version"] == 1 and all(e["dtype"] == "float32" for e in manifest["arrays"])
    (save_dir / manifest["arrays"][0]["file"]).write_bytes(b"\0" * 48)
    with pytest.raises(ValueError, match="checksum"):
        nn.load_checkpoint(save_dir)
