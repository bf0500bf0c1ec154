import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asmatch.checks import primitive_checks
from asmatch.errors import CheckpointError, ConfigError, NonFinite, NotScalar, ShapeMismatch
from asmatch.tensor import AdamW, ParamStore, Tape, Tensor, grad_check, ops, read_metadata, relative_error


def _param(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def test_softmax_uniform():
    out = ops.softmax(Tensor(np.zeros(4)))
    assert out.data == pytest.approx([0.25] * 4)


def test_bilinear_identity_slices():
    w = Tensor(np.eye(3)[:, :, None])
    e1 = Tensor(np.eye(3)[0])
    assert ops.bilinear(e1, w, e1).data == pytest.approx([1.0])


def test_bilinear_matches_einsum():
    rng = np.random.default_rng(0)
    x, w, y = rng.normal(size=(2, 4)), rng.normal(size=(4, 4, 3)), rng.normal(size=(2, 5, 4))
    out = ops.bilinear(Tensor(x), Tensor(w), Tensor(y)).data
    assert np.allclose(out, np.einsum("bi,ijf,bmj->bmf", x, w, y))


def test_attention_single_key_returns_value():
    rng = np.random.default_rng(1)
    q, k, v = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 1, 4)), rng.normal(size=(2, 1, 4))
    out = ops.attention(Tensor(q), Tensor(k), Tensor(v)).data
    assert np.allclose(out, np.broadcast_to(v, (2, 3, 4)))


def test_backward_of_sum_is_ones():
    w = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    with Tape() as tape:
        loss = ops.sum(w)
    tape.backward(loss, [w])
    assert np.array_equal(w.grad, np.ones((2, 3)))


def test_zero_scaled_loss_gives_zero_gradient():
    rng = np.random.default_rng(2)
    w = _param(rng, 3, 3)
    with Tape() as tape:
        loss = ops.mul_scalar(ops.sum(ops.sigmoid(ops.matmul(w, w))), 0.0)
    tape.backward(loss, [w])
    assert np.all(w.grad == 0.0)


def test_unreached_parameter_gets_zero():
    rng = np.random.default_rng(3)
    a, b = _param(rng, 2), _param(rng, 2)
    with Tape() as tape:
        loss = ops.sum(a)
    tape.backward(loss, [a, b])
    assert np.all(b.grad == 0.0)


def test_gradients_accumulate_over_reuse():
    w = Tensor(np.array([2.0]), requires_grad=True)
    with Tape() as tape:
        loss = ops.sum(ops.add(ops.mul(w, w), w))
    tape.backward(loss, [w])
    assert w.grad == pytest.approx([5.0])


def test_not_scalar():
    w = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = ops.mul_scalar(w, 2.0)
    with pytest.raises(NotScalar):
        tape.backward(y, [w])


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeMismatch, match=r"\(2, 3\).*\(4, 5\)"):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))
    with pytest.raises(ShapeMismatch):
        ops.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))


def test_non_finite_trap():
    with pytest.raises(NonFinite):
        ops.log(Tensor(np.array([0.0, 1.0])))
    with pytest.raises(NonFinite):
        ops.exp(Tensor(np.array([1000.0])))


def test_no_graph_outside_tape():
    w = Tensor(np.ones(2), requires_grad=True)
    y = ops.mul_scalar(w, 3.0)
    assert y._backward is None and not y.requires_grad


def test_two_matmul_chain_matches_finite_differences():
    rng = np.random.default_rng(4)
    x, a, b = _param(rng, 3, 4), _param(rng, 4, 5), _param(rng, 5, 2)
    assert grad_check(lambda: ops.sum(ops.matmul(ops.matmul(x, a), b)), [x, a, b]) < 1e-6


def test_linear_softmax_cross_entropy_check():
    rng = np.random.default_rng(5)
    x = Tensor(rng.normal(size=(6, 4)))
    w, b = _param(rng, 4, 3), _param(rng, 3)
    target = rng.integers(0, 3, 6)
    err = grad_check(lambda: ops.cross_entropy(ops.add(ops.matmul(x, w), b), target), [w, b])
    assert err < 1e-6


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_every_primitive_passes_gradient_check(seed):
    errs = primitive_checks(seed)
    assert len(errs) >= 14
    bad = {k: v for k, v in errs.items() if not v < 1e-4}
    assert not bad


def test_grad_check_rejects_training_mode():
    store = ParamStore(0)
    w = store.add("w", np.ones(3))
    store.train()
    with pytest.raises(ConfigError):
        grad_check(lambda: ops.sum(ops.dropout(w, 0.1, store.rng, True)), [w], store=store)


def test_relative_error_floor():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1.0, 1.0 + 1e-6) == pytest.approx(1e-6 / 2, rel=1e-3)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_softmax_rows_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(scale=rng.uniform(0.1, 50.0), size=(4, 7))
    mask = rng.random((4, 7)) > 0.5
    mask[:, 0] = True
    for m in (None, mask):
        p = ops.softmax(Tensor(x), m).data
        assert np.all(p >= 0)
        assert np.max(np.abs(p.sum(axis=1) - 1.0)) <= 1e-12
        if m is not None:
            assert np.all(p[~m] == 0.0)
        lp = ops.log_softmax(Tensor(x), m).data
        assert np.allclose(np.exp(lp)[mask if m is not None else np.ones_like(mask)],
                           p[mask if m is not None else np.ones_like(mask)])


def test_batch_norm_eval_is_fixed_affine():
    rng = np.random.default_rng(6)
    g, b = Tensor(rng.normal(size=4)), Tensor(rng.normal(size=4))
    mean, var = rng.normal(size=4), rng.random(4) + 0.5
    x1, x2 = rng.normal(size=(5, 4)), rng.normal(size=(3, 4))
    scale = g.data / np.sqrt(var + 1e-5)
    for x in (x1, x2):
        out = ops.batch_norm(Tensor(x), g, b, mean.copy(), var.copy(), False).data
        assert np.allclose(out, (x - mean) * scale + b.data)


def test_batch_norm_training_updates_running_stats():
    rng = np.random.default_rng(7)
    x = rng.normal(loc=3.0, size=(50, 2))
    mean, var = np.zeros(2), np.ones(2)
    out = ops.batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), mean, var, True).data
    assert np.allclose(out.mean(axis=0), 0.0, atol=1e-12)
    assert np.all(mean > 0.1)


def test_dropout_modes():
    x = Tensor(np.ones((100, 10)))
    assert ops.dropout(x, 0.5, None, False) is x or np.array_equal(ops.dropout(x, 0.5, None, False).data, x.data)
    out = ops.dropout(x, 0.5, np.random.default_rng(0), True).data
    assert set(np.unique(out)) <= {0.0, 2.0}
    assert 0.4 < np.mean(out == 0.0) < 0.6


def _store(seed=0):
    s = ParamStore(seed)
    s.linear("lin", 3, 2)
    s.add("v", np.arange(5.0))
    s.buffer("bn.mean", np.ones(2))
    return s


def test_checkpoint_round_trip_is_byte_identical(tmp_path):
    s = _store()
    for p in s.params.values():
        p.grad = np.ones_like(p.data)
    AdamW(s).step()
    a = s.save(tmp_path / "a.ckpt", {"note": "x"}).read_bytes()
    t = _store(99)
    meta = t.load(tmp_path / "a.ckpt")
    b = t.save(tmp_path / "b.ckpt", meta).read_bytes()
    assert a == b
    assert read_metadata(tmp_path / "b.ckpt") == {"note": "x"}
    assert all(np.array_equal(s.params[k].data, t.params[k].data) for k in s.params)
    assert t.step_count == 1


def test_checkpoint_integrity(tmp_path):
    data = bytearray(_store().to_bytes())
    data[-40] ^= 1
    with pytest.raises(CheckpointError):
        _store().load_bytes(bytes(data))
    with pytest.raises(CheckpointError):
        _store().load_bytes(b"not a checkpoint at all" * 4)
    other = ParamStore(0)
    other.add("w", np.ones(2))
    with pytest.raises(CheckpointError):
        other.load_bytes(_store().to_bytes())


def test_duplicate_names_rejected():
    s = ParamStore()
    s.add("w", np.ones(1))
    with pytest.raises(ConfigError):
        s.add("w", np.ones(1))


def test_adamw_first_step_closed_form():
    s = ParamStore()
    w = s.add("w", np.array([1.0, -2.0, 0.5]))
    w.grad = np.array([0.3, -4.0, 0.0])
    AdamW(s, lr=0.1, weight_decay=0.01).step()
    # bias-corrected moments equal g and g^2 after one step
    g = np.array([0.3, -4.0, 0.0])
    expected = np.array([1.0, -2.0, 0.5]) * (1 - 0.1 * 0.01) - 0.1 * g / (np.abs(g) + 1e-8)
    assert np.allclose(w.data, expected, atol=1e-12)


def test_adamw_minimizes_quadratic():
    s = ParamStore()
    w = s.add("w", np.array([3.0, -2.0]))
    opt = AdamW(s, lr=0.05, weight_decay=0.0)
    for _ in range(500):
        with Tape() as tape:
            loss = ops.sum(ops.mul(w, w))
        s.zero_grad()
        tape.backward(loss, [w])
        opt.step()
    assert np.all(np.abs(w.data) < 0.05)
