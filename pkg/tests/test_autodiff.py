import numpy as np
import pytest

from fvk.autodiff import (
    Adam,
    NumericsError,
    Sgd,
    ShapeError,
    Tensor,
    load_checkpoint,
    ops,
    save_checkpoint,
)
from fvk.autodiff.checkpoint import CheckpointError

from conftest import assert_grads_match


def t64(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True, dtype=np.float64)


# ---------------------------------------------------------------------------
# forward definitions

def test_elu_fixed_points():
    x = Tensor([0.0, -40.0, 2.0])
    y = ops.elu(x).data
    assert y[0] == 0.0
    assert abs(y[1] - (-1.0)) < 1e-6  # saturates at -1
    assert y[2] == pytest.approx(2.0)


def test_softmax_uniform_on_constant():
    y = ops.softmax(Tensor([0.0, 0.0, 0.0])).data
    assert np.allclose(y, [1 / 3] * 3)


def test_glu_zero_gate_halves_values():
    a = np.array([[1.0, -2.0, 3.0]], dtype=np.float32)
    z = Tensor(np.concatenate([a, np.zeros_like(a)], axis=1))
    y = ops.glu(z).data
    assert np.allclose(y, 0.5 * a)


def test_glu_rejects_odd_width():
    with pytest.raises(ShapeError):
        ops.glu(Tensor(np.zeros((2, 3))))


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\)"):
        ops.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


# ---------------------------------------------------------------------------
# backward basics

def test_square_gradient():
    x = Tensor(3.0, requires_grad=True, dtype=np.float64)
    ops.square(x).backward()
    assert x.grad == pytest.approx(6.0)


def test_l1_gradient_is_residual_sign():
    x = Tensor(2.0, requires_grad=True, dtype=np.float64)
    y = Tensor(5.0, dtype=np.float64)
    ops.l1_loss(x, y).backward()
    assert x.grad == pytest.approx(-1.0)


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        (x * 2.0).backward()


def test_repeated_backward_accumulates():
    x = Tensor(3.0, requires_grad=True, dtype=np.float64)
    loss = ops.square(x)
    loss.backward()
    loss.backward()
    assert x.grad == pytest.approx(12.0)


def test_tape_replay_is_stable(rng):
    w = t64(rng, 4, 4)
    x = Tensor(rng.standard_normal((2, 4)), dtype=np.float64)
    first = ops.tanh(ops.matmul(x, w)).data.copy()
    loss = ops.mean(ops.square(ops.tanh(ops.matmul(x, w))))
    loss.backward()
    w.zero_grad()
    again = ops.tanh(ops.matmul(x, w)).data
    assert np.array_equal(first, again)


# ---------------------------------------------------------------------------
# finite-difference agreement, layer by layer (widths <= 8)

def test_dense_elu_chain_grads(rng):
    w1, b1 = t64(rng, 5, 8), t64(rng, 8, scale=0.1)
    w2 = t64(rng, 8, 1)
    x = Tensor(rng.standard_normal((3, 5)), dtype=np.float64)

    def build():
        h = ops.elu(ops.add(ops.matmul(x, w1), b1))
        return ops.mean(ops.square(ops.matmul(h, w2)))

    assert_grads_match(build, [w1, b1, w2])


def test_conv1d_glu_residual_grads(rng):
    w = t64(rng, 5, 4, 8, scale=0.4)
    b = t64(rng, 8, scale=0.1)
    x = t64(rng, 2, 7, 4)

    def build():
        y = ops.glu(ops.conv1d(x, w, b))
        return ops.mean(ops.absolute(ops.add(y, x)))

    assert_grads_match(build, [w, b, x])


def test_conv2d_strided_grads(rng):
    w = t64(rng, 4, 3, 5, scale=0.4)
    b = t64(rng, 5, scale=0.1)
    x = t64(rng, 2, 9, 6)

    def build():
        y = ops.relu(ops.conv2d(x, w, b, stride=(2, 2)))
        return ops.mean(ops.square(y))

    assert_grads_match(build, [w, b, x])


def test_softmax_attention_grads(rng):
    q, k, v = t64(rng, 4, 6), t64(rng, 4, 6), t64(rng, 4, 6)

    def build():
        scores = ops.mul(ops.matmul(q, ops.permute(k, (1, 0))), 1 / np.sqrt(6.0))
        w = ops.softmax(scores, axis=-1)
        return ops.mean(ops.absolute(ops.matmul(w, v)))

    assert_grads_match(build, [q, k, v])


def test_gather_rows_grads(rng):
    table = t64(rng, 6, 4)
    idx = np.array([0, 2, 2, 5, 1])
    target = Tensor(rng.standard_normal((5, 4)), dtype=np.float64)

    def build():
        return ops.l1_loss(ops.gather_rows(table, idx), target)

    assert_grads_match(build, [table])


def test_batch_norm_grads(rng):
    gamma = Tensor(np.ones(5) + 0.3 * rng.standard_normal(5), requires_grad=True, dtype=np.float64)
    beta = t64(rng, 5, scale=0.1)
    x = t64(rng, 6, 5)
    running = {"mean": np.zeros(5), "var": np.ones(5)}

    def build():
        y = ops.batch_norm(x, gamma, beta, running, training=True)
        return ops.mean(ops.square(y))

    assert_grads_match(build, [x, gamma, beta])


def test_cross_entropy_grads(rng):
    logits = t64(rng, 4, 6)
    labels = np.array([0, 3, 5, 2])

    def build():
        return ops.cross_entropy_logits(logits, labels)

    assert_grads_match(build, [logits])


def test_sigmoid_ce_grads(rng):
    logits = t64(rng, 8)
    targets = rng.integers(0, 2, size=8).astype(np.float64)

    def build():
        return ops.sigmoid_ce_logits(logits, targets)

    assert_grads_match(build, [logits])


# ---------------------------------------------------------------------------
# gated recurrent step

def _gru_params(rng, cin, ch, dtype=np.float64):
    names = ["wxr", "whr", "br", "wxz", "whz", "bz", "wxn", "whn", "bn"]
    p = {}
    for n in names:
        if n.startswith("wx"):
            p[n] = Tensor(rng.standard_normal((cin, ch)) * 0.4, requires_grad=True, dtype=dtype)
        elif n.startswith("wh"):
            p[n] = Tensor(rng.standard_normal((ch, ch)) * 0.4, requires_grad=True, dtype=dtype)
        else:
            p[n] = Tensor(rng.standard_normal(ch) * 0.1, requires_grad=True, dtype=dtype)
    return p


def test_gru_zero_maps_to_zero(rng):
    p = _gru_params(rng, 3, 4)
    for t in p.values():
        t.data[...] = 0.0
    x = Tensor(np.zeros((2, 3)), dtype=np.float64)
    h = Tensor(np.zeros((2, 4)), dtype=np.float64)
    out = ops.gru_step(x, h, p)
    assert np.allclose(out.data, 0.0)


def test_gru_preserves_state_shape(rng):
    p = _gru_params(rng, 3, 4)
    h = Tensor(np.zeros((2, 4)), dtype=np.float64)
    for t in range(7):
        h = ops.gru_step(Tensor(np.ones((2, 3)), dtype=np.float64), h, p)
        assert h.data.shape == (2, 4)


def test_gru_width_mismatch():
    rng = np.random.default_rng(0)
    p = _gru_params(rng, 3, 4)
    with pytest.raises(ShapeError):
        ops.gru_step(Tensor(np.zeros((2, 5))), Tensor(np.zeros((2, 4))), p)


def test_gru_unrolled_grads(rng):
    p = _gru_params(rng, 3, 4)
    xs = [Tensor(rng.standard_normal((2, 3)), dtype=np.float64) for _ in range(5)]

    def build():
        h = Tensor(np.zeros((2, 4)), dtype=np.float64)
        for x in xs:
            h = ops.gru_step(x, h, p)
        return ops.mean(ops.square(h))

    assert_grads_match(build, list(p.values()))


# ---------------------------------------------------------------------------
# optimizers

def test_sgd_single_step_on_quadratic():
    x = Tensor(1.0, requires_grad=True)
    opt = Sgd({"x": x}, lr=0.1)
    ops.square(x).backward()
    opt.step()
    assert x.data == pytest.approx(0.8)


def test_annealing_schedule():
    x = Tensor(0.0, requires_grad=True)
    opt = Sgd({"x": x}, lr=0.0006, anneal=0.6, anneal_interval=8000)
    opt.step_count = 16000
    assert opt.effective_lr == pytest.approx(0.0006 * 0.6**2)
    assert opt.effective_lr == pytest.approx(0.000216)


def test_descent_matches_closed_form_decay(rng):
    # x_k = x_0 (1 - 2 lr a)^k on f(x) = sum a_i x_i^2
    a = rng.uniform(0.5, 2.0, size=6)
    x0 = rng.standard_normal(6)
    x = Tensor(x0, requires_grad=True, dtype=np.float64)
    coeff = Tensor(a, dtype=np.float64)
    lr, steps = 0.05, 200
    opt = Sgd({"x": x}, lr=lr)
    first = last = None
    for _ in range(steps):
        opt.zero_grad()
        loss = ops.total(ops.mul(coeff, ops.square(x)))
        if first is None:
            first = float(loss.data)
        loss.backward()
        opt.step()
        last = float(ops.total(ops.mul(coeff, ops.square(x))).data)
    expected = x0 * (1 - 2 * lr * a) ** steps
    assert np.allclose(x.data, expected, rtol=1e-8)
    assert last < 0.01 * first


def test_adam_reduces_quadratic_loss(rng):
    x = Tensor(rng.standard_normal(8), requires_grad=True)
    opt = Adam({"x": x}, lr=0.05)
    losses = []
    for _ in range(300):
        opt.zero_grad()
        loss = ops.mean(ops.square(x))
        losses.append(float(loss.data))
        loss.backward()
        opt.step()
    assert losses[-1] < 1e-3 * losses[0]


def test_nan_gradient_names_parameter():
    x = Tensor(1.0, requires_grad=True)
    x.grad = np.array(np.nan, dtype=np.float32)
    opt = Sgd({"badparam": x}, lr=0.1)
    with pytest.raises(NumericsError, match="badparam"):
        opt.step()


def test_training_determinism_bit_identical():
    def run():
        rng = np.random.default_rng(77)
        w = Tensor(rng.standard_normal((4, 4)).astype(np.float32), requires_grad=True)
        x = Tensor(rng.standard_normal((8, 4)).astype(np.float32))
        y = Tensor(rng.standard_normal((8, 4)).astype(np.float32))
        opt = Adam({"w": w}, lr=0.01)
        for _ in range(25):
            opt.zero_grad()
            ops.l1_loss(ops.tanh(ops.matmul(x, w)), y).backward()
            opt.step()
        return w.data.tobytes()

    assert run() == run()


# ---------------------------------------------------------------------------
# checkpoints

def test_checkpoint_round_trip(tmp_path, rng):
    entries = {
        "enc.w": rng.standard_normal((3, 4)).astype(np.float32),
        "enc.b": rng.standard_normal(4).astype(np.float32),
        "meta.scalar": np.float32(2.5),
    }
    path = tmp_path / "model.fvk"
    save_checkpoint(path, entries)
    back = load_checkpoint(path)
    assert set(back) == set(entries)
    for k in entries:
        assert np.array_equal(back[k], np.asarray(entries[k], dtype=np.float32))
    with open(path, "rb") as fh:
        assert fh.read(4) == b"FVK1"


def test_checkpoint_bad_magic(tmp_path):
    p = tmp_path / "junk.fvk"
    p.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(p)


def test_checkpoint_truncated(tmp_path, rng):
    p = tmp_path / "model.fvk"
    save_checkpoint(p, {"w": rng.standard_normal((8, 8)).astype(np.float32)})
    blob = p.read_bytes()
    p.write_bytes(blob[: len(blob) - 12])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(p)
