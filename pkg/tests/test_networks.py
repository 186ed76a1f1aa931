"""Network, optimizer, and checkpoint tests."""

import numpy as np
import pytest

import aif.autodiff as ad
from aif.autodiff import Tape, Var
from aif.checkpoint import load_checkpoint, save_checkpoint
from aif.errors import ContractError, FormatError
from aif.gaussian import VARIANCE_FLOOR, log_prob
from aif.networks import GaussianMLP
from aif.optim import Adam, grad_check

# Frozen with mpmath: theta0=1.0, grad 0.5 each step, lr 1e-3, default betas.
ADAM_STEP1 = 0.99900000002
ADAM_STEP2 = 0.99800000004


def test_shapes_and_determinism():
    net = GaussianMLP(3, 2, hidden=(8, 8), seed=11)
    same = GaussianMLP(3, 2, hidden=(8, 8), seed=11)
    other = GaussianMLP(3, 2, hidden=(8, 8), seed=12)
    for p, q in zip(net.parameters(), same.parameters()):
        np.testing.assert_array_equal(p.value, q.value)
    assert any(not np.array_equal(p.value, q.value)
               for p, q in zip(net.parameters(), other.parameters()))
    assert [p.value.shape for p in net.parameters()] == [
        (3, 8), (8,), (8, 8), (8,), (8, 2), (2,), (8, 2), (2,)]
    assert net.parameter_names() == ["W0", "b0", "W1", "b1",
                                     "W_mean", "b_mean", "W_var", "b_var"]


def test_biases_start_at_zero_weights_in_glorot_range():
    net = GaussianMLP(4, 1, hidden=(16,), seed=0)
    np.testing.assert_array_equal(net.layers[0][1].value, np.zeros(16))
    limit = np.sqrt(6.0 / (4 + 16))
    w = net.layers[0][0].value
    assert np.all(np.abs(w) <= limit)
    assert w.std() > 0


def test_forward_single_and_batch_agree():
    net = GaussianMLP(3, 2, hidden=(8,), seed=1)
    x = np.random.default_rng(0).standard_normal((5, 3))
    batch = net.forward(x)
    for i in range(5):
        single = net.forward(x[i])
        np.testing.assert_allclose(single.mean_value, batch.mean_value[i])
        np.testing.assert_allclose(single.variance_value, batch.variance_value[i])


def test_variance_always_positive():
    net = GaussianMLP(2, 2, hidden=(4,), seed=2)
    x = np.random.default_rng(1).standard_normal((100, 2)) * 50.0
    out = net.forward(x)
    assert np.all(out.variance_value >= VARIANCE_FLOOR)


def test_taped_forward_matches_numpy_forward():
    net = GaussianMLP(3, 2, hidden=(8, 8), seed=3)
    x = np.random.default_rng(2).standard_normal((4, 3))
    fast = net.forward(x)
    taped = net.forward(x, tape=Tape())
    np.testing.assert_allclose(ad.value_of(taped.mean), fast.mean_value)
    np.testing.assert_allclose(ad.value_of(taped.variance), fast.variance_value)


def test_input_dimension_checked():
    net = GaussianMLP(3, 1, hidden=(4,))
    with pytest.raises(ContractError):
        net.forward(np.zeros(4))


def test_network_gradients_finite_difference():
    net = GaussianMLP(2, 2, hidden=(5,), seed=4)
    x = np.array([[0.3, -0.7], [1.1, 0.2]])
    target = np.array([[0.5, 0.1], [-0.2, 0.4]])

    def build_loss():
        tape = Tape()
        out = net.forward(Var(x, tape), tape=tape)
        return -ad.vsum(log_prob(target, out))

    assert grad_check(build_loss, net.parameters()) < 1e-6


def test_frozen_forward_leaves_parameters_off_tape():
    net = GaussianMLP(2, 1, hidden=(4,), seed=5)
    tape = Tape()
    x = Var(np.array([[0.5, -0.5]]), tape)
    out = net.forward(x, tape=tape, frozen=True)
    tape.backward(ad.vsum(out.mean))
    assert all(p.grad is None for p in net.parameters())
    assert x.grad is not None
    assert np.any(x.grad != 0)


def test_frozen_and_unfrozen_values_agree():
    net = GaussianMLP(2, 1, hidden=(4,), seed=6)
    x = np.array([[0.1, 0.9]])
    tape = Tape()
    frozen = net.forward(Var(x, tape), tape=tape, frozen=True)
    np.testing.assert_allclose(ad.value_of(frozen.mean), net.forward(x).mean_value)


def test_adam_matches_frozen_trajectory():
    p = Var(np.array([1.0]))
    opt = Adam([p], lr=1e-3)
    opt.step([np.array([0.5])])
    assert p.value[0] == pytest.approx(ADAM_STEP1, abs=1e-12)
    opt.step([np.array([0.5])])
    assert p.value[0] == pytest.approx(ADAM_STEP2, abs=1e-12)


def test_adam_uses_param_grads_when_not_given():
    p = Var(np.array([1.0]))
    p.grad = np.array([0.5])
    opt = Adam([p])
    opt.step()
    assert p.value[0] == pytest.approx(ADAM_STEP1, abs=1e-12)
    opt.zero_grad()
    assert p.grad is None


def test_adam_converges_on_quadratic():
    p = Var(np.array([5.0, -3.0]))
    opt = Adam([p], lr=0.05)
    for _ in range(2000):
        opt.step([2.0 * p.value])
    np.testing.assert_allclose(p.value, 0.0, atol=1e-4)


def test_adam_rejects_mismatched_grads():
    p = Var(np.zeros(2))
    opt = Adam([p])
    with pytest.raises(ContractError):
        opt.step([np.zeros(3)])
    with pytest.raises(ContractError):
        opt.step([np.zeros(2), np.zeros(2)])


def test_grad_check_flags_wrong_gradients():
    # A deliberately broken gradient must produce a large reported error.
    w = Var(np.array([0.7]))

    def build_loss():
        tape = Tape()
        x = Var(np.array([2.0]), tape)
        out = ad.vsum(w * x)

        # Sabotage: double the recorded adjoint contribution.
        def bad():
            w._add_grad(out.grad * x.value)

        tape.record(bad)
        return out

    assert grad_check(build_loss, [w]) > 0.3


def test_checkpoint_round_trip(tmp_path):
    arrays = [("a", np.arange(6, dtype=np.float64).reshape(2, 3)),
              ("b", np.array([1.5]))]
    meta = {"kind": "test", "note": "x"}
    path = tmp_path / "net.aifnet"
    save_checkpoint(path, meta, arrays)
    meta2, loaded = load_checkpoint(path)
    assert meta2 == meta
    np.testing.assert_array_equal(loaded["a"], arrays[0][1])
    np.testing.assert_array_equal(loaded["b"], arrays[1][1])
    save_checkpoint(path, meta, arrays)
    assert path.read_bytes() == path.read_bytes()


def test_checkpoint_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.aifnet"
    path.write_bytes(b"NOTMAGIC 9\n{}\n")
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_checkpoint_rejects_truncation(tmp_path):
    path = tmp_path / "trunc.aifnet"
    save_checkpoint(path, {"kind": "t"}, [("a", np.ones(8))])
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_network_checkpoint_round_trip(tmp_path):
    net = GaussianMLP(3, 2, hidden=(4, 4), seed=9)
    path = tmp_path / "mlp.aifnet"
    save_checkpoint(path, {"kind": "mlp", "net": net.spec_meta()},
                    net.named_arrays("n/"))
    meta, arrays = load_checkpoint(path)
    restored = GaussianMLP.from_meta(meta["net"], arrays, "n/")
    x = np.random.default_rng(3).standard_normal((2, 3))
    np.testing.assert_array_equal(restored.forward(x).mean_value,
                                  net.forward(x).mean_value)
