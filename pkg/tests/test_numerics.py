import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from scdem import numerics as nx
from scdem.errors import ConfigurationError, ContractError, DimensionError
from scdem.numerics import Tensor

from gradcheck import check_grad


# -- affine ---------------------------------------------------------------

@pytest.mark.parametrize("x, W, b, expected", [
    ([[1, 2]], [[1, 0], [0, 1]], [0, 0], [[1, 2]]),
    ([[1, 1]], [[2, 3], [4, 5]], [1, 1], [[7, 9]]),
    ([[0, 0]], [[3, -1], [8, 2]], [5, 5], [[5, 5]]),
])
def test_affine_examples(x, W, b, expected):
    out = nx.affine(Tensor(x), Tensor(W), Tensor(b))
    np.testing.assert_allclose(out.data, expected)


def test_affine_shape_mismatch():
    with pytest.raises(DimensionError):
        nx.affine(Tensor([[1.0, 2.0, 3.0]]), Tensor(np.eye(2)), Tensor([0.0, 0.0]))


# -- activation -----------------------------------------------------------

def test_relu_and_tanh():
    np.testing.assert_array_equal(nx.activation(Tensor([-1.0, 0.0, 2.0]), "relu").data, [0, 0, 2])
    assert nx.activation(Tensor([0.0]), "tanh").data[0] == 0.0


def test_gelu_matches_erf_formula():
    for v in (-2.5, -0.3, 0.0, 1.0, 3.7):
        expected = 0.5 * v * (1 + math.erf(v / math.sqrt(2)))
        assert nx.activation(Tensor([v]), "gelu").data[0] == pytest.approx(expected, abs=1e-15)
    assert nx.activation(Tensor([1.0]), "gelu").data[0] == pytest.approx(0.8413, abs=1e-4)


def test_unknown_activation():
    with pytest.raises(ConfigurationError):
        nx.activation(Tensor([1.0]), "swish")


# -- softmax / losses -----------------------------------------------------

def test_softmax_examples():
    np.testing.assert_allclose(nx.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    e = math.exp(1.0)
    np.testing.assert_allclose(nx.softmax(Tensor([1.0, 0.0])).data, [e / (e + 1), 1 / (e + 1)], rtol=1e-14)
    np.testing.assert_allclose(nx.softmax(Tensor([5.0, 5.0, 5.0])).data, [1 / 3] * 3, rtol=1e-14)


def test_softmax_is_stable_for_large_logits():
    out = nx.softmax(Tensor([[1000.0, 0.0], [-1000.0, -1000.0]])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out[1], [0.5, 0.5])


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_rows_and_shift(z, c):
    s = nx.softmax(Tensor(z)).data
    assert np.all(s >= 0)
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)
    shifted = nx.softmax(Tensor(z + c)).data
    np.testing.assert_array_equal(np.argmax(s, 1), np.argmax(shifted, 1))


def test_cross_entropy_examples():
    perfect = nx.cross_entropy(Tensor([[1.0, 0.0, 0.0]]), [0]).item()
    assert 0 <= perfect <= 2.8e-11
    assert nx.cross_entropy(Tensor([[0.7, 0.3]]), [0]).item() == pytest.approx(-math.log(0.7), abs=1e-12)
    assert nx.cross_entropy(Tensor([[0.25] * 4, [0.25] * 4]), [1, 3]).item() == pytest.approx(math.log(4))


def test_cross_entropy_label_out_of_range():
    with pytest.raises(IndexError):
        nx.cross_entropy(Tensor([[0.5, 0.5]]), [2])


def test_kl_examples():
    assert nx.kl_divergence(Tensor([0.2, 0.8]), Tensor([0.2, 0.8])).item() == 0.0
    expected = 0.7 * math.log(0.7 / 0.5) + 0.3 * math.log(0.3 / 0.5)
    assert nx.kl_divergence(Tensor([0.7, 0.3]), Tensor([0.5, 0.5])).item() == pytest.approx(expected, abs=1e-14)
    assert expected == pytest.approx(0.08228, abs=1e-5)
    assert nx.kl_divergence(Tensor([1.0, 0.0]), Tensor([0.5, 0.5])).item() == pytest.approx(math.log(2))


def test_kl_length_mismatch():
    with pytest.raises(DimensionError):
        nx.kl_divergence(Tensor([0.5, 0.5]), Tensor([1 / 3] * 3))


@settings(max_examples=80, deadline=None)
@given(arrays(np.float64, 4, elements=st.floats(-8, 8)), arrays(np.float64, 4, elements=st.floats(-8, 8)))
def test_kl_nonnegative_and_zero_iff_equal(a, b):
    p, q = nx.softmax(Tensor(a)), nx.softmax(Tensor(b))
    kl = nx.kl_divergence(p, q).item()
    assert kl >= -1e-9
    assert nx.kl_divergence(p, p).item() == 0.0
    if np.abs(p.data - q.data).max() > 1e-3:
        assert kl > 0


def test_entropy_examples():
    assert nx.entropy(Tensor([0.0, 1.0, 0.0])).item() == 0.0
    assert nx.entropy(Tensor([0.25] * 4)).item() == pytest.approx(math.log(4))
    expected = -(0.7 * math.log(0.7) + 0.3 * math.log(0.3))
    assert nx.entropy(Tensor([0.7, 0.3])).item() == pytest.approx(expected, abs=1e-14)
    assert expected == pytest.approx(0.61086, abs=1e-5)


# -- concat ----------------------------------------------------------------

def test_concat():
    a, b = Tensor(np.ones((4, 8))), Tensor(np.zeros((4, 8)))
    assert nx.concat([a, b]).shape == (4, 16)
    assert nx.concat([a]) is a
    np.testing.assert_array_equal(nx.concat([Tensor([[1.0, 2.0]]), Tensor([[3.0]])]).data, [[1, 2, 3]])
    with pytest.raises(DimensionError):
        nx.concat([Tensor(np.ones((2, 1))), Tensor(np.ones((3, 1)))])


# -- backward ---------------------------------------------------------------

def test_backward_linear_sum():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    nx.backward(nx.sum(x))
    np.testing.assert_array_equal(x.grad, [1, 1, 1])


def test_backward_softmax_ce_composite():
    z = Tensor([[1.0, 0.0]], requires_grad=True)
    nx.backward(nx.cross_entropy(nx.softmax(z), [0]))
    s = math.exp(1) / (math.exp(1) + 1)
    np.testing.assert_allclose(z.grad[0], [s - 1, 1 - s], rtol=1e-10)
    np.testing.assert_allclose(z.grad[0], [-0.26894, 0.26894], atol=1e-5)


def test_backward_constant_loss_gives_zero_grads():
    x = Tensor([1.0, 2.0], requires_grad=True)
    nx.backward(Tensor(3.0), wrt=[x])
    np.testing.assert_array_equal(x.grad, [0, 0])


def test_backward_rejects_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        nx.backward(nx.scale(x, 2.0))


def test_gradients_accumulate_across_shared_paths():
    x = Tensor([2.0], requires_grad=True)
    nx.backward(nx.sum(x * x + x))
    np.testing.assert_allclose(x.grad, [5.0])


@pytest.mark.parametrize("kind", ["relu", "gelu", "tanh"])
def test_activation_gradients(kind, rng):
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    w = rng.normal(size=(3, 4))
    assert check_grad(lambda x: nx.sum(nx.activation(x, kind) * w), [x]) < 1e-6


def test_weighted_sum_and_stack_gradients(rng):
    a = Tensor(rng.normal(size=3), requires_grad=True)
    xs = [Tensor(rng.normal(size=(2, 4)), requires_grad=True) for _ in range(3)]
    w = rng.normal(size=(2, 4))
    assert check_grad(lambda a, *xs: nx.sum(nx.weighted_sum(a, xs) * w), [a, *xs]) < 1e-7
    assert check_grad(lambda *xs: nx.sum(nx.stack([nx.mean(x) for x in xs]) * a.data), xs) < 1e-7


# -- optimizer ---------------------------------------------------------------

def _params(**values):
    ps = nx.ParamSet()
    for name, (v, trainable) in values.items():
        ps.add(name, Tensor(v, requires_grad=trainable), trainable)
    return ps


def test_adam_zero_grad_leaves_params():
    ps = _params(w=([1.0, -2.0], True))
    ps["w"].grad = np.zeros(2)
    nx.adam_step(ps, nx.AdamState())
    np.testing.assert_array_equal(ps["w"].data, [1.0, -2.0])


def test_adam_first_step():
    ps = _params(w=([0.0], True))
    ps["w"].grad = np.ones(1)
    state = nx.AdamState(lr=1e-3)
    nx.adam_step(ps, state)
    # bias-corrected moments are both 1 after one step with g = 1
    assert ps["w"].data[0] == pytest.approx(-1e-3 / (1.0 + 1e-8), abs=1e-18)
    assert ps["w"].data[0] == pytest.approx(-9.99999995e-4, abs=1e-11)
    assert state.t == 1
    assert ps["w"].grad is None


def test_adam_skips_frozen_entries():
    ps = _params(w=([1.0], True), frozen=([3.0], False))
    ps["w"].grad = np.ones(1)
    ps["frozen"].grad = np.full(1, 100.0)
    nx.adam_step(ps, nx.AdamState())
    assert ps["frozen"].data[0] == 3.0


def test_adam_requires_grads():
    ps = _params(w=([1.0], True))
    with pytest.raises(ContractError):
        nx.adam_step(ps, nx.AdamState())


def test_paramset_names_unique_and_ordered():
    ps = _params(b=([1.0], True), a=([2.0], False))
    assert [n for n, _ in ps.items()] == ["b", "a"]
    with pytest.raises(ConfigurationError):
        ps.add("a", Tensor([0.0]))


def test_determinism(rng):
    def run():
        r = np.random.default_rng(5)
        x = Tensor(r.normal(size=(6, 4)), requires_grad=True)
        W = Tensor(r.normal(size=(4, 3)), requires_grad=True)
        loss = nx.cross_entropy(nx.softmax(nx.affine(x, W, Tensor(np.zeros(3)))), [0, 1, 2, 0, 1, 2])
        nx.backward(loss)
        return loss.data.tobytes(), W.grad.tobytes()
    assert run() == run()
