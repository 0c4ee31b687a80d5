import numpy as np
import pytest

from evsnn import autodiff as ad
from evsnn.autodiff import Tensor
from evsnn.fusion import EguLayer, EgruLayer

from conftest import check_gradients


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def param_count(layer):
    return sum(t.size for _, t in layer.parameters())


def egu_oracle(layer, s_seq):
    """Numpy loop re-implementation of the gated-unit recurrence."""
    c = np.zeros((s_seq.shape[1], layer.hidden))
    e = np.zeros_like(c)
    out = []
    for s in s_seq.astype(np.float64):
        u = sigmoid(s @ layer.w_u.data.T.astype(np.float64) + layer.b_u.data)
        z = s @ layer.w_z.data.T.astype(np.float64) + layer.b_z.data
        c = u * c + (1 - u) * z - e
        e = c * (c >= layer.theta.data)
        out.append(e.copy())
    return np.stack(out)


def egru_oracle(layer, s_seq):
    c = np.zeros((s_seq.shape[1], layer.hidden))
    e = np.zeros_like(c)
    out = []
    w = {k: getattr(layer, k).data.astype(np.float64) for k in
         ("w_u", "w_r", "w_z", "r_u", "r_r", "r_z", "b_u", "b_r", "b_z")}
    for s in s_seq.astype(np.float64):
        u = sigmoid(s @ w["w_u"].T + w["b_u"] + c @ w["r_u"].T)
        r = sigmoid(s @ w["w_r"].T + w["b_r"] + c @ w["r_r"].T)
        z = np.tanh(s @ w["w_z"].T + w["b_z"] + (r * c) @ w["r_z"].T)
        c = u * c + (1 - u) * z - e
        e = c * (c >= layer.theta.data)
        out.append(e.copy())
    return np.stack(out)


def run(layer, s_seq):
    state = layer.make_state(s_seq.shape[1])
    out = []
    for s in s_seq:
        state, e = layer.step(state, Tensor(s))
        out.append(e.data.copy())
    return np.stack(out), state


class TestEgu:
    def test_matches_loop_oracle(self, rng):
        layer = EguLayer(5, 4, rng=np.random.default_rng(3))
        s_seq = rng.standard_normal((12, 2, 5)).astype(np.float32)
        got, _ = run(layer, s_seq)
        np.testing.assert_allclose(got, egu_oracle(layer, s_seq), atol=1e-4)

    def test_events_are_sparse_below_threshold(self, rng):
        layer = EguLayer(5, 16, theta_init=0.5, rng=np.random.default_rng(3))
        s_seq = rng.standard_normal((10, 3, 5)).astype(np.float32)
        got, state = run(layer, s_seq)
        # every emitted value is either exactly zero or >= theta
        nz = got[got != 0.0]
        assert np.all(nz >= 0.5)
        assert (got == 0.0).mean() > 0.3

    def test_event_value_is_full_state(self, rng):
        layer = EguLayer(3, 2, theta_init=-10.0, rng=np.random.default_rng(1))
        s_seq = rng.standard_normal((1, 1, 3)).astype(np.float32)
        got, state = run(layer, s_seq)
        np.testing.assert_allclose(got[0], state.c.data, atol=1e-6)

    def test_subtractive_feedback_damps_next_step(self):
        # constant drive: after a large event the next state must drop by the
        # emitted amount relative to a unit that did not fire
        layer = EguLayer(1, 1, theta_init=0.0, rng=np.random.default_rng(0))
        layer.w_u.data[:] = 0.0  # u = 0.5 constant
        layer.w_z.data[:] = 1.0
        s = np.array([[4.0]], dtype=np.float32)
        state = layer.make_state(1)
        state, e1 = layer.step(state, Tensor(s))
        c1 = state.c.data.copy()
        state, e2 = layer.step(state, Tensor(s))
        # c2 = 0.5 c1 + 0.5 z - e1 with e1 == c1 (theta=0, c1 > 0)
        expected = 0.5 * c1 + 0.5 * 4.0 - e1.data
        np.testing.assert_allclose(state.c.data, expected, atol=1e-5)

    def test_theta_trainable_flag(self):
        on = EguLayer(4, 3, theta_trainable=True)
        off = EguLayer(4, 3, theta_trainable=False)
        assert "theta" in [n for n, _ in on.parameters()]
        assert "theta" not in [n for n, _ in off.parameters()]
        assert param_count(on) - param_count(off) == 3

    def test_gradients_in_always_on_regime(self, rng):
        # theta << 0 keeps the gate open everywhere, so the recurrence is
        # smooth and finite differences are exact.
        layer = EguLayer(3, 2, theta_init=-100.0, theta_trainable=False,
                         rng=np.random.default_rng(4))
        s = Tensor(rng.standard_normal((4, 2, 3)) * 0.5, requires_grad=True)

        def loss():
            state = layer.make_state(2)
            total = None
            for t in range(4):
                state, e = layer.step(state, ad.index_axis0(s, [t]).reshape(2, 3))
                term = ad.tsum(e * e)
                total = term if total is None else total + term
            return total

        check_gradients(loss, [s, layer.w_u, layer.w_z, layer.b_u, layer.b_z],
                        eps=1e-2, rtol=1e-2)

    def test_theta_receives_gradient(self, rng):
        layer = EguLayer(3, 2, rng=np.random.default_rng(4))
        state = layer.make_state(1)
        state, e = layer.step(state, Tensor(rng.standard_normal((1, 3))))
        ad.backward(ad.tsum(e * e))
        assert layer.theta.grad is not None
        assert layer.theta.grad.shape == (2,)


class TestEgru:
    def test_matches_loop_oracle(self, rng):
        layer = EgruLayer(5, 4, rng=np.random.default_rng(6))
        s_seq = rng.standard_normal((12, 2, 5)).astype(np.float32)
        got, _ = run(layer, s_seq)
        np.testing.assert_allclose(got, egru_oracle(layer, s_seq), atol=1e-4)

    def test_candidate_is_bounded(self, rng):
        # tanh candidate plus event subtraction keeps states from exploding
        layer = EgruLayer(4, 8, rng=np.random.default_rng(1))
        s_seq = (rng.standard_normal((200, 1, 4)) * 5).astype(np.float32)
        got, state = run(layer, s_seq)
        assert np.all(np.abs(state.c.data) < 10.0)

    def test_gradients_in_always_on_regime(self, rng):
        layer = EgruLayer(3, 2, theta_init=-100.0, theta_trainable=False,
                          rng=np.random.default_rng(4))
        s = Tensor(rng.standard_normal((3, 2, 3)) * 0.5, requires_grad=True)

        def loss():
            state = layer.make_state(2)
            total = None
            for t in range(3):
                state, e = layer.step(state, ad.index_axis0(s, [t]).reshape(2, 3))
                term = ad.tsum(e * e)
                total = term if total is None else total + term
            return total

        check_gradients(
            loss,
            [s, layer.w_u, layer.w_r, layer.w_z, layer.r_u, layer.r_r,
             layer.r_z, layer.b_u, layer.b_r, layer.b_z],
            eps=1e-2, rtol=1e-2)


class TestParameterBudget:
    def test_exact_counts(self):
        f, h = 10, 6
        egu = EguLayer(f, h)
        egru = EgruLayer(f, h)
        assert param_count(egu) == 2 * (f * h + h) + h
        assert param_count(egru) == 3 * (f * h + h) + 3 * h * h + h

    def test_egu_is_about_a_third_of_egru_at_scale(self):
        f = h = 256
        ratio = param_count(EguLayer(f, h)) / param_count(EgruLayer(f, h))
        assert ratio <= 0.34
