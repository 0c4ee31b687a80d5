import numpy as np
import pytest

from evsnn import autodiff as ad
from evsnn.autodiff import Tensor
from evsnn.neurons import (
    DECAY_INIT,
    SPIKE_THRESHOLD,
    AdlifLayer,
    LiReadout,
    PlifLayer,
    adlif_step,
    li_step,
    plif_step,
)

from conftest import check_gradients


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def plif_oracle(x_seq, alpha, threshold=1.0):
    """Scalar numpy loop for PLIF dynamics with multiplicative reset."""
    v = np.zeros_like(x_seq[0])
    spikes = []
    for x in x_seq:
        v = alpha * v + (1 - alpha) * x
        s = (v >= threshold).astype(np.float64)
        v = v * (1 - s)
        spikes.append(s)
    return np.stack(spikes)


def adlif_oracle(x_seq, alpha, beta, a, b, threshold=1.0, post_reset=True):
    v = np.zeros_like(x_seq[0])
    w = np.zeros_like(x_seq[0])
    spikes = []
    for x in x_seq:
        v = alpha * v + (1 - alpha) * (x - w)
        s = (v >= threshold).astype(np.float64)
        v_post = v * (1 - s)
        u = v_post if post_reset else v
        w = beta * w + (1 - beta) * (a * u + b * s)
        v = v_post
        spikes.append(s)
    return np.stack(spikes)


class TestPlif:
    def test_matches_loop_oracle(self, rng):
        layer = PlifLayer()
        x_seq = rng.uniform(0, 2, (20, 3, 4)).astype(np.float32)
        state = layer.make_state((3, 4))
        got = []
        for x in x_seq:
            state, s = layer.step(state, Tensor(x))
            got.append(s.data)
        oracle = plif_oracle(x_seq.astype(np.float64), DECAY_INIT)
        np.testing.assert_allclose(np.stack(got), oracle, atol=1e-5)

    def test_decay_is_sigmoid_of_raw(self):
        layer = PlifLayer(decay_init=0.7)
        state = layer.make_state((1,))
        assert np.isclose(state.alpha.item(), 0.7, atol=1e-6)

    def test_multiplicative_reset_zeroes_membrane(self):
        layer = PlifLayer()
        state = layer.make_state((1,))
        state, s = layer.step(state, Tensor(np.array([100.0])))
        assert s.data[0] == 1.0
        assert state.v.data[0] == 0.0

    def test_boundary_fires(self):
        # drive the membrane exactly to threshold: (1 - alpha) x = 1
        layer = PlifLayer(decay_init=0.5)
        state = layer.make_state((1,))
        state, s = layer.step(state, Tensor(np.array([2.0])))
        assert s.data[0] == 1.0

    def test_subthreshold_bptt_gradient(self, rng):
        # With drive far below threshold the hard step is constant, so central
        # differences are valid for the whole unrolled graph.
        layer = PlifLayer()
        x = Tensor(rng.uniform(0.0, 0.3, (6, 2, 3)), requires_grad=True)
        weights = Tensor(rng.standard_normal((2, 3)))

        def loss():
            state = layer.make_state((2, 3))
            total = None
            for t in range(6):
                state, _ = layer.step(state, ad.index_axis0(x, [t]).reshape(2, 3))
                term = ad.tsum(state.v * weights)
                total = term if total is None else total + term
            return total

        check_gradients(loss, [x, layer.raw_decay], eps=1e-2, rtol=1e-2)


class TestAdlif:
    def test_matches_loop_oracle(self, rng):
        layer = AdlifLayer(channels=3, rng=np.random.default_rng(5))
        x_seq = rng.uniform(0, 2.5, (25, 2, 3)).astype(np.float32)
        state = layer.make_state((2, 3))
        got = []
        for x in x_seq:
            state, s = layer.step(state, Tensor(x))
            got.append(s.data)
        oracle = adlif_oracle(
            x_seq.astype(np.float64),
            sigmoid(layer.raw_alpha.data.astype(np.float64)),
            sigmoid(layer.raw_beta.data.astype(np.float64)),
            layer.a.data.astype(np.float64),
            layer.b.data.astype(np.float64),
        )
        np.testing.assert_allclose(np.stack(got), oracle, atol=1e-5)

    def test_pre_reset_coupling_variant(self, rng):
        layer = AdlifLayer(channels=2, coupling_post_reset=False,
                           rng=np.random.default_rng(5))
        x_seq = rng.uniform(0, 2.5, (15, 1, 2)).astype(np.float32)
        state = layer.make_state((1, 2))
        got = []
        for x in x_seq:
            state, s = layer.step(state, Tensor(x))
            got.append(s.data)
        oracle = adlif_oracle(
            x_seq.astype(np.float64),
            sigmoid(layer.raw_alpha.data.astype(np.float64)),
            sigmoid(layer.raw_beta.data.astype(np.float64)),
            layer.a.data.astype(np.float64),
            layer.b.data.astype(np.float64),
            post_reset=False,
        )
        np.testing.assert_allclose(np.stack(got), oracle, atol=1e-5)

    def test_adaptation_suppresses_tonic_firing(self):
        # Under constant suprathreshold drive the adaptation current must
        # reduce the firing rate relative to PLIF with the same decay.
        T = 200
        x = np.full((T, 1, 1), 1.6, dtype=np.float32)
        plif = PlifLayer()
        adlif = AdlifLayer(channels=1, rng=np.random.default_rng(0))
        adlif.a.data[:] = 0.8
        adlif.b.data[:] = 1.5
        sp = ss = 0.0
        state_p = plif.make_state((1, 1))
        state_a = adlif.make_state((1, 1))
        for t in range(T):
            state_p, s1 = plif.step(state_p, Tensor(x[t]))
            state_a, s2 = adlif.step(state_a, Tensor(x[t]))
            sp += s1.data.sum()
            ss += s2.data.sum()
        assert ss < sp

    def test_project_clips_couplings(self):
        layer = AdlifLayer(channels=4)
        layer.a.data[:] = [-0.5, 0.5, 1.5, 0.0]
        layer.b.data[:] = [-1.0, 1.0, 2.5, 3.0]
        layer.project()
        np.testing.assert_array_equal(layer.a.data, [0.0, 0.5, 1.0, 0.0])
        np.testing.assert_array_equal(layer.b.data, [0.0, 1.0, 2.0, 2.0])

    def test_per_channel_parameters(self):
        layer = AdlifLayer(channels=7)
        assert layer.raw_alpha.shape == (7,)
        assert layer.raw_beta.shape == (7,)
        assert layer.a.shape == (7,)
        assert layer.b.shape == (7,)

    def test_channel_broadcast_over_spatial_dims(self):
        layer = AdlifLayer(channels=3)
        state = layer.make_state((2, 3, 5, 5))
        assert state.alpha.shape == (1, 3, 1, 1)
        state, s = layer.step(state, Tensor(np.ones((2, 3, 5, 5))))
        assert s.shape == (2, 3, 5, 5)

    def test_subthreshold_bptt_gradient(self, rng):
        layer = AdlifLayer(channels=2, rng=np.random.default_rng(3))
        x = Tensor(rng.uniform(0.0, 0.3, (5, 1, 2)), requires_grad=True)

        def loss():
            state = layer.make_state((1, 2))
            total = None
            for t in range(5):
                state, _ = layer.step(state, ad.index_axis0(x, [t]).reshape(1, 2))
                term = ad.tsum(state.v * state.v)
                total = term if total is None else total + term
            return total

        check_gradients(
            loss, [x, layer.raw_alpha, layer.raw_beta, layer.a],
            eps=1e-2, rtol=2.5e-2)


class TestLiReadout:
    def test_matches_loop_oracle(self, rng):
        layer = LiReadout(6, 4, rng=np.random.default_rng(2))
        e_seq = rng.standard_normal((10, 3, 6)).astype(np.float32)
        state = layer.make_state(3)
        got = []
        for e in e_seq:
            state = layer.step(state, Tensor(e))
            got.append(state.v.data.copy())
        alpha = sigmoid(layer.raw_decay.data.astype(np.float64))
        v = np.zeros((3, 4))
        for t, e in enumerate(e_seq.astype(np.float64)):
            drive = e @ layer.weight.data.T.astype(np.float64) + layer.bias.data
            v = alpha * v + (1 - alpha) * drive
            np.testing.assert_allclose(got[t], v, atol=1e-4)

    def test_never_spikes(self, rng):
        layer = LiReadout(3, 2, rng=np.random.default_rng(1))
        state = layer.make_state(1)
        state = layer.step(state, Tensor(np.full((1, 3), 1000.0)))
        # huge drive, still a smooth membrane value (no reset to zero)
        assert np.all(np.abs(state.v.data) > SPIKE_THRESHOLD)

    def test_end_to_end_gradient(self, rng):
        layer = LiReadout(4, 3, rng=np.random.default_rng(7))
        e = Tensor(rng.standard_normal((6, 2, 4)), requires_grad=True)
        labels = np.array([0, 2])

        def loss():
            state = layer.make_state(2)
            for t in range(6):
                state = layer.step(state, ad.index_axis0(e, [t]).reshape(2, 4))
            return ad.softmax_cross_entropy(state.v, labels)

        check_gradients(
            loss, [e, layer.weight, layer.bias, layer.raw_decay],
            eps=1e-2, rtol=1e-2)

    def test_parameter_names(self):
        layer = LiReadout(3, 2)
        names = [n for n, _ in layer.parameters()]
        assert names == ["weight", "bias", "raw_decay"]
