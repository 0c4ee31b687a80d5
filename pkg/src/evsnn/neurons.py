"""Spiking and non-spiking neuron dynamics as per-timestep state transitions.

All neurons are leaky integrators with trainable decays parametrized through a
sigmoid so the decay always stays in (0, 1):

    PLIF:  v[t] = a * v[t-1] + (1 - a) * x[t], one decay per layer
    adLIF: adds an adaptation variable w with per-channel decays and couplings,
           enabling spike-frequency adaptation and subthreshold oscillation
    LI:    non-spiking readout, one decay per output class

Spiking neurons fire when v crosses the threshold (>= fires) and reset
multiplicatively: v <- v * (1 - s). Gradients flow through every step via the
surrogate spike derivative, enabling backpropagation through time.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import (
    DEFAULT_SURROGATE_SLOPE,
    Tensor,
    heaviside_surrogate,
    linear,
    sigmoid,
)

SPIKE_THRESHOLD = 1.0  # fixed, non-trainable
# tau ~ 2 bins at init; with (1 - alpha)-scaled input and unit-variance
# normalized drive, larger decays leave the layer nearly silent at init.
DECAY_INIT = 0.5


def _logit(p: float) -> float:
    return float(np.log(p / (1.0 - p)))


# ---------------------------------------------------------------------------
# functional step operations


@dataclass
class PlifState:
    v: Tensor
    alpha: Tensor  # sigmoid-transformed decay, broadcastable to v
    threshold: float = SPIKE_THRESHOLD
    surrogate_slope: float = DEFAULT_SURROGATE_SLOPE


@dataclass
class AdlifState:
    v: Tensor
    w: Tensor
    alpha: Tensor  # per-channel membrane decay in (0, 1)
    beta: Tensor  # per-channel adaptation decay in (0, 1)
    a: Tensor  # membrane->adaptation coupling, [0, 1]
    b: Tensor  # spike feedback, [0, 2]
    threshold: float = SPIKE_THRESHOLD
    surrogate_slope: float = DEFAULT_SURROGATE_SLOPE
    coupling_post_reset: bool = True


@dataclass
class LiState:
    v: Tensor
    alpha: Tensor  # per-class decay in (0, 1)
    weight: Tensor
    bias: Tensor


def plif_step(state: PlifState, x: Tensor) -> tuple[PlifState, Tensor]:
    v = state.alpha * state.v + (1.0 - state.alpha) * x
    s = heaviside_surrogate(v, state.threshold, state.surrogate_slope)
    v = v * (1.0 - s)
    return replace(state, v=v), s


def adlif_step(state: AdlifState, x: Tensor) -> tuple[AdlifState, Tensor]:
    v = state.alpha * state.v + (1.0 - state.alpha) * (x - state.w)
    s = heaviside_surrogate(v, state.threshold, state.surrogate_slope)
    v_post = v * (1.0 - s)
    # The spike must exist before the adaptation update (it feeds the b term);
    # the membrane coupling uses the post-reset potential unless configured
    # otherwise.
    u = v_post if state.coupling_post_reset else v
    w = state.beta * state.w + (1.0 - state.beta) * (state.a * u + state.b * s)
    return replace(state, v=v_post, w=w), s


def li_step(state: LiState, e: Tensor) -> LiState:
    drive = linear(e, state.weight, state.bias)
    v = state.alpha * state.v + (1.0 - state.alpha) * drive
    return replace(state, v=v)


# ---------------------------------------------------------------------------
# parameter-owning layers


class PlifLayer:
    """PLIF neuron bank with one trainable decay for the whole layer."""

    def __init__(self, decay_init: float = DECAY_INIT,
                 threshold: float = SPIKE_THRESHOLD,
                 surrogate_slope: float = DEFAULT_SURROGATE_SLOPE):
        self.raw_decay = Tensor(np.full((1,), _logit(decay_init)), requires_grad=True)
        self.threshold = threshold
        self.surrogate_slope = surrogate_slope

    def parameters(self):
        return [("raw_decay", self.raw_decay)]

    def project(self) -> None:
        pass  # sigmoid parametrization needs no projection

    def make_state(self, shape: tuple[int, ...]) -> PlifState:
        return PlifState(
            v=Tensor(np.zeros(shape, dtype=np.float32)),
            alpha=sigmoid(self.raw_decay),
            threshold=self.threshold,
            surrogate_slope=self.surrogate_slope,
        )

    def step(self, state: PlifState, x: Tensor) -> tuple[PlifState, Tensor]:
        return plif_step(state, x)


class AdlifLayer:
    """Heterogeneous adLIF bank: decays and couplings trained per channel."""

    A_RANGE = (0.0, 1.0)
    B_RANGE = (0.0, 2.0)

    def __init__(self, channels: int, decay_init: float = DECAY_INIT,
                 adapt_decay_init: float = DECAY_INIT,
                 threshold: float = SPIKE_THRESHOLD,
                 surrogate_slope: float = DEFAULT_SURROGATE_SLOPE,
                 coupling_post_reset: bool = True,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.channels = channels
        self.raw_alpha = Tensor(
            np.full((channels,), _logit(decay_init)), requires_grad=True
        )
        self.raw_beta = Tensor(
            np.full((channels,), _logit(adapt_decay_init)), requires_grad=True
        )
        self.a = Tensor(rng.uniform(*self.A_RANGE, channels), requires_grad=True)
        self.b = Tensor(rng.uniform(*self.B_RANGE, channels), requires_grad=True)
        self.threshold = threshold
        self.surrogate_slope = surrogate_slope
        self.coupling_post_reset = coupling_post_reset

    def parameters(self):
        return [
            ("raw_alpha", self.raw_alpha),
            ("raw_beta", self.raw_beta),
            ("a", self.a),
            ("b", self.b),
        ]

    def project(self) -> None:
        np.clip(self.a.data, *self.A_RANGE, out=self.a.data)
        np.clip(self.b.data, *self.B_RANGE, out=self.b.data)

    def _channel_view(self, shape: tuple[int, ...], t: Tensor) -> Tensor:
        """Broadcast a per-channel parameter over [N, C, ...] state shapes."""
        view = [1] * len(shape)
        view[1] = self.channels
        return t.reshape(tuple(view))

    def make_state(self, shape: tuple[int, ...]) -> AdlifState:
        zeros = np.zeros(shape, dtype=np.float32)
        return AdlifState(
            v=Tensor(zeros),
            w=Tensor(zeros.copy()),
            alpha=self._channel_view(shape, sigmoid(self.raw_alpha)),
            beta=self._channel_view(shape, sigmoid(self.raw_beta)),
            a=self._channel_view(shape, self.a),
            b=self._channel_view(shape, self.b),
            threshold=self.threshold,
            surrogate_slope=self.surrogate_slope,
            coupling_post_reset=self.coupling_post_reset,
        )

    def step(self, state: AdlifState, x: Tensor) -> tuple[AdlifState, Tensor]:
        return adlif_step(state, x)


class LiReadout:
    """Linear projection plus non-spiking leaky integration per output class."""

    def __init__(self, in_features: int, num_classes: int,
                 decay_init: float = DECAY_INIT,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        bound = 1.0 / np.sqrt(in_features)
        self.num_classes = num_classes
        self.weight = Tensor(
            rng.uniform(-bound, bound, (num_classes, in_features)), requires_grad=True
        )
        self.bias = Tensor(np.zeros((num_classes,)), requires_grad=True)
        self.raw_decay = Tensor(
            np.full((num_classes,), _logit(decay_init)), requires_grad=True
        )

    def parameters(self):
        return [
            ("weight", self.weight),
            ("bias", self.bias),
            ("raw_decay", self.raw_decay),
        ]

    def project(self) -> None:
        pass

    def make_state(self, batch: int) -> LiState:
        return LiState(
            v=Tensor(np.zeros((batch, self.num_classes), dtype=np.float32)),
            alpha=sigmoid(self.raw_decay),
            weight=self.weight,
            bias=self.bias,
        )

    def step(self, state: LiState, e: Tensor) -> LiState:
        return li_step(state, e)
