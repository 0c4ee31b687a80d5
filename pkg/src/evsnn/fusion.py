"""Event-based gated units fusing the concatenated two-stream spike features.

Both units keep an internal state c and emit sparse real-valued ("multi-bit")
events e = c * H(c - theta): zero below the event threshold, the full state
value at or above it. Emitted events are subtracted from the next state
update, so a unit that just fired is damped.

EGRU: update/reset/candidate gates driven by both the input and the internal
state (three input maps + three recurrent maps).
EGU: lightweight variant with input-only gates, no reset gate, and an
unbounded candidate; roughly a third of the EGRU parameter count.
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
    tanh,
)


@dataclass
class EguState:
    c: Tensor
    e_prev: Tensor


# EGRU shares the (c, e_prev) state layout.
EgruState = EguState


def _init_weight(rng: np.random.Generator, out_f: int, in_f: int) -> Tensor:
    bound = 1.0 / np.sqrt(in_f)
    return Tensor(rng.uniform(-bound, bound, (out_f, in_f)), requires_grad=True)


class EguLayer:
    """Event-based gated unit: input-only gates, subtractive event feedback.

        u = sigmoid(W_u s + b_u)
        z = W_z s + b_z
        c' = u * c + (1 - u) * z - e_prev
        e = c' * H(c' - theta)
    """

    def __init__(self, in_features: int, hidden: int,
                 theta_init: float = 0.0, theta_trainable: bool = True,
                 surrogate_slope: float = DEFAULT_SURROGATE_SLOPE,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.in_features = in_features
        self.hidden = hidden
        self.w_u = _init_weight(rng, hidden, in_features)
        self.b_u = Tensor(np.zeros((hidden,)), requires_grad=True)
        self.w_z = _init_weight(rng, hidden, in_features)
        self.b_z = Tensor(np.zeros((hidden,)), requires_grad=True)
        self.theta = Tensor(
            np.full((hidden,), theta_init), requires_grad=theta_trainable
        )
        self.surrogate_slope = surrogate_slope

    def parameters(self):
        params = [
            ("w_u", self.w_u),
            ("b_u", self.b_u),
            ("w_z", self.w_z),
            ("b_z", self.b_z),
        ]
        if self.theta.requires_grad:
            params.append(("theta", self.theta))
        return params

    def project(self) -> None:
        pass

    def make_state(self, batch: int) -> EguState:
        zeros = np.zeros((batch, self.hidden), dtype=np.float32)
        return EguState(c=Tensor(zeros), e_prev=Tensor(zeros.copy()))

    def step(self, state: EguState, s: Tensor) -> tuple[EguState, Tensor]:
        u = sigmoid(linear(s, self.w_u, self.b_u))
        z = linear(s, self.w_z, self.b_z)
        c = u * state.c + (1.0 - u) * z - state.e_prev
        gate = heaviside_surrogate(c, self.theta, self.surrogate_slope)
        e = c * gate
        return EguState(c=c, e_prev=e), e


class EgruLayer:
    """Event-based GRU: gates driven by input and internal state.

        u = sigmoid(W_u s + R_u c + b_u)
        r = sigmoid(W_r s + R_r c + b_r)
        z = tanh(W_z s + R_z (r * c) + b_z)
        c' = u * c + (1 - u) * z - e_prev
        e = c' * H(c' - theta)
    """

    def __init__(self, in_features: int, hidden: int,
                 theta_init: float = 0.0, theta_trainable: bool = True,
                 surrogate_slope: float = DEFAULT_SURROGATE_SLOPE,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.in_features = in_features
        self.hidden = hidden
        self.w_u = _init_weight(rng, hidden, in_features)
        self.w_r = _init_weight(rng, hidden, in_features)
        self.w_z = _init_weight(rng, hidden, in_features)
        self.r_u = _init_weight(rng, hidden, hidden)
        self.r_r = _init_weight(rng, hidden, hidden)
        self.r_z = _init_weight(rng, hidden, hidden)
        self.b_u = Tensor(np.zeros((hidden,)), requires_grad=True)
        self.b_r = Tensor(np.zeros((hidden,)), requires_grad=True)
        self.b_z = Tensor(np.zeros((hidden,)), requires_grad=True)
        self.theta = Tensor(
            np.full((hidden,), theta_init), requires_grad=theta_trainable
        )
        self.surrogate_slope = surrogate_slope

    def parameters(self):
        params = [
            ("w_u", self.w_u), ("w_r", self.w_r), ("w_z", self.w_z),
            ("r_u", self.r_u), ("r_r", self.r_r), ("r_z", self.r_z),
            ("b_u", self.b_u), ("b_r", self.b_r), ("b_z", self.b_z),
        ]
        if self.theta.requires_grad:
            params.append(("theta", self.theta))
        return params

    def project(self) -> None:
        pass

    def make_state(self, batch: int) -> EgruState:
        zeros = np.zeros((batch, self.hidden), dtype=np.float32)
        return EgruState(c=Tensor(zeros), e_prev=Tensor(zeros.copy()))

    def step(self, state: EgruState, s: Tensor) -> tuple[EgruState, Tensor]:
        u = sigmoid(linear(s, self.w_u, self.b_u) + linear(state.c, self.r_u))
        r = sigmoid(linear(s, self.w_r, self.b_r) + linear(state.c, self.r_r))
        z = tanh(linear(s, self.w_z, self.b_z) + linear(r * state.c, self.r_z))
        c = u * state.c + (1.0 - u) * z - state.e_prev
        gate = heaviside_surrogate(c, self.theta, self.surrogate_slope)
        e = c * gate
        return EgruState(c=c, e_prev=e), e
