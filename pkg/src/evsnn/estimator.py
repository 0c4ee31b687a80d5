"""Scikit-learn style estimator wrapping the full train/predict pipeline.

X is a list of `EventStream`; y an array of class indices. The estimator owns
encoding, network construction, and training, so it composes with sklearn
model selection utilities (`get_params`/`set_params`/`clone`).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .earlybench import topk_set
from .events import EventStream
from .network import Network, NetworkConfig, batch_frames
from .preprocess import AugmentSpec, EncodeSettings, encode_with
from .training import LossSpec, TrainConfig, train


def check_streams(X) -> list[EventStream]:
    if isinstance(X, EventStream):
        raise TypeError("X must be a sequence of EventStream, not a single one")
    X = list(X)
    if not X:
        raise ValueError("X is empty")
    for i, s in enumerate(X):
        if not isinstance(s, EventStream):
            raise TypeError(f"X[{i}] is {type(s).__name__}, expected EventStream")
        s.validate()
    return X


class EventSNNClassifier(ClassifierMixin, BaseEstimator):
    """Two-stream spiking classifier over raw event streams.

    Parameters mirror the network/training defaults; `input_hw=32` selects the
    desk-scale configuration, anything else the full-scale widths.
    """

    def __init__(self, topology="two_stream", neuron_kind="plif", fusion="egru",
                 loss="cem", tet_sample_count=None, input_hw=32, crop_side=None,
                 bin_us=2000, window_us=500_000, epochs=10, batch_size=16,
                 lr=1e-3, dropout_rate=0.1, augment=True, seed=0):
        self.topology = topology
        self.neuron_kind = neuron_kind
        self.fusion = fusion
        self.loss = loss
        self.tet_sample_count = tet_sample_count
        self.input_hw = input_hw
        self.crop_side = crop_side
        self.bin_us = bin_us
        self.window_us = window_us
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.dropout_rate = dropout_rate
        self.augment = augment
        self.seed = seed

    def _encode_settings(self, streams) -> EncodeSettings:
        side = self.crop_side
        if side is None:
            sensor = min(streams[0].sensor_width, streams[0].sensor_height)
            side = (sensor // self.input_hw) * self.input_hw
            if side == 0:
                raise ValueError("sensor smaller than the requested input size")
        return EncodeSettings(crop_side=side, out_hw=self.input_hw,
                              bin_us=self.bin_us)

    def fit(self, X, y):
        X = check_streams(X)
        y = np.asarray(y, dtype=np.int64)
        if len(y) != len(X):
            raise ValueError("X and y length mismatch")
        self.classes_, y_idx = np.unique(y, return_inverse=True)

        if self.input_hw == 32:
            config = NetworkConfig.tiny(num_classes=len(self.classes_))
        else:
            config = NetworkConfig(input_hw=self.input_hw,
                                   num_classes=len(self.classes_))
        config.topology = self.topology
        config.neuron_kind = self.neuron_kind
        config.fusion = self.fusion
        config.bin_us = self.bin_us
        config.dropout_rate = self.dropout_rate
        self.network_ = Network(config, rng_seed=self.seed)
        self.encode_settings_ = self._encode_settings(X)

        shift = max(1, self.input_hw // 10)
        train_config = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            window_us=self.window_us,
            augment=(AugmentSpec(shift_px=(-shift, shift))
                     if self.augment else AugmentSpec.identity()),
            encode=self.encode_settings_,
            rng_seed=self.seed,
        )
        loss_spec = LossSpec(kind=self.loss,
                             tet_sample_count=self.tet_sample_count)
        dataset = list(zip(X, y_idx))
        _, self.metrics_log_ = train(self.network_, dataset, train_config,
                                     loss_spec)
        return self

    def decision_function(self, X):
        if not hasattr(self, "network_"):
            raise RuntimeError("estimator is not fitted")
        X = check_streams(X)
        scores = []
        for start in range(0, len(X), 32):
            seqs = [encode_with(s, self.encode_settings_, 0, self.window_us)
                    for s in X[start : start + 32]]
            trace = self.network_.forward(batch_frames(seqs), mode="eval")
            scores.append(trace.readout.mean(axis=0))
        return np.concatenate(scores, axis=0)

    def predict(self, X):
        scores = self.decision_function(X)
        idx = np.array([topk_set(row, 1)[0] for row in scores])
        return self.classes_[idx]

    def predict_proba(self, X):
        scores = self.decision_function(X)
        z = scores - scores.max(axis=1, keepdims=True)
        ez = np.exp(z)
        return ez / ez.sum(axis=1, keepdims=True)
