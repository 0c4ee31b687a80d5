"""Two-stream convolutional spiking network assembly.

Topology: one common conv-BN-spiking layer, then a ventral stream (stride 2
everywhere, growing channel width) and a dorsal stream (strides alternating
2/1, slower width growth compressed back to the common width by its last
layer). Stream outputs are flattened, concatenated, passed through an
event-based gated fusion layer and read out by non-spiking LI units.

SynOps accounting (effective = driven by nonzero activations only):
    MACs - connections driven by real-valued signals: the first conv (integer
           event counts), all fusion-layer affine maps and elementwise state
           updates, and the readout projection.
    ACs  - connections driven by binary spikes: every conv after the first.
Neuron-internal membrane/adaptation updates are not synaptic operations and
are not counted. Batch norm is an eval-mode affine foldable into the conv, so
it adds no operations.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .fusion import EgruLayer, EguLayer
from .neurons import AdlifLayer, LiReadout, PlifLayer
from .preprocess import FrameSequence

CHECKPOINT_VERSION = 1

TOPOLOGIES = ("two_stream", "ventral_only", "dorsal_only",
              "ventral_double", "dorsal_double")
FUSIONS = ("egru", "egu", "plif", "adlif", "none")
NEURON_KINDS = ("plif", "adlif")

VENTRAL_STRIDES = (2, 2, 2, 2)
DORSAL_STRIDES = (2, 1, 2, 1)

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


class ConfigError(ValueError):
    pass


@dataclass
class ConvSpikeLayerSpec:
    in_ch: int
    out_ch: int
    kernel: int
    stride: int
    padding: int
    neuron_kind: str
    dropout_rate: float

    def __post_init__(self):
        if self.kernel % 2 == 0:
            raise ConfigError("kernel must be odd")
        if self.stride not in (1, 2):
            raise ConfigError("stride must be 1 or 2")
        if self.neuron_kind not in NEURON_KINDS:
            raise ConfigError(f"unknown neuron kind {self.neuron_kind!r}")


@dataclass
class NetworkConfig:
    topology: str = "two_stream"
    neuron_kind: str = "plif"
    fusion: str = "egru"
    input_hw: int = 100
    num_classes: int = 50
    bin_us: int = 2000
    common_width: int = 16
    ventral_widths: tuple = (48, 96, 192, 384)
    dorsal_widths: tuple = (24, 32, 48, 16)
    kernel: int = 3
    padding: int = 1
    fusion_width: int = 256
    dropout_rate: float = 0.1
    surrogate_slope: float = 2.0
    theta_trainable: bool = True

    def __post_init__(self):
        self.ventral_widths = tuple(self.ventral_widths)
        self.dorsal_widths = tuple(self.dorsal_widths)

    def validate(self) -> None:
        if self.topology not in TOPOLOGIES:
            raise ConfigError(f"unknown topology {self.topology!r}")
        if self.neuron_kind not in NEURON_KINDS:
            raise ConfigError(f"unknown neuron kind {self.neuron_kind!r}")
        if self.fusion not in FUSIONS:
            raise ConfigError(f"unknown fusion {self.fusion!r}")
        if len(self.ventral_widths) != 4:
            raise ConfigError("ventral stream must have 4 layers")
        if len(self.dorsal_widths) != 4:
            raise ConfigError("dorsal stream must have 4 layers")
        if any(a > b for a, b in zip(self.ventral_widths, self.ventral_widths[1:])):
            raise ConfigError("ventral widths must be non-decreasing")
        if self.dorsal_widths[-1] != self.common_width:
            raise ConfigError(
                "dorsal stream must compress to the common width "
                f"({self.dorsal_widths[-1]} != {self.common_width})"
            )
        if self.kernel % 2 == 0:
            raise ConfigError("kernel must be odd")

    @property
    def doubled(self) -> bool:
        return self.topology.endswith("_double")

    def effective_widths(self):
        """Channel widths after applying the *_double topology multiplier."""
        mult = 2 if self.doubled else 1
        return (
            self.common_width * mult,
            tuple(w * mult for w in self.ventral_widths),
            tuple(w * mult for w in self.dorsal_widths),
        )

    @classmethod
    def tiny(cls, num_classes: int = 2, **overrides) -> "NetworkConfig":
        """32x32 desk-scale configuration for fast tests and CLI smoke runs."""
        defaults = dict(
            input_hw=32,
            num_classes=num_classes,
            common_width=4,
            ventral_widths=(8, 8, 16, 16),
            dorsal_widths=(6, 8, 8, 4),
            fusion_width=32,
        )
        defaults.update(overrides)
        return cls(**defaults)


def _conv_out(h: int, k: int, stride: int, padding: int) -> int:
    out = (h + 2 * padding - k) // stride + 1
    if out < 1:
        raise ConfigError("spatial dimension collapsed below 1")
    return out


class ConvSpikeLayer:
    """Conv -> BN -> spiking neuron, the repeated building block of Fig.-style
    convolutional streams."""

    def __init__(self, spec: ConvSpikeLayerSpec, rng: np.random.Generator,
                 surrogate_slope: float):
        self.spec = spec
        fan_in = spec.in_ch * spec.kernel * spec.kernel
        bound = np.sqrt(1.0 / fan_in)
        self.weight = Tensor(
            rng.uniform(-bound, bound,
                        (spec.out_ch, spec.in_ch, spec.kernel, spec.kernel)),
            requires_grad=True,
        )
        self.gamma = Tensor(np.ones((spec.out_ch,)), requires_grad=True)
        self.beta = Tensor(np.zeros((spec.out_ch,)), requires_grad=True)
        self.running_mean = np.zeros((spec.out_ch,), dtype=np.float32)
        self.running_var = np.ones((spec.out_ch,), dtype=np.float32)
        if spec.neuron_kind == "plif":
            self.neuron = PlifLayer(surrogate_slope=surrogate_slope)
        else:
            self.neuron = AdlifLayer(spec.out_ch, surrogate_slope=surrogate_slope,
                                     rng=rng)

    def parameters(self):
        params = [("conv_weight", self.weight), ("bn_gamma", self.gamma),
                  ("bn_beta", self.beta)]
        params += [(f"neuron_{n}", t) for n, t in self.neuron.parameters()]
        return params

    def buffers(self):
        return [("bn_running_mean", self.running_mean),
                ("bn_running_var", self.running_var)]

    def project(self):
        self.neuron.project()

    def out_hw(self, hw: int) -> int:
        return _conv_out(hw, self.spec.kernel, self.spec.stride, self.spec.padding)

    def make_state(self, batch: int, hw: int):
        out = self.out_hw(hw)
        return self.neuron.make_state((batch, self.spec.out_ch, out, out))

    def step(self, state, x: Tensor, train: bool,
             rng: np.random.Generator | None):
        y = ad.conv2d(x, self.weight, self.spec.stride, self.spec.padding)
        if train:
            y, mean, var = ad.batch_norm_train(y, self.gamma, self.beta, BN_EPS)
            self.running_mean += BN_MOMENTUM * (mean - self.running_mean)
            self.running_var += BN_MOMENTUM * (var - self.running_var)
        else:
            y = ad.batch_norm_eval(y, self.gamma, self.beta,
                                   self.running_mean, self.running_var, BN_EPS)
        state, s = self.neuron.step(state, y)
        if train and self.spec.dropout_rate > 0 and rng is not None:
            s = ad.dropout(s, self.spec.dropout_rate, rng)
        return state, s


class _SpikeFusion:
    """Linear projection into a spiking neuron bank, used for the plif/adlif
    fusion ablations."""

    def __init__(self, in_features: int, hidden: int, neuron_kind: str,
                 surrogate_slope: float, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(in_features)
        self.hidden = hidden
        self.weight = Tensor(rng.uniform(-bound, bound, (hidden, in_features)),
                             requires_grad=True)
        self.bias = Tensor(np.zeros((hidden,)), requires_grad=True)
        if neuron_kind == "plif":
            self.neuron = PlifLayer(surrogate_slope=surrogate_slope)
        else:
            self.neuron = AdlifLayer(hidden, surrogate_slope=surrogate_slope, rng=rng)

    def parameters(self):
        params = [("weight", self.weight), ("bias", self.bias)]
        params += [(f"neuron_{n}", t) for n, t in self.neuron.parameters()]
        return params

    def project(self):
        self.neuron.project()

    def make_state(self, batch: int):
        return self.neuron.make_state((batch, self.hidden))

    def step(self, state, s: Tensor):
        drive = ad.linear(s, self.weight, self.bias)
        return self.neuron.step(state, drive)


@dataclass
class SynOpsReport:
    macs_total: int
    acs_total: int
    macs_per_t: np.ndarray
    acs_per_t: np.ndarray

    @property
    def macs_cumulative(self) -> np.ndarray:
        return np.cumsum(self.macs_per_t)

    @property
    def acs_cumulative(self) -> np.ndarray:
        return np.cumsum(self.acs_per_t)


@dataclass
class ForwardTrace:
    """Per-timestep record of one forward pass."""

    v_history: list  # list of Tensor [N, num_classes], length T
    spike_counts: np.ndarray  # [T, n_spiking_layers] int64
    macs_per_t: np.ndarray | None = None  # [T] int64, eval mode with counting
    acs_per_t: np.ndarray | None = None
    activations: dict | None = None  # layer name -> list of input arrays per t

    @property
    def readout(self) -> np.ndarray:
        """Readout potentials as a dense [T, N, C] array."""
        return np.stack([v.data for v in self.v_history])


def _conv_effective_ops(input_array: np.ndarray, layer: ConvSpikeLayer) -> int:
    """C_out accumulations per nonzero input inside each receptive field."""
    mask = (input_array != 0).astype(np.float32)
    cols, _, _ = ad._im2col(mask, layer.spec.kernel, layer.spec.stride,
                            layer.spec.padding)
    return int(round(cols.sum())) * layer.spec.out_ch


def _linear_effective_ops(input_array: np.ndarray, out_features: int) -> int:
    return int(np.count_nonzero(input_array)) * out_features


class Network:
    """Assembled network; construct via `build`."""

    def __init__(self, config: NetworkConfig, rng_seed: int):
        config.validate()
        self.config = config
        rng = np.random.default_rng(rng_seed)
        common_w, ventral_w, dorsal_w = config.effective_widths()
        k, p = config.kernel, config.padding
        drop = config.dropout_rate
        kind = config.neuron_kind
        slope = config.surrogate_slope

        def conv_layer(in_ch, out_ch, stride):
            return ConvSpikeLayer(
                ConvSpikeLayerSpec(in_ch, out_ch, k, stride, p, kind, drop),
                rng, slope)

        self.common = conv_layer(2, common_w, 2)
        hw = _conv_out(config.input_hw, k, 2, p)

        self.ventral = []
        self.dorsal = []
        self.ventral_hw = []
        self.dorsal_hw = []
        if config.topology in ("two_stream", "ventral_only", "ventral_double"):
            in_ch = common_w
            cur = hw
            for width, stride in zip(ventral_w, VENTRAL_STRIDES):
                layer = conv_layer(in_ch, width, stride)
                cur = layer.out_hw(cur)
                self.ventral.append(layer)
                self.ventral_hw.append(cur)
                in_ch = width
        if config.topology in ("two_stream", "dorsal_only", "dorsal_double"):
            in_ch = common_w
            cur = hw
            for width, stride in zip(dorsal_w, DORSAL_STRIDES):
                layer = conv_layer(in_ch, width, stride)
                cur = layer.out_hw(cur)
                self.dorsal.append(layer)
                self.dorsal_hw.append(cur)
                in_ch = width

        self.common_hw = hw
        feat = 0
        if self.ventral:
            feat += ventral_w[-1] * self.ventral_hw[-1] ** 2
        if self.dorsal:
            feat += dorsal_w[-1] * self.dorsal_hw[-1] ** 2
        self.feature_width = feat

        if config.fusion == "egru":
            self.fusion = EgruLayer(feat, config.fusion_width,
                                    theta_trainable=config.theta_trainable,
                                    surrogate_slope=slope, rng=rng)
            readout_in = config.fusion_width
        elif config.fusion == "egu":
            self.fusion = EguLayer(feat, config.fusion_width,
                                   theta_trainable=config.theta_trainable,
                                   surrogate_slope=slope, rng=rng)
            readout_in = config.fusion_width
        elif config.fusion in ("plif", "adlif"):
            self.fusion = _SpikeFusion(feat, config.fusion_width, config.fusion,
                                       slope, rng)
            readout_in = config.fusion_width
        else:
            self.fusion = None
            readout_in = feat
        self.readout = LiReadout(readout_in, config.num_classes, rng=rng)

    # -- parameter / buffer plumbing ---------------------------------------

    def named_modules(self):
        mods = [("common", self.common)]
        mods += [(f"ventral{i}", l) for i, l in enumerate(self.ventral)]
        mods += [(f"dorsal{i}", l) for i, l in enumerate(self.dorsal)]
        if self.fusion is not None:
            mods.append(("fusion", self.fusion))
        mods.append(("readout", self.readout))
        return mods

    def parameters(self):
        return [(f"{mod}.{name}", t)
                for mod, m in self.named_modules()
                for name, t in m.parameters()]

    def buffers(self):
        out = []
        for mod, m in self.named_modules():
            if hasattr(m, "buffers"):
                out += [(f"{mod}.{name}", arr) for name, arr in m.buffers()]
        return out

    def project(self):
        for _, m in self.named_modules():
            m.project()

    def count_parameters(self) -> int:
        return sum(t.size for _, t in self.parameters())

    def zero_grad(self):
        for _, t in self.parameters():
            t.grad = None

    # -- forward -----------------------------------------------------------

    def forward(self, frames: np.ndarray, mode: str = "eval",
                rng: np.random.Generator | None = None,
                count_ops: bool = False,
                record_activations: bool = False) -> ForwardTrace:
        """Run the unrolled network over `frames` [N, T, 2, H, W].

        Neuron and gate states start at zero; each timestep runs the full
        pipeline once and records the readout potential. Dropout is active in
        train mode only. SynOps counting requires eval mode.
        """
        if mode not in ("train", "eval"):
            raise ValueError(f"unknown mode {mode!r}")
        train = mode == "train"
        if count_ops and train:
            raise ValueError("SynOps counting requires eval mode")
        frames = np.asarray(frames, dtype=np.float32)
        if frames.ndim == 4:
            frames = frames[None]
        n, t_bins = frames.shape[:2]
        if frames.shape[3] != self.config.input_hw:
            raise ValueError(
                f"input spatial size {frames.shape[3]} != "
                f"configured {self.config.input_hw}")

        conv_layers = ([("common", self.common)]
                       + [(f"ventral{i}", l) for i, l in enumerate(self.ventral)]
                       + [(f"dorsal{i}", l) for i, l in enumerate(self.dorsal)])
        states = {"common": self.common.make_state(n, self.config.input_hw)}
        hw = self.common_hw
        cur = hw
        for i, layer in enumerate(self.ventral):
            states[f"ventral{i}"] = layer.make_state(n, cur)
            cur = layer.out_hw(cur)
        cur = hw
        for i, layer in enumerate(self.dorsal):
            states[f"dorsal{i}"] = layer.make_state(n, cur)
            cur = layer.out_hw(cur)
        fusion_state = self.fusion.make_state(n) if self.fusion is not None else None
        readout_state = self.readout.make_state(n)

        v_history = []
        spike_counts = np.zeros((t_bins, len(conv_layers)), dtype=np.int64)
        macs = np.zeros(t_bins, dtype=np.int64) if count_ops else None
        acs = np.zeros(t_bins, dtype=np.int64) if count_ops else None
        activations: dict[str, list] = {} if record_activations else None

        def note_activation(name, arr):
            if record_activations:
                activations.setdefault(name, []).append(arr.copy())

        for t in range(t_bins):
            x = Tensor(frames[:, t])
            note_activation("common", x.data)
            if count_ops:
                macs[t] += _conv_effective_ops(x.data, self.common)
            states["common"], s = self.common.step(states["common"], x, train, rng)
            spike_counts[t, 0] = int(np.count_nonzero(s.data))

            feats = []
            col = 1
            for prefix, stream in (("ventral", self.ventral),
                                   ("dorsal", self.dorsal)):
                h = s
                for i, layer in enumerate(stream):
                    name = f"{prefix}{i}"
                    note_activation(name, h.data)
                    if count_ops:
                        acs[t] += _conv_effective_ops(h.data, layer)
                    states[name], h = layer.step(states[name], h, train, rng)
                    spike_counts[t, col] = int(np.count_nonzero(h.data))
                    col += 1
                if stream:
                    feats.append(h.reshape((n, -1)))
            fused_in = feats[0] if len(feats) == 1 else ad.concat(feats, axis=1)

            if self.fusion is not None:
                note_activation("fusion", fused_in.data)
                if record_activations and hasattr(fusion_state, "c"):
                    note_activation("fusion_c_prev", fusion_state.c.data)
                if count_ops:
                    macs[t] += self._fusion_ops(fused_in.data, fusion_state)
                fusion_state, readout_in = self.fusion.step(fusion_state, fused_in)
            else:
                readout_in = fused_in

            note_activation("readout", readout_in.data)
            if count_ops:
                macs[t] += _linear_effective_ops(readout_in.data,
                                                 self.readout.num_classes)
            readout_state = self.readout.step(readout_state, readout_in)
            v_history.append(readout_state.v)

        return ForwardTrace(v_history=v_history, spike_counts=spike_counts,
                            macs_per_t=macs, acs_per_t=acs,
                            activations=activations)

    def _fusion_ops(self, s_in: np.ndarray, state) -> int:
        """Effective MACs of one fusion step: affine maps plus the elementwise
        state-update multiplies (drivers: input spikes, previous state c, the
        candidate z, the recurrent operand r*c, and the emitted events)."""
        f = self.fusion
        hidden = f.hidden
        nnz_in = int(np.count_nonzero(s_in))
        if not isinstance(f, (EgruLayer, EguLayer)):
            # plif/adlif fusion: a single affine map into the spiking bank
            return nnz_in * hidden
        c_prev = state.c.data
        nnz_c = int(np.count_nonzero(c_prev))
        if isinstance(f, EgruLayer):
            ops = 3 * nnz_in * hidden          # W_u, W_r, W_z
            ops += 2 * nnz_c * hidden          # R_u, R_r on c
            ops += nnz_c * hidden              # R_z on r*c (r is dense sigmoid)
            ops += nnz_c                       # r * c elementwise
            ops += nnz_c + c_prev.size         # u*c and (1-u)*z updates
            ops += c_prev.size                 # event emission multiply
            return ops
        if isinstance(f, EguLayer):
            ops = 2 * nnz_in * hidden          # W_u, W_z
            ops += nnz_c + c_prev.size         # u*c and (1-u)*z updates
            ops += c_prev.size                 # event emission multiply
            return ops

    # -- checkpointing -----------------------------------------------------

    def save(self, path) -> None:
        arrays = {"__version__": np.array(CHECKPOINT_VERSION)}
        cfg = asdict(self.config)
        arrays["__config__"] = np.frombuffer(
            json.dumps(cfg).encode(), dtype=np.uint8)
        for i, (name, t) in enumerate(self.parameters()):
            arrays[f"param_{i:03d}__{name}"] = t.data
        for i, (name, arr) in enumerate(self.buffers()):
            arrays[f"buffer_{i:03d}__{name}"] = arr
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path) -> "Network":
        with np.load(path) as data:
            version = int(data["__version__"])
            if version != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {version}")
            cfg_dict = json.loads(bytes(data["__config__"]).decode())
            config = NetworkConfig(**cfg_dict)
            net = cls(config, rng_seed=0)
            params = net.parameters()
            for i, (name, t) in enumerate(params):
                key = f"param_{i:03d}__{name}"
                if key not in data:
                    raise ValueError(f"checkpoint missing parameter {name}")
                if data[key].shape != t.data.shape:
                    raise ValueError(f"checkpoint shape mismatch for {name}")
                t.data = data[key].astype(np.float32)
            for i, (name, arr) in enumerate(net.buffers()):
                key = f"buffer_{i:03d}__{name}"
                arr[...] = data[key]
        return net


def build(config: NetworkConfig, rng_seed: int) -> Network:
    return Network(config, rng_seed)


def count_parameters(net: Network) -> int:
    return net.count_parameters()


def count_synops(trace: ForwardTrace, net: Network) -> SynOpsReport:
    if trace.macs_per_t is None or trace.acs_per_t is None:
        raise ValueError("trace was produced without SynOps counting; "
                         "run forward(..., count_ops=True) in eval mode")
    return SynOpsReport(
        macs_total=int(trace.macs_per_t.sum()),
        acs_total=int(trace.acs_per_t.sum()),
        macs_per_t=trace.macs_per_t,
        acs_per_t=trace.acs_per_t,
    )


def batch_frames(seqs: list[FrameSequence]) -> np.ndarray:
    """Stack equal-shape frame sequences into a [N, T, 2, H, W] batch."""
    return np.stack([s.data for s in seqs]).astype(np.float32)
