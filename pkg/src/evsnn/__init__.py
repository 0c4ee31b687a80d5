"""Early event-based action recognition with high-rate two-stream SNNs."""

from .estimator import EventSNNClassifier
from .events import Event, EventStream, generate_synthetic, read_stream, write_stream
from .network import Network, NetworkConfig
from .preprocess import AugmentSpec, EncodeSettings, FrameSequence, encode

__all__ = [
    "Event",
    "EventStream",
    "read_stream",
    "write_stream",
    "generate_synthetic",
    "FrameSequence",
    "encode",
    "EncodeSettings",
    "AugmentSpec",
    "Network",
    "NetworkConfig",
    "EventSNNClassifier",
]

__version__ = "0.1.0"
