from .encoders import EchoCritic, EncoderUnavailable, TinyDualEncoder, load_encoder
from .service import PROTOCOL_VERSION, create_app

__all__ = [
    "EchoCritic",
    "EncoderUnavailable",
    "TinyDualEncoder",
    "load_encoder",
    "PROTOCOL_VERSION",
    "create_app",
]
