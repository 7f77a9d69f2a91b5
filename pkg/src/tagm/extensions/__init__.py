"""Memory (higher-order) and online variants of the model."""
from .incremental import IncState, inc_init, inc_update, online_labels, slide_update
from .memory import (
    MemConfig,
    allowed_mask,
    decode_state,
    encode_state,
    index_set,
    mem_fit,
    transition_allowed,
)

__all__ = [
    "IncState", "inc_init", "inc_update", "slide_update", "online_labels",
    "MemConfig", "encode_state", "decode_state", "transition_allowed",
    "allowed_mask", "index_set", "mem_fit",
]
