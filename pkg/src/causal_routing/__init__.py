"""Causal routing: stacked deconfounding blocks with learned routing, an
exact discrete structural-model oracle, and a synthetic confounded-task
harness."""

__version__ = "0.1.0"

from .model import (
    CausalRoutingModel,
    ModelHyper,
    TauSchedule,
    Variant,
    build_model,
    load_checkpoint,
    save_checkpoint,
    sharpening_softmax,
)
from .tape import Parameter, Tape

__all__ = [
    "CausalRoutingModel",
    "ModelHyper",
    "Parameter",
    "Tape",
    "TauSchedule",
    "Variant",
    "build_model",
    "load_checkpoint",
    "save_checkpoint",
    "sharpening_softmax",
    "__version__",
]
