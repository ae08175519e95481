"""Function approximators: manual-backprop MLPs over swappable kernels."""

from ._backend import BACKEND, kernels
from .mlp import (
    HEAD_CODES,
    SNAPSHOT_MAGIC,
    Adam,
    Mlp,
    apply_update,
    gradient_check,
    load_net,
    save_net,
)

__all__ = [
    "Adam",
    "BACKEND",
    "HEAD_CODES",
    "Mlp",
    "SNAPSHOT_MAGIC",
    "apply_update",
    "gradient_check",
    "kernels",
    "load_net",
    "save_net",
]
