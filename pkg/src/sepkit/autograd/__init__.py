"""From-scratch reverse-mode differentiation engine.

``engine`` has the Tensor/Tape core, ``ops`` the closed operator set,
``checks`` the finite-difference gradient checker, ``optim`` the Adam
optimizer, and ``checkpoint`` the named-tensor container format.
"""

from . import ops
from .checkpoint import load_tensors, save_tensors
from .checks import grad_check
from .engine import (
    Tape,
    Tensor,
    constant,
    parameter,
    set_debug_checks,
)
from .optim import AdamState, adam_step

__all__ = [
    "AdamState",
    "Tape",
    "Tensor",
    "adam_step",
    "constant",
    "grad_check",
    "load_tensors",
    "ops",
    "parameter",
    "save_tensors",
    "set_debug_checks",
]
