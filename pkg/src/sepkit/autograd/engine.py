"""Reverse-mode differentiation core: tensors and the recording tape.

Design notes:

* Everything is float64. The networks here are desk-scale, so numeric
  headroom for gradient checks beats speed.
* A ``Tensor`` is a dumb value holder; operators live in ``ops`` and
  record themselves onto the innermost active ``Tape``.
* ``Tape.backward`` walks the records in reverse, accumulates cotangents,
  and **overwrites** ``.grad`` on every requested parameter (parameters
  that did not participate get zero gradients). One backward per tape.
* With no tape active the operators still compute forward values, so
  inference costs no bookkeeping.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

_ACTIVE_TAPES: list["Tape"] = []

#: When enabled, every operator asserts its output is finite.
_DEBUG_CHECK_FINITE = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle per-operator finiteness assertions (off by default)."""
    global _DEBUG_CHECK_FINITE
    _DEBUG_CHECK_FINITE = bool(enabled)


def debug_checks_enabled() -> bool:
    return _DEBUG_CHECK_FINITE


class Tensor:
    """A dense float64 array plus gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        grad = ", grad" if self.requires_grad else ""
        return f"Tensor{tag}(shape={self.shape}{grad})"


def constant(data, name: str | None = None) -> Tensor:
    """Wrap an array as a non-differentiable graph input."""
    return Tensor(data, requires_grad=False, name=name)


def parameter(data, name: str | None = None) -> Tensor:
    """Wrap an array as a trainable parameter."""
    return Tensor(data, requires_grad=True, name=name)


@dataclass
class OpRecord:
    """One recorded operation: enough to replay its backward rule."""

    op_name: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward_fn: Callable[[np.ndarray], tuple]


class Tape:
    """Ordered record of operations; context manager activates it.

    Records are appended in execution order, so inputs always precede the
    ops consuming them and a single reverse sweep suffices.
    """

    def __init__(self, track_kinks: bool = False):
        self.records: list[OpRecord] = []
        # When tracking, relu/prelu append a flat copy of each
        # pre-activation array here (in execution order) so gradient
        # checks can tell whether a perturbation pushed any activation
        # across its kink.
        self.track_kinks = bool(track_kinks)
        self.kink_values: list[np.ndarray] = []

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _ACTIVE_TAPES.pop()
        assert popped is self, "tape stack corrupted"
        return False

    def record(self, op_name: str, inputs: tuple[Tensor, ...], output: Tensor,
               backward_fn: Callable[[np.ndarray], tuple]) -> None:
        self.records.append(OpRecord(op_name, inputs, output, backward_fn))

    def backward(self, loss: Tensor, params: Sequence[Tensor] = ()) -> None:
        """Populate ``.grad`` with dLoss/dTensor for every differentiable input.

        `loss` must be a scalar produced on this tape. Every tensor in
        `params` is guaranteed a gradient afterwards (zeros if the loss
        does not depend on it). Existing ``.grad`` values are overwritten.
        """
        if loss.shape != ():
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not np.isfinite(loss.data):
            raise FloatingPointError(f"loss is not finite: {loss.data}")
        cotangents: dict[int, np.ndarray] = {id(loss): np.ones(())}
        grad_targets: dict[int, Tensor] = {}
        for record in reversed(self.records):
            out_grad = cotangents.get(id(record.output))
            if out_grad is None:
                continue
            input_grads = record.backward_fn(out_grad)
            for tensor, grad in zip(record.inputs, input_grads):
                if grad is None:
                    continue
                if grad.shape != tensor.shape:
                    raise ValueError(
                        f"{record.op_name}: backward produced shape {grad.shape} "
                        f"for input of shape {tensor.shape}")
                held = cotangents.get(id(tensor))
                if held is None:
                    cotangents[id(tensor)] = grad.copy()
                else:
                    held += grad
                if tensor.requires_grad:
                    grad_targets[id(tensor)] = tensor
        for tensor in params:
            grad_targets.setdefault(id(tensor), tensor)
        for key, tensor in grad_targets.items():
            accumulated = cotangents.get(key)
            tensor.grad = (np.zeros(tensor.shape) if accumulated is None
                           else accumulated)


def active_tape() -> Tape | None:
    """Innermost active tape, or None outside any ``with Tape():`` block."""
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def apply_op(op_name: str, inputs: tuple[Tensor, ...], out_data: np.ndarray,
             backward_fn: Callable[[np.ndarray], tuple]) -> Tensor:
    """Shared epilogue for every operator: wrap, debug-check, record."""
    if _DEBUG_CHECK_FINITE and not np.all(np.isfinite(out_data)):
        raise FloatingPointError(f"{op_name}: non-finite forward output")
    output = Tensor(out_data, requires_grad=any(t.requires_grad for t in inputs))
    tape = active_tape()
    if tape is not None and output.requires_grad:
        tape.record(op_name, inputs, output, backward_fn)
    return output
