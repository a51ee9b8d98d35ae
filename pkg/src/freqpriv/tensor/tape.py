"""
Ordered record of op applications, replayed in reverse for gradients.

A tape is single-threaded; independent tapes may run in parallel.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from freqpriv.core.errors import NumericalError
from freqpriv.tensor.ops import Op

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Var:
    """Handle to a value stored on a tape."""

    index: int
    value: np.ndarray

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape


@dataclass
class _Record:
    op: Op
    ctx: Any
    inputs: Tuple[int, ...]
    output: int


class Tape:
    def __init__(self):
        self._values: List[np.ndarray] = []
        self._requires_grad: List[bool] = []
        self._records: List[_Record] = []
        self._leaves: Dict[str, int] = {}

    def __len__(self) -> int:
        return len(self._records)

    # ------------------------------------------------------------------
    # Graph construction
    # ------------------------------------------------------------------

    def _push(self, value: np.ndarray, requires_grad: bool) -> Var:
        self._values.append(value)
        self._requires_grad.append(requires_grad)
        return Var(len(self._values) - 1, value)

    def leaf(self, name: str, value: np.ndarray) -> Var:
        """Differentiable input or parameter; its gradient is returned by backward."""
        if name in self._leaves:
            raise ValueError(f"Leaf '{name}' already registered on this tape")
        var = self._push(np.asarray(value), True)
        self._leaves[name] = var.index
        return var

    def constant(self, value: np.ndarray) -> Var:
        """Stop-gradient value."""
        return self._push(np.asarray(value), False)

    def apply(self, op: Op, *inputs: Var, **attrs: Any) -> Var:
        out, ctx = op.forward(*(v.value for v in inputs), **attrs)
        requires = any(self._requires_grad[v.index] for v in inputs)
        var = self._push(out, requires)
        if requires:
            self._records.append(_Record(op, ctx, tuple(v.index for v in inputs), var.index))
        return var

    # ------------------------------------------------------------------
    # Reverse pass
    # ------------------------------------------------------------------

    def backward(
        self,
        output: Var,
        grad: Optional[np.ndarray] = None,
    ) -> Dict[str, np.ndarray]:
        """
        Replay VJPs in reverse order.

        Returns one gradient per named leaf, zeros for leaves the output does
        not depend on.
        """
        if grad is None:
            if output.value.size != 1:
                raise ValueError("backward() needs an explicit grad for non-scalar outputs")
            grad = np.ones_like(output.value, dtype=np.float64)

        grads: Dict[int, np.ndarray] = {output.index: np.asarray(grad)}

        for record in reversed(self._records):
            g_out = grads.pop(record.output, None)
            if g_out is None:
                continue
            in_grads = record.op.vjp(record.ctx, g_out)
            if len(in_grads) != len(record.inputs):
                raise RuntimeError(
                    f"{record.op.name}: vjp returned {len(in_grads)} grads "
                    f"for {len(record.inputs)} inputs"
                )
            for idx, g in zip(record.inputs, in_grads):
                if g is None or not self._requires_grad[idx]:
                    continue
                if not np.all(np.isfinite(g)):
                    raise NumericalError(
                        f"Non-finite gradient produced by '{record.op.name}'",
                        op_name=record.op.name,
                    )
                if idx in grads:
                    grads[idx] = grads[idx] + g
                else:
                    grads[idx] = g

        result: Dict[str, np.ndarray] = {}
        for name, idx in self._leaves.items():
            value = self._values[idx]
            g = grads.get(idx)
            result[name] = np.zeros_like(value, dtype=np.result_type(value, np.float64)) if g is None else g
        return result
