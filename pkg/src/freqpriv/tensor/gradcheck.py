"""
Finite-difference verification of vector-Jacobian products.

``gradcheck`` projects an op's output onto a random direction R, takes the
VJP of R as the analytic gradient and compares it to central differences of
``<R, op(x)>``. ``gradcheck_scalar`` does the same for any scalar function
that returns its own gradients (e.g. a full loss pipeline).
"""

import logging
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from freqpriv.core.errors import NumericalError
from freqpriv.tensor.ops import Op

logger = logging.getLogger(__name__)

DEFAULT_EPS = 1e-5
DEFAULT_TOLERANCE = 1e-4


def _random_like(value: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    value = np.asarray(value)
    if np.iscomplexobj(value):
        return rng.standard_normal(value.shape) + 1j * rng.standard_normal(value.shape)
    return rng.standard_normal(value.shape)


def _project(y: np.ndarray, direction: np.ndarray) -> float:
    """Real inner product <direction, y> = Re(sum(conj(direction) * y))."""
    return float(np.real(np.sum(np.conj(direction) * y)))


def numerical_grad(
    f: Callable[[], float],
    inputs: Sequence[np.ndarray],
    eps: float = DEFAULT_EPS,
) -> List[np.ndarray]:
    """
    Central finite differences of a scalar ``f`` w.r.t. each input array.

    Inputs are perturbed in place and restored. Complex inputs get a complex
    gradient ``dRe + j·dIm``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")

    grads = []
    for x in inputs:
        is_complex = np.iscomplexobj(x)
        grad = np.zeros(x.shape, dtype=np.complex128 if is_complex else np.float64)
        flat = x.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            parts = (1.0, 1j) if is_complex else (1.0,)
            for unit in parts:
                flat[i] = orig + eps * unit
                f_plus = f()
                flat[i] = orig - eps * unit
                f_minus = f()
                flat[i] = orig
                if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                    raise NumericalError("Non-finite value during finite differences")
                gflat[i] += unit * (f_plus - f_minus) / (2.0 * eps)
        grads.append(grad)
    return grads


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |g_a − g_fd| / max(1, |g_a|, |g_fd|), real and imaginary parts separately."""
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    parts = [(np.real(a), np.real(n))]
    if np.iscomplexobj(a) or np.iscomplexobj(n):
        parts.append((np.imag(a), np.imag(n)))
    worst = 0.0
    for pa, pn in parts:
        if pa.size == 0:
            continue
        denom = np.maximum(1.0, np.maximum(np.abs(pa), np.abs(pn)))
        worst = max(worst, float(np.max(np.abs(pa - pn) / denom)))
    return worst


def gradcheck(
    op: Op,
    inputs: Sequence[np.ndarray],
    eps: float = DEFAULT_EPS,
    attrs: Optional[Mapping[str, Any]] = None,
    wrt: Optional[Sequence[int]] = None,
    seed: int = 0,
) -> float:
    """
    Max relative error between the op's VJP and central differences.

    Parameters
    ----------
    op : Op
        Operation exposing ``forward`` and ``vjp``.
    inputs : sequence of arrays
        Evaluation point; copied before perturbation.
    eps : float
        Finite-difference step.
    attrs : mapping, optional
        Non-differentiable keyword attributes of the op.
    wrt : sequence of int, optional
        Input positions to check (default: all).
    seed : int
        Seed of the random projection.
    """
    attrs = dict(attrs or {})
    xs = [np.array(x, dtype=np.result_type(x, np.float64), copy=True) for x in inputs]
    wrt = list(range(len(xs))) if wrt is None else list(wrt)
    rng = np.random.default_rng(seed)

    out, ctx = op.forward(*xs, **attrs)
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"gradcheck: '{op.name}' produced non-finite output", op_name=op.name)

    direction = _random_like(out, rng)
    analytic = op.vjp(ctx, direction)
    for i in wrt:
        if analytic[i] is None or not np.all(np.isfinite(analytic[i])):
            raise NumericalError(
                f"gradcheck: '{op.name}' VJP is missing or non-finite for input {i}",
                op_name=op.name,
            )

    def f() -> float:
        y = op.forward(*xs, **attrs)[0]
        return _project(y, direction)

    try:
        numeric = numerical_grad(f, [xs[i] for i in wrt], eps=eps)
    except NumericalError as exc:
        raise NumericalError(f"gradcheck: '{op.name}': {exc}", op_name=op.name) from exc

    error = max(
        (max_relative_error(analytic[i], g) for i, g in zip(wrt, numeric)),
        default=0.0,
    )
    logger.debug("gradcheck %s: max relative error %.3e", op.name, error)
    return error


def gradcheck_scalar(
    fn: Callable[[Dict[str, np.ndarray]], Tuple[float, Dict[str, np.ndarray]]],
    params: Mapping[str, np.ndarray],
    eps: float = DEFAULT_EPS,
    name: str = "scalar",
) -> Dict[str, float]:
    """
    Check a scalar function that returns ``(value, {param: grad})``.

    Returns the max relative error per parameter group.
    """
    work = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    value, analytic = fn(work)
    if not np.isfinite(value):
        raise NumericalError(f"gradcheck: '{name}' produced a non-finite value", op_name=name)

    errors: Dict[str, float] = {}
    for key, arr in work.items():

        def f() -> float:
            return float(fn(work)[0])

        try:
            numeric = numerical_grad(f, [arr], eps=eps)[0]
        except NumericalError as exc:
            raise NumericalError(f"gradcheck: '{name}' [{key}]: {exc}", op_name=name) from exc
        errors[key] = max_relative_error(analytic[key], numeric)
        logger.debug("gradcheck %s[%s]: %.3e", name, key, errors[key])
    return errors
