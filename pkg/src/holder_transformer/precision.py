"""Scalar precision plumbing.

Two numeric modes are supported. ``double`` works on float64 numpy arrays.
``extended`` works on numpy object arrays holding gmpy2 ``mpfr`` scalars at a
caller-chosen mantissa width; MPFR's exponent range (about 2**±2**30) keeps
values like exp(-1e6) representable, which IEEE doubles cannot.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass

import gmpy2
import numpy as np

__all__ = [
    "Precision",
    "DOUBLE",
    "extended",
    "working_context",
    "as_array",
    "to_float",
    "exp_array",
    "relu",
]


@dataclass(frozen=True)
class Precision:
    """Numeric mode selected at build time.

    mode is ``"double"`` or ``"extended"``; ``bits`` is the mantissa width used
    in extended mode (ignored for doubles). ``log_space`` marks quantities that
    are only ever compared as logarithms.
    """

    mode: str = "double"
    bits: int = 53
    log_space: bool = False

    def __post_init__(self):
        if self.mode not in ("double", "extended"):
            raise ValueError(f"unknown precision mode {self.mode!r}")
        if self.mode == "extended" and self.bits < 64:
            raise ValueError("extended precision needs at least 64 mantissa bits")

    @property
    def is_extended(self) -> bool:
        return self.mode == "extended"


DOUBLE = Precision()


def extended(bits: int) -> Precision:
    return Precision(mode="extended", bits=int(bits))


@contextlib.contextmanager
def working_context(precision: Precision):
    """Set the gmpy2 working precision for the duration of a block.

    gmpy2 contexts are thread-local, so concurrent forward passes in separate
    threads do not clobber each other.
    """
    if not precision.is_extended:
        yield
        return
    with gmpy2.context(gmpy2.get_context(), precision=precision.bits):
        yield


def as_array(x, precision: Precision = DOUBLE) -> np.ndarray:
    """Convert ``x`` to the array type used by ``precision``."""
    if not precision.is_extended:
        return np.asarray(x, dtype=np.float64)
    arr = np.asarray(x, dtype=object)
    out = np.empty(arr.shape, dtype=object)
    with working_context(precision):
        flat = out.reshape(-1)
        for n, v in enumerate(arr.reshape(-1)):
            flat[n] = gmpy2.mpfr(v)
    return out


def to_float(x) -> np.ndarray:
    """Round an array (either mode) to float64."""
    arr = np.asarray(x)
    if arr.dtype == object:
        return np.vectorize(float, otypes=[np.float64])(arr) if arr.size else arr.astype(np.float64)
    return arr.astype(np.float64, copy=False)


_vexp = np.vectorize(gmpy2.exp, otypes=[object])


def exp_array(x: np.ndarray) -> np.ndarray:
    if x.dtype == object:
        return _vexp(x) if x.size else x.copy()
    return np.exp(x)


def relu(x: np.ndarray) -> np.ndarray:
    if x.dtype == object:
        zero = gmpy2.mpfr(0)
        return np.where(x > 0, x, zero)
    return np.maximum(x, 0.0)


def mp_log(x) -> float:
    """Natural log of a positive scalar of either type, returned as float."""
    if isinstance(x, float):
        return math.log(x)
    return float(gmpy2.log(x))
