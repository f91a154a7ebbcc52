"""Dense vector/matrix primitives and the optimizer step.

Everything here operates on float64 numpy arrays and is a pure function of
its inputs (Adam returns fresh state rather than mutating).  Gradient helpers
for the nonlinearities live next to their forward definitions so the
hand-derived backward passes in ``model`` stay readable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _as_float_array(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two equal-length vectors."""
    va = _as_float_array(a, "a")
    vb = _as_float_array(b, "b")
    if va.shape != vb.shape:
        raise ValueError(f"dimension mismatch: {va.shape} vs {vb.shape}")
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for zero-norm input")
    return float(va @ vb / (na * nb))


def l2_normalize(a) -> np.ndarray:
    """Scale a vector to unit L2 norm, preserving direction."""
    va = _as_float_array(a, "a")
    n = np.linalg.norm(va)
    if n == 0.0:
        raise ValueError("cannot normalize a zero-norm vector")
    return va / n


def gelu(x):
    """GELU activation, exact Gaussian-CDF (erf) form: x * Phi(x)."""
    x = np.asarray(x, dtype=np.float64)
    out = x * 0.5 * (1.0 + erf(x / _SQRT2))
    return float(out) if out.ndim == 0 else out


def gelu_grad(x):
    """Derivative of the exact GELU: Phi(x) + x * phi(x)."""
    x = np.asarray(x, dtype=np.float64)
    phi = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    out = 0.5 * (1.0 + erf(x / _SQRT2)) + x * phi
    return float(out) if out.ndim == 0 else out


def layer_norm(x, gain, bias, eps: float = 1e-5) -> np.ndarray:
    """Normalize to zero mean / unit variance (population 1/n), then affine."""
    vx = _as_float_array(x, "x")
    vg = _as_float_array(gain, "gain")
    vb = _as_float_array(bias, "bias")
    if not (vx.shape == vg.shape == vb.shape):
        raise ValueError(f"length mismatch: x {vx.shape}, gain {vg.shape}, bias {vb.shape}")
    if eps <= 0 and np.var(vx) == 0.0:
        raise ValueError("eps must be > 0 for constant input")
    mean = vx.mean()
    var = vx.var()
    return vg * (vx - mean) / np.sqrt(var + eps) + vb


@dataclass
class AdamState:
    """First/second moment buffers for one parameter tensor."""

    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros_like(cls, params: np.ndarray) -> "AdamState":
        return cls(m=np.zeros_like(params, dtype=np.float64), v=np.zeros_like(params, dtype=np.float64))

    def copy(self) -> "AdamState":
        return AdamState(m=self.m.copy(), v=self.v.copy())


def adam_step(
    params: np.ndarray,
    grads: np.ndarray,
    state: AdamState,
    t: int,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns (new_params, new_state).

    The epsilon sits outside the square root, so a constant unit gradient
    moves each coordinate by exactly lr / (1 + eps) on the first step.
    """
    if params.shape != grads.shape or params.shape != state.m.shape or params.shape != state.v.shape:
        raise ValueError("params, grads, and moment buffers must share a shape")
    if t < 1:
        raise ValueError("step index t must be >= 1")
    m = beta1 * state.m + (1.0 - beta1) * grads
    v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_params, AdamState(m=m, v=v)
