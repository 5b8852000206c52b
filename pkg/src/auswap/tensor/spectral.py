"""Spectral normalization with a persistent power-iteration estimate.

A weight of shape (out, ...) is viewed as the 2-D matrix W (out x rest).
The state keeps a unit-norm left vector `u`; each training step refines it
with `n_power_iterations` rounds of v = normalize(W^T u), u = normalize(W v),
then the layer outputs W / sigma with sigma = ||W^T u||.  Because sigma is
a plain function of W for fixed u, the backward rule
    d sigma / dW = u v^T,   v = W^T u / sigma
is exact, and finite differences (with the estimate frozen) agree to
machine precision.

Refinement is gated by `power_iteration_scope`: inside the scope each state
updates at most once per step token, no matter how many forwards the step
runs; outside (inference, gradient checks) the stored estimate is used
as-is.
"""

from __future__ import annotations

import contextlib
from typing import Optional

import numpy as np

from ..errors import NumericsError
from .core import Tensor, _make

_CURRENT_STEP: Optional[int] = None


@contextlib.contextmanager
def power_iteration_scope(step: int):
    """Mark a training step; spectral-norm states refine once per token."""
    global _CURRENT_STEP
    prev = _CURRENT_STEP
    _CURRENT_STEP = step
    try:
        yield
    finally:
        _CURRENT_STEP = prev


class SpectralNormState:
    """Persistent left singular-vector estimate for one weight."""

    def __init__(self, out_dim: int, rng: np.random.Generator,
                 n_power_iterations: int = 1):
        u = rng.standard_normal(out_dim)
        self.u = u / np.linalg.norm(u)
        self.n_power_iterations = n_power_iterations
        self.last_step: Optional[int] = None

    def sync(self, u: np.ndarray):
        # checkpoint restore; step tokens never repeat, so last_step resets
        self.u = np.asarray(u, dtype=np.float64)
        self.last_step = None


def spectral_normalize(weight: Tensor, state: SpectralNormState) -> Tensor:
    """Return weight / sigma_hat, refining the estimate once per step."""
    w2 = weight.data.reshape(weight.shape[0], -1)
    if _CURRENT_STEP is not None and state.last_step != _CURRENT_STEP:
        u = state.u
        for _ in range(state.n_power_iterations):
            v = w2.T @ u
            nv = np.linalg.norm(v)
            if nv == 0.0:
                raise NumericsError("spectral norm undefined for zero weight")
            v /= nv
            u = w2 @ v
            nu = np.linalg.norm(u)
            if nu == 0.0:
                raise NumericsError("spectral norm undefined for zero weight")
            u /= nu
        state.u = u
        state.last_step = _CURRENT_STEP

    wtu = w2.T @ state.u
    sigma = np.linalg.norm(wtu)
    if sigma == 0.0:
        raise NumericsError("spectral norm undefined for zero weight")
    v = wtu / sigma
    y = weight.data / sigma
    uvt = np.outer(state.u, v).reshape(weight.shape)

    def bw(g):
        inner = float((g * y).sum())
        return ((g - inner * uvt) / sigma,)

    return _make("spectral_norm", y, (weight,), bw)


def estimate_sigma(weight_matrix: np.ndarray, iterations: int,
                   rng: np.random.Generator) -> float:
    """Standalone power-iteration estimate of the top singular value."""
    state = SpectralNormState(weight_matrix.shape[0], rng,
                              n_power_iterations=iterations)
    with power_iteration_scope(0):
        t = Tensor(weight_matrix)
        spectral_normalize(t, state)
    return float(np.linalg.norm(weight_matrix.reshape(weight_matrix.shape[0], -1).T @ state.u))
