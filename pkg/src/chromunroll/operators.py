"""Linear operators acting on the spike domain.

All operators accept a single vector or a batch of row vectors (last axis is
the signal axis).
"""

from __future__ import annotations

from functools import cached_property

import numpy as np

from .kernels import conv_same, corr_same
from .sigmodel import SampledKernel, gaussian_blur_taps


class ConvergenceError(RuntimeError):
    def __init__(self, msg, last_estimate=None):
        super().__init__(msg)
        self.last_estimate = last_estimate


class LinearOperator:
    """Square-or-rectangular linear map with an explicit adjoint."""

    def __init__(self, apply, apply_adjoint, dim_in, dim_out=None):
        self._apply = apply
        self._adjoint = apply_adjoint
        self.dim_in = int(dim_in)
        self.dim_out = int(dim_in if dim_out is None else dim_out)

    def apply(self, x):
        return self._apply(x)

    def apply_adjoint(self, y):
        return self._adjoint(y)

    def __call__(self, x):
        return self.apply(x)

    @property
    def T(self) -> "LinearOperator":
        return LinearOperator(self._adjoint, self._apply, self.dim_out, self.dim_in)

    def to_dense(self) -> np.ndarray:
        return self.apply(np.eye(self.dim_in)).T

    @cached_property
    def norm(self) -> float:
        return estimate_operator_norm(self)


def identity(n: int) -> LinearOperator:
    return LinearOperator(lambda x: np.array(x, dtype=np.float64), lambda y: np.array(y, dtype=np.float64), n)


def diagonal(d) -> LinearOperator:
    d = np.asarray(d, dtype=np.float64)
    return LinearOperator(lambda x: d * x, lambda y: d * y, len(d))


def matrix(A) -> LinearOperator:
    A = np.asarray(A, dtype=np.float64)
    return LinearOperator(lambda x: x @ A.T, lambda y: y @ A, A.shape[1], A.shape[0])


def convolution(kernel: SampledKernel, n: int) -> LinearOperator:
    """Zero-padded "same" convolution with a sampled kernel."""
    taps, off = kernel.taps, kernel.offset
    return LinearOperator(
        lambda x: conv_same(x, taps, off),
        lambda y: corr_same(y, taps, off),
        n,
    )


class ForwardModel(LinearOperator):
    """Peak convolution followed by Gaussian blur, ``H x = G (pi * x)``.

    ``peaks`` maps spikes to the clean peak signal; ``apply`` includes the
    blur. The operator norm is estimated once and cached.
    """

    def __init__(self, kernel: SampledKernel, sigma_g: float, n: int):
        self.kernel = kernel
        self.sigma_g = float(sigma_g)
        self.blur = gaussian_blur_taps(sigma_g)
        super().__init__(self._forward, self._backward, n)

    def _forward(self, x):
        k, g = self.kernel, self.blur
        return conv_same(conv_same(x, k.taps, k.offset), g.taps, g.offset)

    def _backward(self, y):
        k, g = self.kernel, self.blur
        return corr_same(corr_same(y, g.taps, g.offset), k.taps, k.offset)

    def peaks(self, x):
        """Clean peak signal ``pi * x`` (no blur)."""
        return conv_same(x, self.kernel.taps, self.kernel.offset)

    def normal(self, x):
        """``H^T H x``."""
        return self._backward(self._forward(x))


def make_forward(kernel: SampledKernel, sigma_g: float, n: int) -> ForwardModel:
    return ForwardModel(kernel, sigma_g, n)


def estimate_operator_norm(op: LinearOperator, tol: float = 1e-8, max_iter: int = 5000) -> float:
    """Spectral norm by power iteration on ``H^T H``.

    The start vector is the half-period sine, which is close to the leading
    singular vector of banded nonnegative convolutions and keeps the
    iteration count small even when the top of the spectrum is clustered.
    Converged when successive norm estimates differ by less than
    ``tol`` relative.
    """
    n = op.dim_in
    v = np.sin(np.pi * (np.arange(n) + 1.0) / (n + 1.0))
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = op.apply_adjoint(op.apply(v))
        lam = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        new = np.sqrt(max(lam, 0.0))
        if abs(new - est) <= tol * max(new, np.finfo(float).tiny):
            # ||H^T H v|| >= v^T H^T H v for unit v; both stay below L^2
            return float(max(new, np.sqrt(nw)))
        est = new
        v = w / nw
    raise ConvergenceError(
        f"power iteration did not converge in {max_iter} iterations", last_estimate=est
    )
