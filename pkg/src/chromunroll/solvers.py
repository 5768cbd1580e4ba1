"""Classical iterative solvers for the three restoration problems.

* ISTA for ``min 0.5*||Hx - z||^2 + chi*||x||_1``
* Chambolle-Pock primal-dual for ``min ||x||_1  s.t.  ||Hx - z|| <= rho``
* half-quadratic majorize-minimize for ``min 0.5*||Hx - z||^2 + sum psi(x_i)``

The single-iteration maps (:func:`ista_step`, :func:`pd_step`,
:func:`hq_step`) are built from :mod:`chromunroll.autodiff` primitives and
are reused verbatim by the unrolled networks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    apply_adjoint,
    apply_op,
    hq_weight,
    mul,
    project_l2_ball,
    psi,
    psi_prime,
    rowdot,
    safe_div,
    soft_threshold,
    value,
)

__all__ = [
    "DivergenceError",
    "HqConfig",
    "IndefiniteSystemError",
    "InfeasibleError",
    "IstaConfig",
    "PdConfig",
    "SolveResult",
    "cg_solve",
    "hq_solve",
    "hq_step",
    "hq_weight",
    "ista_solve",
    "ista_step",
    "pd_step",
    "primal_dual_solve",
    "project_l2_ball",
    "soft_threshold",
]


class DivergenceError(RuntimeError):
    def __init__(self, msg, iteration):
        super().__init__(msg)
        self.iteration = iteration


class InfeasibleError(RuntimeError):
    pass


class IndefiniteSystemError(RuntimeError):
    pass


@dataclass
class SolveResult:
    x: np.ndarray
    trace: list
    iterations: int
    converged: bool
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True)
class IstaConfig:
    chi: float
    gamma: float | None = None
    max_iter: int = 1000
    tol: float = 1e-8

    def __post_init__(self):
        if not self.chi > 0:
            raise ValueError(f"chi must be positive, got {self.chi}")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    def step(self, L: float) -> float:
        gamma = 1.0 / L**2 if self.gamma is None else self.gamma
        if gamma * L**2 > 1.0 + 1e-9:
            raise ValueError(f"gamma={gamma} exceeds 1/L^2={1.0 / L**2}")
        return gamma


@dataclass(frozen=True)
class PdConfig:
    rho: float
    tau: float | None = None
    sigma: float | None = None
    max_iter: int = 5000
    tol: float = 1e-8

    def __post_init__(self):
        if not self.rho >= 0:
            raise ValueError(f"rho must be nonnegative, got {self.rho}")
        for name in ("tau", "sigma"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive, got {v}")

    def steps(self, L: float) -> tuple:
        tau = 0.99 / L if self.tau is None else self.tau
        sigma = 0.99 / L if self.sigma is None else self.sigma
        if tau * sigma * L**2 > 1.0 + 1e-9:
            raise ValueError(f"tau*sigma*L^2 = {tau * sigma * L**2} > 1")
        return tau, sigma


@dataclass(frozen=True)
class HqConfig:
    lambda1: float = 0.1
    lambda2: float = 0.1
    delta1: float = 1.0
    delta2: float = 1.0
    max_iter: int = 200
    cg_iters: int = 20
    tol: float = 1e-10
    monotone_rtol: float | None = 1e-8

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be nonnegative")
        if not (self.delta1 > 0 and self.delta2 > 0):
            raise ValueError("delta1 and delta2 must be positive")
        if self.cg_iters < 1:
            raise ValueError("cg_iters must be >= 1")

    @property
    def params(self) -> tuple:
        return self.lambda1, self.lambda2, self.delta1, self.delta2


# -- one-iteration maps ------------------------------------------------------

def ista_step(op, x, z, gamma, chi):
    """Forward-backward step with step ``gamma`` and l1 weight ``chi``."""
    r = apply_op(op, x) - z
    return soft_threshold(x - gamma * apply_adjoint(op, r), gamma * chi)


def pd_step(op, x, xbar, y, z, tau, sigma, rho):
    """One Chambolle-Pock iteration; returns ``(x, xbar, y)``.

    The dual update is the prox of the conjugate of the ball indicator,
    ``v - sigma * P_ball(v / sigma)`` with ``v = y + sigma * H xbar``.
    """
    v = y + sigma * apply_op(op, xbar)
    y_new = v - sigma * project_l2_ball(v / sigma, z, rho)
    x_new = soft_threshold(x - tau * apply_adjoint(op, y_new), tau)
    return x_new, 2.0 * x_new - x, y_new


def cg_solve(matvec, b, iters, check=True):
    """Fixed-count conjugate gradients from a zero start, row-batched.

    Rows whose residual reaches exactly zero stay put (all updates vanish).
    Raises :class:`IndefiniteSystemError` on negative curvature when
    ``check`` is set.
    """
    x = np.zeros(np.shape(value(b)))
    r = b
    p = b
    rr = rowdot(r, r)
    for _ in range(iters):
        Ap = matvec(p)
        pAp = rowdot(p, Ap)
        if check and np.any(value(pAp) < 0):
            raise IndefiniteSystemError("negative curvature in conjugate gradients")
        alpha = safe_div(rr, pAp)
        x = x + alpha * p
        r = r - alpha * Ap
        rr_new = rowdot(r, r)
        p = r + safe_div(rr_new, rr) * p
        rr = rr_new
    return x


def hq_step(op, x, z, l1, l2, d1, d2, cg_iters, check=True):
    """Majorize-minimize step ``x - A^{-1} grad F(x)``, ``A = H^T H + diag(w(x))``."""
    grad = apply_adjoint(op, apply_op(op, x) - z) + psi_prime(x, l1, l2, d1, d2)
    w = hq_weight(x, l1, l2, d1, d2)

    def matvec(p):
        return apply_adjoint(op, apply_op(op, p)) + mul(w, p)

    return x - cg_solve(matvec, grad, cg_iters, check=check)


# -- objectives --------------------------------------------------------------

def ista_objective(op, x, z, chi):
    r = op.apply(x) - z
    return 0.5 * float(r @ r) + chi * float(np.abs(x).sum())


def hq_objective(op, x, z, cfg: HqConfig):
    r = op.apply(x) - z
    return 0.5 * float(r @ r) + float(psi(x, *cfg.params).sum())


def hq_gradient(op, x, z, cfg: HqConfig):
    return op.apply_adjoint(op.apply(x) - z) + psi_prime(x, *cfg.params)


def _rel_change(new, old):
    return float(np.linalg.norm(new - old) / max(np.linalg.norm(old), 1.0))


def _rises(new, old, rtol):
    return new - old > rtol * max(abs(old), 1e-300)


# -- solvers -----------------------------------------------------------------

def ista_solve(op, z, cfg: IstaConfig, L: float | None = None) -> SolveResult:
    """Iterative soft thresholding from ``x0 = 0``.

    The trace holds the objective at every iterate, starting with ``x0``.
    Raises :class:`DivergenceError` if the objective rises by more than
    ``1e-10`` relative.
    """
    z = np.asarray(z, dtype=np.float64)
    L = op.norm if L is None else L
    gamma = cfg.step(L)
    x = np.zeros(op.dim_in)
    F = ista_objective(op, x, z, cfg.chi)
    trace = [F]
    converged = False
    k = 0
    for k in range(1, cfg.max_iter + 1):
        x_new = ista_step(op, x, z, gamma, cfg.chi)
        F_new = ista_objective(op, x_new, z, cfg.chi)
        if _rises(F_new, F, 1e-10):
            raise DivergenceError(f"ISTA objective increased at iteration {k}", k)
        trace.append(F_new)
        step = float(np.linalg.norm(x_new - x))
        change = step / max(float(np.linalg.norm(x)), 1.0)
        x, F = x_new, F_new
        # relative rule, plus an absolute one so the fixed-point residual
        # (never larger than the last step) is below tol as well
        if change < cfg.tol and step < cfg.tol:
            converged = True
            break
    return SolveResult(x=x, trace=trace, iterations=k, converged=converged, extra={"gamma": gamma})


def primal_dual_solve(op, z, cfg: PdConfig, L: float | None = None) -> SolveResult:
    """Chambolle-Pock iterations for the ball-constrained l1 problem.

    The trace holds ``(||x||_1, max(||Hx - z|| - rho, 0))`` per iterate.
    """
    z = np.asarray(z, dtype=np.float64)
    L = op.norm if L is None else L
    tau, sigma = cfg.steps(L)
    x = np.zeros(op.dim_in)
    xbar = x.copy()
    y = np.zeros(op.dim_out)
    trace = []
    converged = False
    k = 0
    for k in range(1, cfg.max_iter + 1):
        x_new, xbar, y_new = pd_step(op, x, xbar, y, z, tau, sigma, cfg.rho)
        viol = max(float(np.linalg.norm(op.apply(x_new) - z)) - cfg.rho, 0.0)
        trace.append((float(np.abs(x_new).sum()), viol))
        change = max(_rel_change(x_new, x), _rel_change(y_new, y))
        x, y = x_new, y_new
        if change < cfg.tol and viol <= max(cfg.tol, 1e-12) * max(cfg.rho, 1.0):
            converged = True
            break
    if not converged and _stagnating(trace, cfg.tol):
        raise InfeasibleError(
            f"constraint violation stalled at {trace[-1][1]:.3e} after {k} iterations; "
            f"rho={cfg.rho} is likely below the distance from z to range(H)"
        )
    return SolveResult(
        x=x, trace=trace, iterations=k, converged=converged, extra={"tau": tau, "sigma": sigma, "y": y}
    )


def _stagnating(trace, tol, window=200):
    if len(trace) < 2 * window:
        return False
    viol = np.array([t[1] for t in trace])
    recent = viol[-window:].min()
    before = viol[-2 * window : -window].min()
    return recent > max(tol, 1e-6) and recent > 0.99 * before


def hq_solve(op, z, cfg: HqConfig) -> SolveResult:
    """Half-quadratic majorize-minimize iterations from ``x0 = 0``."""
    z = np.asarray(z, dtype=np.float64)
    x = np.zeros(op.dim_in)
    F = hq_objective(op, x, z, cfg)
    trace = [F]
    converged = False
    k = 0
    for k in range(1, cfg.max_iter + 1):
        x_new = hq_step(op, x, z, *cfg.params, cfg.cg_iters)
        F_new = hq_objective(op, x_new, z, cfg)
        if not math.isfinite(F_new):
            raise DivergenceError(f"HQ objective non-finite at iteration {k}", k)
        if cfg.monotone_rtol is not None and _rises(F_new, F, cfg.monotone_rtol):
            raise DivergenceError(f"HQ objective increased at iteration {k}", k)
        trace.append(F_new)
        change = _rel_change(x_new, x)
        x, F = x_new, F_new
        if change < cfg.tol:
            converged = True
            break
    return SolveResult(x=x, trace=trace, iterations=k, converged=converged)
