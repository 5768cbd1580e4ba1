"""Shared random problem instances for solver and network tests."""

import numpy as np

from chromunroll.operators import make_forward
from chromunroll.sigmodel import KernelSpec, sample_kernel

D0_KERNEL = KernelSpec(0.5, 0.2)


def forward(n):
    return make_forward(sample_kernel(D0_KERNEL), 1.0, n)


def instance(n, seed, sigma_e=0.02, spikes=None):
    """Blurred sparse spike train plus noise; returns ``(H, s, z)``."""
    rng = np.random.default_rng(seed)
    H = forward(n)
    P = spikes if spikes is not None else max(2, n // 16)
    s = np.zeros(n)
    s[rng.choice(n, P, replace=False)] = np.abs(rng.standard_normal(P))
    z = H.apply(s) + sigma_e * rng.standard_normal(n)
    return H, s, z


def l1_ball_reference(H, z, rho):
    """min ||x||_1 s.t. ||Hx - z|| <= rho via an interior-point conic solver."""
    import cvxpy as cp

    A = H.to_dense()
    n = A.shape[1]
    x, t = cp.Variable(n), cp.Variable(n)
    prob = cp.Problem(cp.Minimize(cp.sum(t)), [x <= t, -x <= t, cp.norm(A @ x - z, 2) <= rho])
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    return x.value, prob.value


def soft_margin(model, z):
    """Smallest distance ``||v| - theta|`` over every soft-threshold call of a pass."""
    from chromunroll import autodiff as ad
    from chromunroll.unrolled import forward

    _, _, ft = forward(model, z)
    margins = [np.inf]
    for _, _, vals, _, vjp in ft.tape.nodes:
        if vjp is ad.soft_threshold.vjp:
            v, theta = vals
            margins.append(float(np.min(np.abs(np.abs(v) - theta))))
    return min(margins)


def gradient_probes(variant, count, seed, n=16, K=4, cg_iters=5, h=1e-5):
    """Reverse-mode vs central differences on random (instance, parameter) probes.

    Returns ``count`` pairs ``(rel_error, excluded)``; ``excluded`` is set when
    a soft-threshold input sits within ``1e-6`` of its kink at the probe or at
    either finite-difference point. Probes whose reverse-mode and
    finite-difference values are both exactly zero (parameter without
    influence, e.g. all coefficients thresholded away) are redrawn.
    """
    from chromunroll.unrolled import UnrolledModel, backward, forward

    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        H, s, z = instance(n, int(rng.integers(2**31)), spikes=2)
        p = H.peaks(s)
        base = UnrolledModel(variant, K, H, cg_iters=cg_iters)
        raw = {k: v + rng.uniform(-0.5, 0.5, v.shape) for k, v in base.raw.items()}
        model = UnrolledModel(variant, K, H, raw=raw, cg_iters=cg_iters)
        _, p_hat, ft = forward(model, z)
        g = backward(ft, grad_p=2.0 * (p_hat - p) / n).flat(model.names)
        j = int(rng.integers(g.size))
        vec = model.flat()

        def loss(delta):
            m = UnrolledModel(variant, K, H, raw=raw, cg_iters=cg_iters)
            v = vec.copy()
            v[j] += delta
            m.set_flat(v)
            return m, float(np.mean((forward(m, z)[1] - p) ** 2))

        m_up, f_up = loss(h)
        m_dn, f_dn = loss(-h)
        fd = (f_up - f_dn) / (2 * h)
        excluded = min(soft_margin(m, z) for m in (model, m_up, m_dn)) < 1e-6
        denom = max(abs(fd), abs(g[j]))
        if denom == 0:
            continue
        out.append((abs(g[j] - fd) / denom, excluded))
    return out


ACCEPTANCE_LINES = []


def verdict(criterion, ok, detail=""):
    """Record and print one acceptance line; returns ``ok``."""
    line = f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'}" + (f"  ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok
