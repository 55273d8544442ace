"""Pure numpy implementations of the hot kernels.

Semantics match ``_kernels.pyx`` exactly; only rounding may differ in the
last ulp because numpy's ``logaddexp`` and libm's ``log1p`` are not the same
code path.
"""

import math

import numpy as np

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def _component_logs(theta, lam, sigma0, sigma1):
    l0 = math.log1p(-lam) - math.log(sigma0) - _HALF_LOG_2PI - 0.5 * (theta / sigma0) ** 2
    l1 = math.log(lam) - math.log(sigma1) - _HALF_LOG_2PI - 0.5 * (theta / sigma1) ** 2
    return l0, l1


def mixture_logpdf_grad(theta, lam, sigma0, sigma1):
    theta = np.asarray(theta, dtype=np.float64)
    l0, l1 = _component_logs(theta, lam, sigma0, sigma1)
    lse = np.logaddexp(l0, l1)
    r0 = np.exp(l0 - lse)
    r1 = np.exp(l1 - lse)
    grad = -theta * (r0 / sigma0**2 + r1 / sigma1**2)
    return float(lse.sum()), grad


def slab_mask(theta, lam, sigma0, sigma1):
    l0, l1 = _component_logs(np.asarray(theta, dtype=np.float64), lam, sigma0, sigma1)
    return l1 >= l0


def sghmc_update(Z, v, grad, noise, rows, eps, eta, leapfrog):
    """In-place momentum/position update on ``rows`` of ``Z`` and ``v``.

    Returns False if any updated entry is non-finite.
    """
    v_old = v[rows]
    v_new = (1.0 - eps * eta) * v_old + eps * grad + math.sqrt(2.0 * eps * eta) * noise
    step = v_new if leapfrog else v_old
    z_new = Z[rows] + eps * step
    v[rows] = v_new
    Z[rows] = z_new
    return bool(np.isfinite(v_new).all() and np.isfinite(z_new).all())


def tanh_backward(delta, activation):
    return delta * (1.0 - activation * activation)
