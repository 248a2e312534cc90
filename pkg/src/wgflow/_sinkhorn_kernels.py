"""Numba inner loops for dense log-domain Sinkhorn.

Importing this module fails cleanly when numba is absent; transport.py falls
back to pure-numpy softmins in that case.  Inputs are always finite here: the
dense path masks zero-weight support points before building the problem.

The 1-d kernels work in *deviation form*: potentials are written as
``f = f0 + phi`` with ``(f0, g0)`` the exact unregularized duals, so the
log-plan entries ``(f0_i + g0_j - C_ij)/eps + (phi_i + psi_j)/eps`` are
bounded above by a small constant (dual feasibility) and no max-shift is
needed inside the log-sum-exp.  Squared costs are formed on the fly from the
sorted coordinates; each row only visits a window of the target support.
"""
import numba
import numpy as np

#: clamp on log-plan arguments; e^80 is far below float64 overflow even when
#: summed over every support point
ARG_CLAMP = 80.0


@numba.njit(parallel=True, fastmath=True)
def softmin_rows(C, pot, logw, eps):
    """out_i = -eps * log sum_j exp((pot_j - C_ij)/eps + logw_j), row-major C."""
    n, m = C.shape
    out = np.empty(n)
    for i in numba.prange(n):
        mx = -1e300
        for j in range(m):
            v = (pot[j] - C[i, j]) / eps + logw[j]
            if v > mx:
                mx = v
        acc = 0.0
        for j in range(m):
            acc += np.exp((pot[j] - C[i, j]) / eps + logw[j] - mx)
        out[i] = -eps * (np.log(acc) + mx)
    return out


@numba.njit(parallel=True, fastmath=True)
def plan_costs(C, f, g, loga, logb, eps):
    """Returns (<C, pi>, <f, row> + <g, col>) for the implied plan."""
    n, m = C.shape
    primal = 0.0
    dual_row = 0.0
    colmass = np.zeros(m)
    for i in range(n):
        row = 0.0
        for j in range(m):
            p = np.exp(loga[i] + logb[j] + (f[i] + g[j] - C[i, j]) / eps)
            primal += p * C[i, j]
            row += p
            colmass[j] += p
        dual_row += f[i] * row
    dual = dual_row
    for j in range(m):
        dual += g[j] * colmass[j]
    return primal, dual


@numba.njit(cache=False)
def slack_windows_1d(x, y, f0, g0, thresh):
    """Per-row windows where the dual slack ``f0_i + g0_j - (x_i - y_j)^2``
    exceeds ``thresh``.

    For chain-built duals on sorted supports the slack is unimodal in ``j``
    (the increment ``2 (y_j - y_{j-1})(x_i - x_{j-1})`` changes sign once), so
    expanding outward from the matched index is exact.
    """
    n, m = x.size, y.size
    lo = np.empty(n, np.int64)
    hi = np.empty(n, np.int64)
    for i in range(n):
        c = i if i < m else m - 1
        j = c
        while j > 0:
            d = x[i] - y[j - 1]
            if f0[i] + g0[j - 1] - d * d < thresh:
                break
            j -= 1
        lo[i] = j
        j = c + 1
        while j < m:
            d = x[i] - y[j]
            if f0[i] + g0[j] - d * d < thresh:
                break
            j += 1
        hi[i] = j
    return lo, hi


@numba.njit(parallel=True, fastmath=True)
def softmin_dev_1d_f32exp(x, y, f0, g0, psi_eps, lo, hi, inv_eps):
    """Deviation-form windowed softmin, float32 exponentials.

    out_i = phi_new_i = -eps * log sum_{j in window} exp(s0_ij/eps + psi_j/eps)
    with s0_ij = f0_i + g0_j - (x_i - y_j)^2 <= 0.  ``psi_eps`` is psi/eps and
    already carries the log-weights; accumulation is float64.
    """
    n = x.size
    out = np.empty(n)
    eps = 1.0 / inv_eps
    for i in numba.prange(n):
        xi = x[i]
        fi = f0[i]
        acc = 0.0
        for j in range(lo[i], hi[i]):
            d = xi - y[j]
            arg = (fi + g0[j] - d * d) * inv_eps + psi_eps[j]
            if arg > ARG_CLAMP:
                arg = ARG_CLAMP
            acc += np.exp(np.float32(arg))
        out[i] = -eps * np.log(acc)
    return out


@numba.njit(parallel=True, fastmath=True)
def softmin_dev_1d_f64exp(x, y, f0, g0, psi_eps, lo, hi, inv_eps):
    """Deviation-form windowed softmin, float64 exponentials (certification)."""
    n = x.size
    out = np.empty(n)
    eps = 1.0 / inv_eps
    for i in numba.prange(n):
        xi = x[i]
        fi = f0[i]
        acc = 0.0
        for j in range(lo[i], hi[i]):
            d = xi - y[j]
            arg = (fi + g0[j] - d * d) * inv_eps + psi_eps[j]
            if arg > ARG_CLAMP:
                arg = ARG_CLAMP
            acc += np.exp(arg)
        out[i] = -eps * np.log(acc)
    return out


@numba.njit(parallel=True, fastmath=True)
def plan_costs_1d(x, y, f, g, loga, logb, eps):
    """(<C, pi>, <f, row> + <g, col>) with on-the-fly 1-d squared costs."""
    n, m = x.size, y.size
    primal = 0.0
    dual_row = 0.0
    colmass = np.zeros(m)
    for i in range(n):
        row = 0.0
        for j in range(m):
            c = (x[i] - y[j]) ** 2
            p = np.exp(loga[i] + logb[j] + (f[i] + g[j] - c) / eps)
            primal += p * c
            row += p
            colmass[j] += p
        dual_row += f[i] * row
    dual = dual_row
    for j in range(m):
        dual += g[j] * colmass[j]
    return primal, dual
