"""Full-information baseline: reflection control at a known constant drift.

When the drift is known the optimal policy keeps the inventory between two
constant levels.  The marginal value w = V' satisfies the linear ODE
rho w = drift w' + (eta^2/2) w'' + C' between the levels and is pasted
C^1-smoothly onto the constants -K+ and K- at them, which pins down the
levels together with the two homogeneous-solution coefficients.  The outer
solver needs these levels both as brackets for the moving boundaries and
as far-field limits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import CostSpec, ModelParams
from .timequad import discounted_time_nodes

_HERMITE_N = 96


class SolverError(RuntimeError):
    pass


def _hermite_nodes():
    z, w = np.polynomial.hermite.hermgauss(_HERMITE_N)
    return z * np.sqrt(2.0), w / np.sqrt(np.pi)


def _resolvent_quadrature(x, drift, params: ModelParams, cost_fn, n_gl: int = 24):
    """E[int_0^inf e^{-rho s} f(X_s) ds] for X_s = x + drift s + eta W_s, by
    Gauss-Hermite in space and discount-substituted panels in time."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    s, w = discounted_time_nodes(params.rho, n_gl=n_gl)
    z, hw = _hermite_nodes()
    mean = x[:, None] + drift * s[None, :]
    sig = params.eta * np.sqrt(s)
    # inner expectation at every (x, s) node
    vals = np.zeros_like(mean)
    for zk, hwk in zip(z, hw):
        vals += hwk * np.asarray(cost_fn(mean + sig[None, :] * zk), dtype=float)
    return vals @ w


def resolvent_cost(x, drift: float, params: ModelParams, cost: CostSpec,
                   tol: float = 1e-8):
    """Expected discounted running cost of never intervening.

    Closed form for the quadratic cost; quadrature otherwise, with the
    achieved error estimated by node refinement.
    """
    if cost.is_quadratic:
        d = np.asarray(x, dtype=float) - cost.target
        rho = params.rho
        out = (d * d / rho + 2.0 * drift * d / rho**2
               + 2.0 * drift**2 / rho**3 + params.eta**2 / rho**2)
        return float(out) if out.ndim == 0 else out
    coarse = _resolvent_quadrature(x, drift, params, cost.c, n_gl=16)
    fine = _resolvent_quadrature(x, drift, params, cost.c, n_gl=32)
    err = float(np.max(np.abs(fine - coarse)))
    if err > tol:
        raise SolverError(f"resolvent quadrature did not converge: error estimate {err:.3e}")
    return float(fine[0]) if np.ndim(x) == 0 else fine


def _resolvent_derivatives(x, drift, params, cost):
    """(R'(x), R''(x)) of the resolvent, i.e. resolvents of C' and C''."""
    if cost.is_quadratic:
        d = np.asarray(x, dtype=float) - cost.target
        rho = params.rho
        rp = 2.0 * d / rho + 2.0 * drift / rho**2
        rpp = np.full_like(d, 2.0 / rho)
        return rp, rpp
    rp = _resolvent_quadrature(x, drift, params, cost.cprime, n_gl=32)
    rpp = _resolvent_quadrature(x, drift, params, cost.csecond, n_gl=32)
    return rp, rpp


@dataclass(frozen=True)
class OneDimSolution:
    """Constant reflection levels and marginal-value data at a known drift."""

    drift: float
    lower: float
    upper: float
    lambda_neg: float
    lambda_pos: float
    coeffs: tuple[float, float]
    residual: float
    params: ModelParams
    cost: CostSpec

    def __post_init__(self) -> None:
        if not self.lower < self.upper:
            raise ValueError(f"boundaries out of order: {self.lower} >= {self.upper}")
        if not self.lambda_neg < 0.0 < self.lambda_pos:
            raise ValueError("characteristic roots must straddle zero")
        p, c = self.params, self.cost
        if self.lower > float(c.cprime_inv(-p.rho * p.kplus)) + 1e-9:
            raise ValueError("lower level violates its marginal-cost bound")
        if self.upper < float(c.cprime_inv(p.rho * p.kminus)) - 1e-9:
            raise ValueError("upper level violates its marginal-cost bound")

    def value_derivative(self, x):
        """Marginal value w(x): -K+ below the band, K- above, smooth inside."""
        x = np.asarray(x, dtype=float)
        a, b = self.coeffs
        rp, _ = _resolvent_derivatives(np.clip(x, self.lower, self.upper),
                                       self.drift, self.params, self.cost)
        w = (a * self.lambda_neg * np.exp(self.lambda_neg * np.clip(x, self.lower, self.upper))
             + b * self.lambda_pos * np.exp(self.lambda_pos * np.clip(x, self.lower, self.upper))
             + rp)
        w = np.where(x <= self.lower, -self.params.kplus, w)
        w = np.where(x >= self.upper, self.params.kminus, w)
        return float(w) if w.ndim == 0 else w


def _characteristic_roots(drift: float, params: ModelParams) -> tuple[float, float]:
    # roots of (eta^2/2) L^2 + drift L - rho = 0
    e2 = params.eta**2
    disc = np.sqrt(drift * drift + 2.0 * params.rho * e2)
    return (-drift - disc) / e2, (-drift + disc) / e2


def _smoothfit_residual(z, drift, params, cost, lneg, lpos):
    a, b, lo, hi = z
    rp, rpp = _resolvent_derivatives(np.array([lo, hi]), drift, params, cost)
    eneg = np.exp(lneg * np.array([lo, hi]))
    epos = np.exp(lpos * np.array([lo, hi]))
    w = a * lneg * eneg + b * lpos * epos + rp
    wp = a * lneg**2 * eneg + b * lpos**2 * epos + rpp
    return np.array([w[0] + params.kplus, wp[0], w[1] - params.kminus, wp[1]])


def _linear_coeffs_from_derivatives(lo, hi, drift, params, cost, lneg, lpos):
    """(a, b) making w'(lo) = w'(hi) = 0 for the given band."""
    _, rpp = _resolvent_derivatives(np.array([lo, hi]), drift, params, cost)
    m = np.array([[lneg**2 * np.exp(lneg * lo), lpos**2 * np.exp(lpos * lo)],
                  [lneg**2 * np.exp(lneg * hi), lpos**2 * np.exp(lpos * hi)]])
    return np.linalg.solve(m, -rpp)


def _bisect_fallback(drift, params, cost, lneg, lpos, lo0, hi0):
    """Nested bracketing on (lo, hi) with (a, b) eliminated linearly."""
    from scipy.optimize import brentq

    hi_min = float(cost.cprime_inv(params.rho * params.kminus))
    lo_max = float(cost.cprime_inv(-params.rho * params.kplus))

    def value_residuals(lo, hi):
        a, b = _linear_coeffs_from_derivatives(lo, hi, drift, params, cost, lneg, lpos)
        return _smoothfit_residual(np.array([a, b, lo, hi]), drift, params, cost, lneg, lpos)

    def g_upper(hi, lo):
        return value_residuals(lo, hi)[2]

    def solve_upper(lo):
        a, b = hi_min + 1e-6, hi_min + 1.0
        while g_upper(a, lo) * g_upper(b, lo) > 0.0 and b - hi_min < 64.0:
            b = hi_min + 2.0 * (b - hi_min)
        return brentq(g_upper, a, b, args=(lo,), xtol=1e-13)

    def g_lower(lo):
        return value_residuals(lo, solve_upper(lo))[0]

    a, b = lo_max - 1e-6, lo_max - 1.0
    while g_lower(a) * g_lower(b) > 0.0 and lo_max - b < 64.0:
        b = lo_max - 2.0 * (lo_max - b)
    lo = brentq(g_lower, b, a, xtol=1e-13)
    hi = solve_upper(lo)
    ca, cb = _linear_coeffs_from_derivatives(lo, hi, drift, params, cost, lneg, lpos)
    return np.array([ca, cb, lo, hi])


def solve_constant_drift(drift: float, params: ModelParams, cost: CostSpec,
                         tol: float = 1e-12, max_iter: int = 80) -> OneDimSolution:
    """Reflection levels at a known drift by damped Newton on the C^1-fit
    system; falls back to nested bracketing if Newton stalls."""
    lneg, lpos = _characteristic_roots(drift, params)
    lo = float(cost.cprime_inv(-params.rho * params.kplus)) - 1.0
    hi = float(cost.cprime_inv(params.rho * params.kminus)) + 1.0
    a, b = _linear_coeffs_from_derivatives(lo, hi, drift, params, cost, lneg, lpos)
    z = np.array([a, b, lo, hi])

    def newton(z):
        f = _smoothfit_residual(z, drift, params, cost, lneg, lpos)
        for _ in range(max_iter):
            if np.max(np.abs(f)) < tol:
                break
            jac = np.zeros((4, 4))
            for k in range(4):
                h = 1e-7 * max(1.0, abs(z[k]))
                zp, zm = z.copy(), z.copy()
                zp[k] += h
                zm[k] -= h
                jac[:, k] = (_smoothfit_residual(zp, drift, params, cost, lneg, lpos)
                             - _smoothfit_residual(zm, drift, params, cost, lneg, lpos)) / (2 * h)
            try:
                step = np.linalg.solve(jac, -f)
            except np.linalg.LinAlgError:
                return z, f, False
            lam = 1.0
            for _ in range(40):
                zn = z + lam * step
                if zn[2] < zn[3]:  # keep the band ordered
                    fn = _smoothfit_residual(zn, drift, params, cost, lneg, lpos)
                    if np.max(np.abs(fn)) < np.max(np.abs(f)):
                        z, f = zn, fn
                        break
                lam *= 0.5
            else:
                return z, f, False
        return z, f, np.max(np.abs(f)) < tol

    z, f, ok = newton(z)
    if not ok:
        z = _bisect_fallback(drift, params, cost, lneg, lpos, lo, hi)
        z, f, ok = newton(z)
    res = float(np.max(np.abs(f)))
    if res > 1e-9:
        raise SolverError(f"constant-drift fit did not converge: residual {res:.3e}")
    return OneDimSolution(drift=drift, lower=float(z[2]), upper=float(z[3]),
                          lambda_neg=lneg, lambda_pos=lpos,
                          coeffs=(float(z[0]), float(z[1])), residual=res,
                          params=params, cost=cost)


def bounds_xstar(params: ModelParams, cost: CostSpec) -> tuple[float, float]:
    """Global band bounds (xplus_star, xminus_star): the lower level of the
    high-drift problem and the upper level of the low-drift problem."""
    xplus = solve_constant_drift(params.mu1, params, cost).lower
    xminus = solve_constant_drift(params.mu0, params, cost).upper
    if not xplus < xminus:
        raise SolverError(f"degenerate band bounds: {xplus} >= {xminus}")
    return xplus, xminus
