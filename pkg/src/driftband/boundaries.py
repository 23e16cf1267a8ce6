"""Free-boundary solver for the moving reflection band.

The two band edges, expressed in parabolic coordinates as nondecreasing
1-Lipschitz curves of y, satisfy a coupled system of integral equations:
at a boundary point the discounted expectation of the piecewise marginal
cost (weighted by the likelihood weight q) equals the corresponding
intervention cost times q.  The solver iterates a projected Picard map on
a y-grid: each sweep re-solves the two scalar equations row by row against
the frozen previous curves, then projects the result back onto the
admissible class (nondecreasing, 1-Lipschitz, bracketed by the
full-information levels).

A useful reduction keeps everything well scaled: dividing the equation by
q(x, y) turns the exponentially tilted part of the kernel into a plain
Gaussian integral centred on the high-drift trajectory, so the normalised
right-hand side is the belief-weighted mixture

    (1 - pi) * J(x + mu0 s)  +  pi * J(x + mu1 s),   pi = logistic(beta (x-y)),

where J is a truncated-Gaussian band integral.  No exponentials of large
arguments ever appear.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtr

from .model import CostSpec, ModelParams, log_weight_q
from .onedim import solve_constant_drift
from .timequad import geometric_panel_nodes

_SQRT2PI = np.sqrt(2.0 * np.pi)
BRACKET_MARGIN = 1.0  # inventory units beyond the full-information levels


class BoundaryError(RuntimeError):
    pass


def _npdf(z):
    return np.exp(-0.5 * z * z) / _SQRT2PI


# ---------------------------------------------------------------------------
# truncated-Gaussian band integrals
# ---------------------------------------------------------------------------

def gaussian_band_integral(cut_lo, cut_hi, mean, sigma, cost: CostSpec,
                           w_lo: float, w_hi: float):
    """J = int_{lo}^{hi} C'(z) N(z; mean, sigma^2) dz + w_hi P(Z >= hi) + w_lo P(Z <= lo).

    Closed form for the quadratic cost; 64-node Gauss-Legendre on the
    (bounded) middle piece otherwise.  All arguments broadcast.
    """
    cut_lo, cut_hi, mean, sigma = np.broadcast_arrays(
        np.asarray(cut_lo, float), np.asarray(cut_hi, float),
        np.asarray(mean, float), np.asarray(sigma, float))
    a = (cut_lo - mean) / sigma
    b = (cut_hi - mean) / sigma
    cdf_a = ndtr(a)
    tail_hi = ndtr(-b)
    if cost.is_quadratic:
        mid = 2.0 * ((mean - cost.target) * (1.0 - cdf_a - tail_hi)
                     - sigma * (_npdf(b) - _npdf(a)))
    else:
        zg, wg = np.polynomial.legendre.leggauss(64)
        lo = np.maximum(cut_lo, mean - 9.0 * sigma)
        hi = np.minimum(cut_hi, mean + 9.0 * sigma)
        half = np.maximum(0.5 * (hi - lo), 0.0)
        midp = 0.5 * (hi + lo)
        z = midp[..., None] + half[..., None] * zg
        integ = np.asarray(cost.cprime(z), float) * _npdf((z - mean[..., None]) / sigma[..., None])
        mid = (integ @ wg) * half / sigma
    out = mid + w_hi * tail_hi + w_lo * cdf_a
    return float(out) if out.ndim == 0 else out


def inner_integral(cut_lo: float, cut_hi: float, y_s: float, m: float, var: float,
                   params: ModelParams, cost: CostSpec) -> float:
    """Single time-slice kernel of the boundary equations.

    Integrates q(z, y_s) {C'(z) on (cut_lo, cut_hi), rho K- above, -rho K+
    below} against a Gaussian density with mean ``m`` and variance ``var``.
    The intervention weights carry the discount rate, matching the
    dynamic-programming identity the equations are derived from.  The
    exponentially weighted part is folded into a second plain Gaussian
    integral with tilted mean m + beta var.
    """
    if var <= 0.0:
        raise ValueError("var must be positive")
    if not cut_lo < cut_hi:
        raise ValueError("band cuts out of order")
    sigma = np.sqrt(var)
    w_lo = -params.rho * params.kplus
    w_hi = params.rho * params.kminus
    base = gaussian_band_integral(cut_lo, cut_hi, m, sigma, cost, w_lo, w_hi)
    beta = params.beta
    tilt = np.exp(beta * (m - y_s) + 0.5 * beta * beta * var)
    tilted = gaussian_band_integral(cut_lo, cut_hi, m + beta * var, sigma, cost, w_lo, w_hi)
    return float(base + tilt * tilted)


# ---------------------------------------------------------------------------
# admissible-class projection
# ---------------------------------------------------------------------------

def isotonic_projection(values: np.ndarray) -> np.ndarray:
    """L2 projection onto nondecreasing sequences (pool adjacent violators)."""
    v = np.asarray(values, dtype=float)
    n = v.shape[0]
    level = v.copy()
    weight = np.ones(n)
    idx = np.zeros(n, dtype=np.intp)
    top = -1
    for i in range(n):
        top += 1
        level[top] = v[i]
        weight[top] = 1.0
        idx[top] = i
        while top > 0 and level[top - 1] > level[top]:
            wsum = weight[top - 1] + weight[top]
            level[top - 1] = (weight[top - 1] * level[top - 1] + weight[top] * level[top]) / wsum
            weight[top - 1] = wsum
            top -= 1
    out = np.empty(n)
    start = 0
    for k in range(top + 1):
        end = idx[k + 1] if k < top else n
        out[start:end] = level[k]
        start = end
    return out


def project_band_curve(ygrid: np.ndarray, values: np.ndarray,
                       lo: float, hi: float) -> np.ndarray:
    """Project a sampled curve onto {nondecreasing, 1-Lipschitz, in [lo, hi]}."""
    out = np.clip(isotonic_projection(values), lo, hi)
    dy = np.diff(ygrid)
    for i in range(out.shape[0] - 1):
        cap = out[i] + dy[i]
        if out[i + 1] > cap:
            out[i + 1] = cap
    return out


# ---------------------------------------------------------------------------
# boundary containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundaryPair:
    """Sampled band edges in parabolic coordinates.

    ``cplus`` is the replenishment edge (raise inventory when below),
    ``cminus`` the unloading edge.  Both are nondecreasing and 1-Lipschitz
    on the grid; the stated bounds hold sample by sample.
    """

    ygrid: np.ndarray
    cplus: np.ndarray
    cminus: np.ndarray
    residual: float
    xplus_star: float
    xminus_star: float
    iterations: int = 0
    converged: bool = True
    equation_residual: float = 0.0
    # per-row validity flags set by extraction routines; None = all rows good
    row_ok: np.ndarray | None = None

    def __post_init__(self) -> None:
        y = np.asarray(self.ygrid, float)
        if y.ndim != 1 or y.shape[0] < 2 or np.any(np.diff(y) <= 0.0):
            raise ValueError("ygrid must be strictly increasing with >= 2 nodes")
        dy = np.diff(y)
        for name, c in (("cplus", self.cplus), ("cminus", self.cminus)):
            c = np.asarray(c, float)
            if c.shape != y.shape:
                raise ValueError(f"{name} shape does not match ygrid")
            d = np.diff(c)
            if np.any(d < 0.0):
                raise ValueError(f"{name} must be nondecreasing")
            if np.any(c[1:] > c[:-1] + dy):
                raise ValueError(f"{name} violates the Lipschitz-1 bound")
        if not np.all(self.cplus < self.cminus):
            raise ValueError("band edges must stay strictly separated")
        if np.any(self.cplus < self.xplus_star - 1e-9) or np.any(self.cminus > self.xminus_star + 1e-9):
            raise ValueError("band edges exceed the full-information bounds")

    def cplus_at(self, y):
        return np.interp(y, self.ygrid, self.cplus)

    def cminus_at(self, y):
        return np.interp(y, self.ygrid, self.cminus)

    def edge_flatness(self, frac: float = 0.1) -> tuple[float, float]:
        """Total increment of the edges over the outer ``frac`` of the grid;
        small values indicate the full-information regime was reached."""
        n = max(2, int(frac * self.ygrid.shape[0]))
        lo = max(float(self.cplus[n - 1] - self.cplus[0]),
                 float(self.cminus[n - 1] - self.cminus[0]))
        hi = max(float(self.cplus[-1] - self.cplus[-n]),
                 float(self.cminus[-1] - self.cminus[-n]))
        return lo, hi


@dataclass(frozen=True)
class PolicyBoundaries:
    """Reflection band as monotone interpolants of the likelihood ratio."""

    phigrid: np.ndarray
    bplus: np.ndarray
    bminus: np.ndarray
    xplus_star: float
    xminus_star: float
    logphigrid: np.ndarray = field(default=None, repr=False)

    def __post_init__(self) -> None:
        phi = np.asarray(self.phigrid, float)
        if np.any(phi <= 0.0) or np.any(np.diff(phi) <= 0.0):
            raise ValueError("phigrid must be strictly positive and increasing")
        for name, b in (("bplus", self.bplus), ("bminus", self.bminus)):
            if np.any(np.diff(np.asarray(b, float)) > 1e-12):
                raise ValueError(f"{name} must be nonincreasing in phi")
        if not np.all(self.bplus < self.bminus):
            raise ValueError("band must stay strictly separated")
        if self.logphigrid is None:
            object.__setattr__(self, "logphigrid", np.log(phi))

    def band_at_logphi(self, u):
        """(lower, upper) band edges at log-likelihood u, clamped at the ends."""
        return (np.interp(u, self.logphigrid, self.bplus),
                np.interp(u, self.logphigrid, self.bminus))

    def a_plus(self, pi):
        pi = np.asarray(pi, float)
        return np.interp(np.log(pi) - np.log1p(-pi), self.logphigrid, self.bplus)

    def a_minus(self, pi):
        pi = np.asarray(pi, float)
        return np.interp(np.log(pi) - np.log1p(-pi), self.logphigrid, self.bminus)


# ---------------------------------------------------------------------------
# vectorised right-hand-side engine
# ---------------------------------------------------------------------------

class _RhsEngine:
    """Evaluates the q-normalised right-hand side of the band equations for
    one (x_i) candidate per grid row, with the previous iterate frozen."""

    def __init__(self, params: ModelParams, cost: CostSpec, ygrid: np.ndarray,
                 s_nodes: np.ndarray, s_weights: np.ndarray, s_head: float):
        self.params = params
        self.cost = cost
        self.ygrid = ygrid
        self.s = s_nodes
        self.w = s_weights * np.exp(-params.rho * s_nodes)
        self.s_head = s_head
        self.sigma = params.eta * np.sqrt(s_nodes)
        # transported coordinate per (row, s-node)
        self.ys = ygrid[:, None] + params.ydrift * s_nodes[None, :]
        self.cuts_lo = None
        self.cuts_hi = None

    def freeze_iterate(self, cplus: np.ndarray, cminus: np.ndarray) -> None:
        self.cuts_lo = np.interp(self.ys, self.ygrid, cplus)
        self.cuts_hi = np.interp(self.ys, self.ygrid, cminus)
        self._frozen = (cplus, cminus)

    def normalized_rhs(self, x: np.ndarray, move: str | None = None) -> np.ndarray:
        """RHS / q(x, y) for one candidate x per row of the y-grid.

        With ``move`` set, the named edge's kernel cut travels with the
        candidate (the frozen curve is shifted by the offset at the own
        row, clipped so the cuts never cross).  This keeps the scalar
        equations transversal: freezing the own cut makes the residual
        tangent to zero at the solution.
        """
        p, cost = self.params, self.cost
        w_lo = -p.rho * p.kplus
        w_hi = p.rho * p.kminus
        cp0, cm0 = self._frozen
        cuts_lo, cuts_hi = self.cuts_lo, self.cuts_hi
        if move == "plus":
            cuts_lo = np.minimum(cuts_lo + (x - cp0)[:, None], cuts_hi)
        elif move == "minus":
            cuts_hi = np.maximum(cuts_hi + (x - cm0)[:, None], cuts_lo)
        xc = x[:, None]
        m0 = xc + p.mu0 * self.s[None, :]
        m1 = xc + p.mu1 * self.s[None, :]
        j0 = gaussian_band_integral(cuts_lo, cuts_hi, m0, self.sigma, cost, w_lo, w_hi)
        j1 = gaussian_band_integral(cuts_lo, cuts_hi, m1, self.sigma, cost, w_lo, w_hi)
        pi = 0.5 * (1.0 + np.tanh(0.5 * p.beta * (x - self.ygrid)))
        vals = ((1.0 - pi)[:, None] * j0 + pi[:, None] * j1) @ self.w
        # head term: below the first panel the kernel is a point mass at x
        cpr = np.asarray(cost.cprime(x), float)
        if move == "plus":
            head = 0.5 * w_lo + 0.5 * np.where(x < cm0, cpr, w_hi)
        elif move == "minus":
            head = 0.5 * w_hi + 0.5 * np.where(x > cp0, cpr, w_lo)
        else:
            head = np.where(x <= cp0, w_lo, np.where(x >= cm0, w_hi, cpr))
        return vals + self.s_head * head


def _time_nodes(params: ModelParams, cost: CostSpec, x_scale: float,
                tail_target: float = 1e-10, n_gl: int = 64,
                growth: float = 4.0, s_min: float = 1e-7):
    """Panel nodes for the discounted time integral, with the horizon chosen
    so the neglected tail of the normalised integrand is below target."""
    p = params
    mu_max = max(abs(p.mu0), abs(p.mu1))
    kmax = max(p.kplus, p.kminus)

    def bound(s):
        grid = np.array([x_scale + mu_max * s + 3.0 * p.eta * np.sqrt(s),
                         -x_scale - mu_max * s - 3.0 * p.eta * np.sqrt(s)])
        return float(np.max(np.abs(cost.cprime(grid)))) + p.rho * kmax

    s_max = 20.0 / p.rho
    for _ in range(4):
        s_max = max(s_max, np.log(max(bound(s_max), 1.0) / (p.rho * tail_target)) / p.rho)
    s, w = geometric_panel_nodes(s_min, s_max, n_gl=n_gl, growth=growth)
    tail = np.exp(-p.rho * s_max) * bound(s_max) / p.rho
    return s, w, s_min, s_max, tail


# ---------------------------------------------------------------------------
# projected Picard iteration
# ---------------------------------------------------------------------------

def _solve_edge(engine: _RhsEngine, side: str, lo: float, hi: float,
                xtol: float, warm: np.ndarray | None = None,
                radius: float = np.inf) -> np.ndarray:
    """Row-wise bracketed bisection for one edge's scalar equations.

    The residual (with the own cut moving, see ``normalized_rhs``) is
    negative at the bracket bottom and positive at the top, crossing zero
    transversally.  A warm bracket around the previous iterate is tried
    first and widened to the guaranteed bracket where it fails.
    """
    p = engine.params
    if side == "plus":
        def resid(x):
            return engine.normalized_rhs(x, move="plus") + p.kplus
    else:
        def resid(x):
            return engine.normalized_rhs(x, move="minus") - p.kminus

    n = engine.ygrid.shape[0]
    a = np.full(n, lo)
    b = np.full(n, hi)
    if warm is not None and np.isfinite(radius):
        aw = np.clip(warm - radius, lo, hi)
        bw = np.clip(warm + radius, lo, hi)
        ra = resid(aw)
        rb = resid(bw)
        # monotone residual: a failed warm endpoint still halves the bracket
        a = np.where(ra < 0.0, aw, a)
        b = np.where(ra >= 0.0, aw, b)
        b = np.where(rb > 0.0, np.minimum(b, bw), b)
        a = np.where(rb <= 0.0, np.maximum(a, bw), a)
    bad = a > b
    if bad.any():
        a = np.where(bad, lo, a)
        b = np.where(bad, hi, b)
    while np.max(b - a) > xtol:
        mid = 0.5 * (a + b)
        neg = resid(mid) < 0.0
        a = np.where(neg, mid, a)
        b = np.where(neg, b, mid)
    return 0.5 * (a + b)


def solve_boundaries(params: ModelParams, cost: CostSpec,
                     ygrid: np.ndarray | None = None, tol: float = 2e-5,
                     max_iter: int = 120, n_gl: int = 64,
                     on_fail: str = "flag") -> BoundaryPair:
    """Solve the band-edge integral equations by projected Picard iteration.

    ``ygrid`` defaults to 401 nodes on [-20, 20].  The iteration starts
    from the belief-weighted blend of the two full-information bands, runs
    a cheap-quadrature warm phase first, and relaxes the update with a
    sticky factor 1/2 as soon as the sup-norm change stops contracting
    (the undamped map oscillates between too-wide and too-narrow bands).
    Stops when the sup-norm change of both edges drops below ``tol``; if
    ``max_iter`` is exhausted the best iterate is returned flagged
    non-converged (or raises when ``on_fail='raise'``).
    """
    if ygrid is None:
        ygrid = np.linspace(-20.0, 20.0, 401)
    ygrid = np.asarray(ygrid, dtype=float)
    low = solve_constant_drift(params.mu0, params, cost)
    high = solve_constant_drift(params.mu1, params, cost)
    xplus, xminus = high.lower, low.upper
    if not xplus < xminus:
        raise BoundaryError(f"degenerate band bounds: {xplus} >= {xminus}")
    lo_b, hi_b = xplus - BRACKET_MARGIN, xminus + BRACKET_MARGIN
    cap_plus = float(cost.cprime_inv(-params.rho * params.kplus))
    cap_minus = float(cost.cprime_inv(params.rho * params.kminus))

    x_scale = max(abs(lo_b), abs(hi_b))
    phases = [(24, 8.0, max(50.0 * tol, 1e-3)), (n_gl, 4.0, tol)]
    # initial guess: blend the two constant bands with the belief held at x=0
    blend = 0.5 * (1.0 + np.tanh(-0.5 * params.beta * ygrid))
    cplus = project_band_curve(ygrid, low.lower + (high.lower - low.lower) * blend,
                               xplus, cap_plus)
    cminus = project_band_curve(ygrid, low.upper + (high.upper - low.upper) * blend,
                                cap_minus, xminus)

    changes: list[float] = []
    converged = False
    relax = 1.0
    radius = np.inf
    it = 0
    for gl, growth, phase_tol in phases:
        s, w, s_min, s_max, tail = _time_nodes(params, cost, x_scale,
                                               n_gl=gl, growth=growth)
        engine = _RhsEngine(params, cost, ygrid, s, w, s_min)
        phase_done = False
        radius = np.inf  # quadrature changed: first bracket is the full one
        while not phase_done and it < max_iter:
            it += 1
            prev = changes[-1] if changes else np.inf
            xtol = float(np.clip(0.02 * prev, 1e-8, 5e-4))
            engine.freeze_iterate(cplus, cminus)
            root_plus = _solve_edge(engine, "plus", lo_b, hi_b, xtol,
                                    warm=cplus, radius=radius)
            root_minus = _solve_edge(engine, "minus", lo_b, hi_b, xtol,
                                     warm=cminus, radius=radius)
            new_plus = project_band_curve(ygrid, root_plus, xplus, cap_plus)
            new_minus = project_band_curve(ygrid, root_minus, cap_minus, xminus)
            if relax < 1.0:
                # convex blend of feasible curves stays feasible
                new_plus = cplus + relax * (new_plus - cplus)
                new_minus = cminus + relax * (new_minus - cminus)
            change = max(float(np.max(np.abs(new_plus - cplus))),
                         float(np.max(np.abs(new_minus - cminus))))
            if change > 0.9 * prev and relax > 0.5:
                relax = 0.5
            radius = 4.0 * change + 64.0 * xtol
            cplus, cminus = new_plus, new_minus
            changes.append(change)
            if change < phase_tol:
                phase_done = True
                converged = change < tol

    tail5 = changes[-5:]
    if len(tail5) == 5 and np.any(np.diff(tail5) > 0.0):
        warnings.warn("band solver: sup-norm changes not monotone over the last 5 sweeps",
                      RuntimeWarning, stacklevel=2)

    engine.freeze_iterate(cplus, cminus)
    res_plus = engine.normalized_rhs(cplus) + params.kplus
    res_minus = engine.normalized_rhs(cminus) - params.kminus
    eq_res = max(float(np.max(np.abs(res_plus))) / params.kplus,
                 float(np.max(np.abs(res_minus))) / params.kminus)

    if not converged and on_fail == "raise":
        raise BoundaryError(f"band solver did not converge: last change {changes[-1]:.3e}")
    return BoundaryPair(ygrid=ygrid, cplus=cplus, cminus=cminus,
                        residual=changes[-1] if changes else np.inf,
                        xplus_star=xplus, xminus_star=xminus,
                        iterations=it, converged=converged,
                        equation_residual=eq_res)


# ---------------------------------------------------------------------------
# public scalar right-hand side (oracle surface)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RhsValue:
    value: float
    tail_bound: float
    s_max: float


def rhs_integral(c: BoundaryPair, y: float, x: float, params: ModelParams,
                 cost: CostSpec, n_gl: int = 64) -> RhsValue:
    """Right-hand side of the band equation at probe point (x, y), carrying
    the likelihood weight q (not normalised).  Reports the discount-tail
    bound achieved by the time truncation."""
    x_scale = max(abs(x), abs(c.xplus_star), abs(c.xminus_star)) + BRACKET_MARGIN
    s, w, s_min, s_max, tail = _time_nodes(params, cost, x_scale, n_gl=n_gl)
    engine = _RhsEngine(params, cost, np.array([float(y)]), s, w, s_min)
    engine.cuts_lo = c.cplus_at(engine.ys)
    engine.cuts_hi = c.cminus_at(engine.ys)
    engine._frozen = (np.atleast_1d(c.cplus_at(y)), np.atleast_1d(c.cminus_at(y)))
    norm = engine.normalized_rhs(np.array([float(x)]))[0]
    q = np.exp(log_weight_q(x, y, params))
    return RhsValue(value=float(norm * q), tail_bound=float(tail * q), s_max=float(s_max))


# ---------------------------------------------------------------------------
# coordinate mapping to likelihood-ratio policies
# ---------------------------------------------------------------------------

def to_policy(c: BoundaryPair, params: ModelParams,
              phigrid: np.ndarray | None = None) -> PolicyBoundaries:
    """Map the parabolic-plane edges to monotone functions of the likelihood
    ratio.

    Each grid sample (y, c(y)) lies on the policy graph at
    phi = exp(beta (c(y) - y)); flat stretches of c become flat stretches
    of b and slope-one stretches become jumps, both of which the monotone
    interpolation handles via its generalised-inverse conventions.
    """
    beta = params.beta
    u_plus = beta * (c.cplus - c.ygrid)
    u_minus = beta * (c.cminus - c.ygrid)

    def curve(u, x, keep_high: bool):
        order = np.argsort(u, kind="stable")
        u, x = u[order], x[order]
        # collapse duplicate log-likelihoods: jumps of the policy curve
        uu, idx_first = np.unique(u, return_index=True)
        if keep_high:
            xx = np.maximum.reduceat(x, idx_first)
        else:
            xx = np.minimum.reduceat(x, idx_first)
        return uu, xx

    up, xp = curve(u_plus, c.cplus, keep_high=True)
    um, xm = curve(u_minus, c.cminus, keep_high=False)

    if phigrid is None:
        lo = min(up[0], um[0])
        hi = max(up[-1], um[-1])
        logs = np.linspace(lo, hi, 401)
        logs = np.unique(np.concatenate([logs, [0.0]]))  # always include phi = 1
        phigrid = np.exp(logs)
    phigrid = np.asarray(phigrid, dtype=float)
    logphi = np.log(phigrid)
    bplus = np.interp(logphi, up, xp)
    bminus = np.interp(logphi, um, xm)
    return PolicyBoundaries(phigrid=phigrid, bplus=bplus, bminus=bminus,
                            xplus_star=c.xplus_star, xminus_star=c.xminus_star,
                            logphigrid=logphi)
