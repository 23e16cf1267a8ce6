"""Independent verification route: the stopping game as an obstacle problem.

On a truncated rectangle in parabolic coordinates the game value solves a
linear PDE between two exponential obstacles.  A projected SOR iteration
(Gauss-Seidel sweep, then clamp) solves the discrete complementarity
system; thresholding the binding sets row by row recovers the band edges,
and a one-sided difference at the edges checks the smooth-pasting gradient
against its closed form.  Everything here is deliberately independent of
the integral-equation solver: the only shared inputs are the model
parameters and the constant-drift levels used for far-field data.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .boundaries import BoundaryPair, project_band_curve
from .model import CostSpec, ModelParams
from .onedim import OneDimSolution, solve_constant_drift


class ObstacleError(RuntimeError):
    pass


@dataclass(frozen=True)
class Grid2D:
    """Truncated rectangle with uniform spacing in each direction."""

    x_lo: float
    x_hi: float
    nx: int
    y_lo: float
    y_hi: float
    ny: int

    def __post_init__(self) -> None:
        if not (self.x_lo < self.x_hi and self.y_lo < self.y_hi):
            raise ValueError("grid extents out of order")
        if self.nx < 3 or self.ny < 3:
            raise ValueError("need at least 3 nodes per direction")

    @property
    def dx(self) -> float:
        return (self.x_hi - self.x_lo) / (self.nx - 1)

    @property
    def dy(self) -> float:
        return (self.y_hi - self.y_lo) / (self.ny - 1)

    def xs(self) -> np.ndarray:
        return np.linspace(self.x_lo, self.x_hi, self.nx)

    def ys(self) -> np.ndarray:
        return np.linspace(self.y_lo, self.y_hi, self.ny)


def make_grid(params: ModelParams, cost: CostSpec, dx: float = 0.01,
              y_lo: float = -20.0, y_hi: float = 20.0, ny: int = 401,
              margin: float = 1.5) -> Grid2D:
    """Grid enclosing the band bounds with the given margin on each side."""
    low = solve_constant_drift(params.mu0, params, cost)
    high = solve_constant_drift(params.mu1, params, cost)
    x_lo = high.lower - margin
    x_hi = low.upper + margin
    nx = int(np.ceil((x_hi - x_lo) / dx)) + 1
    return Grid2D(x_lo=x_lo, x_hi=x_lo + (nx - 1) * dx, nx=nx,
                  y_lo=y_lo, y_hi=y_hi, ny=ny)


@dataclass(frozen=True)
class DiscreteOperator:
    """Discrete (rho - generator) on the grid.

    Second derivative in x by central differences.  The x-advection term
    is central too while the cell Peclet number |mu0| dx / eta^2 stays
    below one (second-order, and exact on quadratics); otherwise it falls
    back to first-order upwinding.  The deterministic y-transport is
    always upwinded on its inflow side, so exactly one y-edge needs data.
    """

    grid: Grid2D
    rho: float
    axx: float
    ax_up: float
    ax_dn: float
    by_up: float
    by_dn: float

    @property
    def diag(self) -> float:
        return self.rho + 2.0 * self.axx + self.ax_up + self.ax_dn + self.by_up + self.by_dn

    @property
    def inflow_edge(self) -> int:
        """+1: data needed at y_hi; -1: at y_lo; 0: rows decouple."""
        if self.by_up > 0.0:
            return 1
        if self.by_dn > 0.0:
            return -1
        return 0

    def apply(self, field: np.ndarray) -> np.ndarray:
        """(rho - generator) applied to field (shape (nx, ny)); NaN on nodes
        the stencil cannot reach (x edges and the inflow y-edge)."""
        v = np.asarray(field, float)
        out = np.full_like(v, np.nan)
        ce = self.axx + self.ax_up  # east (x + dx)
        cw = self.axx + self.ax_dn  # west
        jsl = slice(None)
        if self.by_up > 0.0:
            jsl = slice(0, -1)
        elif self.by_dn > 0.0:
            jsl = slice(1, None)
        core = self.diag * v[1:-1, jsl] - ce * v[2:, jsl] - cw * v[:-2, jsl]
        if self.by_up > 0.0:
            core = core - self.by_up * v[1:-1, 1:]
        elif self.by_dn > 0.0:
            core = core - self.by_dn * v[1:-1, :-1]
        out[1:-1, jsl] = core
        return out


def assemble_operator(grid: Grid2D, params: ModelParams) -> DiscreteOperator:
    dx, dy = grid.dx, grid.dy
    axx = 0.5 * params.eta**2 / dx**2
    peclet = abs(params.mu0) * dx / params.eta**2
    if peclet <= 1.0:
        ax_up = 0.5 * params.mu0 / dx
        ax_dn = -0.5 * params.mu0 / dx
    else:
        ax_up = max(params.mu0, 0.0) / dx
        ax_dn = max(-params.mu0, 0.0) / dx
    b = params.ydrift
    by_up = max(b, 0.0) / dy
    by_dn = max(-b, 0.0) / dy
    return DiscreteOperator(grid=grid, rho=params.rho, axx=axx,
                            ax_up=ax_up, ax_dn=ax_dn, by_up=by_up, by_dn=by_dn)


@dataclass(frozen=True)
class ValueField:
    """Converged obstacle-problem solution with binding-set masks.

    ``vhat`` has shape (nx, ny); ``mask`` holds 0 where the lower obstacle
    binds, 1 in the interior, 2 where the upper obstacle binds.
    """

    grid: Grid2D
    vhat: np.ndarray
    mask: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    sweeps: int
    final_change: float
    converged: bool
    xplus_star: float
    xminus_star: float
    cap_plus: float
    cap_minus: float

    def __post_init__(self) -> None:
        if np.any(self.vhat < self.lower) or np.any(self.vhat > self.upper):
            raise ValueError("obstacle sandwich violated")

    def diagonal_monotonicity_defect(self) -> float:
        """Largest violation of v(x+t, y+t) >= v(x, y) with t = dy, measured
        relative to the local obstacle scale.  The game value is monotone
        along diagonal shifts (they hold the likelihood ratio fixed while
        raising the inventory); along plain x-rows it is not."""
        xs = self.grid.xs()
        dy = self.grid.dy
        worst = 0.0
        scale = np.maximum(np.abs(self.lower), np.abs(self.upper))
        for j in range(1, self.grid.ny):
            prev = np.interp(xs - dy, xs, self.vhat[:, j - 1])
            ok = xs - dy >= xs[0]
            defect = (prev - self.vhat[:, j]) / scale[:, j]
            worst = max(worst, float(np.max(defect[ok], initial=0.0)))
        return worst


def _limit_values(xs: np.ndarray, sol: OneDimSolution, q_col: np.ndarray,
                  lower_col: np.ndarray, upper_col: np.ndarray) -> np.ndarray:
    vals = q_col * sol.value_derivative(xs)
    return np.clip(vals, lower_col, upper_col)


def solve_double_obstacle(grid: Grid2D, params: ModelParams, cost: CostSpec,
                          tol: float = 1e-8, max_sweeps: int = 200_000,
                          omega: float = 1.5) -> ValueField:
    """Projected SOR solve of the double-obstacle system.

    Dirichlet data: the x-edges sit deep in the acting regions and take the
    obstacle values; the inflow y-edge (if any) takes the matching
    full-information limit, scaled by the likelihood weight.  Convergence
    is measured as the largest update relative to the local obstacle scale.
    On divergence the relaxation factor is halved and the sweep restarted.
    """
    low = solve_constant_drift(params.mu0, params, cost)
    high = solve_constant_drift(params.mu1, params, cost)
    xplus, xminus = high.lower, low.upper
    if grid.x_lo > xplus - 1.0 + 1e-9 or grid.x_hi < xminus + 1.0 - 1e-9:
        raise ValueError("grid must enclose the band bounds with margin 1")

    xs, ys = grid.xs(), grid.ys()
    op = assemble_operator(grid, params)
    expo = params.beta * (xs[:, None] - ys[None, :])
    if np.max(expo) > 700.0:
        raise ObstacleError("likelihood weight overflows on this grid; shrink the y-range")
    q = 1.0 + np.exp(expo)
    lower = -params.kplus * q
    upper = params.kminus * q
    rhs_field = q * np.asarray(cost.cprime(xs), float)[:, None]
    kmax = max(params.kplus, params.kminus)
    scale = kmax * q

    # far-field blend of the two known-drift solutions as the start iterate
    pi = 0.5 * (1.0 + np.tanh(0.5 * expo))
    w_mix = ((1.0 - pi) * low.value_derivative(xs)[:, None]
             + pi * high.value_derivative(xs)[:, None])
    v = np.clip(q * w_mix, lower, upper)

    # Dirichlet data
    v[0, :] = lower[0, :]
    v[-1, :] = upper[-1, :]
    edge = op.inflow_edge
    interior_j = np.ones(grid.ny, dtype=np.uint8)
    if edge == 1:
        v[:, -1] = _limit_values(xs, low, q[:, -1], lower[:, -1], upper[:, -1])
        interior_j[-1] = 0
        j_order = np.arange(grid.ny - 2, -1, -1, dtype=np.int64)
    elif edge == -1:
        v[:, 0] = _limit_values(xs, high, q[:, 0], lower[:, 0], upper[:, 0])
        interior_j[0] = 0
        j_order = np.arange(1, grid.ny, dtype=np.int64)
    else:
        j_order = np.arange(grid.ny, dtype=np.int64)

    vt = np.ascontiguousarray(v.T)
    lot = np.ascontiguousarray(lower.T)
    upt = np.ascontiguousarray(upper.T)
    rhst = np.ascontiguousarray(rhs_field.T)
    sct = np.ascontiguousarray(scale.T)

    sweeps_total = 0
    change = np.inf
    chunk = 200
    prev_change = np.inf
    stall = 0
    while sweeps_total < max_sweeps:
        todo = min(chunk, max_sweeps - sweeps_total)
        done, change = kernels.psor_run(vt, lot, upt, rhst, sct, op.axx,
                                        op.ax_up, op.ax_dn, op.by_up, op.by_dn,
                                        op.diag, j_order, interior_j, omega,
                                        tol, todo)
        sweeps_total += done
        if change < tol:
            break
        if change > prev_change:
            stall += 1
            if stall >= 2 and omega > 0.8:
                omega = 0.5 * omega
                stall = 0
        else:
            stall = 0
        prev_change = change
    converged = change < tol
    if not converged:
        warnings.warn(f"obstacle solve stopped at change {change:.2e} after "
                      f"{sweeps_total} sweeps", RuntimeWarning, stacklevel=2)

    v = np.ascontiguousarray(vt.T)
    eps_lo = 1e-6 * params.kplus * q
    eps_hi = 1e-6 * params.kminus * q
    mask = np.ones(v.shape, dtype=np.int8)
    mask[v - lower <= eps_lo] = 0
    mask[upper - v <= eps_hi] = 2
    return ValueField(grid=grid, vhat=v, mask=mask, lower=lower, upper=upper,
                      sweeps=sweeps_total, final_change=float(change),
                      converged=converged, xplus_star=xplus, xminus_star=xminus,
                      cap_plus=float(cost.cprime_inv(-params.rho * params.kplus)),
                      cap_minus=float(cost.cprime_inv(params.rho * params.kminus)))


def extract_boundaries(field: ValueField, eps_bind: float | None = None) -> BoundaryPair:
    """Band-edge estimates from the binding sets, one value per y-row.

    The lower edge is the largest x whose node binds the lower obstacle
    (within ``eps_bind`` of it, relative to the obstacle scale), the upper
    edge the smallest upper-binding x.  Rows with an empty binding set are
    marked invalid (row_ok False) and carried by interpolation.  The
    result passes through the same monotone/Lipschitz projection as the
    fixed-point solver, so the two routes are comparable sample by sample.
    """
    xs = field.grid.xs()
    ny = field.grid.ny
    if eps_bind is None:
        lo_bind = field.mask == 0
        hi_bind = field.mask == 2
    else:
        lo_bind = field.vhat - field.lower <= eps_bind * np.abs(field.lower)
        hi_bind = field.upper - field.vhat <= eps_bind * np.abs(field.upper)
    cplus = np.empty(ny)
    cminus = np.empty(ny)
    row_ok = np.ones(ny, dtype=bool)
    for j in range(ny):
        li = np.flatnonzero(lo_bind[:, j])
        hi = np.flatnonzero(hi_bind[:, j])
        if li.size == 0 or hi.size == 0:
            row_ok[j] = False
            cplus[j] = np.nan
            cminus[j] = np.nan
            continue
        cplus[j] = xs[li.max()]
        cminus[j] = xs[hi.min()]
    if not row_ok.any():
        raise ObstacleError("no binding rows found; field not converged?")
    if not row_ok.all():
        ysg = field.grid.ys()
        cplus = np.interp(ysg, ysg[row_ok], cplus[row_ok])
        cminus = np.interp(ysg, ysg[row_ok], cminus[row_ok])
    ys = field.grid.ys()
    cplus = project_band_curve(ys, cplus, field.xplus_star, field.cap_plus)
    cminus = project_band_curve(ys, cminus, field.cap_minus, field.xminus_star)
    return BoundaryPair(ygrid=ys, cplus=cplus, cminus=cminus, residual=0.0,
                        xplus_star=field.xplus_star, xminus_star=field.xminus_star,
                        iterations=field.sweeps, converged=field.converged,
                        row_ok=row_ok)


@dataclass(frozen=True)
class SmoothFitReport:
    max_deviation: float
    dev_plus: np.ndarray
    dev_minus: np.ndarray
    rows: np.ndarray


def smooth_fit_check(field: ValueField, params: ModelParams,
                     boundaries: BoundaryPair | None = None,
                     exclude_frac: float = 0.1) -> SmoothFitReport:
    """One-sided gradient check at the extracted edges.

    Compares the continuation-side difference quotient with the
    closed-form pasting gradient (the obstacle's own slope).  Deviations
    are measured relative to 1 + |target| so that rows with exponentially
    large likelihood weight do not dominate; the outer ``exclude_frac`` of
    rows is skipped (truncation-affected).  Expected to shrink like dx.
    """
    if boundaries is None:
        boundaries = extract_boundaries(field)
    xs = field.grid.xs()
    ys = field.grid.ys()
    dx = field.grid.dx
    ny = field.grid.ny
    beta = params.beta
    nskip = max(1, int(exclude_frac * ny))
    rows = np.arange(nskip, ny - nskip)
    dev_p = np.zeros(rows.shape[0])
    dev_m = np.zeros(rows.shape[0])
    for k, j in enumerate(rows):
        ip = int(np.searchsorted(xs, boundaries.cplus[j] + 1e-12) )
        ip = min(max(ip, 1), field.grid.nx - 2)
        # difference quotient into the continuation side (above the edge)
        fd = (field.vhat[ip + 1, j] - field.vhat[ip, j]) / dx
        target = -beta * params.kplus * np.exp(beta * (xs[ip] - ys[j]))
        dev_p[k] = abs(fd - target) / (1.0 + abs(target))
        im = int(np.searchsorted(xs, boundaries.cminus[j] - 1e-12))
        im = min(max(im, 1), field.grid.nx - 2)
        fd = (field.vhat[im, j] - field.vhat[im - 1, j]) / dx
        target = beta * params.kminus * np.exp(beta * (xs[im] - ys[j]))
        dev_m[k] = abs(fd - target) / (1.0 + abs(target))
    return SmoothFitReport(max_deviation=float(max(dev_p.max(), dev_m.max())),
                           dev_plus=dev_p, dev_minus=dev_m, rows=rows)
