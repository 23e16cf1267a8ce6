"""Monte Carlo engine for the reflected inventory policy.

Simulates the filtered system, applies the band policy as an end-of-step
projection (the discrete rendering of the minimal reflection), accumulates
discounted costs, and independently estimates the stopping-game value by
running the uncontrolled dynamics to the band edges.

Randomness is counter based: path ``i`` of a run draws from
``Philox(key=(seed, i))``, so results do not depend on batch size or
scheduling, and re-running any policy against the same seed reuses exactly
the same noise (common random numbers).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .boundaries import BoundaryPair, PolicyBoundaries
from .model import BELIEF_CLAMP, CostSpec, ModelParams
from .onedim import resolvent_cost

TRUE_MEASURE = "true-measure"
Q_MEASURE = "q-measure"


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    horizon: float = 40.0
    npaths: int = 100_000
    seed: int = 0
    x0: float = 0.0
    pi0: float = 0.5
    mode: str = TRUE_MEASURE
    batch: int = 512

    def __post_init__(self) -> None:
        if self.dt <= 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.npaths < 1:
            raise ValueError(f"npaths must be >= 1, got {self.npaths}")
        if not 0.0 < self.pi0 < 1.0:
            raise ValueError(f"pi0 must lie in (0, 1), got {self.pi0}")
        if self.mode not in (TRUE_MEASURE, Q_MEASURE):
            raise ValueError(f"mode must be {TRUE_MEASURE!r} or {Q_MEASURE!r}")

    def check_horizon(self, params: ModelParams) -> None:
        # discount tail below e^-20; horizon truncation then negligible
        if self.horizon * params.rho < 20.0 - 1e-9:
            raise ValueError(
                f"horizon*rho = {self.horizon * params.rho:.3g} < 20; "
                "increase the horizon or the discount rate")

    def nsteps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass(frozen=True)
class PathResult:
    discounted_running_cost: float
    discounted_up_cost: float
    discounted_down_cost: float
    total: float
    terminal_x: float
    terminal_pi: float
    pplus_total: float
    pminus_total: float

    def __post_init__(self) -> None:
        for name in ("discounted_running_cost", "discounted_up_cost",
                     "discounted_down_cost"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class PolicyEvaluation:
    mean: float
    se: float
    npaths: int
    mean_running: float
    mean_up: float
    mean_down: float
    totals: np.ndarray


def _path_rng(seed: int, index: int) -> np.random.Generator:
    key = np.array([np.uint64(seed), np.uint64(index)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _band_tables(policy: PolicyBoundaries | None, nu: int = 4096):
    """Resample a policy onto a uniform log-likelihood grid for O(1) lookup.
    None means the do-nothing sentinel (band so wide it never binds)."""
    if policy is None:
        u = np.array([-1.0, 1.0])
        return u[0], u[1] - u[0], np.full(2, -1e300), np.full(2, 1e300)
    u = np.linspace(policy.logphigrid[0], policy.logphigrid[-1], nu)
    lo, hi = policy.band_at_logphi(u)
    return float(u[0]), float(u[1] - u[0]), np.ascontiguousarray(lo), np.ascontiguousarray(hi)


def _reflected_paths_general(normals, drift, x0, logphi0, u0, du, blo_tab,
                             bhi_tab, params, cost, dt, disc, weighted, out):
    """Numpy fallback for non-quadratic costs (mirrors the kernel loop)."""
    b, n = normals.shape
    nu = blo_tab.shape[0]
    sqrtdt = np.sqrt(dt)
    x = np.full(b, x0)
    logphi = np.full(b, logphi0)
    run = np.zeros(b)
    up = np.zeros(b)
    down = np.zeros(b)
    pplus = np.zeros(b)
    pminus = np.zeros(b)

    def band(u):
        pos = np.clip((u - u0) / du, 0.0, nu - 2.0)
        idx = pos.astype(np.int64)
        frac = pos - idx
        return (blo_tab[idx] + frac * (blo_tab[idx + 1] - blo_tab[idx]),
                bhi_tab[idx] + frac * (bhi_tab[idx + 1] - bhi_tab[idx]))

    blo, bhi = band(logphi)
    w = 1.0 + np.exp(logphi) if weighted else 1.0
    jup = np.maximum(blo - x, 0.0)
    jdn = np.maximum(x - bhi, 0.0)
    up += disc[0] * params.kplus * (w * jup if weighted else jup)
    down += disc[0] * params.kminus * (w * jdn if weighted else jdn)
    pplus += jup
    pminus += jdn
    x = np.clip(x, blo, bhi)
    for k in range(n):
        hold = np.asarray(cost.c(x), float) * dt
        run += disc[k] * (w * hold if weighted else hold)
        ds = drift * dt + params.eta * (sqrtdt * normals[:, k])
        x = x + ds
        logphi = logphi + params.beta * (ds - params.ydrift * dt)
        blo, bhi = band(logphi)
        if weighted:
            w = 1.0 + np.exp(logphi)
        dup = np.maximum(blo - x, 0.0)
        ddn = np.maximum(x - bhi, 0.0)
        up += disc[k + 1] * params.kplus * (w * dup if weighted else dup)
        down += disc[k + 1] * params.kminus * (w * ddn if weighted else ddn)
        pplus += dup
        pminus += ddn
        x = np.clip(x, blo, bhi)
    out[:, 0] = run
    out[:, 1] = up
    out[:, 2] = down
    out[:, 3] = run + up + down
    out[:, 4] = x
    out[:, 5] = logphi
    out[:, 6] = pplus
    out[:, 7] = pminus


def _run_batches(params: ModelParams, cost: CostSpec,
                 policies: list[PolicyBoundaries | None], cfg: SimConfig):
    """Evaluate several policies on the same noise; returns per-policy
    (npaths, 8) stat arrays."""
    cfg.check_horizon(params)
    n = cfg.nsteps()
    disc = np.exp(-params.rho * cfg.dt * np.arange(n + 1))
    logphi0 = float(np.log(cfg.pi0 / (1.0 - cfg.pi0)))
    weighted = cfg.mode == Q_MEASURE
    tables = [_band_tables(pol) for pol in policies]
    results = [np.empty((cfg.npaths, 8)) for _ in policies]
    buf = np.empty((cfg.batch, 8))

    done = 0
    while done < cfg.npaths:
        m = min(cfg.batch, cfg.npaths - done)
        normals = np.empty((m, n))
        uni = np.empty(m)
        for i in range(m):
            rng = _path_rng(cfg.seed, done + i)
            uni[i] = rng.random()
            normals[i] = rng.standard_normal(n)
        if cfg.mode == TRUE_MEASURE:
            drift = np.where(uni < cfg.pi0, params.mu1, params.mu0)
        else:
            drift = np.full(m, params.mu0)
        for ip, (u0, du, blo, bhi) in enumerate(tables):
            ob = buf[:m]
            if cost.is_quadratic:
                kernels.reflected_paths(normals, drift, cfg.x0, logphi0, u0, du,
                                        blo, bhi, params.mu0, params.mu1,
                                        params.eta, params.beta, params.rho,
                                        params.kplus, params.kminus, cfg.dt,
                                        disc, cost.target, weighted, ob)
            else:
                _reflected_paths_general(normals, drift, cfg.x0, logphi0, u0,
                                         du, blo, bhi, params, cost, cfg.dt,
                                         disc, weighted, ob)
            results[ip][done:done + m] = ob
        done += m

    if weighted:
        # put the weighted functional on the same scale as the plain one
        scale = 1.0 + np.exp(logphi0)
        for arr in results:
            arr[:, :4] /= scale
    return results


def simulate_controlled_path(params: ModelParams, cost: CostSpec,
                             policy: PolicyBoundaries | None, cfg: SimConfig,
                             path_index: int = 0) -> PathResult:
    """Costs and terminal state of one reflected path (path_index selects
    the same noise stream the path would get inside a batch run)."""
    stats = _run_single(params, cost, policy, cfg, path_index)
    logphi = stats[5]
    pi = 1.0 / (1.0 + np.exp(-logphi))
    pi = min(max(pi, BELIEF_CLAMP), 1.0 - BELIEF_CLAMP)
    return PathResult(discounted_running_cost=float(stats[0]),
                      discounted_up_cost=float(stats[1]),
                      discounted_down_cost=float(stats[2]),
                      total=float(stats[3]), terminal_x=float(stats[4]),
                      terminal_pi=float(pi), pplus_total=float(stats[6]),
                      pminus_total=float(stats[7]))


def _run_single(params, cost, policy, cfg, path_index):
    cfg.check_horizon(params)
    n = cfg.nsteps()
    disc = np.exp(-params.rho * cfg.dt * np.arange(n + 1))
    logphi0 = float(np.log(cfg.pi0 / (1.0 - cfg.pi0)))
    weighted = cfg.mode == Q_MEASURE
    u0, du, blo, bhi = _band_tables(policy)
    rng = _path_rng(cfg.seed, path_index)
    uni = rng.random()
    normals = rng.standard_normal(n)[None, :]
    if cfg.mode == TRUE_MEASURE:
        drift = np.array([params.mu1 if uni < cfg.pi0 else params.mu0])
    else:
        drift = np.array([params.mu0])
    out = np.empty((1, 8))
    if cost.is_quadratic:
        kernels.reflected_paths(normals, drift, cfg.x0, logphi0, u0, du, blo,
                                bhi, params.mu0, params.mu1, params.eta,
                                params.beta, params.rho, params.kplus,
                                params.kminus, cfg.dt, disc, cost.target,
                                weighted, out)
    else:
        _reflected_paths_general(normals, drift, cfg.x0, logphi0, u0, du, blo,
                                 bhi, params, cost, cfg.dt, disc, weighted, out)
    if weighted:
        out[:, :4] /= 1.0 + np.exp(logphi0)
    return out[0]


def evaluate_policy(params: ModelParams, cost: CostSpec,
                    policy: PolicyBoundaries | None,
                    cfg: SimConfig) -> PolicyEvaluation:
    """Mean discounted cost of a policy with its standard error.  ``None``
    evaluates the do-nothing policy."""
    return evaluate_policies(params, cost, [policy], cfg)[0]


def evaluate_policies(params: ModelParams, cost: CostSpec,
                      policies: list[PolicyBoundaries | None],
                      cfg: SimConfig) -> list[PolicyEvaluation]:
    """Evaluate several policies under common random numbers.

    All policies see identical noise streams, so paired comparisons of the
    returned per-path totals are variance reduced.
    """
    stats = _run_batches(params, cost, policies, cfg)
    out = []
    for arr in stats:
        totals = arr[:, 3].copy()
        out.append(PolicyEvaluation(
            mean=float(totals.mean()),
            se=float(totals.std(ddof=1) / np.sqrt(len(totals))) if len(totals) > 1 else 0.0,
            npaths=len(totals),
            mean_running=float(arr[:, 0].mean()),
            mean_up=float(arr[:, 1].mean()),
            mean_down=float(arr[:, 2].mean()),
            totals=totals))
    return out


def uncontrolled_cost_mixture(params: ModelParams, cost: CostSpec, x0: float,
                              pi0: float) -> float:
    """Expected discounted cost of never acting: the prior mixture of the
    two known-drift resolvents."""
    return (pi0 * float(resolvent_cost(x0, params.mu1, params, cost))
            + (1.0 - pi0) * float(resolvent_cost(x0, params.mu0, params, cost)))


@dataclass(frozen=True)
class DynkinEstimate:
    mean: float
    se: float
    npaths: int
    frac_unstopped: float


def simulate_dynkin_value(params: ModelParams, cost: CostSpec, c: BoundaryPair,
                          x: float, y: float, cfg: SimConfig) -> DynkinEstimate:
    """Estimate the stopping-game value at (x, y) by running the
    uncontrolled dynamics until a band edge is hit.

    Both players follow the edge rule; the second coordinate advances
    deterministically, so the edges along the path are precomputed once.
    Paths alive at the horizon contribute their accumulated running payoff
    only (the discount tail bounds the omission).
    """
    cfg.check_horizon(params)
    if not (c.ygrid[0] <= y <= c.ygrid[-1]):
        raise ValueError(f"y={y} outside the solved band grid")
    n = cfg.nsteps()
    t = cfg.dt * np.arange(n + 1)
    disc = np.exp(-params.rho * t)
    ypath = y + params.ydrift * t
    cb_lo = np.ascontiguousarray(np.interp(ypath, c.ygrid, c.cplus))
    cb_hi = np.ascontiguousarray(np.interp(ypath, c.ygrid, c.cminus))
    if not cost.is_quadratic:
        raise NotImplementedError("game-value simulation implemented for the quadratic cost")
    vals = np.empty(cfg.npaths)
    steps = np.empty(cfg.npaths)
    buf = np.empty((cfg.batch, 2))
    done = 0
    while done < cfg.npaths:
        m = min(cfg.batch, cfg.npaths - done)
        normals = np.empty((m, n))
        for i in range(m):
            rng = _path_rng(cfg.seed, done + i)
            rng.random()  # stream-aligned with the controlled runs
            normals[i] = rng.standard_normal(n)
        ob = buf[:m]
        kernels.dynkin_paths(normals, float(x), float(y), params.mu0,
                             params.eta, params.beta, params.rho,
                             params.kplus, params.kminus, cfg.dt, disc,
                             cb_lo, cb_hi, params.ydrift, cost.target, ob)
        vals[done:done + m] = ob[:, 0]
        steps[done:done + m] = ob[:, 1]
        done += m
    return DynkinEstimate(mean=float(vals.mean()),
                          se=float(vals.std(ddof=1) / np.sqrt(cfg.npaths)),
                          npaths=cfg.npaths,
                          frac_unstopped=float(np.mean(steps >= n)))


@dataclass(frozen=True)
class MartingaleReport:
    pi_mean: float
    pi_se: float
    pi_var: float
    phi_mean: float
    phi_se: float
    pi0: float
    phi0: float


def martingale_suite(params: ModelParams, cfg: SimConfig) -> MartingaleReport:
    """Terminal-belief diagnostics.

    The terminal filter value is an explicit function of one Gaussian draw
    (and the drift coin), so the laws are sampled exactly: under the
    physical measure the belief must average to the prior, and under the
    decoupled measure the likelihood ratio must average to its start.
    """
    rng = _path_rng(cfg.seed, 0)
    T = cfg.horizon
    z = rng.standard_normal(cfg.npaths)
    coin = rng.random(cfg.npaths)
    mu = np.where(coin < cfg.pi0, params.mu1, params.mu0)
    logphi0 = np.log(cfg.pi0 / (1.0 - cfg.pi0))
    logphi = logphi0 + params.beta * ((mu - params.ydrift) * T
                                      + params.eta * np.sqrt(T) * z)
    pis = 0.5 * (1.0 + np.tanh(0.5 * logphi))
    z2 = rng.standard_normal(cfg.npaths)
    phi0 = float(np.exp(logphi0))
    g = params.gamma
    phis = phi0 * np.exp(g * np.sqrt(T) * z2 - 0.5 * g * g * T)
    root_n = np.sqrt(cfg.npaths)
    return MartingaleReport(
        pi_mean=float(pis.mean()), pi_se=float(pis.std(ddof=1) / root_n),
        pi_var=float(pis.var(ddof=1)),
        phi_mean=float(phis.mean()), phi_se=float(phis.std(ddof=1) / root_n),
        pi0=cfg.pi0, phi0=phi0)
