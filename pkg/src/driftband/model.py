"""Model primitives shared by every solver stage.

Holds the market/inventory parameters, the convex holding-cost
specification, the belief/likelihood/parabolic coordinate changes, the
explicit Bayes filter for the unknown two-point drift, and the exponential
weight attached to the likelihood ratio.  Everything here is a pure
function of immutable inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

# Discretised belief paths are clamped into (EPS, 1-EPS): the continuous
# process never leaves the open interval but a finite step can.
BELIEF_CLAMP = 1e-12


@dataclass(frozen=True)
class ModelParams:
    """Inventory model parameters.

    mu0/mu1 are the two admissible net-demand drifts (mu1 > mu0), eta the
    demand volatility, rho the discount rate, kplus/kminus the
    proportional costs of raising/lowering the inventory.
    """

    mu0: float
    mu1: float
    eta: float
    rho: float
    kplus: float
    kminus: float

    def __post_init__(self) -> None:
        if not self.mu1 > self.mu0:
            raise ValueError(f"mu1 must exceed mu0, got mu0={self.mu0}, mu1={self.mu1}")
        for name in ("eta", "rho", "kplus", "kminus"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def gamma(self) -> float:
        """Signal-to-noise ratio of the drift gap."""
        return (self.mu1 - self.mu0) / self.eta

    @property
    def beta(self) -> float:
        """Exponent rate gamma/eta used by the coordinate changes."""
        return self.gamma / self.eta

    @property
    def ydrift(self) -> float:
        """Deterministic drift of the parabolic coordinate."""
        return 0.5 * (self.mu0 + self.mu1)


def gamma(params: ModelParams) -> float:
    """Signal-to-noise ratio (mu1 - mu0) / eta, strictly positive."""
    return params.gamma


@dataclass(frozen=True)
class CostSpec:
    """Convex running-cost specification.

    ``cprime_inv`` is the generalised inverse of ``cprime``; for strictly
    convex costs it is the plain inverse.  ``growth_p``/``growth_scale``
    bound c(x) <= growth_scale * (1 + |x|^growth_p) and are used only by
    sampling checks, never by the solvers.
    """

    c: Callable[[np.ndarray], np.ndarray]
    cprime: Callable[[np.ndarray], np.ndarray]
    csecond: Callable[[np.ndarray], np.ndarray]
    cprime_inv: Callable[[np.ndarray], np.ndarray]
    growth_p: float = 2.0
    growth_scale: float = 1.0
    target: float = 0.0
    kind: str = "custom"

    def __post_init__(self) -> None:
        if self.growth_p < 2.0:
            raise ValueError(f"growth_p must be >= 2, got {self.growth_p}")

    @property
    def is_quadratic(self) -> bool:
        return self.kind == "quadratic"

    def check_assumptions(self, xs: np.ndarray, big: float = 1e6) -> None:
        """Sampling check of nonnegativity, growth, convexity and the
        coercivity of the marginal cost.  Raises ValueError on failure."""
        xs = np.asarray(xs, dtype=float)
        cx = np.asarray(self.c(xs), dtype=float)
        if np.any(cx < 0.0):
            raise ValueError("cost must be nonnegative at sampled points")
        bound = self.growth_scale * (1.0 + np.abs(xs) ** self.growth_p)
        if np.any(cx > bound * (1.0 + 1e-9)):
            raise ValueError("cost exceeds its polynomial growth bound at sampled points")
        order = np.argsort(xs)
        dcp = np.diff(np.asarray(self.cprime(xs[order]), dtype=float))
        if np.any(dcp < -1e-12):
            raise ValueError("marginal cost must be nondecreasing (convexity)")
        if not (self.cprime(big) > 0.0 and self.cprime(-big) < 0.0):
            raise ValueError("marginal cost must diverge to +/-inf in the tails")


def quadratic_cost(target: float = 0.0) -> CostSpec:
    """Quadratic holding/shortage cost (x - target)^2, the default."""
    t = float(target)
    return CostSpec(
        c=lambda x: (np.asarray(x, dtype=float) - t) ** 2,
        cprime=lambda x: 2.0 * (np.asarray(x, dtype=float) - t),
        csecond=lambda x: np.full_like(np.asarray(x, dtype=float), 2.0),
        cprime_inv=lambda w: t + 0.5 * np.asarray(w, dtype=float),
        growth_p=2.0,
        growth_scale=2.0 * (1.0 + t * t),
        target=t,
        kind="quadratic",
    )


@dataclass(frozen=True)
class BeliefState:
    """Probability assigned to the high drift; strictly inside (0, 1)."""

    pi: float

    def __post_init__(self) -> None:
        if not 0.0 < self.pi < 1.0:
            raise ValueError(f"pi must lie in the open interval (0, 1), got {self.pi}")


def belief_to_likelihood(pi):
    """Map a belief pi in (0,1) to the likelihood ratio pi/(1-pi)."""
    pi = np.asarray(pi, dtype=float)
    if np.any(pi <= 0.0) or np.any(pi >= 1.0):
        raise ValueError("pi must lie strictly inside (0, 1); the endpoints are the "
                         "full-information cases handled by the constant-drift solver")
    out = pi / (1.0 - pi)
    return float(out) if out.ndim == 0 else out


def likelihood_to_belief(phi):
    """Inverse of :func:`belief_to_likelihood`: phi/(1+phi)."""
    phi = np.asarray(phi, dtype=float)
    if np.any(phi <= 0.0):
        raise ValueError("phi must be strictly positive")
    out = phi / (1.0 + phi)
    return float(out) if out.ndim == 0 else out


def transform_parabolic(x, phi, params: ModelParams):
    """Map (inventory, likelihood) to parabolic coordinates (x, y) with
    y = x - (eta/gamma) log(phi)."""
    x = np.asarray(x, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if np.any(phi <= 0.0):
        raise ValueError("phi must be strictly positive")
    y = x - np.log(phi) / params.beta
    if y.ndim == 0:
        return float(x), float(y)
    return x, y


def likelihood_from_parabolic(x, y, params: ModelParams):
    """Inverse parabolic transform: phi = exp(beta (x - y))."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.exp(params.beta * (x - y))
    return float(out) if out.ndim == 0 else out


def belief_from_parabolic(x, y, params: ModelParams):
    """Belief pi implied by a parabolic-plane point, computed stably as a
    logistic of beta (x - y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    # logistic in log space: never overflows for either sign
    out = 0.5 * (1.0 + np.tanh(0.5 * params.beta * (x - y)))
    return float(out) if out.ndim == 0 else out


def log_weight_q(x, y, params: ModelParams):
    """log(1 + exp(beta (x - y))), evaluated in log space."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.logaddexp(0.0, params.beta * (x - y))
    return float(out) if out.ndim == 0 else out


def weight_q(x, y, params: ModelParams):
    """Exponential likelihood weight q = 1 + exp(beta (x - y)).

    Always > 1 and equal to 2 on the diagonal x = y.  Computed through
    :func:`log_weight_q` so intermediate terms cannot overflow before the
    final exponential.
    """
    out = np.exp(log_weight_q(x, y, params))
    return float(out) if np.ndim(out) == 0 else out


def filter_explicit(s_increments, dt: float, pi0: float, params: ModelParams):
    """Exact Bayes filter along an observed inventory path.

    ``s_increments`` are the uncontrolled observation increments on a
    uniform grid of step ``dt``.  The likelihood ratio solves
    log(phi_t) = log(phi_0) + beta (S_t - S_0 - ydrift t) pathwise, so the
    returned belief path (length n+1, starting at pi0) carries no
    integration error.
    """
    if not 0.0 < pi0 < 1.0:
        raise ValueError(f"pi0 must lie in (0, 1), got {pi0}")
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    ds = np.asarray(s_increments, dtype=float)
    n = ds.shape[0]
    t = dt * np.arange(n + 1)
    s_rel = np.concatenate(([0.0], np.cumsum(ds)))
    logphi0 = np.log(pi0 / (1.0 - pi0))
    logphi = logphi0 + params.beta * (s_rel - params.ydrift * t)
    pis = 0.5 * (1.0 + np.tanh(0.5 * logphi))
    return np.clip(pis, BELIEF_CLAMP, 1.0 - BELIEF_CLAMP)


def filter_sde_step(pi: float, dS: float, dt: float, params: ModelParams) -> float:
    """One belief update driven by the innovation of the observed increment.

    The diffusion d pi = gamma pi (1-pi) dW is stepped with the Milstein
    correction (scalar noise), which keeps the pathwise gap to the exact
    filter at O(dt); a plain Euler step only achieves O(sqrt(dt)).  Output
    is clamped into (BELIEF_CLAMP, 1 - BELIEF_CLAMP).
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    g = params.gamma
    muhat = params.mu1 * pi + params.mu0 * (1.0 - pi)
    dW = (dS - muhat * dt) / params.eta
    sig = g * pi * (1.0 - pi)
    sigp = g * (1.0 - 2.0 * pi)
    nxt = pi + sig * dW + 0.5 * sig * sigp * (dW * dW - dt)
    return float(min(max(nxt, BELIEF_CLAMP), 1.0 - BELIEF_CLAMP))
