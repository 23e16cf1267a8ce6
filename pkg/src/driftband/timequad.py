"""Quadrature node builders for discounted time integrals."""

from __future__ import annotations

import numpy as np


def _gl_cache(n: int):
    return np.polynomial.legendre.leggauss(n)


def discounted_time_nodes(rho: float, u_min: float = 1e-16, panels_per_decade: int = 2,
                          n_gl: int = 24) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights for integrals of the form int_0^inf e^{-rho s} f(s) ds.

    Substituting u = e^{-rho s} turns the integral into (1/rho) int_0^1
    f(-log(u)/rho) du; the unit interval is split into geometric panels so
    the logarithmic stretch near u=0 (large s) is resolved.  Returns
    (s_nodes, weights) with sum(w * f(s)) approximating the integral, the
    discount factor already absorbed into the weights.
    """
    xg, wg = _gl_cache(n_gl)
    n_panels = max(1, int(np.ceil(-np.log10(u_min) * panels_per_decade)))
    edges = np.concatenate([np.geomspace(u_min, 1.0, n_panels + 1)])
    s_nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        u = mid + half * xg
        s_nodes.append(-np.log(u) / rho)
        weights.append(half * wg / rho)
    s = np.concatenate(s_nodes)
    w = np.concatenate(weights)
    order = np.argsort(s)
    return s[order], w[order]


def geometric_panel_nodes(s_min: float, s_max: float, n_gl: int = 64,
                          growth: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes on geometric panels [s_min, s_min*g, ...] up to s_max.

    Used for kernels that vary on the sqrt(s) scale near s = 0.  Weights do
    not include any discount factor.
    """
    if not 0.0 < s_min < s_max:
        raise ValueError("need 0 < s_min < s_max")
    xg, wg = _gl_cache(n_gl)
    edges = [s_min]
    while edges[-1] < s_max:
        edges.append(min(edges[-1] * growth, s_max))
    s_nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        s_nodes.append(mid + half * xg)
        weights.append(half * wg)
    return np.concatenate(s_nodes), np.concatenate(weights)
