"""Primal-dual interior-point method for smooth nonconvex NLPs.

Solves ``min f(x)  s.t.  g(x) = 0,  h(x) <= 0`` by Newton steps on the
perturbed KKT conditions with slack variables ``z`` for the inequalities
(``h + z = 0, z > 0``) and a centering parameter driven toward zero.
Step lengths keep ``z`` and the inequality multipliers strictly positive.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

logger = logging.getLogger(__name__)


@dataclass
class IpmOptions:
    feas_tol: float = 1e-8
    grad_tol: float = 1e-8
    comp_tol: float = 1e-9
    max_iter: int = 500
    sigma: float = 0.1
    step_frac: float = 0.99995
    z0: float = 1.0
    alpha_min: float = 1e-12
    divergence: float = 1e10


@dataclass
class IpmResult:
    x: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    z: np.ndarray
    f: float
    converged: bool
    iterations: int
    message: str
    feasibility: float
    stationarity: float
    complementarity: float
    history: list = field(default_factory=list)


def _norm(v) -> float:
    return float(np.abs(v).max()) if np.size(v) else 0.0


def interior_point(objective: Callable, constraints: Callable, hessian: Callable,
                   x0: np.ndarray, options: IpmOptions | None = None) -> IpmResult:
    """Run the interior-point iteration.

    ``objective(x) -> (f, grad)``; ``constraints(x) -> (g, dg, h, dh)`` with
    Jacobians as (rows = constraints) sparse matrices;
    ``hessian(x, lam, mu)`` returns the Lagrangian Hessian.
    """
    opt = options or IpmOptions()
    x = np.array(x0, dtype=float)
    f, df = objective(x)
    g, dg, h, dh = constraints(x)
    neq, niq, nx = g.size, h.size, x.size

    gamma = 1.0
    lam = np.zeros(neq)
    z = np.full(niq, opt.z0)
    mu = np.full(niq, opt.z0)
    k = h < -opt.z0
    z[k] = -h[k]
    k = gamma / z > opt.z0
    mu[k] = gamma / z[k]

    def lagrangian_grad():
        return df + dg.T @ lam + dh.T @ mu

    def conditions():
        feas = max(_norm(g), float(h.max()) if niq else 0.0, 0.0)
        return feas, _norm(lagrangian_grad()), (float(z @ mu) / niq if niq else 0.0)

    feas, grad, comp = conditions()
    history = [(0, f, feas, grad, comp)]
    message = "iteration limit"
    converged = False
    it = 0
    if feas <= opt.feas_tol and grad <= opt.grad_tol and comp <= opt.comp_tol:
        converged, message = True, "converged"
    while not converged and it < opt.max_iter:
        it += 1
        lxx = hessian(x, lam, mu)
        zinv = 1.0 / z
        dh_zinv = dh.T @ sp.diags(zinv)
        m_mat = lxx + dh_zinv @ sp.diags(mu) @ dh
        n_vec = lagrangian_grad() + dh_zinv @ (mu * h + gamma)
        kkt = sp.bmat([[m_mat, dg.T], [dg, None]], format="csc")
        rhs = -np.concatenate([n_vec, g])
        try:
            with np.errstate(all="ignore"), warnings.catch_warnings():
                warnings.simplefilter("error", spla.MatrixRankWarning)
                sol = spla.spsolve(kkt, rhs)
        except (RuntimeError, spla.MatrixRankWarning):
            message = "singular KKT system"
            break
        if not np.all(np.isfinite(sol)):
            message = "singular KKT system"
            break
        dx, dlam = sol[:nx], sol[nx:]
        dz = -h - z - dh @ dx
        dmu = -mu + zinv * (gamma - mu * dz)

        alpha_p = _step(z, dz, opt.step_frac)
        alpha_d = _step(mu, dmu, opt.step_frac)
        x = x + alpha_p * dx
        z = z + alpha_p * dz
        lam = lam + alpha_d * dlam
        mu = mu + alpha_d * dmu
        if niq:
            gamma = opt.sigma * float(z @ mu) / niq

        f, df = objective(x)
        g, dg, h, dh = constraints(x)
        feas, grad, comp = conditions()
        history.append((it, f, feas, grad, comp))
        logger.debug("ipm %3d f=%.8g feas=%.2e grad=%.2e comp=%.2e ap=%.3g ad=%.3g",
                     it, f, feas, grad, comp, alpha_p, alpha_d)
        if feas <= opt.feas_tol and grad <= opt.grad_tol and comp <= opt.comp_tol:
            converged, message = True, "converged"
            break
        if not np.all(np.isfinite(x)) or _norm(x) > opt.divergence:
            message = "diverged"
            break
        if alpha_p < opt.alpha_min or alpha_d < opt.alpha_min:
            message = "step length collapsed"
            break
        if niq and (gamma < np.finfo(float).eps ** 2 or gamma > opt.divergence):
            message = "centering parameter out of range"
            break

    return IpmResult(x, lam, mu, z, f, converged, it, message, feas, grad, comp, history)


def _step(v: np.ndarray, dv: np.ndarray, frac: float) -> float:
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return min(frac * float(np.min(-v[neg] / dv[neg])), 1.0)
