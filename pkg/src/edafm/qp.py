"""Operator-splitting solver for sparse convex quadratic programs.

Solves::

    minimize    0.5 x'Px + q'x
    subject to  l <= Gx <= u

with the ADMM iteration used by OSQP (Stellato et al.): Ruiz equilibration,
one cached sparse factorisation per penalty value, over-relaxation, adaptive
penalty, and an optional active-set polishing step.  Everything is
deterministic: no randomness, fixed iteration order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

RHO_MIN, RHO_MAX = 1e-6, 1e6
SCALE_MIN, SCALE_MAX = 1e-4, 1e4


@dataclass
class QPResult:
    x: np.ndarray
    y: np.ndarray  # constraint multipliers, sign convention: y < 0 on active lower bounds
    z: np.ndarray
    status: str
    iterations: int
    prim_res: float
    dual_res: float
    polished: bool = False

    @property
    def converged(self) -> bool:
        return self.status == "solved"


def _inf_norm(v) -> float:
    return float(np.max(np.abs(v))) if len(v) else 0.0


def _col_inf_norms(M: sp.csc_matrix) -> np.ndarray:
    M = sp.csc_matrix(M)
    out = np.zeros(M.shape[1])
    absM = abs(M)
    nz = absM.max(axis=0).toarray().ravel()
    out[: len(nz)] = nz
    return out


def _ruiz(P, q, G, iters: int):
    n, m = P.shape[0], G.shape[0]
    D, E = np.ones(n), np.ones(m)
    c = 1.0
    for _ in range(iters):
        norm_x = np.maximum(_col_inf_norms(P), _col_inf_norms(G))
        norm_z = _col_inf_norms(G.T.tocsc()) if m else np.ones(0)
        dx = 1.0 / np.sqrt(np.clip(norm_x, SCALE_MIN, SCALE_MAX))
        dz = 1.0 / np.sqrt(np.clip(norm_z, SCALE_MIN, SCALE_MAX))
        Dx, Dz = sp.diags(dx), sp.diags(dz)
        P = (Dx @ P @ Dx).tocsc()
        G = (Dz @ G @ Dx).tocsc()
        q = dx * q
        D *= dx
        E *= dz
        # cost scaling
        mean_p = float(np.mean(_col_inf_norms(P))) if n else 1.0
        gamma = 1.0 / np.clip(max(mean_p, _inf_norm(q)), SCALE_MIN, SCALE_MAX)
        P = (gamma * P).tocsc()
        q = gamma * q
        c *= gamma
    return P, q, G, D, E, c


class _Factor:
    """Cached factorisation of P + sigma*I + G' diag(rho) G."""

    def __init__(self, P, G, sigma: float, rho: np.ndarray):
        n = P.shape[0]
        K = (P + sigma * sp.identity(n, format="csc") + G.T @ sp.diags(rho) @ G).tocsc()
        self._lu = splu(K, permc_spec="COLAMD")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self._lu.solve(rhs)


def solve_qp(P, q, G, l, u, *, tol: float = 1e-6, max_iter: int = 20000, rho: float = 0.1,
             sigma: float = 1e-6, alpha: float = 1.6, scaling_iters: int = 10,
             adaptive_interval: int = 25, check_interval: int = 5, polish: bool = True,
             x0: np.ndarray | None = None) -> QPResult:
    """Solve the QP; ``tol`` is used as both the absolute and relative tolerance."""
    P = sp.csc_matrix(P, dtype=np.float64)
    G = sp.csc_matrix(G, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    l = np.asarray(l, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    n, m = P.shape[0], G.shape[0]
    P = sp.triu(P).tocsc() + sp.triu(P, 1).T.tocsc()  # force exact symmetry

    Ps, qs, Gs, D, E, c = _ruiz(P, q, G, scaling_iters)
    ls, us = E * l, E * u
    Dinv, Einv = 1.0 / D, 1.0 / E

    rho_vec = np.full(m, rho)
    eq = (u - l) < 1e-10
    rho_vec[eq] *= 1e3
    factor = _Factor(Ps, Gs, sigma, rho_vec)

    x = np.zeros(n) if x0 is None else Dinv * np.asarray(x0, dtype=np.float64)
    z = np.clip(Gs @ x, ls, us)
    y = np.zeros(m)

    status, it = "max_iter", 0
    prim = dual = np.inf
    for it in range(1, max_iter + 1):
        rhs = sigma * x - qs + Gs.T @ (rho_vec * z - y)
        x_t = factor.solve(rhs)
        z_t = Gs @ x_t
        x = alpha * x_t + (1 - alpha) * x
        z_relax = alpha * z_t + (1 - alpha) * z
        z_new = np.clip(z_relax + y / rho_vec, ls, us)
        y = y + rho_vec * (z_relax - z_new)
        z = z_new

        if it % check_interval == 0 or it == max_iter:
            Gx, Px, Gty = Gs @ x, Ps @ x, Gs.T @ y
            prim = _inf_norm(Einv * (Gx - z))
            dual = _inf_norm(Dinv * (Px + qs + Gty)) / c
            eps_p = tol + tol * max(_inf_norm(Einv * Gx), _inf_norm(Einv * z))
            eps_d = tol + tol * max(_inf_norm(Dinv * Px), _inf_norm(Dinv * Gty), _inf_norm(Dinv * qs)) / c
            if prim <= eps_p and dual <= eps_d:
                status = "solved"
                break
            if adaptive_interval and it % adaptive_interval == 0:
                pn = _inf_norm(Gx - z) / max(_inf_norm(Gx), _inf_norm(z), 1e-30)
                dn = _inf_norm(Px + qs + Gty) / max(_inf_norm(Px), _inf_norm(Gty), _inf_norm(qs), 1e-30)
                new_rho = float(np.clip(rho * np.sqrt(pn / max(dn, 1e-30)), RHO_MIN, RHO_MAX))
                if new_rho > 5 * rho or new_rho < rho / 5:
                    rho = new_rho
                    rho_vec = np.full(m, rho)
                    rho_vec[eq] *= 1e3
                    factor = _Factor(Ps, Gs, sigma, rho_vec)

    res = QPResult(x=D * x, y=E * y / c, z=Einv * z, status=status, iterations=it,
                   prim_res=prim, dual_res=dual)
    if polish and status == "solved":
        res = _polish(P, q, G, l, u, res, tol)
    return res


def _residuals(P, q, G, l, u, x, y):
    Gx = G @ x
    prim = _inf_norm(np.maximum(l - Gx, 0) + np.maximum(Gx - u, 0))
    dual = _inf_norm(P @ x + q + G.T @ y)
    return prim, dual


def _polish(P, q, G, l, u, res: QPResult, tol: float, delta: float = 1e-9,
            refine_iters: int = 5) -> QPResult:
    """Solve the equality-constrained KKT system on the guessed active set."""
    n = P.shape[0]
    low = (res.z - l) < -res.y
    upp = (u - res.z) < res.y
    active = np.flatnonzero(low | upp)
    Ga = G[active].tocsc()
    ba = np.where(low[active], l[active], u[active])
    na = len(active)

    K = sp.bmat([[P, Ga.T], [Ga, None]], format="csc")
    reg = sp.block_diag([delta * sp.identity(n), -delta * sp.identity(na)], format="csc")
    rhs = np.concatenate([-q, ba])
    try:
        lu = splu((K + reg).tocsc(), permc_spec="COLAMD")
    except RuntimeError:
        return res
    sol = lu.solve(rhs)
    for _ in range(refine_iters):
        sol = sol + lu.solve(rhs - K @ sol)
    x = sol[:n]
    y = np.zeros(len(l))
    y[active] = sol[n:]
    # reject when the active-set guess was wrong: sign-violating multipliers
    # or a violated inactive constraint
    if np.any(y[low] > tol) or np.any(y[upp] < -tol):
        return res
    prim, dual = _residuals(P, q, G, l, u, x, y)
    prim0, dual0 = _residuals(P, q, G, l, u, res.x, res.y)
    if max(prim, dual) >= max(prim0, dual0):
        return res
    return QPResult(x=x, y=y, z=np.clip(G @ x, l, u), status=res.status,
                    iterations=res.iterations, prim_res=prim, dual_res=dual, polished=True)


def solve_qp_ipm(P, q, G, h, *, tol: float = 1e-6, max_iter: int = 100,
                 reg: float = 1e-12, offset: float = 0.0) -> QPResult:
    """Mehrotra predictor-corrector interior point for ``min 0.5x'Px + q'x  s.t.  Gx >= h``.

    Stops when the relative primal and dual residuals are below ``tol`` and
    the duality gap is below ``tol`` relative to the objective (plus the
    constant ``offset``, which the gap test needs to be meaningful).  The returned
    ``y`` follows the ADMM sign convention (``y = -lambda <= 0``).
    """
    P = sp.csc_matrix(P, dtype=np.float64)
    G = sp.csc_matrix(G, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    n, m = P.shape[0], G.shape[0]
    P = sp.triu(P).tocsc() + sp.triu(P, 1).T.tocsc()
    Gt = G.T.tocsc()
    R = reg * sp.identity(n, format="csc")

    x = np.zeros(n)
    s = np.ones(m)
    z = np.ones(m)
    norm_q = 1 + _inf_norm(q)
    norm_h = 1 + _inf_norm(h)

    def step_to_boundary(v, dv):
        neg = dv < 0
        return min(1.0, float(np.min(-v[neg] / dv[neg]))) if np.any(neg) else 1.0

    status, it = "max_iter", 0
    rp_n = rd_n = np.inf
    for it in range(1, max_iter + 1):
        Gx = G @ x
        rd = P @ x + q - Gt @ z
        rp = Gx - s - h
        gap = float(s @ z)
        obj = 0.5 * x @ (P @ x) + q @ x + offset
        rp_n = _inf_norm(rp) / (norm_h + _inf_norm(Gx))
        rd_n = _inf_norm(rd) / norm_q
        if rp_n <= tol and rd_n <= tol and gap <= tol * max(abs(obj), tol):
            status = "solved"
            break
        mu = gap / m
        d = z / s
        K = (P + R + Gt @ sp.diags(d) @ G).tocsc()
        lu = splu(K, permc_spec="COLAMD")

        def newton(rc):
            dx = lu.solve(-rd - Gt @ ((rc + z * rp) / s))
            dz = -(rc + z * rp + z * (G @ dx)) / s
            ds = G @ dx + rp
            return dx, ds, dz

        # predictor
        dx, ds, dz = newton(s * z)
        a_aff = min(step_to_boundary(s, ds), step_to_boundary(z, dz))
        mu_aff = float((s + a_aff * ds) @ (z + a_aff * dz)) / m
        sigma = (mu_aff / mu) ** 3
        # corrector
        dx, ds, dz = newton(s * z + ds * dz - sigma * mu)
        a = 0.99 * min(step_to_boundary(s, ds), step_to_boundary(z, dz))
        x = x + a * dx
        s = s + a * ds
        z = z + a * dz

    return QPResult(x=x, y=-z, z=G @ x, status=status, iterations=it,
                    prim_res=rp_n, dual_res=rd_n)
