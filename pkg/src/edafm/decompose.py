"""cvxEDA decomposition of skin conductance into tonic and phasic parts.

The observed signal ``y`` is modelled as

    y = M q + B l + C d + residual

where ``A q`` is the (sparse, nonnegative) sudomotor driver, ``M A^-1`` is the
bi-exponential Bateman impulse response discretised as an ARMA(2, 2) filter,
``B`` is a cubic B-spline basis with one knot every ``knot_spacing`` seconds and
``C = [1, t/n]`` is an affine drift.  The estimate minimises

    0.5 ||M q + B l + C d - y||^2 + alpha ||A q||_1 + 0.5 gamma ||l||^2
    s.t. A q >= 0

(Greco et al., 2016).  The QP is solved by the interior-point or ADMM
solver in :mod:`edafm.qp`.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import SeriesTooShort, SolverDidNotConverge
from .qp import solve_qp, solve_qp_ipm
from .signal import RATE_HZ, Series

MIN_SAMPLES = 40
IPM_MAX_ITER = 200


@dataclass(frozen=True)
class CvxedaParams:
    tau0: float = 2.0
    tau1: float = 0.7
    knot_spacing: float = 10.0
    alpha: float = 8e-4
    gamma: float = 1e-2
    solver_tol: float = 1e-6
    max_iter: int = 20000
    solver: str = "ipm"

    def __post_init__(self):
        if not self.tau0 > self.tau1 > 0:
            raise ValueError("need tau0 > tau1 > 0")
        if self.knot_spacing < 2:
            raise ValueError("knot_spacing must be >= 2 s")
        if min(self.alpha, self.gamma, self.solver_tol) <= 0:
            raise ValueError("alpha, gamma and solver_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.solver not in ("ipm", "admm"):
            raise ValueError("solver must be 'ipm' or 'admm'")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Decomposition:
    tonic: np.ndarray
    phasic: np.ndarray
    driver: np.ndarray
    residual: np.ndarray
    multipliers: np.ndarray | None = None
    objective: float | None = None
    iterations: int = 0

    def __len__(self):
        return len(self.tonic)

    @property
    def signal(self) -> np.ndarray:
        return self.phasic + self.tonic + self.residual


@dataclass
class CvxedaModel:
    """The sparse operators of the program for a given length."""

    A: sp.csc_matrix  # driver = A q
    M: sp.csc_matrix  # phasic = M q
    B: sp.csc_matrix  # tonic spline basis
    C: np.ndarray     # affine drift basis

    @property
    def n(self) -> int:
        return self.A.shape[0]


def arma_coefficients(tau0: float, tau1: float, dt: float = 1.0 / RATE_HZ):
    """AR and MA taps of the bilinear-discretised Bateman response."""
    a1 = 1.0 / min(tau0, tau1)
    a0 = 1.0 / max(tau0, tau1)
    ar = np.array([(a1 * dt + 2) * (a0 * dt + 2),
                   2 * a1 * a0 * dt ** 2 - 8,
                   (a1 * dt - 2) * (a0 * dt - 2)]) / ((a1 - a0) * dt ** 2)
    ma = np.array([1.0, 2.0, 1.0])
    return ar, ma


def _banded(taps: np.ndarray, n: int) -> sp.csc_matrix:
    i = np.arange(2, n)
    rows = np.repeat(i, 3)
    cols = np.stack([i, i - 1, i - 2], axis=1).ravel()
    vals = np.tile(taps, n - 2)
    return sp.csc_matrix((vals, (rows, cols)), shape=(n, n))


def spline_basis(n: int, knot_spacing: float, dt: float = 1.0 / RATE_HZ) -> sp.csc_matrix:
    k = int(round(knot_spacing / dt))
    tri = np.r_[np.arange(1.0, k), np.arange(k, 0.0, -1.0)]
    kernel = np.convolve(tri, tri, "full")
    kernel /= kernel.max()
    offsets = np.arange(-(len(kernel) // 2), (len(kernel) + 1) // 2)
    centers = np.arange(0, n, k)
    rows = offsets[:, None] + centers[None, :]
    cols = np.broadcast_to(np.arange(len(centers)), rows.shape)
    vals = np.broadcast_to(kernel[:, None], rows.shape)
    ok = (rows >= 0) & (rows < n)
    return sp.csc_matrix((vals[ok], (rows[ok], cols[ok])), shape=(n, len(centers)))


def build_model(n: int, p: CvxedaParams) -> CvxedaModel:
    ar, ma = arma_coefficients(p.tau0, p.tau1)
    C = np.c_[np.ones(n), np.arange(1.0, n + 1.0) / n]
    return CvxedaModel(A=_banded(ar, n), M=_banded(ma, n), B=spline_basis(n, p.knot_spacing), C=C)


def objective(y, model: CvxedaModel, q, d, l, p: CvxedaParams) -> float:
    fit = model.M @ q + model.B @ l + model.C @ d - y
    return float(0.5 * fit @ fit + p.alpha * np.abs(model.A @ q).sum() + 0.5 * p.gamma * l @ l)


def bateman_pulse(n: int, index: int, amplitude: float = 1.0, tau0: float = 2.0,
                  tau1: float = 0.7) -> np.ndarray:
    """Phasic response of the discretised model to a single driver impulse."""
    ar, ma = arma_coefficients(tau0, tau1)
    driver = np.zeros(n)
    driver[index] = amplitude
    # q from A q = driver with q[0] = q[1] = 0 (rows 0, 1 of A are empty)
    q = np.zeros(n)
    for i in range(2, n):
        q[i] = (driver[i] - ar[1] * q[i - 1] - ar[2] * q[i - 2]) / ar[0]
    phasic = np.zeros(n)
    phasic[2:] = ma[0] * q[2:] + ma[1] * q[1:-1] + ma[2] * q[:-2]
    return phasic


def _solve_block(y: np.ndarray, p: CvxedaParams) -> Decomposition:
    n = len(y)
    model = build_model(n, p)
    W = sp.hstack([model.M, sp.csc_matrix(model.C), model.B]).tocsc()
    nB = model.B.shape[1]
    reg = sp.block_diag([sp.csc_matrix((n + 2, n + 2)), p.gamma * sp.identity(nB)]).tocsc()
    P = (W.T @ W + reg).tocsc()
    qvec = np.concatenate([p.alpha * np.asarray(model.A.sum(axis=0)).ravel() - model.M.T @ y,
                           -(model.C.T @ y), -(model.B.T @ y)])
    G = sp.hstack([model.A[2:], sp.csc_matrix((n - 2, 2 + nB))]).tocsc()
    m = n - 2
    if p.solver == "ipm":
        res = solve_qp_ipm(P, qvec, G, np.zeros(m), tol=p.solver_tol,
                           max_iter=min(p.max_iter, IPM_MAX_ITER), offset=0.5 * y @ y)
    else:
        res = solve_qp(P, qvec, G, np.zeros(m), np.full(m, np.inf), tol=p.solver_tol,
                       max_iter=p.max_iter)
    if not res.converged:
        raise SolverDidNotConverge(
            f"cvxEDA QP not converged after {res.iterations} iterations "
            f"(primal {res.prim_res:.2e}, dual {res.dual_res:.2e})")
    q, d, l = res.x[:n], res.x[n:n + 2], res.x[n + 2:]
    phasic = model.M @ q
    tonic = model.B @ l + model.C @ d
    driver = model.A @ q
    lam = np.zeros(n)
    lam[2:] = -res.y
    return Decomposition(tonic=tonic, phasic=phasic, driver=driver,
                         residual=y - phasic - tonic, multipliers=lam,
                         objective=objective(y, model, q, d, l, p), iterations=res.iterations)


def _chunk_starts(n: int, size: int, overlap: int) -> list[int]:
    step = size - overlap
    starts = list(range(0, max(n - size, 0) + 1, step))
    if starts[-1] + size < n:
        starts.append(n - size)
    return starts


def cvxeda(s, params: CvxedaParams | None = None, *, chunk_s: float = 600.0,
           overlap_s: float = 30.0) -> Decomposition:
    """Decompose a 4 Hz EDA series.

    Series longer than ``chunk_s`` are solved in overlapping chunks whose
    shared samples are blended with a linear taper, so the QP size stays
    bounded for multi-day recordings.

    Raises
    ------
    SeriesTooShort
        Fewer than 40 samples (10 s).
    SolverDidNotConverge
        ``max_iter`` reached on any chunk; no partial result is returned.
    """
    p = params or CvxedaParams()
    y = s.values if isinstance(s, Series) else np.asarray(s, dtype=np.float64)
    n = len(y)
    if n < MIN_SAMPLES:
        raise SeriesTooShort(f"{n} samples; cvxEDA needs at least {MIN_SAMPLES}")
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite samples")
    size = int(round(chunk_s * RATE_HZ))
    overlap = int(round(overlap_s * RATE_HZ))
    if n <= size:
        return _solve_block(y, p)

    tonic, phasic, driver = np.zeros(n), np.zeros(n), np.zeros(n)
    iterations = 0
    prev_end = 0
    for start in _chunk_starts(n, size, overlap):  # fixed blend order
        part = _solve_block(y[start:start + size], p)
        iterations += part.iterations
        w = np.ones(size)
        shared = max(prev_end - start, 0)
        if shared:
            w[:shared] = (np.arange(shared) + 1.0) / (shared + 1.0)
            tonic[start:prev_end] *= 1 - w[:shared]
            phasic[start:prev_end] *= 1 - w[:shared]
            driver[start:prev_end] *= 1 - w[:shared]
        sl = slice(start, start + size)
        tonic[sl] += w * part.tonic
        phasic[sl] += w * part.phasic
        driver[sl] += w * part.driver
        prev_end = start + size
    return Decomposition(tonic=tonic, phasic=phasic, driver=driver,
                         residual=y - phasic - tonic, iterations=iterations)


def cached_cvxeda(rec_digest: str, values, params: CvxedaParams, cache_dir: str | Path,
                  **kwargs) -> Decomposition:
    """Decompose with an on-disk cache keyed by (recording hash, params hash)."""
    path = Path(cache_dir) / f"{rec_digest}_{params.digest()}.npz"
    if path.exists():
        with np.load(path) as z:
            return Decomposition(tonic=z["tonic"], phasic=z["phasic"], driver=z["driver"],
                                 residual=z["residual"], iterations=int(z["iterations"]))
    dec = cvxeda(values, params, **kwargs)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, tonic=dec.tonic, phasic=dec.phasic, driver=dec.driver,
             residual=dec.residual, iterations=dec.iterations)
    return dec
