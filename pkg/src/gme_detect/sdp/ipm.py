"""Primal-dual interior-point solver for real symmetric block SDPs.

Problem form (``y`` free, one PSD slack per block)::

    maximize    b . y
    subject to  Z_j = C_j - sum_i y_i A_{j,i}  is PSD        (every block j)

with the paired problem::

    minimize    sum_j <C_j, X_j>
    subject to  sum_j <A_{j,i}, X_j> = b_i,   X_j PSD.

The method is infeasible-start path following with Nesterov-Todd scaling and
Mehrotra predictor-corrector steps.  Each block stores only the columns of
``y`` it touches, as a sparse ``(dim*dim, ncols)`` matrix whose columns are
row-major ``vec(A_{j,i})``.

If the Schur complement has arrow structure (a set of linking variables plus
groups that only couple to the linking set and to themselves) the caller can
pass ``groups``; the Newton system is then solved by block elimination,
which is what keeps the 4-qubit GMN problem cheap.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

log = logging.getLogger(__name__)

DEFAULT_MAX_ITER = 200


class SdpConvergenceError(RuntimeError):
    """Iteration cap reached (or the Newton system broke down) before ``tol``.

    ``best`` holds the iterate with the smallest duality gap seen.
    """

    def __init__(self, message: str, best: "SdpResult | None" = None):
        super().__init__(message)
        self.best = best

    @property
    def gap(self) -> float:
        return self.best.gap if self.best is not None else float("inf")


@dataclass
class Block:
    dim: int
    c: np.ndarray
    cols: np.ndarray
    a: sp.csr_matrix

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=np.float64)
        self.cols = np.asarray(self.cols, dtype=np.intp)
        self.a = sp.csr_matrix(self.a, dtype=np.float64)
        if self.c.shape != (self.dim, self.dim):
            raise ValueError("C block has wrong shape")
        if not np.allclose(self.c, self.c.T):
            raise ValueError("C block must be symmetric")
        if self.a.shape != (self.dim * self.dim, self.cols.size):
            raise ValueError("coupling matrix shape does not match block dim / columns")

    def apply(self, y: np.ndarray) -> np.ndarray:
        """``sum_i y_i A_{j,i}`` as a dim x dim matrix."""
        return (self.a @ y[self.cols]).reshape(self.dim, self.dim)

    def adjoint(self, x: np.ndarray) -> np.ndarray:
        """``(<A_{j,i}, x>)_i`` over this block's columns."""
        return self.at @ x.reshape(-1)

    @cached_property
    def at(self) -> sp.csr_matrix:
        return self.a.T.tocsr()

    @cached_property
    def stack(self) -> np.ndarray:
        """The ``A_{j,i}`` as a dense ``(ncols, dim, dim)`` array."""
        return self.at.toarray().reshape(-1, self.dim, self.dim)

    def schur(self, w: np.ndarray) -> np.ndarray:
        """``(<A_i, W A_k W>)_{ik}`` for symmetric ``W``."""
        t = (w @ self.stack @ w).reshape(self.cols.size, -1)
        return _sym(np.asarray(self.at @ t.T))


@dataclass
class SdpProblem:
    blocks: list[Block]
    b: np.ndarray
    groups: list[np.ndarray] | None = None
    labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=np.float64)
        m = self.b.size
        for blk in self.blocks:
            if blk.cols.size and (blk.cols.min() < 0 or blk.cols.max() >= m):
                raise ValueError("block references a variable outside b")
        if self.groups is not None:
            allidx = np.sort(np.concatenate(self.groups))
            if not np.array_equal(allidx, np.arange(m)):
                raise ValueError("groups must partition the variable index set")

    @property
    def num_vars(self) -> int:
        return self.b.size

    @property
    def cone_dims(self) -> list[int]:
        return [blk.dim for blk in self.blocks]

    def adjoint(self, xs: list[np.ndarray]) -> np.ndarray:
        out = np.zeros(self.num_vars)
        for blk, x in zip(self.blocks, xs):
            out[blk.cols] += blk.adjoint(x)
        return out

    def slacks(self, y: np.ndarray) -> list[np.ndarray]:
        return [blk.c - blk.apply(y) for blk in self.blocks]


@dataclass
class SdpResult:
    x: list[np.ndarray]
    y: np.ndarray
    z: list[np.ndarray]
    primal_objective: float
    dual_objective: float
    gap: float
    primal_infeasibility: float
    dual_infeasibility: float
    iterations: int
    converged: bool


def _sym(a: np.ndarray) -> np.ndarray:
    return (a + a.T) / 2


def _nt_scaling(x: np.ndarray, z: np.ndarray):
    """Return ``G`` and ``lam`` with ``G^{-1} X G^{-T} = G^T Z G = diag(lam)``."""
    lx = np.linalg.cholesky(x)
    lz = np.linalg.cholesky(z)
    u, s, vt = np.linalg.svd(lz.T @ lx)
    g = lx @ vt.T / np.sqrt(s)
    ginv = (np.sqrt(s)[:, None] * vt) @ sla.solve_triangular(lx, np.eye(x.shape[0]), lower=True)
    return g, ginv, s


def _max_step(lam: np.ndarray, d: np.ndarray) -> float:
    """Largest ``a`` with ``diag(lam) + a d`` PSD."""
    r = 1.0 / np.sqrt(lam)
    e = np.linalg.eigvalsh(r[:, None] * d * r[None, :])[0]
    return np.inf if e >= 0 else -1.0 / e


class _SchurSolver:
    def __init__(self, m_full: np.ndarray, groups: list[np.ndarray] | None):
        self.groups = groups
        scale = max(1.0, float(np.max(np.abs(np.diag(m_full)))))
        for shift in (0.0, 1e-14, 1e-12, 1e-10, 1e-8):
            try:
                self._factor(m_full, shift * scale)
                self.shift = shift
                return
            except np.linalg.LinAlgError:
                continue
        raise np.linalg.LinAlgError("Schur complement is not positive definite")

    def _factor(self, m: np.ndarray, shift: float):
        if self.groups is None:
            self.full = sla.cho_factor(m + shift * np.eye(m.shape[0]), lower=True)
            return
        link, rest = self.groups[0], self.groups[1:]
        self.link, self.rest = link, rest
        s = m[np.ix_(link, link)].copy()
        s[np.diag_indices_from(s)] += shift
        self.parts = []
        for g in rest:
            mgg = m[np.ix_(g, g)].copy()
            mgg[np.diag_indices_from(mgg)] += shift
            fac = sla.cho_factor(mgg, lower=True)
            mgl = m[np.ix_(g, link)]
            ygl = sla.cho_solve(fac, mgl)
            s -= mgl.T @ ygl
            self.parts.append((fac, mgl, ygl))
        self.schur = sla.cho_factor(_sym(s), lower=True)

    def solve(self, r: np.ndarray) -> np.ndarray:
        if self.groups is None:
            return sla.cho_solve(self.full, r)
        out = np.empty_like(r)
        rl = r[self.link].copy()
        partial = []
        for g, (fac, mgl, _) in zip(self.rest, self.parts):
            xg = sla.cho_solve(fac, r[g])
            rl -= mgl.T @ xg
            partial.append(xg)
        xl = sla.cho_solve(self.schur, rl)
        out[self.link] = xl
        for g, xg, (_, _, ygl) in zip(self.rest, partial, self.parts):
            out[g] = xg - ygl @ xl
        return out


def _initial_point(problem: SdpProblem):
    xs, zs = [], []
    b = problem.b
    for blk in problem.blocks:
        n = blk.dim
        col_norms = np.sqrt(np.asarray(blk.a.multiply(blk.a).sum(axis=0))).ravel()
        if col_norms.size:
            ratio = np.max((1.0 + np.abs(b[blk.cols])) / (1.0 + col_norms))
            amax = float(np.max(col_norms))
        else:
            ratio, amax = 1.0, 0.0
        xi = max(10.0, np.sqrt(n), n * ratio)
        eta = max(10.0, np.sqrt(n), amax, float(np.linalg.norm(blk.c)))
        xs.append(xi * np.eye(n))
        zs.append(eta * np.eye(n))
    return xs, np.zeros(problem.num_vars), zs


def solve_interior_point(
    problem: SdpProblem,
    tol: float = 1e-8,
    max_iter: int = DEFAULT_MAX_ITER,
) -> SdpResult:
    """Solve ``problem`` to absolute gap and infeasibility ``tol``.

    Raises :class:`SdpConvergenceError` (carrying the best iterate) when the
    tolerance is not met within ``max_iter`` iterations.
    """
    blocks = problem.blocks
    b = problem.b
    m = problem.num_vars
    n_total = sum(blk.dim for blk in blocks)
    xs, y, zs = _initial_point(problem)
    bnorm = 1.0 + np.linalg.norm(b)
    cnorm = 1.0 + np.sqrt(sum(np.sum(blk.c**2) for blk in blocks))

    best: SdpResult | None = None
    prev_step = 1.0
    it = 0
    while True:
        rp = b - problem.adjoint(xs)
        rds = [blk.c - z - blk.apply(y) for blk, z in zip(blocks, zs)]
        pobj = float(sum(np.sum(blk.c * x) for blk, x in zip(blocks, xs)))
        dobj = float(b @ y)
        compl = float(sum(np.sum(x * z) for x, z in zip(xs, zs)))
        pinf = float(np.linalg.norm(rp) / bnorm)
        dinf = float(np.sqrt(sum(np.sum(r**2) for r in rds)) / cnorm)
        gap = max(abs(pobj - dobj), compl)
        current = SdpResult(
            x=[x.copy() for x in xs], y=y.copy(), z=[z.copy() for z in zs],
            primal_objective=pobj, dual_objective=dobj, gap=gap,
            primal_infeasibility=pinf, dual_infeasibility=dinf,
            iterations=it, converged=False,
        )
        if pinf <= tol and dinf <= tol and (best is None or gap <= best.gap):
            best = current
        if gap <= tol and pinf <= tol and dinf <= tol:
            current.converged = True
            return current
        if it >= max_iter:
            raise SdpConvergenceError(
                f"no convergence in {max_iter} iterations (gap {gap:.2e}, "
                f"pinf {pinf:.2e}, dinf {dinf:.2e})",
                best if best is not None else current,
            )
        it += 1
        mu = compl / n_total

        try:
            scal = [_nt_scaling(x, z) for x, z in zip(xs, zs)]
        except np.linalg.LinAlgError:
            raise SdpConvergenceError("iterate lost positive definiteness", best or current)

        mat = np.zeros((m, m))
        ws = []
        for blk, (g, _, _) in zip(blocks, scal):
            w = g @ g.T
            ws.append(w)
            mat[np.ix_(blk.cols, blk.cols)] += blk.schur(w)
        try:
            schur = _SchurSolver(mat, problem.groups)
        except np.linalg.LinAlgError:
            raise SdpConvergenceError("Newton system is singular", best or current)

        # W R_d W enters every right-hand side
        wrw = [w @ rd @ w for w, rd in zip(ws, rds)]

        def direction(rs_list):
            rhs = rp.copy()
            for blk, (g, _, _), rs, q in zip(blocks, scal, rs_list, wrw):
                rhs[blk.cols] -= blk.adjoint(g @ rs @ g.T - q)
            dy = schur.solve(rhs)
            dxs, dzs = [], []
            for blk, (g, ginv, _), rs, rd in zip(blocks, scal, rs_list, rds):
                dz_full = _sym(rd - blk.apply(dy))
                dz = _sym(g.T @ dz_full @ g)
                dxs.append(rs - dz)
                dzs.append(dz)
            return dy, dxs, dzs

        def steps(dxs, dzs):
            ap = min(_max_step(lam, dx) for (_, _, lam), dx in zip(scal, dxs))
            ad = min(_max_step(lam, dz) for (_, _, lam), dz in zip(scal, dzs))
            return ap, ad

        # predictor
        rs_aff = [-np.diag(lam) for (_, _, lam) in scal]
        _, dxa, dza = direction(rs_aff)
        ap, ad = steps(dxa, dza)
        ap, ad = min(1.0, ap), min(1.0, ad)
        mu_aff = sum(
            np.sum((np.diag(lam) + ap * dx) * (np.diag(lam) + ad * dz))
            for (_, _, lam), dx, dz in zip(scal, dxa, dza)
        ) / n_total
        sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3

        # corrector
        rs_cor = []
        for (_, _, lam), dx, dz in zip(scal, dxa, dza):
            r = sigma * mu * np.eye(lam.size) - np.diag(lam**2) - _sym(dx @ dz)
            rs_cor.append(2.0 * r / (lam[:, None] + lam[None, :]))
        dy, dxs, dzs = direction(rs_cor)
        ap, ad = steps(dxs, dzs)
        gamma = 0.9 + 0.09 * prev_step
        ap, ad = min(1.0, gamma * ap), min(1.0, gamma * ad)
        prev_step = min(ap, ad)

        new_xs, new_zs = [], []
        for (g, ginv, lam), x, z, dx, dz in zip(scal, xs, zs, dxs, dzs):
            new_xs.append(_sym(x + ap * (g @ dx @ g.T)))
            new_zs.append(_sym(z + ad * (ginv.T @ dz @ ginv)))
        xs, zs = new_xs, new_zs
        y = y + ad * dy
        log.debug("it %d gap %.3e pinf %.2e dinf %.2e step %.3f/%.3f", it, gap, pinf, dinf, ap, ad)
