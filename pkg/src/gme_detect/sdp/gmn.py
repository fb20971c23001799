"""Renormalized GMN of a dense state via the fully-decomposable witness SDP.

    N_g(rho) = - min Tr(W rho)
    s.t. for every bipartition a|~a:  W = P_a + Q_a^{T_a},  P_a >= 0,  0 <= Q_a <= 1.

Variables are the real coordinates of the Hermitian matrices ``W`` and
``Q_a``; ``P_a`` is eliminated as the slack ``W - Q_a^{T_a}``.  Every Hermitian
PSD condition is imposed on the real symmetric embedding
``[[Re M, -Im M], [Im M, Re M]]``, which has the spectrum of ``M`` with each
eigenvalue doubled.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from ..gmn_oracle import LABEL_THRESHOLD, label_state
from ..statekit import Bipartition, enumerate_bipartitions, partial_transpose, require_valid
from .ipm import Block, SdpConvergenceError, SdpProblem, solve_interior_point

MAX_SDP_QUBITS = 4
DEFAULT_TOL = 1e-7


class SdpCapacityError(ValueError):
    """State is larger than the dense solver budget."""


def embed_complex(m: np.ndarray, check: bool = True) -> np.ndarray:
    """Real symmetric ``2d x 2d`` embedding of a Hermitian ``d x d`` matrix.

    Also accepts a stack ``(..., d, d)`` when ``check`` is off.
    """
    m = np.asarray(m)
    if check:
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("expected a square matrix")
        scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
        if np.max(np.abs(m - m.conj().T), initial=0.0) > 1e-12 * scale:
            raise ValueError("matrix is not Hermitian")
    re, im = m.real, m.imag
    top = np.concatenate([re, -im], axis=-1)
    bot = np.concatenate([im, re], axis=-1)
    return np.concatenate([top, bot], axis=-2)


@lru_cache(maxsize=8)
def hermitian_basis(d: int) -> np.ndarray:
    """Basis ``(d*d, d, d)`` of Hermitian matrices matching :func:`herm_to_coords`.

    Order: diagonal entries, then ``E_kl + E_lk`` for ``k < l``, then
    ``i E_kl - i E_lk`` for ``k < l``.
    """
    iu, ju = np.triu_indices(d, 1)
    nd = iu.size
    basis = np.zeros((d * d, d, d), dtype=np.complex128)
    r = np.arange(d)
    basis[r, r, r] = 1.0
    idx = d + np.arange(nd)
    basis[idx, iu, ju] = 1.0
    basis[idx, ju, iu] = 1.0
    idx = d + nd + np.arange(nd)
    basis[idx, iu, ju] = 1j
    basis[idx, ju, iu] = -1j
    basis.setflags(write=False)
    return basis


def herm_to_coords(h: np.ndarray) -> np.ndarray:
    d = h.shape[0]
    iu, ju = np.triu_indices(d, 1)
    return np.concatenate([np.diag(h).real, h[iu, ju].real, h[iu, ju].imag])


def coords_to_herm(c: np.ndarray, d: int) -> np.ndarray:
    iu, ju = np.triu_indices(d, 1)
    nd = iu.size
    h = np.zeros((d, d), dtype=np.complex128)
    h[np.arange(d), np.arange(d)] = c[:d]
    off = c[d : d + nd] + 1j * c[d + nd :]
    h[iu, ju] = off
    h[ju, iu] = off.conj()
    return h


# Eigenvalues below this fraction of the largest are treated as exact zeros.
SUPPORT_RTOL = 1e-11


@lru_cache(maxsize=4)
def _coupling_blocks(n: int):
    """Sparse vec-maps of the embedded basis, plain and per partial transpose."""
    d = 1 << n
    basis = hermitian_basis(d)
    plain = sp.csr_matrix(embed_complex(basis, check=False).reshape(d * d, -1).T)
    transposed = []
    for bp in enumerate_bipartitions(n):
        bt = partial_transpose(basis, bp)
        transposed.append(sp.csr_matrix(embed_complex(bt, check=False).reshape(d * d, -1).T))
    return plain, transposed


def support_basis(rho: np.ndarray) -> np.ndarray | None:
    """Orthonormal basis of the range of ``rho``, or ``None`` if it has full rank."""
    evals, evecs = np.linalg.eigh(rho)
    keep = evals > SUPPORT_RTOL * evals[-1]
    if keep.all():
        return None
    return evecs[:, keep]


@dataclass
class GmnProblem(SdpProblem):
    """:class:`SdpProblem` plus what is needed to read the witness back out."""

    rho: np.ndarray | None = None
    support: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.rho.shape[0]

    @property
    def rank(self) -> int:
        return self.dim if self.support is None else self.support.shape[1]


def assemble_problem(rho: np.ndarray) -> GmnProblem:
    """Witness SDP for ``rho`` in the solver's block form.

    Variable layout: coordinates of ``W`` first, then one ``Q_a`` per
    canonical bipartition.  Per bipartition there are three PSD blocks, in
    order ``P_a = W - Q_a^{T_a}``, ``Q_a`` and ``S_a = 1 - Q_a``.

    When ``rho`` is rank deficient, ``W`` and the ``P_a`` blocks live on the
    support of ``rho`` only (``W`` is the compression ``V^H W V``).  Without
    this the optimal ``W`` set is unbounded along the kernel of ``rho`` and
    the barrier iterates diverge.
    """
    rho = np.asarray(rho, dtype=np.complex128)
    d = rho.shape[0]
    n = require_valid(rho)
    nc = d * d
    dd = 2 * d
    plain, transposed = _coupling_blocks(n)
    parts = enumerate_bipartitions(n)
    v = support_basis(rho)
    if v is None:
        r, w_plain, rho_w = d, plain, rho
    else:
        r = v.shape[1]
        w_plain = sp.csr_matrix(embed_complex(hermitian_basis(r), check=False).reshape(r * r, -1).T)
        rho_w = v.conj().T @ rho @ v
        rho_w = (rho_w + rho_w.conj().T) / 2
    nw = r * r
    zero_p = np.zeros((2 * r, 2 * r))
    zero_q = np.zeros((dd, dd))
    w_cols = np.arange(nw)
    blocks, labels, groups = [], [], [w_cols]
    for j, (bp, at) in enumerate(zip(parts, transposed)):
        q_cols = np.arange(nw + nc * j, nw + nc * (j + 1))
        groups.append(q_cols)
        if v is None:
            a_p = sp.hstack([-w_plain, at]).tocsr()
        else:
            comp = v.conj().T @ partial_transpose(hermitian_basis(d), bp) @ v
            a_q = embed_complex(comp, check=False).reshape(nc, -1).T
            a_p = sp.hstack([-w_plain, sp.csr_matrix(a_q)]).tocsr()
        blocks.append(Block(2 * r, zero_p, np.concatenate([w_cols, q_cols]), a_p))
        blocks.append(Block(dd, zero_q, q_cols, -plain))
        blocks.append(Block(dd, np.eye(dd), q_cols, plain))
        labels += [f"P[{bp}]", f"Q[{bp}]", f"1-Q[{bp}]"]
    b = np.zeros(nw + nc * len(parts))
    b[:nw] = -np.einsum("kij,ji->k", hermitian_basis(r), rho_w).real
    return GmnProblem(blocks, b, groups=groups, labels=labels, rho=rho, support=v)


@dataclass
class WitnessSolution:
    """Optimal witness ``W`` with its per-bipartition certificates.

    ``gmn_value`` is ``-Tr(W rho)`` for the returned ``W``; ``duality_gap`` is
    the width of the certified interval ``[gmn_value, gmn_value + gap]``
    containing the true optimum.
    """

    w: np.ndarray
    per_bipartition: list[tuple[Bipartition, np.ndarray, np.ndarray]]
    gmn_value: float
    duality_gap: float
    iterations: int

    @property
    def label(self) -> int:
        return label_state(max(self.gmn_value, 0.0), LABEL_THRESHOLD)

    def feasibility_residuals(self) -> dict[str, float]:
        """Worst decomposition error and eigenvalue excursions over all bipartitions."""
        decomp, p_min, q_min, q_over = 0.0, np.inf, np.inf, -np.inf
        for bp, p, q in self.per_bipartition:
            decomp = max(decomp, float(np.linalg.norm(self.w - p - partial_transpose(q, bp))))
            p_min = min(p_min, float(np.linalg.eigvalsh(p)[0]))
            qe = np.linalg.eigvalsh(q)
            q_min = min(q_min, float(qe[0]))
            q_over = max(q_over, float(qe[-1] - 1.0))
        return {
            "decomposition": decomp,
            "min_eig_p": p_min,
            "min_eig_q": q_min,
            "max_eig_q_minus_1": q_over,
        }


def gmn_sdp(rho: np.ndarray, tol: float = DEFAULT_TOL, max_iter: int = 200) -> WitnessSolution:
    """Renormalized GMN of ``rho`` (n <= 4) with an optimal witness.

    The returned value is within ``tol`` of the optimum: the solver runs to
    ``tol / 2`` and lifting a support-restricted witness costs at most
    ``tol / 4``.
    """
    if tol < 1e-9:
        raise ValueError("tol below 1e-9 is not supported")
    rho = np.asarray(rho)
    if rho.ndim == 2 and rho.shape[0] > (1 << MAX_SDP_QUBITS):
        raise SdpCapacityError(
            f"{rho.shape[0]}-dimensional state exceeds the {MAX_SDP_QUBITS}-qubit SDP budget"
        )
    problem = assemble_problem(rho)
    res = solve_interior_point(problem, tol=tol / 2, max_iter=max_iter)
    return witness_from_solution(problem, res, shift=tol / 4)


def _lift(w_red: np.ndarray, qts: list[np.ndarray], v: np.ndarray, shift: float) -> np.ndarray:
    """Extend a witness known on the support ``V`` to the whole space.

    ``W = V (W_red + shift) V^H + t (1 - V V^H)`` with ``t`` the smallest value
    that keeps every ``W - Q_a^{T_a}`` PSD (Schur complement bound).
    """
    d, r = v.shape
    evals, evecs = np.linalg.eigh(np.eye(d) - v @ v.conj().T)
    vperp = evecs[:, evals > 0.5]
    u = np.hstack([v, vperp])
    t = 0.0
    for qt in qts:
        a = u.conj().T @ qt @ u
        z = w_red + shift * np.eye(r) - a[:r, :r]
        z = (z + z.conj().T) / 2
        a21 = a[r:, :r]
        need = a[r:, r:] + a21 @ np.linalg.solve(z, a21.conj().T)
        need = (need + need.conj().T) / 2
        t = max(t, float(np.linalg.eigvalsh(need)[-1]))
    t += shift
    w = v @ (w_red + shift * np.eye(r)) @ v.conj().T + t * (vperp @ vperp.conj().T)
    return (w + w.conj().T) / 2


def witness_from_solution(problem: GmnProblem, res, shift: float = 0.0) -> WitnessSolution:
    d, r = problem.dim, problem.rank
    rho = problem.rho
    nc, nw = d * d, r * r
    n = d.bit_length() - 1
    parts = enumerate_bipartitions(n)
    qs = [coords_to_herm(res.y[nw + nc * j : nw + nc * (j + 1)], d) for j in range(len(parts))]
    w_red = coords_to_herm(res.y[:nw], r)
    if problem.support is None:
        w = w_red
    else:
        w = _lift(w_red, [partial_transpose(q, bp) for q, bp in zip(qs, parts)], problem.support, shift)
    value = -float(np.real(np.trace(w @ rho)))
    if value < 0.0:
        # W = 0 is always feasible and does at least as well
        w = np.zeros_like(w)
        qs = [np.zeros_like(q) for q in qs]
        value = 0.0
    per = [(bp, w - partial_transpose(q, bp), q) for bp, q in zip(parts, qs)]
    return WitnessSolution(
        w=w,
        per_bipartition=per,
        gmn_value=value,
        duality_gap=max(0.0, float(res.primal_objective) - value),
        iterations=int(res.iterations),
    )


__all__ = [
    "MAX_SDP_QUBITS",
    "SdpCapacityError",
    "SdpConvergenceError",
    "WitnessSolution",
    "GmnProblem",
    "assemble_problem",
    "coords_to_herm",
    "embed_complex",
    "gmn_sdp",
    "herm_to_coords",
    "hermitian_basis",
    "support_basis",
    "witness_from_solution",
]
