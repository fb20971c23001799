"""Multi-qubit state representation, generation and elementary operations.

Dense states are plain complex ``numpy`` arrays of shape ``(2**n, 2**n)``.
Qubits are numbered ``1..n`` from the most significant bit of the
computational-basis index, so qubit 1 is the leftmost tensor factor.

GHZ-diagonal states are kept in compressed form (:class:`GhzDiagonalSpec`):
``2**(n-1)`` populations ``lambdas`` and coherences ``mus``.  Index ``i`` of
the compressed vectors refers to the computational basis state ``|i>`` and its
bitwise complement ``|~i> = |2**n - 1 - i>``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .rng import make_rng

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_TOL = 1e-10
NORMALIZATION_TOL = 1e-12

# Largest qubit count for which dense 2**n x 2**n matrices are built.
MAX_DENSE_QUBITS = 8


def num_qubits(dim: int) -> int:
    n = int(dim).bit_length() - 1
    if dim < 2 or (1 << n) != dim:
        raise ValueError(f"dimension {dim} is not a power of two >= 2")
    return n


@dataclass(frozen=True)
class ValidityReport:
    n_qubits: int
    hermiticity_residual: float
    trace_residual: float
    min_eigenvalue: float

    @property
    def hermitian(self) -> bool:
        return self.hermiticity_residual <= HERMITIAN_TOL

    @property
    def unit_trace(self) -> bool:
        return self.trace_residual <= TRACE_TOL

    @property
    def psd(self) -> bool:
        return self.min_eigenvalue >= -PSD_TOL

    @property
    def ok(self) -> bool:
        return self.hermitian and self.unit_trace and self.psd

    def violations(self) -> list[str]:
        out = []
        if not self.hermitian:
            out.append(f"hermiticity residual {self.hermiticity_residual:.3e}")
        if not self.unit_trace:
            out.append(f"trace residual {self.trace_residual:.3e}")
        if not self.psd:
            out.append(f"min eigenvalue {self.min_eigenvalue:.3e}")
        return out


def validate(rho: np.ndarray) -> ValidityReport:
    """Check the density-matrix invariants of ``rho``.

    Raises ``ValueError`` if ``rho`` is not a square matrix of power-of-two
    dimension; otherwise returns residuals for Hermiticity (max entrywise
    ``|rho - rho^H|``), trace and positivity.
    """
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {rho.shape}")
    n = num_qubits(rho.shape[0])
    herm = float(np.max(np.abs(rho - rho.conj().T)))
    tr = float(abs(np.trace(rho) - 1.0))
    hpart = (rho + rho.conj().T) / 2
    min_eig = float(np.linalg.eigvalsh(hpart)[0])
    return ValidityReport(n, herm, tr, min_eig)


def require_valid(rho: np.ndarray) -> int:
    """Validate ``rho`` and return its qubit count, raising on violation."""
    report = validate(rho)
    if not report.ok:
        raise ValueError("invalid density matrix: " + "; ".join(report.violations()))
    return report.n_qubits


# ---------------------------------------------------------------------------
# GHZ-diagonal states
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GhzDiagonalSpec:
    """Compressed n-qubit GHZ-diagonal state.

    The state has ``lambdas[i]`` at diagonal positions ``i`` and ``~i`` and
    ``mus[i]`` at ``(i, ~i)`` (``conj(mus[i])`` at ``(~i, i)``).  Its
    eigenvalues are ``lambdas[i] +- |mus[i]|``.  Complex ``mus`` are accepted
    as an extension; :attr:`complex_mode` reports it.
    """

    n: int
    lambdas: np.ndarray
    mus: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=np.float64)
        mus = np.asarray(self.mus)
        mus = mus.astype(np.complex128 if np.iscomplexobj(mus) else np.float64)
        if self.n < 2:
            raise ValueError("GHZ-diagonal states need n >= 2")
        k = 1 << (self.n - 1)
        if lam.shape != (k,) or mus.shape != (k,):
            raise ValueError(f"expected vectors of length {k} for n={self.n}")
        if abs(2.0 * lam.sum() - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"2*sum(lambdas) = {2 * lam.sum()!r}, expected 1")
        if np.any(lam < np.abs(mus)):
            bad = int(np.argmax(np.abs(mus) - lam))
            raise ValueError(f"lambda_{bad} < |mu_{bad}|: state is not positive")
        lam.setflags(write=False)
        mus.setflags(write=False)
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "mus", mus)

    @property
    def complex_mode(self) -> bool:
        return np.iscomplexobj(self.mus)

    @property
    def dim(self) -> int:
        return 1 << self.n

    def fidelities(self) -> tuple[np.ndarray, np.ndarray]:
        """GHZ-basis fidelities ``(F_i^+, F_i^-)`` for every compressed index."""
        re = self.mus.real
        return self.lambdas + re, self.lambdas - re

    def eigenvalues(self) -> np.ndarray:
        mag = np.abs(self.mus)
        return np.concatenate([self.lambdas + mag, self.lambdas - mag])

    def with_white_noise(self, p: float) -> "GhzDiagonalSpec":
        """Mix with the maximally mixed state, acting on the compressed form."""
        _check_probability(p)
        lam = p * self.lambdas + (1.0 - p) / self.dim
        return GhzDiagonalSpec(self.n, lam, p * self.mus)

    def __eq__(self, other):
        if not isinstance(other, GhzDiagonalSpec):
            return NotImplemented
        return (
            self.n == other.n
            and np.array_equal(self.lambdas, other.lambdas)
            and np.array_equal(self.mus, other.mus)
        )

    __hash__ = None

    def to_bytes(self) -> bytes:
        """``(n, lambdas, mus)`` as little-endian float64; complex mus are not serializable."""
        if self.complex_mode:
            raise ValueError("complex-mu specs have no wire format")
        return struct.pack("<d", float(self.n)) + self.lambdas.astype("<f8").tobytes() + self.mus.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "GhzDiagonalSpec":
        (n_f,) = struct.unpack_from("<d", data)
        n = int(n_f)
        k = 1 << (n - 1)
        body = np.frombuffer(data, dtype="<f8", offset=8)
        if body.size != 2 * k:
            raise ValueError("truncated GHZ-diagonal record")
        return cls(n, body[:k].copy(), body[k:].copy())


def to_density_matrix(spec: GhzDiagonalSpec) -> np.ndarray:
    if spec.n > MAX_DENSE_QUBITS:
        raise ValueError(f"dense matrices are limited to n <= {MAX_DENSE_QUBITS}")
    d = spec.dim
    k = d // 2
    idx = np.arange(k)
    comp = d - 1 - idx
    rho = np.zeros((d, d), dtype=np.complex128)
    rho[idx, idx] = spec.lambdas
    rho[comp, comp] = spec.lambdas
    rho[idx, comp] = spec.mus
    rho[comp, idx] = np.conj(spec.mus)
    return rho


def _symmetric_dirichlet(rng: np.random.Generator, k: int) -> np.ndarray:
    g = rng.standard_exponential(k)
    return g / g.sum()


def random_ghz_diagonal(
    n: int, target_label: int, rng_seed: int, threshold: float = 1e-6
) -> GhzDiagonalSpec:
    """Random GHZ-diagonal spec whose analytic label equals ``target_label``.

    Populations come from a flat Dirichlet over ``2**(n-1)`` components (halved)
    and each coherence is uniform in ``[-lambda_i, lambda_i]``.  For an
    entangled target (-1) one index is chosen at random; if its population
    cannot beat the rest (``lambda_i <= 1/4``) it is raised to a uniform value
    in ``(1/4, 1/2)`` by rescaling the other pairs, and its coherence magnitude
    is redrawn above ``w_i = 1/2 - lambda_i`` with a random sign.  For a
    not-detected target (+1) every coherence is clipped to ``|mu_i| <= w_i``.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if target_label not in (-1, 1):
        raise ValueError("target_label must be -1 or +1")
    rng = make_rng(rng_seed)
    k = 1 << (n - 1)
    lam = _symmetric_dirichlet(rng, k) / 2.0
    mu = rng.uniform(-1.0, 1.0, size=k) * lam
    if target_label == 1:
        w = 0.5 - lam
        mu = np.clip(mu, -w, w)
        return GhzDiagonalSpec(n, lam, mu)

    i = int(rng.integers(k))
    # margin available at index i is 2*lambda_i - 1/2; keep it well above threshold
    min_gap = 4.0 * threshold
    if 2.0 * lam[i] - 0.5 <= min_gap:
        new = rng.uniform(0.25 + min_gap, 0.5)
        rest = 0.5 - lam[i]
        scale = (0.5 - new) / rest
        lam = lam * scale
        mu = mu * scale
        lam[i] = new
        lam = _renormalize_pairs(lam, i)
    w = 0.5 - lam[i]
    span = lam[i] - w
    u = rng.uniform()
    mag = lam[i] - span * u  # in (w, lambda_i]
    if mag - w <= threshold:
        mag = lam[i]
    sign = 1.0 if rng.uniform() < 0.5 else -1.0
    mu[i] = sign * mag
    return GhzDiagonalSpec(n, lam, mu)


def _renormalize_pairs(lam: np.ndarray, keep: int) -> np.ndarray:
    # absorb rescaling round-off into the boosted component
    others = lam.sum() - lam[keep]
    lam[keep] = 0.5 - others
    return lam


# ---------------------------------------------------------------------------
# Dense states
# ---------------------------------------------------------------------------


def random_density_matrix(n: int, rank: int, rng_seed: int) -> np.ndarray:
    """Rank-``rank`` Hilbert-Schmidt-induced random state ``G G^H / Tr(G G^H)``.

    ``G`` is a ``2**n x rank`` matrix of independent standard complex Gaussians.
    """
    if n < 1 or n > MAX_DENSE_QUBITS:
        raise ValueError(f"n must be in 1..{MAX_DENSE_QUBITS}")
    d = 1 << n
    if not 1 <= rank <= d:
        raise ValueError(f"rank must be in 1..{d}")
    rng = make_rng(rng_seed)
    g = rng.standard_normal((d, rank)) + 1j * rng.standard_normal((d, rank))
    rho = g @ g.conj().T
    rho = (rho + rho.conj().T) / 2
    return rho / np.trace(rho).real


def random_product_state(n: int, rng_seed: int) -> np.ndarray:
    """Pure fully-product state of ``n`` Haar-random qubits."""
    rng = make_rng(rng_seed)
    psi = np.ones(1, dtype=np.complex128)
    for _ in range(n):
        v = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        psi = np.kron(psi, v / np.linalg.norm(v))
    return np.outer(psi, psi.conj())


def ghz_state(n: int) -> np.ndarray:
    d = 1 << n
    rho = np.zeros((d, d), dtype=np.complex128)
    rho[0, 0] = rho[0, d - 1] = rho[d - 1, 0] = rho[d - 1, d - 1] = 0.5
    return rho


def _check_probability(p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"mixing weight p={p} outside [0, 1]")


def add_white_noise(rho: np.ndarray, p: float) -> np.ndarray:
    """``p * rho + (1 - p) * I / 2**n``."""
    _check_probability(p)
    rho = np.asarray(rho)
    d = rho.shape[0]
    num_qubits(d)
    return p * rho + (1.0 - p) * np.eye(d) / d


def ghz_fidelity(rho: np.ndarray, basis_index: int, sign: int) -> float:
    """Overlap of ``rho`` with ``(|i> + sign |~i>) / sqrt(2)``."""
    rho = np.asarray(rho)
    d = rho.shape[0]
    num_qubits(d)
    if not 0 <= basis_index < d // 2:
        raise ValueError(f"basis index {basis_index} outside [0, {d // 2})")
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    i, j = basis_index, d - 1 - basis_index
    val = rho[i, i] + rho[j, j] + sign * (rho[i, j] + rho[j, i])
    return float(np.real(val) / 2)


# ---------------------------------------------------------------------------
# Bipartitions and partial transposition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Bipartition:
    """A split ``alpha | complement`` of qubits ``1..n``.

    Canonical form: ``alpha`` is sorted and never contains qubit ``n``.
    """

    n: int
    alpha: tuple[int, ...]

    def __post_init__(self):
        alpha = tuple(sorted(set(int(q) for q in self.alpha)))
        if len(alpha) != len(self.alpha):
            raise ValueError("repeated qubit in bipartition")
        if not alpha or len(alpha) > self.n - 1:
            raise ValueError("alpha must be a nonempty proper subset")
        if alpha[0] < 1 or alpha[-1] > self.n:
            raise ValueError(f"qubit labels must lie in 1..{self.n}")
        if self.n in alpha:
            raise ValueError("canonical bipartitions exclude the last qubit from alpha")
        object.__setattr__(self, "alpha", alpha)

    @classmethod
    def canonical(cls, n: int, subset: Iterable[int]) -> "Bipartition":
        """Canonicalize either side of a split (swaps to the complement if needed)."""
        s = set(subset)
        if n in s:
            s = set(range(1, n + 1)) - s
        return cls(n, tuple(s))

    @property
    def complement(self) -> tuple[int, ...]:
        return tuple(q for q in range(1, self.n + 1) if q not in self.alpha)

    def __str__(self):
        return "".join(map(str, self.alpha)) + "|" + "".join(map(str, self.complement))


def enumerate_bipartitions(n: int) -> list[Bipartition]:
    """All ``2**(n-1) - 1`` canonical bipartitions, ordered by bitmask of alpha."""
    if n < 2:
        raise ValueError("need at least two qubits")
    out = []
    for mask in range(1, 1 << (n - 1)):
        out.append(Bipartition(n, tuple(q + 1 for q in range(n - 1) if mask >> q & 1)))
    return out


def partial_transpose(rho: np.ndarray, alpha: Bipartition | Iterable[int], n: int | None = None) -> np.ndarray:
    """Transpose the tensor factors of the qubits in ``alpha``.

    ``alpha`` may be a :class:`Bipartition` or any collection of qubit labels
    (e.g. all qubits, giving the full transpose).  Works on any square array
    of dimension ``2**n``, including stacks with leading batch axes.
    """
    rho = np.asarray(rho)
    d = rho.shape[-1]
    nq = num_qubits(d)
    if isinstance(alpha, Bipartition):
        if alpha.n != nq:
            raise ValueError(f"bipartition is over {alpha.n} qubits, state has {nq}")
        qubits = alpha.alpha
    else:
        qubits = tuple(alpha)
        if n is not None and n != nq:
            raise ValueError(f"state has {nq} qubits, expected {n}")
        if any(q < 1 or q > nq for q in qubits):
            raise ValueError(f"qubit labels must lie in 1..{nq}")
    batch = rho.shape[:-2]
    nb = len(batch)
    t = rho.reshape(batch + (2,) * (2 * nq))
    axes = list(range(nb + 2 * nq))
    for q in qubits:
        r, c = nb + q - 1, nb + nq + q - 1
        axes[r], axes[c] = axes[c], axes[r]
    return t.transpose(axes).reshape(rho.shape)


# ---------------------------------------------------------------------------
# Wire format for dense matrices
# ---------------------------------------------------------------------------


def dense_to_bytes(rho: np.ndarray) -> bytes:
    """Row-major little-endian float64 with interleaved (re, im) pairs."""
    return np.ascontiguousarray(rho, dtype=np.complex128).view(np.float64).astype("<f8").tobytes()


def dense_from_bytes(data: bytes) -> np.ndarray:
    flat = np.frombuffer(data, dtype="<f8")
    count = flat.size // 2
    d = int(round(np.sqrt(count)))
    if d * d * 2 != flat.size:
        raise ValueError("byte length does not describe a square complex matrix")
    num_qubits(d)
    return flat.astype(np.float64).view(np.complex128).reshape(d, d).copy()
