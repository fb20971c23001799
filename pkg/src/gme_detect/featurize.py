"""Turn states into 1-D feature sequences for the classifier.

Two encodings:

* dense: ``Re(rho)`` row-major (H*H values) followed by ``Im(rho)`` row-major
  with the H diagonal entries dropped (always zero for a Hermitian matrix),
  giving ``(2H - 1) * H`` values.
* GHZ-diagonal: the 2**n GHZ-basis eigenvalues, ordered
  ``(l_0 + m_0, l_0 - m_0, l_1 + m_1, ...)``.

Features are returned as 1-D float64 arrays; the single input channel is
implicit and added by the network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .statekit import GhzDiagonalSpec, num_qubits, require_valid

DENSE = "dense"
GHZ_DIAGONAL = "ghz_diagonal"
FEATURE_KINDS = (DENSE, GHZ_DIAGONAL)

SCALE_FLOOR = 1e-12


def dense_length(n: int) -> int:
    h = 1 << n
    return (2 * h - 1) * h


def ghz_length(n: int) -> int:
    return 1 << n


def feature_length(kind: str, n: int) -> int:
    if kind == DENSE:
        return dense_length(n)
    if kind == GHZ_DIAGONAL:
        return ghz_length(n)
    raise ValueError(f"unknown feature kind {kind!r}")


def _offdiag_mask(h: int) -> np.ndarray:
    return ~np.eye(h, dtype=bool).ravel()


def featurize_dense(rho: np.ndarray) -> np.ndarray:
    rho = np.asarray(rho, dtype=np.complex128)
    require_valid(rho)
    h = rho.shape[0]
    im = rho.imag.ravel()[_offdiag_mask(h)]
    return np.concatenate([rho.real.ravel(), im])


def unfeaturize_dense(x: np.ndarray) -> np.ndarray:
    """Inverse of :func:`featurize_dense` (imaginary diagonal restored as 0)."""
    x = np.asarray(x, dtype=np.float64)
    # (2h - 1) h = L  =>  h = (1 + sqrt(1 + 8L)) / 4
    h = int(round((1 + np.sqrt(1 + 8 * x.size)) / 4))
    if (2 * h - 1) * h != x.size:
        raise ValueError(f"length {x.size} is not a dense feature length")
    re = x[: h * h].reshape(h, h)
    im = np.zeros(h * h)
    im[_offdiag_mask(h)] = x[h * h :]
    return re + 1j * im.reshape(h, h)


def featurize_ghz_diagonal(spec: GhzDiagonalSpec) -> np.ndarray:
    lam = spec.lambdas
    mag = np.abs(spec.mus) if spec.complex_mode else spec.mus
    out = np.empty(2 * lam.size)
    out[0::2] = lam + mag
    out[1::2] = lam - mag
    return out


def unfeaturize_ghz_diagonal(x: np.ndarray) -> GhzDiagonalSpec:
    x = np.asarray(x, dtype=np.float64)
    n = num_qubits(x.size)
    plus, minus = x[0::2], x[1::2]
    return GhzDiagonalSpec(n, (plus + minus) / 2, (plus - minus) / 2)


PER_POSITION = "per_position"
POOLED = "pooled"
DEFAULT_NORMALIZATION = {DENSE: PER_POSITION, GHZ_DIAGONAL: POOLED}


@dataclass(frozen=True)
class NormStats:
    """Mean and scale per feature position, fitted on a training split.

    ``mode="per_position"`` standardizes every position on its own.
    ``mode="pooled"`` uses one mean and one std over all entries, broadcast
    to every position.  Pooling matters for GHZ-diagonal vectors: with
    Dirichlet weights most positions are near zero in almost every sample,
    so per-position scales collapse and a spike at a position rarely seen
    in training is blown up by orders of magnitude at test time.
    """

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray, mode: str = PER_POSITION) -> "NormStats":
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] == 0:
            raise ValueError("expected a non-empty (samples, length) array")
        if mode == PER_POSITION:
            mean = features.mean(axis=0)
            scale = np.maximum(features.std(axis=0), SCALE_FLOOR)
            # constant positions map to exactly 0 despite the tiny scale
            const = np.all(features == features[0], axis=0)
            mean[const] = features[0, const]
        elif mode == POOLED:
            length = features.shape[1]
            first = features.flat[0]
            centre = first if np.all(features == first) else features.mean()
            mean = np.full(length, centre)
            scale = np.full(length, max(float(features.std()), SCALE_FLOOR))
        else:
            raise ValueError(f"unknown normalization mode {mode!r}")
        return cls(mean, scale)

    @property
    def length(self) -> int:
        return self.mean.size


def normalize_features(x: np.ndarray, stats: NormStats) -> np.ndarray:
    """Standardize ``x`` (one sample or a batch) with fitted statistics."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != stats.length:
        raise ValueError(f"feature length {x.shape[-1]} does not match stats length {stats.length}")
    return (x - stats.mean) / stats.scale


__all__ = [
    "DEFAULT_NORMALIZATION",
    "DENSE",
    "FEATURE_KINDS",
    "GHZ_DIAGONAL",
    "NormStats",
    "PER_POSITION",
    "POOLED",
    "dense_length",
    "feature_length",
    "featurize_dense",
    "featurize_ghz_diagonal",
    "ghz_length",
    "normalize_features",
    "unfeaturize_dense",
    "unfeaturize_ghz_diagonal",
]
