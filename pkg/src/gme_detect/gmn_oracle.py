"""Closed-form renormalized GMN for GHZ-diagonal states.

For a GHZ-diagonal state the renormalized genuine multipartite negativity is

    N_g = max_i max(0, |mu_i| - w_i),   w_i = sum_{k != i} lambda_k = 1/2 - lambda_i,

which equals ``max_i max(0, F_i - 1/2)`` with ``F_i`` the best GHZ-basis
fidelity at index ``i``.  This module is the ground truth used to label
GHZ-diagonal datasets and to check the SDP solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .statekit import GhzDiagonalSpec

LABEL_THRESHOLD = 1e-6
ENTANGLED = -1
NOT_DETECTED = 1

_FORM_AGREEMENT_TOL = 1e-12


@dataclass(frozen=True)
class GmnResult:
    value: float
    argmax_index: int
    witness_margin: float
    label: int
    marginal: bool
    complex_mode: bool = False


def label_state(value: float, threshold: float = LABEL_THRESHOLD) -> int:
    """-1 (genuinely entangled) iff ``value`` exceeds ``threshold``, else +1."""
    if value < 0:
        raise ValueError(f"GMN value must be nonnegative, got {value}")
    return ENTANGLED if value > threshold else NOT_DETECTED


def is_marginal(value: float, threshold: float = LABEL_THRESHOLD, floor: float = 0.0) -> bool:
    """Positive but not above the labeling threshold."""
    return floor < value <= threshold


def gmn_analytic(spec: GhzDiagonalSpec, threshold: float = LABEL_THRESHOLD) -> GmnResult:
    mags = np.abs(spec.mus)
    margins = mags - (0.5 - spec.lambdas)
    i = int(np.argmax(margins))
    margin = float(margins[i])
    value = max(0.0, margin)

    f_plus, f_minus = spec.fidelities()
    if spec.complex_mode:
        fid = spec.lambdas + mags
    else:
        fid = np.maximum(f_plus, f_minus)
    fid_value = max(0.0, float(np.max(fid)) - 0.5)
    if abs(fid_value - value) > _FORM_AGREEMENT_TOL:
        raise ArithmeticError(
            f"GMN forms disagree: margin form {value!r}, fidelity form {fid_value!r}"
        )
    return GmnResult(
        value=value,
        argmax_index=i,
        witness_margin=margin,
        label=label_state(value, threshold),
        marginal=is_marginal(value, threshold),
        complex_mode=spec.complex_mode,
    )


def noise_threshold(n: int) -> float:
    """Mixing weight at which a white-noised pure GHZ state stops being detected.

    Solves ``p + (1 - p) / 2**n = 1/2``.
    """
    d = 2.0**n
    return (d / 2 - 1) / (d - 1)


def max_noisy_fidelity(n: int, p: float) -> float:
    """Largest GHZ fidelity any state can keep after mixing with weight ``p``."""
    return p + (1.0 - p) / 2.0**n
