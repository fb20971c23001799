"""Witness SDP for the renormalized GMN and the interior-point solver behind it."""

from .gmn import (
    GmnProblem,
    MAX_SDP_QUBITS,
    SdpCapacityError,
    WitnessSolution,
    assemble_problem,
    embed_complex,
    gmn_sdp,
    hermitian_basis,
    support_basis,
)
from .ipm import Block, SdpConvergenceError, SdpProblem, SdpResult, solve_interior_point

__all__ = [
    "Block",
    "GmnProblem",
    "MAX_SDP_QUBITS",
    "SdpCapacityError",
    "SdpConvergenceError",
    "SdpProblem",
    "SdpResult",
    "WitnessSolution",
    "assemble_problem",
    "embed_complex",
    "gmn_sdp",
    "hermitian_basis",
    "solve_interior_point",
    "support_basis",
]
