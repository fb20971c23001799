import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gme_detect.rng import derive_seed, make_rng
from gme_detect.statekit import (
    Bipartition,
    GhzDiagonalSpec,
    add_white_noise,
    dense_from_bytes,
    dense_to_bytes,
    enumerate_bipartitions,
    ghz_fidelity,
    ghz_state,
    num_qubits,
    partial_transpose,
    random_density_matrix,
    random_ghz_diagonal,
    random_product_state,
    require_valid,
    to_density_matrix,
    validate,
)

seeds = st.integers(min_value=0, max_value=2**32)


def pt_by_loops(rho, qubits, n):
    """Element-wise partial transpose, written independently of the tensor version."""
    d = 1 << n
    out = np.empty_like(rho)
    for r in range(d):
        for c in range(d):
            rb = [(r >> (n - q)) & 1 for q in range(1, n + 1)]
            cb = [(c >> (n - q)) & 1 for q in range(1, n + 1)]
            for q in qubits:
                rb[q - 1], cb[q - 1] = cb[q - 1], rb[q - 1]
            r2 = int("".join(map(str, rb)), 2)
            c2 = int("".join(map(str, cb)), 2)
            out[r2, c2] = rho[r, c]
    return out


def test_num_qubits():
    assert num_qubits(8) == 3
    with pytest.raises(ValueError):
        num_qubits(6)


def test_derive_seed_is_stable_and_path_sensitive():
    assert derive_seed(5, 1, 2) == derive_seed(5, 1, 2)
    assert derive_seed(5, 1, 2) != derive_seed(5, 2, 1)
    assert 0 <= derive_seed(5) < 2**63
    a = make_rng(3).standard_normal(4)
    assert np.array_equal(a, make_rng(3).standard_normal(4))


def test_bipartition_count_and_canonical_form():
    for n in range(2, 7):
        parts = enumerate_bipartitions(n)
        assert len(parts) == 2 ** (n - 1) - 1
        assert len({p.alpha for p in parts}) == len(parts)
        assert all(n not in p.alpha for p in parts)
    assert Bipartition.canonical(3, [3]).alpha == (1, 2)
    assert str(Bipartition(4, (1, 3))) == "13|24"
    with pytest.raises(ValueError):
        Bipartition(3, (3,))


@pytest.mark.parametrize("n", [2, 3])
def test_partial_transpose_matches_loop_oracle(n):
    rho = random_density_matrix(n, 1 << n, 11)
    for r in range(1, n + 1):
        for qubits in itertools.combinations(range(1, n + 1), r):
            assert np.allclose(partial_transpose(rho, qubits), pt_by_loops(rho, qubits, n))


def test_partial_transpose_of_bell_state_has_negative_eigenvalue():
    rho = ghz_state(2)
    ev = np.linalg.eigvalsh(partial_transpose(rho, Bipartition(2, (1,))))
    assert np.isclose(ev.min(), -0.5)


@given(seeds)
def test_partial_transpose_is_involution_and_complement_is_full_transpose(seed):
    rho = random_density_matrix(3, 4, seed)
    b = Bipartition(3, (2,))
    assert np.allclose(partial_transpose(partial_transpose(rho, b), b), rho)
    both = partial_transpose(partial_transpose(rho, b.alpha), b.complement)
    assert np.allclose(both, rho.T)


def test_partial_transpose_batch():
    stack = np.stack([random_density_matrix(3, 2, s) for s in range(4)])
    b = Bipartition(3, (1, 2))
    out = partial_transpose(stack, b)
    for i in range(4):
        assert np.allclose(out[i], partial_transpose(stack[i], b))


@given(seeds, st.integers(1, 8))
def test_random_density_matrix_is_valid(seed, rank):
    rho = random_density_matrix(3, rank, seed)
    assert validate(rho).ok
    assert np.linalg.matrix_rank(rho, tol=1e-10) == rank


def test_validate_reports_violations():
    bad = np.diag([1.5, -0.5]).astype(complex)
    rep = validate(bad)
    assert not rep.ok and not rep.psd
    assert rep.violations()
    with pytest.raises(ValueError):
        require_valid(bad)
    assert require_valid(ghz_state(3)) == 3


@given(seeds, st.sampled_from([-1, 1]), st.integers(2, 6))
def test_ghz_diagonal_spec_matches_dense_matrix(seed, label, n):
    spec = random_ghz_diagonal(n, label, seed)
    rho = to_density_matrix(spec)
    assert validate(rho).ok
    assert np.allclose(np.sort(np.linalg.eigvalsh(rho)), np.sort(spec.eigenvalues()), atol=1e-12)
    f_plus, f_minus = spec.fidelities()
    for i in range(1 << (n - 1)):
        assert np.isclose(ghz_fidelity(rho, i, 1), f_plus[i])
        assert np.isclose(ghz_fidelity(rho, i, -1), f_minus[i])


@given(seeds, st.floats(0.0, 1.0))
def test_white_noise_commutes_with_compression(seed, p):
    spec = random_ghz_diagonal(4, -1, seed)
    assert np.allclose(to_density_matrix(spec.with_white_noise(p)), add_white_noise(to_density_matrix(spec), p))


def test_spec_rejects_invalid_input():
    with pytest.raises(ValueError):
        GhzDiagonalSpec(2, np.array([0.25, 0.25]), np.array([0.3, 0.0]))
    with pytest.raises(ValueError):
        GhzDiagonalSpec(2, np.array([0.3, 0.3]), np.zeros(2))
    with pytest.raises(ValueError):
        GhzDiagonalSpec(3, np.array([0.25, 0.25]), np.zeros(2))


@given(seeds)
def test_spec_bytes_round_trip(seed):
    spec = random_ghz_diagonal(5, 1, seed)
    assert GhzDiagonalSpec.from_bytes(spec.to_bytes()) == spec


def test_complex_mode_spec():
    spec = GhzDiagonalSpec(2, np.array([0.3, 0.2]), np.array([0.2j, 0.1]))
    assert spec.complex_mode
    assert validate(to_density_matrix(spec)).ok
    with pytest.raises(ValueError):
        spec.to_bytes()


def test_dense_bytes_round_trip():
    rho = random_density_matrix(2, 3, 4)
    assert np.array_equal(dense_from_bytes(dense_to_bytes(rho)), rho)


def test_product_state_is_pure_and_separable_across_every_cut():
    rho = random_product_state(3, 9)
    assert np.isclose(np.trace(rho @ rho).real, 1.0)
    for b in enumerate_bipartitions(3):
        assert np.linalg.eigvalsh(partial_transpose(rho, b)).min() > -1e-12


def test_ghz_state_fidelity():
    assert ghz_fidelity(ghz_state(4), 0, 1) == pytest.approx(1.0)
    assert ghz_fidelity(ghz_state(4), 0, -1) == pytest.approx(0.0)
