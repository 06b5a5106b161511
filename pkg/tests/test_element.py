import numpy as np
import pytest

from oracles import element_derivative_errors, energy_equivalence_error, patch_stress_error
from phasetopo.element import (
    DegenerateElementError,
    H1,
    Q1,
    ElementGeometry,
    condense,
    element_residual_tangent,
    gauss_rule,
    local_dofs,
    shape_functions,
    strain_basis,
    strain_to_spatial,
    stress_basis,
    stress_to_spatial,
    transform_tensor,
)
from phasetopo.material import MaterialParams, PhaseParams, VolumeControl, elastic_tensor
from phasetopo.mesh import build_box_grid


@pytest.mark.parametrize("kind", [Q1, H1])
def test_shape_functions_partition_of_unity(kind, rng):
    xi = rng.uniform(-1, 1, (20, kind.dim))
    N, dN = shape_functions(kind, xi)
    np.testing.assert_allclose(N.sum(axis=-1), 1.0)
    np.testing.assert_allclose(dN.sum(axis=-2), 0.0, atol=1e-15)
    N0, _ = shape_functions(kind, np.zeros(kind.dim))
    np.testing.assert_allclose(N0, 1.0 / kind.n_nodes)


def test_shape_functions_kronecker():
    from phasetopo.mesh import Q1_NODES

    N, _ = shape_functions(Q1, Q1_NODES)
    np.testing.assert_allclose(N, np.eye(4))


def test_gauss_weights_sum_to_parent_measure():
    assert gauss_rule(2).weights.sum() == 4
    assert gauss_rule(3).weights.sum() == 8


def test_basis_values():
    np.testing.assert_array_equal(stress_basis(Q1, (0.0, 0.0)), [[1, 0, 0, 0, 0], [0, 0, 1, 0, 0], [0, 0, 0, 0, 1]])
    np.testing.assert_array_equal(strain_basis(Q1, (1.0, 0.0))[0], [1, 1, 0, 0, 0, 0, 0])
    active = np.flatnonzero(np.abs(stress_basis(H1, np.zeros(3))).sum(axis=0))
    np.testing.assert_array_equal(active, [0, 4, 8, 12, 14, 16])
    assert strain_basis(H1, np.zeros(3)).shape == (6, 21)


def test_transform_tensor_cases():
    np.testing.assert_allclose(transform_tensor(np.eye(2)).T, np.eye(2))
    np.testing.assert_allclose(transform_tensor(0.05 * np.eye(2)).T, np.eye(2))
    J0 = np.array([[1.0, 0.3], [0.0, 1.0]])
    np.testing.assert_allclose(transform_tensor(J0).T, J0)
    with pytest.raises(DegenerateElementError):
        transform_tensor(np.array([[1.0, 0.0], [0.0, -1.0]]))


def test_identity_maps():
    v = np.array([1.0, 2.0, 3.0])
    np.testing.assert_allclose(stress_to_spatial(v, np.eye(2)), v)
    np.testing.assert_allclose(strain_to_spatial(v, np.eye(2), 1.0, 1.0), v)


def test_pairing_is_preserved_pointwise(rng):
    T = transform_tensor(np.array([[1.2, 0.3], [-0.1, 0.9]])).T
    s, e = rng.normal(size=3), rng.normal(size=3)
    # stress . engineering strain is the tensor contraction
    assert stress_to_spatial(s, T) @ strain_to_spatial(e, T, 2.0, 2.0) == pytest.approx(s @ e)


@pytest.mark.parametrize("dim", [2, 3])
def test_energy_equivalence(dim, rng):
    assert energy_equivalence_error(dim, rng, n=100) < 1e-12


@pytest.mark.parametrize("dim", [2, 3])
def test_element_residual_and_tangent_by_differences(dim, rng):
    r_err, d_err, asym = element_derivative_errors(dim, rng)
    assert r_err < 1e-6
    assert d_err < 1e-6
    assert asym < 1e-12


@pytest.mark.parametrize("dim", [2, 3])
def test_patch_graded_rectangles(dim, rng):
    assert patch_stress_error(dim, rng, "graded") < 1e-10


def test_degenerate_element_rejected():
    m = build_box_grid((1.0, 1.0), (1, 1))
    X = m.nodes.copy()
    X[3] = [-0.5, -0.5]  # pull the far corner through the opposite one
    with pytest.raises(DegenerateElementError):
        ElementGeometry(m.with_nodes(X), np.eye(3))


def test_no_load_no_change_gives_zero_phase_residual():
    m = build_box_grid((1.0, 1.0), (1, 1))
    mat = MaterialParams()
    g = ElementGeometry(m, elastic_tensor(mat, 2))
    phi = np.ones((1, 4))
    out = element_residual_tangent(g, np.zeros((1, 8)), phi, phi, mat, PhaseParams(), VolumeControl.constraint(0.5), 0.1)
    _, ip = local_dofs(2, 4)
    np.testing.assert_allclose(out.residual[0, ip], 0.0, atol=1e-6)  # round-off of kappa_phi/gamma terms


def test_frozen_u_block_positive_definite_after_supports():
    m = build_box_grid((1.0, 1.0), (1, 1))
    mat = MaterialParams()
    g = ElementGeometry(m, elastic_tensor(mat, 2))
    phi = np.full((1, 4), 0.7)
    frozen = {"phi_n": phi, "eps_n": np.zeros((1, 7)), "u_n": np.zeros((1, 8))}
    out = element_residual_tangent(g, np.zeros((1, 8)), phi, phi, mat, PhaseParams(), VolumeControl.minimization(1.0),
                                   0.1, mode="nand", frozen=frozen)
    iu, _ = local_dofs(2, 4)
    K = -out.tangent[0][np.ix_(iu, iu)]
    # remove rigid modes: pin node 0 and the y entry of node 1
    keep = [2, 4, 5, 6, 7]
    assert np.all(np.linalg.eigvalsh(K[np.ix_(keep, keep)]) > 0)


def test_condense_matches_dense_saddle_solve(rng):
    m = build_box_grid((1.0, 1.0), (1, 1))
    m = m.with_nodes(m.nodes + 0.1 * rng.uniform(-1, 1, m.nodes.shape))
    mat = MaterialParams(E=1.0, nu=0.3)
    g = ElementGeometry(m, elastic_tensor(mat, 2))
    f = rng.uniform(0.5, 2.0, (1, 4))
    u = rng.normal(size=(1, 8))
    sig, eps, _, _ = condense(g, f, u)
    K = np.einsum("eq,eqij->ij", f, g.Kq)
    G, H = g.G[0], g.H[0]
    # stationarity: K eps = G^T sig, G eps = H u
    A = np.block([[K, -G.T], [G, np.zeros((5, 5))]])
    x = np.linalg.solve(A, np.concatenate([np.zeros(7), H @ u[0]]))
    np.testing.assert_allclose(eps[0], x[:7], rtol=1e-10)
    np.testing.assert_allclose(sig[0], x[7:], rtol=1e-10)
