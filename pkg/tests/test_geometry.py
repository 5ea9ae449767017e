"""Geometry kernels against closed forms and numpy.linalg oracles."""

import numpy as np
import pytest

from comoving.dual import Dual, d1, exp, sin, tangent, value
from comoving.errors import DegenerateFlow, NonFinite
from comoving.geometry import (
    DualPerturbedFlow,
    FlowMap,
    FlowPerturbation,
    Point,
    check_jacobian_identity,
    christoffel_perturbation_covariant,
    christoffel_symbols,
    cofactor_matrix,
    adjugate,
    det_small,
    divergence_of_perturbation,
    geometry_bundle,
    geometry_perturbation,
    inverse_jacobian,
    inverse_jacobian_derivative,
    jacobian_determinant,
    jacobian_matrix,
    metric_tensor,
    perturbed_flow,
)
from helpers import random_flow, random_perturbation, random_point


def test_point_validation():
    p = Point((0.0, 1.0, 2.0))
    assert p.dim == 2
    with pytest.raises(ValueError):
        Point((1.0,))
    with pytest.raises(NonFinite):
        Point((0.0, np.nan))


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_identity_flow_geometry(dim):
    flow = FlowMap.identity(dim)
    p = Point(tuple(0.1 * k for k in range(dim + 1)))
    bundle = geometry_bundle(flow, p)
    eye = np.eye(dim + 1)
    assert np.allclose(bundle.jac, eye)
    assert np.allclose(bundle.cof, eye)
    assert np.isclose(bundle.det, 1.0)
    assert np.allclose(bundle.inv, eye)
    assert np.allclose(bundle.metric, eye)
    assert np.allclose(bundle.gamma, 0.0)


def test_linear_flow_matches_numpy_linalg():
    mat = np.array([[1.0, 0.2, -0.1], [0.05, 1.1, 0.3], [-0.2, 0.1, 0.9]])
    comps = [(lambda s, row=row: sum(c * s[k] for k, c in enumerate(row)))
             for row in mat]
    flow = FlowMap(2, comps)
    p = [0.3, -0.4, 0.7]
    assert np.allclose(jacobian_matrix(flow, p), mat)
    assert np.isclose(jacobian_determinant(flow, p), np.linalg.det(mat))
    assert np.allclose(inverse_jacobian(flow, p), np.linalg.inv(mat))
    assert np.allclose(cofactor_matrix(flow, p),
                       np.linalg.det(mat) * np.linalg.inv(mat))
    assert np.allclose(metric_tensor(flow, p), mat.T @ mat)
    assert np.allclose(christoffel_symbols(flow, p), 0.0)


def test_small_matrix_primitives_against_numpy():
    rng = np.random.default_rng(3)
    for size in (1, 2, 3, 4):
        mat = rng.standard_normal((size, size)) + 2.0 * np.eye(size)
        assert np.isclose(det_small(mat.tolist()), np.linalg.det(mat))
        adj = np.asarray(adjugate(mat.tolist()), dtype=float)
        assert np.allclose(mat @ adj, np.linalg.det(mat) * np.eye(size),
                           atol=1e-10)


def test_time_identity_inverse_layout():
    # xhat^0 = t, xhat^1 = sigma * exp(t): first row of A is (1, 0) and the
    # second row is (-xhat_t / xhat_s, 1 / xhat_s)
    flow = FlowMap.from_spatial(1, [lambda s: s[1] * exp(s[0])])
    t0, s0 = 0.4, 0.8
    inv = inverse_jacobian(flow, [t0, s0])
    xhat_t = s0 * np.exp(t0)
    xhat_s = np.exp(t0)
    assert np.allclose(inv[0], [1.0, 0.0])
    assert np.isclose(inv[1][0], -xhat_t / xhat_s)
    assert np.isclose(inv[1][1], 1.0 / xhat_s)


def test_exponential_flow_christoffel():
    # xhat^1 = exp(sigma^1): metric diag(1, exp(2 s)), only Gamma^1_11 = 1
    flow = FlowMap.from_spatial(1, [lambda s: exp(s[1])])
    gamma = christoffel_symbols(flow, [0.3, -0.2])
    expected = np.zeros((2, 2, 2))
    expected[1][1][1] = 1.0
    assert np.allclose(gamma, expected, atol=1e-12)


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_random_flow_against_linalg_oracles(dim):
    rng = np.random.default_rng(100 + dim)
    for _ in range(5):
        flow = random_flow(rng, dim)
        p = random_point(rng, dim)
        jac = jacobian_matrix(flow, p).astype(float)
        assert np.isclose(jacobian_determinant(flow, p), np.linalg.det(jac),
                          rtol=1e-12)
        assert np.allclose(inverse_jacobian(flow, p), np.linalg.inv(jac),
                           rtol=1e-10, atol=1e-12)
        assert np.allclose(cofactor_matrix(flow, p),
                           np.linalg.det(jac) * np.linalg.inv(jac),
                           rtol=1e-9, atol=1e-11)
        g = metric_tensor(flow, p).astype(float)
        assert np.isclose(np.linalg.det(g), np.linalg.det(jac) ** 2,
                          rtol=1e-9)


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_determinant_derivative_identity(dim):
    rng = np.random.default_rng(200 + dim)
    for _ in range(5):
        flow = random_flow(rng, dim)
        p = random_point(rng, dim)
        assert np.max(np.abs(check_jacobian_identity(flow, p))) < 1e-8


def test_inverse_jacobian_derivative_matches_dual_pass():
    rng = np.random.default_rng(11)
    flow = random_flow(rng, 2)
    p = random_point(rng, 2)
    da = inverse_jacobian_derivative(flow, p).astype(float)
    m = 3
    for lam in range(m):
        for mu in range(m):
            for rho in range(m):
                direct = d1(lambda q: inverse_jacobian(flow, q)[lam][mu],
                            list(p), rho)
                assert np.isclose(da[lam][mu][rho], direct,
                                  rtol=1e-10, atol=1e-12)


def test_degenerate_flow_raises():
    flow = FlowMap.from_spatial(1, [lambda s: 1.0 + 0.0 * s[1]])
    with pytest.raises(DegenerateFlow):
        jacobian_determinant(flow, [0.0, 0.5])
    with pytest.raises(DegenerateFlow):
        inverse_jacobian(flow, [0.0, 0.5])


def test_nonfinite_jacobian_raises():
    flow = FlowMap.from_spatial(1, [lambda s: s[1] * np.nan])
    with pytest.raises(NonFinite):
        jacobian_matrix(flow, [0.0, 0.5])


def test_perturbation_metric_and_determinant_match_finite_differences():
    rng = np.random.default_rng(21)
    flow = random_flow(rng, 2)
    pert = random_perturbation(rng, 2)
    p = random_point(rng, 2)
    gp = geometry_perturbation(flow, pert, p)
    eps = 1e-6
    up = perturbed_flow(flow, pert, eps)
    dn = perturbed_flow(flow, pert, -eps)
    h_fd = (metric_tensor(up, p).astype(float)
            - metric_tensor(dn, p).astype(float)) / (2 * eps)
    assert np.allclose(gp.h.astype(float), h_fd, rtol=1e-6, atol=1e-8)
    dj_fd = (jacobian_determinant(up, p) - jacobian_determinant(dn, p)) / (2 * eps)
    assert np.isclose(value(gp.dj), dj_fd, rtol=1e-6)
    dgamma_fd = (christoffel_symbols(up, p).astype(float)
                 - christoffel_symbols(dn, p).astype(float)) / (2 * eps)
    assert np.allclose(gp.dgamma.astype(float), dgamma_fd, rtol=1e-5, atol=1e-7)


def test_connection_variation_covariant_equivalence():
    rng = np.random.default_rng(22)
    for dim in (1, 2):
        flow = random_flow(rng, dim)
        pert = random_perturbation(rng, dim)
        p = random_point(rng, dim)
        gp = geometry_perturbation(flow, pert, p, verify=False)
        cov = christoffel_perturbation_covariant(flow, pert, p)
        assert np.allclose(gp.dgamma.astype(float), cov, atol=1e-8)


def test_divergence_of_perturbation_identity_flow():
    flow = FlowMap.identity(2)
    pert = FlowPerturbation(2, [lambda s: s[0] ** 2,
                                lambda s: sin(s[1]),
                                lambda s: s[1] * s[2]])
    p = [0.3, 0.25, -0.4]
    want = 2 * 0.3 + np.cos(0.25) + 0.25
    assert np.isclose(divergence_of_perturbation(flow, pert, p), want)
    gp = geometry_perturbation(flow, pert, p)
    assert np.isclose(value(gp.div_phi), want)
    assert np.isclose(value(gp.dj), want)  # det = 1 on the identity flow


def test_dual_perturbed_flow_directional_determinant():
    rng = np.random.default_rng(23)
    flow = random_flow(rng, 1)
    pert = random_perturbation(rng, 1)
    p = random_point(rng, 1)
    dual_flow = DualPerturbedFlow(flow, pert)
    det = jacobian_determinant(dual_flow, p)
    gp = geometry_perturbation(flow, pert, p)
    assert np.isclose(tangent(det), value(gp.dj), rtol=1e-10)


def test_perturbed_flow_helper_evaluates_shifted_map():
    flow = FlowMap.identity(1)
    pert = FlowPerturbation(1, [lambda s: 0.0, lambda s: sin(s[1])])
    shifted = perturbed_flow(flow, pert, 0.25)
    out = shifted.eval([0.0, 0.6])
    assert np.isclose(out[1], 0.6 + 0.25 * np.sin(0.6))
    assert np.isclose(out[0], 0.0)
