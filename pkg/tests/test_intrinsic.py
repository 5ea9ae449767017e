"""Pushforward operators and concrete comoving residuals."""

import numpy as np
import pytest

from comoving.dual import cos, exp, sin
from comoving.errors import DegenerateFlow
from comoving.fields import AnalyticScalarField, Grid, VectorField
from comoving.geometry import FlowMap, FlowPerturbation, jacobian_matrix
from comoving.intrinsic import (
    FlowLink,
    IntrinsicOperator,
    PressureField,
    check_link_linearity,
    dump_residual_field,
    heat_operator,
    heat_residual,
    heat_residual_cartesian,
    identity_link,
    navier_stokes_residual,
    pushforward_gradient,
    pushforward_hessian,
)
from helpers import random_flow, random_point


def invert_flow(flow, x_target, guess):
    """Newton inversion sigma(x) using the exact Jacobian."""
    sigma = np.array(guess, dtype=float)
    for _ in range(50):
        r = flow.eval(list(sigma)).astype(float) - x_target
        if np.max(np.abs(r)) < 1e-13:
            break
        jac = jacobian_matrix(flow, list(sigma)).astype(float)
        sigma = sigma - np.linalg.solve(jac, r)
    return sigma


def sin_field():
    return AnalyticScalarField(1, lambda s: sin(s[1]))


# ---------------------------------------------------------------------------
# pushforward gradient

def test_gradient_identity_flow_unchanged():
    u = AnalyticScalarField(1, lambda s: sin(s[1]) * exp(s[0]))
    flow = FlowMap.identity(1)
    p = [0.2, 0.7]
    grad = pushforward_gradient(u, flow, p).astype(float)
    assert np.allclose(grad, [u.deriv1(p, 0), u.deriv1(p, 1)])


def test_gradient_stretched_flow_oracle():
    flow = FlowMap.from_spatial(1, [lambda s: 2.0 * s[1]])
    p = [0.1, 0.55]
    grad = pushforward_gradient(sin_field(), flow, p).astype(float)
    assert np.isclose(grad[1], np.cos(0.55) / 2.0)
    assert np.isclose(grad[0], 0.0)


@pytest.mark.parametrize("dim", [1, 2])
def test_gradient_matches_numeric_inversion(dim):
    rng = np.random.default_rng(31 + dim)
    flow = random_flow(rng, dim)
    u = AnalyticScalarField(
        dim, lambda s: sin(s[1]) * exp(0.3 * s[0]) + (s[-1] ** 2))
    p = np.array(random_point(rng, dim, scale=0.3))
    x0 = flow.eval(list(p)).astype(float)

    def U(x):
        return u.eval(list(invert_flow(flow, x, p)))

    grad = pushforward_gradient(u, flow, list(p)).astype(float)
    h = 1e-5
    for mu in range(dim + 1):
        e = np.zeros(dim + 1)
        e[mu] = h
        fd = (U(x0 + e) - U(x0 - e)) / (2 * h)
        assert np.isclose(grad[mu], fd, rtol=1e-6, atol=1e-6)


# ---------------------------------------------------------------------------
# pushforward hessian

def test_hessian_identity_flow_unchanged():
    u = AnalyticScalarField(1, lambda s: sin(s[1]) * exp(s[0]))
    flow = FlowMap.identity(1)
    p = [0.2, 0.7]
    hess = pushforward_hessian(u, flow, p).astype(float)
    want = [[u.deriv2(p, a, b) for b in range(2)] for a in range(2)]
    assert np.allclose(hess, want)


def test_hessian_stretched_flow_oracle():
    flow = FlowMap.from_spatial(1, [lambda s: 2.0 * s[1]])
    p = [0.1, 0.55]
    hess = pushforward_hessian(sin_field(), flow, p).astype(float)
    assert np.isclose(hess[1][1], -np.sin(0.55) / 4.0)


@pytest.mark.parametrize("dim", [1, 2])
def test_hessian_symmetry_sweep(dim):
    rng = np.random.default_rng(41 + dim)
    u = AnalyticScalarField(
        dim, lambda s: sin(s[1] + 0.2 * s[0]) + 0.1 * s[-1] ** 3)
    for _ in range(5):
        flow = random_flow(rng, dim)
        p = random_point(rng, dim)
        hess = pushforward_hessian(u, flow, p).astype(float)
        assert np.max(np.abs(hess - hess.T)) < 1e-8


# ---------------------------------------------------------------------------
# heat residual

def test_heat_identity_flow_reduces_to_cartesian():
    u = AnalyticScalarField(1, lambda s: sin(2 * s[1]) * exp(-s[0]))
    flow = FlowMap.identity(1)
    alpha = 0.7
    p = [0.3, 0.9]
    want = u.deriv1(p, 0) - alpha * u.deriv2(p, 1, 1)
    assert np.isclose(heat_residual(u, flow, alpha, p), want, atol=1e-12)


def test_heat_exact_solution_through_stretched_flow():
    # U(x, t) = exp(-alpha pi^2 t) sin(pi x) solves the Cartesian law;
    # composing with xhat = 2 sigma must leave a zero residual
    alpha = 0.7
    flow = FlowMap.from_spatial(1, [lambda s: 2.0 * s[1]])
    u = AnalyticScalarField(
        1, lambda s: exp(-alpha * np.pi ** 2 * s[0]) * sin(2 * np.pi * s[1]))
    for p in ([0.0, 0.3], [0.5, 0.11], [1.2, -0.4]):
        assert abs(heat_residual(u, flow, alpha, p)) < 1e-8


def test_heat_literal_and_pushforward_codings_agree():
    rng = np.random.default_rng(53)
    alpha = 1.3
    for _ in range(10):
        flow = random_flow(rng, 1, time_identity=True)
        u = AnalyticScalarField(
            1, lambda s: sin(1.1 * s[1] + 0.4 * s[0]) + 0.2 * s[1] ** 2)
        p = random_point(rng, 1)
        a = heat_residual(u, flow, alpha, p)
        b = heat_residual_cartesian(u, flow, alpha, p)
        assert abs(a - b) < 1e-8


def test_heat_rejects_bad_inputs():
    u = sin_field()
    with pytest.raises(ValueError):
        heat_residual(u, FlowMap.identity(2), 1.0, [0.0, 0.1, 0.2])
    free_time = FlowMap(1, [lambda s: 2 * s[0], lambda s: s[1]])
    with pytest.raises(ValueError):
        heat_residual(u, free_time, 1.0, [0.0, 0.1])
    flat = FlowMap.from_spatial(1, [lambda s: 1.0 + 0.0 * s[1]])
    with pytest.raises(DegenerateFlow):
        heat_residual(u, flat, 1.0, [0.0, 0.1])


def test_heat_relabeling_invariance_at_matched_points():
    # flows differing by a fixed affine relabeling represent the same motion:
    # residuals agree at labels mapping to the same physical point
    alpha = 0.9
    a, b = 1.7, -0.3
    base_spatial = lambda s: s[1] + 0.2 * sin(s[1]) * exp(-0.5 * s[0])
    flow1 = FlowMap.from_spatial(1, [base_spatial])
    flow2 = FlowMap.from_spatial(
        1, [lambda s: base_spatial([s[0], a * s[1] + b])])
    ufun = lambda s: sin(1.3 * s[1]) + 0.1 * s[0]
    u1 = AnalyticScalarField(1, lambda s: ufun([s[0], base_spatial(s)]))
    u2 = AnalyticScalarField(
        1, lambda s: ufun([s[0], base_spatial([s[0], a * s[1] + b])]))
    t0, s0 = 0.4, 0.62
    r1 = heat_residual(u1, flow1, alpha, [t0, s0])
    r2 = heat_residual(u2, flow2, alpha, [t0, (s0 - b) / a])
    assert np.isclose(r1, r2, atol=1e-10)


# ---------------------------------------------------------------------------
# momentum/continuity residuals

def taylor_green(Re):
    u1 = AnalyticScalarField(
        2, lambda s: sin(s[1]) * cos(s[2]) * exp(-2 * s[0] / Re))
    u2 = AnalyticScalarField(
        2, lambda s: -cos(s[1]) * sin(s[2]) * exp(-2 * s[0] / Re))
    pres = PressureField(AnalyticScalarField(
        2, lambda s: 0.25 * (cos(2 * s[1]) + cos(2 * s[2]))
        * exp(-4 * s[0] / Re)))
    return VectorField([u1, u2]), pres


def test_taylor_green_identity_flow_residuals_vanish():
    Re = 100.0
    u, pres = taylor_green(Re)
    flow = FlowMap.identity(2)
    for p in ([0.0, 0.5, 1.1], [0.2, 2.0, 0.3], [0.05, -1.0, 2.5]):
        res = navier_stokes_residual(u, pres, flow, Re, p).astype(float)
        assert res.shape == (3,)
        assert np.max(np.abs(res)) < 1e-7


def test_rest_state_residuals_zero():
    zero = AnalyticScalarField(2, lambda s: 0.0 * s[0])
    u = VectorField([zero, zero])
    pres = PressureField(AnalyticScalarField(2, lambda s: 1.0 + 0.0 * s[0]))
    res = navier_stokes_residual(u, pres, FlowMap.identity(2), 10.0,
                                 [0.1, 0.2, 0.3]).astype(float)
    assert np.allclose(res, 0.0)


def test_momentum_residual_rejects_one_dimensional_flow():
    u = VectorField([sin_field()])
    pres = PressureField(sin_field())
    with pytest.raises(ValueError):
        navier_stokes_residual(u, pres, FlowMap.identity(1), 1.0, [0.0, 0.1])


def test_momentum_residual_nontrivial_flow_matches_cartesian():
    # residual at sigma equals the Cartesian residual at x = xhat(sigma),
    # evaluated by composing the exact solution fields with the flow
    Re = 40.0
    U, P = taylor_green(Re)
    spatial = [lambda s: s[1] + 0.1 * sin(s[2]),
               lambda s: s[2] + 0.1 * sin(s[1] + s[0])]
    flow = FlowMap.from_spatial(2, spatial)

    def compose(fld):
        return AnalyticScalarField(
            2, lambda s: fld.func([s[0], spatial[0](s), spatial[1](s)]))

    u = VectorField([compose(U.components[0]), compose(U.components[1])])
    pres = PressureField(compose(P.inner))
    for p in ([0.1, 0.4, 0.9], [0.3, -0.7, 0.2]):
        res = navier_stokes_residual(u, pres, flow, Re, p).astype(float)
        assert np.max(np.abs(res)) < 1e-7


# ---------------------------------------------------------------------------
# packaging

def test_flow_link_linearity():
    link = FlowLink(forward=lambda u, phi: FlowPerturbation(
        1, [lambda s: 0.0, lambda s: 0.3 * phi.eval(s)]))
    u = sin_field()
    phi = AnalyticScalarField(1, lambda s: sin(s[1]) + s[0])
    psi = AnalyticScalarField(1, lambda s: cos(2 * s[1]))
    points = [[0.1, 0.2], [0.5, -0.3], [0.9, 0.7]]
    assert check_link_linearity(link, u, phi, psi, points) < 1e-10


def test_identity_link_induces_nothing():
    link = identity_link(1)
    pert = link.forward(sin_field(), sin_field())
    assert pert.eval([0.3, 0.4]).tolist() == [0.0, 0.0]


def test_heat_operator_packaging():
    op = heat_operator(0.7)
    assert op.law_params == {"alpha": 0.7}
    assert isinstance(op, IntrinsicOperator)
    u = VectorField([AnalyticScalarField(
        1, lambda s: sin(2 * s[1]) * exp(-s[0]))])
    flow = FlowMap.identity(1)
    p = [0.3, 0.9]
    got = op(u, flow, p)
    want = heat_residual(u.components[0], flow, 0.7, p)
    assert np.isclose(got[0], want)


def test_residual_field_dump(tmp_path):
    op = heat_operator(1.0)
    u = VectorField([AnalyticScalarField(
        1, lambda s: sin(s[1]) * exp(-s[0]))])
    flow = FlowMap.identity(1)
    grid = Grid(((0.0, 1.0, 5), (0.0, 1.0, 5)))
    path = tmp_path / "residual.csv"
    dump_residual_field(op, u, flow, grid, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "s0,s1,r0"
    assert len(lines) == 1 + 25
