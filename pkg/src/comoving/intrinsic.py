"""Intrinsic-coordinate residuals of second-order evolution laws.

Cartesian derivatives are recovered from label-space derivatives through the
flow's inverse Jacobian (pushforward), which turns any fixed-frame law into
its comoving form. The heat law is additionally transcribed in closed form
for the 1+1D time-identity case, and incompressible momentum/continuity
residuals are assembled for n in {2, 3}.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .dual import value
from .errors import DegenerateFlow
from .fields import VectorField
from .geometry import (
    FlowPerturbation,
    as_coords,
    as_tensor,
    inverse_jacobian,
    inverse_jacobian_derivative,
)


# ---------------------------------------------------------------------------
# pushforward of derivatives

def pushforward_gradient(u, flow, p):
    """Cartesian gradient dU/dx^mu of U(x) = u(sigma(x)), expressed at p.

    Contracts the label-space gradient with the inverse Jacobian:
    out[mu] = sum_nu u_{,nu} A^nu_mu.
    """
    m = flow.dim + 1
    inv = inverse_jacobian(flow, p)
    du = [u.deriv1(p, nu) for nu in range(m)]
    return as_tensor([sum(du[nu] * inv[nu][mu] for nu in range(m))
                      for mu in range(m)])


def pushforward_hessian(u, flow, p):
    """Cartesian Hessian d2U/dx^mu dx^nu, symmetric to rounding.

    Uses the exact derivative of the inverse Jacobian (assembled from the
    flow's second derivatives), never finite differences:
    out[mu][nu] = u_{,lam rho} A^rho_nu A^lam_mu
                + u_{,lam} (dA^lam_mu/dsigma^rho) A^rho_nu.
    """
    m = flow.dim + 1
    inv = inverse_jacobian(flow, p)
    dinv = inverse_jacobian_derivative(flow, p)
    du = [u.deriv1(p, nu) for nu in range(m)]
    d2u = [[u.deriv2(p, nu, rho) for rho in range(m)] for nu in range(m)]
    out = [[None] * m for _ in range(m)]
    for mu in range(m):
        for nu in range(m):
            acc = 0.0
            for lam in range(m):
                for rho in range(m):
                    acc = acc + d2u[lam][rho] * inv[rho][nu] * inv[lam][mu] \
                              + du[lam] * dinv[lam][mu][rho] * inv[rho][nu]
            out[mu][nu] = acc
    return as_tensor(out)


# ---------------------------------------------------------------------------
# concrete laws

def heat_residual(u, flow, alpha, p):
    """Literal 1+1D comoving heat residual for a time-identity flow.

    u_t - (u_s xhat_t) / xhat_s - (alpha / xhat_s^3)(xhat_s u_ss
    - xhat_ss u_s); reduces to u_t - alpha u_ss on the identity flow and
    agrees with the pushforward coding on any admissible flow.
    """
    if flow.dim != 1:
        raise ValueError("closed-form heat residual requires n = 1")
    if not getattr(flow, "time_identity", False):
        raise ValueError("closed-form heat residual requires a "
                         "time-identity flow")
    x_s = flow.deriv1(p, 1, 1)
    if abs(value(x_s)) <= 1e-12:
        raise DegenerateFlow("flow gradient vanished in heat residual")
    x_t = flow.deriv1(p, 1, 0)
    x_ss = flow.deriv2(p, 1, 1, 1)
    u_t = u.deriv1(p, 0)
    u_s = u.deriv1(p, 1)
    u_ss = u.deriv2(p, 1, 1)
    return u_t - u_s * x_t / x_s - (alpha / x_s ** 3) * (x_s * u_ss
                                                         - x_ss * u_s)


def heat_residual_cartesian(u, flow, alpha, p):
    """Heat residual through the generic pushforward path: U_t - alpha U_xx."""
    grad = pushforward_gradient(u, flow, p)
    hess = pushforward_hessian(u, flow, p)
    return grad[0] - alpha * hess[1][1]


def navier_stokes_residual(u, pres, flow, Re, p):
    """Momentum residuals (one per component) plus continuity, in that order.

    Momentum j: u^j_{,nu} A^nu_0 + u^k u^j_{,nu} A^nu_k + p_{,nu} A^nu_j
    - (1/Re) sum_k d2U^j/dx^k dx^k, with k running over spatial axes. The
    Cartesian field index pairs with the matching coordinate axis (these are
    Cartesian components expressed in label coordinates, not tensorial ones).
    Continuity is the pushforward divergence sum_k dU^k/dx^k.
    """
    n = flow.dim
    if n not in (2, 3):
        raise ValueError("momentum/continuity residuals require n in {2, 3}")
    if len(u) != n:
        raise ValueError(f"velocity needs {n} components, got {len(u)}")
    m = n + 1
    inv = inverse_jacobian(flow, p)
    dinv = inverse_jacobian_derivative(flow, p)
    uvals = [u.components[k].eval(p) for k in range(n)]
    du = [[u.components[j].deriv1(p, nu) for nu in range(m)]
          for j in range(n)]
    dp = [pres.deriv1(p, nu) for nu in range(m)]

    out = []
    for j in range(n):
        adv = sum(du[j][nu] * inv[nu][0] for nu in range(m))
        for k in range(n):
            adv = adv + uvals[k] * sum(du[j][nu] * inv[nu][k + 1]
                                       for nu in range(m))
        pgrad = sum(dp[nu] * inv[nu][j + 1] for nu in range(m))
        d2u = [[u.components[j].deriv2(p, nu, rho) for rho in range(m)]
               for nu in range(m)]
        visc = 0.0
        for k in range(1, m):
            for lam in range(m):
                for rho in range(m):
                    visc = visc + d2u[lam][rho] * inv[rho][k] * inv[lam][k] \
                                + du[j][lam] * dinv[lam][k][rho] * inv[rho][k]
        out.append(adv + pgrad - visc / Re)

    cont = 0.0
    for k in range(n):
        cont = cont + sum(du[k][nu] * inv[nu][k + 1] for nu in range(m))
    out.append(cont)
    return as_tensor(out)


# ---------------------------------------------------------------------------
# packaging

@dataclass
class FlowLink:
    """How flow perturbations respond to field perturbations.

    ``forward`` maps (u, phi) to the induced flow perturbation; it must be
    linear in phi. ``backward`` (flow perturbation to field perturbation) is
    an optional slot. ``algebraic`` optionally exposes the pointwise
    d xhat^mu / du closure for algebraically linked flows.
    """

    forward: object
    backward: object = None
    algebraic: object = None


def identity_link(dim):
    """Link of a u-independent flow: perturbations induce nothing."""
    return FlowLink(forward=lambda u, phi: FlowPerturbation.zero(dim))


def check_link_linearity(link, u, phi, psi, points, a=0.7, b=-1.3, tol=1e-10):
    """Max pointwise defect of forward(u, a phi + b psi) vs the combination."""
    from .fields import blend_fields

    combo = link.forward(u, blend_fields([phi, psi], [a, b]))
    left = link.forward(u, phi)
    right = link.forward(u, psi)
    worst = 0.0
    for p in points:
        for mu in range(len(combo.components)):
            got = combo.components[mu](as_coords(p))
            want = a * left.components[mu](as_coords(p)) \
                + b * right.components[mu](as_coords(p))
            worst = max(worst, abs(value(got) - value(want)))
    return worst


@dataclass
class PressureField:
    """Scalar pressure as a ScalarField wrapper."""

    inner: object

    @property
    def kind(self):
        return self.inner.kind

    @property
    def dim(self):
        return self.inner.dim

    def eval(self, p):
        return self.inner.eval(p)

    def deriv1(self, p, nu):
        return self.inner.deriv1(p, nu)

    def deriv2(self, p, nu, rho):
        return self.inner.deriv2(p, nu, rho)


@dataclass
class IntrinsicOperator:
    """A pointwise comoving residual with its law parameters and link."""

    residual: object                      # (u: VectorField, flow, p) -> array
    law_params: dict = field(default_factory=dict)
    link: FlowLink = None

    def __call__(self, u, flow, p):
        return self.residual(u, flow, p)


def heat_operator(alpha, link=None):
    def res(u, flow, p):
        comp = u.components[0] if isinstance(u, VectorField) else u
        return np.atleast_1d(heat_residual(comp, flow, alpha, p))

    return IntrinsicOperator(residual=res, law_params={"alpha": alpha},
                             link=link if link is not None
                             else identity_link(1))


def navier_stokes_operator(Re, pres, dim, link=None):
    def res(u, flow, p):
        return navier_stokes_residual(u, pres, flow, Re, p)

    return IntrinsicOperator(residual=res, law_params={"Re": Re},
                             link=link if link is not None
                             else identity_link(dim))


def dump_residual_field(op, u, flow, grid, path):
    """CSV of residual components over all grid nodes (label coordinates)."""
    nodes = np.stack(np.meshgrid(*grid.node_arrays(), indexing="ij"),
                     axis=-1).reshape(-1, grid.ndim)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        first = np.atleast_1d(op(u, flow, list(nodes[0])))
        ncomp = len(first)
        writer.writerow([f"s{k}" for k in range(grid.ndim)]
                        + [f"r{j}" for j in range(ncomp)])
        for coords in nodes:
            res = np.atleast_1d(op(u, flow, list(coords)))
            writer.writerow(list(coords) + [float(value(r)) for r in res])
