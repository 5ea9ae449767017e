"""Variational structure of comoving operators.

Gateaux derivatives with respect to the field and the flow, the
flow-weighted bilinear form and its variation, operator path integrals,
action construction, stationarity verification, and symmetry (potentialness)
reports in four variants.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from .dual import Dual, tangent, value
from .errors import DegenerateFlow, NonFinite
from .fields import AnalyticScalarField, VectorField, blend_fields
from .geometry import (
    DualPerturbedFlow,
    divergence_of_perturbation,
    jacobian_determinant,
    perturbed_flow,
)


# ---------------------------------------------------------------------------
# quadrature

class QuadratureSpec:
    """Tensor Gauss-Legendre rule over a box in label coordinates.

    Each axis is either (lo, hi, count) or a plain float pinning that
    coordinate (no integration along it). ``lambda_count`` is the node count
    for path-parameter integrals on [0, 1].
    """

    def __init__(self, axes, lambda_count=16):
        parsed = []
        for ax in axes:
            if np.isscalar(ax):
                parsed.append(float(ax))
            else:
                lo, hi, count = ax
                if int(count) < 2:
                    raise ValueError("quadrature counts must be >= 2")
                if not hi > lo:
                    raise ValueError("axis extent must have hi > lo")
                parsed.append((float(lo), float(hi), int(count)))
        if int(lambda_count) < 2:
            raise ValueError("lambda_count must be >= 2")
        self.axes = tuple(parsed)
        self.lambda_count = int(lambda_count)
        self._cached = None

    def nodes_weights(self):
        """All tensor nodes (K, ndim) with their weights (K,)."""
        if self._cached is None:
            per_axis = []
            for ax in self.axes:
                if isinstance(ax, float):
                    per_axis.append(([ax], [1.0]))
                else:
                    lo, hi, count = ax
                    xi, wi = np.polynomial.legendre.leggauss(count)
                    mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
                    per_axis.append((mid + half * xi, half * wi))
            points, weights = [], []
            for combo in itertools.product(
                    *[list(zip(*pa)) for pa in per_axis]):
                points.append([c[0] for c in combo])
                w = 1.0
                for c in combo:
                    w *= c[1]
                weights.append(w)
            self._cached = (np.array(points), np.array(weights))
        return self._cached

    def lambda_nodes(self):
        xi, wi = np.polynomial.legendre.leggauss(self.lambda_count)
        return 0.5 + 0.5 * xi, 0.5 * wi


# ---------------------------------------------------------------------------
# field plumbing

def _components(f):
    return f.components if hasattr(f, "components") else [f]


def _pair(a_val, b_val):
    av = np.atleast_1d(np.asarray(a_val, dtype=object)).ravel()
    bv = np.atleast_1d(np.asarray(b_val, dtype=object)).ravel()
    if len(av) != len(bv):
        raise ValueError(f"cannot pair values of lengths {len(av)} "
                         f"and {len(bv)}")
    return sum(x * y for x, y in zip(av, bv))


class OperatorField:
    """Pointwise residual N(u) packaged with field-like evaluation."""

    def __init__(self, op, u, flow):
        self.op = op
        self.u = u
        self.flow = flow

    def eval(self, p):
        return np.atleast_1d(self.op(self.u, self.flow, p))


class _DualDirectionField:
    """Field whose jet is Dual(base, direction): exact Gateaux seeds."""

    kind = "analytic"

    def __init__(self, base, direction):
        self.base = base
        self.direction = direction

    @property
    def dim(self):
        return self.base.dim

    def eval(self, p):
        return Dual(self.base.eval(p), self.direction.eval(p))

    def deriv1(self, p, nu):
        return Dual(self.base.deriv1(p, nu), self.direction.deriv1(p, nu))

    def deriv2(self, p, nu, rho):
        return Dual(self.base.deriv2(p, nu, rho),
                    self.direction.deriv2(p, nu, rho))

    def deriv3(self, p, nu, rho, lam):
        return Dual(self.base.deriv3(p, nu, rho, lam),
                    self.direction.deriv3(p, nu, rho, lam))


def _dual_field(u, phi):
    ucomps, pcomps = _components(u), _components(phi)
    if len(ucomps) != len(pcomps):
        raise ValueError("field and perturbation component counts differ")
    wrapped = [_DualDirectionField(a, b) for a, b in zip(ucomps, pcomps)]
    return VectorField(wrapped) if hasattr(u, "components") else wrapped[0]


def _shift_field(u, phi, eps):
    ucomps, pcomps = _components(u), _components(phi)
    shifted = [blend_fields([a, b], [1.0, eps])
               for a, b in zip(ucomps, pcomps)]
    return VectorField(shifted) if hasattr(u, "components") else shifted[0]


def zero_field_like(u):
    comps = _components(u)
    dim = comps[0].dim
    zeros = [AnalyticScalarField(dim, lambda s: 0.0) for _ in comps]
    return VectorField(zeros) if hasattr(u, "components") else zeros[0]


@dataclass
class PerturbationPair:
    """A field perturbation with its induced flow perturbation.

    ``phi_hat`` is recomputed on access so it always reflects the current
    u and phi.
    """

    u: object
    phi: object
    link: object

    @property
    def phi_hat(self):
        return self.link.forward(self.u, self.phi)


# ---------------------------------------------------------------------------
# Gateaux derivatives

def _finite_check(vec):
    arr = np.atleast_1d(vec)
    for entry in arr.ravel():
        if not np.isfinite(value(entry)):
            raise NonFinite("Gateaux derivative produced a non-finite value")
    return arr


def gateaux_field_derivative(N, u, flow, phi, p, mode="exact"):
    """Directional derivative of the residual in u along phi, at p.

    exact mode seeds the field jet with dual numbers; fd mode uses a central
    difference with step 1e-6 times the local field scale.
    """
    if mode == "exact":
        out = np.atleast_1d(N(_dual_field(u, phi), flow, p))
        res = np.array([tangent(entry) for entry in out.ravel()])
        return _finite_check(res)
    if mode == "fd":
        scale = max(1.0, max(abs(float(value(c.eval(p))))
                             for c in _components(u)))
        eps = 1e-6 * scale
        up = np.atleast_1d(N(_shift_field(u, phi, eps), flow, p))
        dn = np.atleast_1d(N(_shift_field(u, phi, -eps), flow, p))
        res = (up.astype(float) - dn.astype(float)) / (2 * eps)
        return _finite_check(res)
    raise ValueError(f"unknown mode {mode!r}")


def gateaux_flow_derivative(N, u, flow, phi_hat, p):
    """Directional derivative of the residual in the flow jet along phi_hat."""
    dual_flow = DualPerturbedFlow(flow, phi_hat)
    out = np.atleast_1d(N(u, dual_flow, p))
    res = np.array([tangent(entry) for entry in out.ravel()])
    return _finite_check(res)


# ---------------------------------------------------------------------------
# bilinear form

def _det_checked(flow, p):
    det = jacobian_determinant(flow, p)
    if value(det) <= 0.0:
        raise DegenerateFlow("flow Jacobian is non-positive at a "
                             "quadrature node")
    return det


def advective_form(a, b, flow, quad):
    """<a, b> = integral of a.b J over the label box (Gauss-Legendre)."""
    points, weights = quad.nodes_weights()
    total = 0.0
    for p, w in zip(points, weights):
        p = list(p)
        total = total + w * _pair(a.eval(p), b.eval(p)) * _det_checked(flow, p)
    return total


def advective_form_variation(a, b, u, phi, link, flow, quad):
    """Derivative of <a, b> under the flow response to phi.

    Integrates a.b J div(phi_hat) with phi_hat = link.forward(u, phi) and
    the divergence taken in Cartesian coordinates.
    """
    phi_hat = link.forward(u, phi)
    points, weights = quad.nodes_weights()
    total = 0.0
    for p, w in zip(points, weights):
        p = list(p)
        det = _det_checked(flow, p)
        div = divergence_of_perturbation(flow, phi_hat, p)
        total = total + w * _pair(a.eval(p), b.eval(p)) * det * div
    return total


# ---------------------------------------------------------------------------
# homotopies and path integrals

@dataclass
class Homotopy:
    """One-parameter family of fields joining u0 to u1 on [0, 1]."""

    eval: object     # lambda -> field
    deriv: object    # lambda -> d field / d lambda
    u0: object
    u1: object


def straight_line(u0, u1):
    u0c, u1c = _components(u0), _components(u1)

    def at(lam):
        comps = [blend_fields([a, b], [1.0 - lam, lam])
                 for a, b in zip(u0c, u1c)]
        return VectorField(comps) if hasattr(u0, "components") else comps[0]

    def vel(lam):
        comps = [blend_fields([a, b], [-1.0, 1.0])
                 for a, b in zip(u0c, u1c)]
        return VectorField(comps) if hasattr(u0, "components") else comps[0]

    return Homotopy(eval=at, deriv=vel, u0=u0, u1=u1)


def quadratic_detour(u0, u1, w):
    """u_lam = u0 + lam (u1 - u0) + lam (1 - lam) w: same endpoints."""
    u0c, u1c, wc = _components(u0), _components(u1), _components(w)

    def at(lam):
        comps = [blend_fields([a, b, c],
                              [1.0 - lam, lam, lam * (1.0 - lam)])
                 for a, b, c in zip(u0c, u1c, wc)]
        return VectorField(comps) if hasattr(u0, "components") else comps[0]

    def vel(lam):
        comps = [blend_fields([a, b, c], [-1.0, 1.0, 1.0 - 2.0 * lam])
                 for a, b, c in zip(u0c, u1c, wc)]
        return VectorField(comps) if hasattr(u0, "components") else comps[0]

    return Homotopy(eval=at, deriv=vel, u0=u0, u1=u1)


def homotopy_endpoint_defect(traj, points):
    """Max mismatch of eval(0) vs u0 and eval(1) vs u1 over sample points."""
    worst = 0.0
    for lam, ref in ((0.0, traj.u0), (1.0, traj.u1)):
        got = traj.eval(lam)
        for gc, rc in zip(_components(got), _components(ref)):
            for p in points:
                worst = max(worst, abs(float(gc.eval(list(p))
                                             - rc.eval(list(p)))))
    return worst


def path_integral(N, flow_of, traj, quad):
    """Work integral of the residual along the homotopy.

    integral over [0, 1] of <N(u_lam), du_lam/dlam> with the flow
    re-evaluated at each u_lam.
    """
    lam_nodes, lam_weights = quad.lambda_nodes()
    total = 0.0
    for lam, w in zip(lam_nodes, lam_weights):
        u_lam = traj.eval(lam)
        du = traj.deriv(lam)
        flow = flow_of(u_lam)
        total += w * advective_form(OperatorField(N, u_lam, flow), du,
                                    flow, quad)
    return total


def path_integral_table(N, flow_of, traj, quad):
    """The integrand per lambda node plus the total, as a plain record."""
    lam_nodes, lam_weights = quad.lambda_nodes()
    rows = []
    total = 0.0
    for lam, w in zip(lam_nodes, lam_weights):
        u_lam = traj.eval(lam)
        du = traj.deriv(lam)
        flow = flow_of(u_lam)
        val = advective_form(OperatorField(N, u_lam, flow), du, flow, quad)
        rows.append({"lambda": float(lam), "integrand": float(val)})
        total += w * val
    return {"nodes": rows, "value": float(total)}


def build_action(N, flow_of, u0, u, quad):
    """Action at u relative to u0 (set to zero there), straight-line path."""
    return path_integral(N, flow_of, straight_line(u0, u), quad)


def stationarity_check(N, flow_of, u, directions, quad, u0=None):
    """Max defect of dA[u] . delta_u vs <N(u), delta_u> over directions.

    The action derivative is a central difference with step 1e-4 times the
    field scale; at a solution (N(u) = 0) both sides vanish.
    """
    if u0 is None:
        u0 = zero_field_like(u)
    points, _ = quad.nodes_weights()
    scale = 1.0
    for comp in _components(u):
        for p in points:
            scale = max(scale, abs(float(value(comp.eval(list(p))))))
    eps = 1e-4 * scale
    flow = flow_of(u)
    worst = 0.0
    for delta in directions:
        up = build_action(N, flow_of, u0, _shift_field(u, delta, eps), quad)
        dn = build_action(N, flow_of, u0, _shift_field(u, delta, -eps), quad)
        fd = (up - dn) / (2 * eps)
        form = advective_form(OperatorField(N, u, flow), delta, flow, quad)
        worst = max(worst, abs(fd - form))
    return worst


# ---------------------------------------------------------------------------
# symmetry reports

VARIANTS = ("full", "incompressible", "fixed-flow", "classical")


@dataclass
class SymmetryReport:
    """Both sides of a symmetry condition, normalized by probe size.

    lhs and rhs are already divided by ``normalization`` = |phi| |psi| under
    the advective form, so defect = lhs - rhs is scale-free.
    """

    defect: float
    lhs: float
    rhs: float
    variant: str
    normalization: float

    def to_record(self, probes=None, quad=None, seeds=None):
        rec = {
            "defect": self.defect,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "variant": self.variant,
            "normalization": self.normalization,
        }
        if probes is not None:
            rec["probes"] = probes
        if quad is not None:
            rec["quadrature"] = [list(ax) if not np.isscalar(ax) else ax
                                 for ax in quad.axes]
        if seeds is not None:
            rec["seeds"] = seeds
        return rec

    def to_json(self, **kwargs):
        return json.dumps(self.to_record(**kwargs), sort_keys=True)


class _GateauxField:
    """Pointwise G phi (optionally including the flow-response term)."""

    def __init__(self, N, u, flow, phi, link, include_flow_term):
        self.N = N
        self.u = u
        self.flow = flow
        self.phi = phi
        self.link = link
        self.include_flow_term = include_flow_term

    def eval(self, p):
        out = gateaux_field_derivative(self.N, self.u, self.flow,
                                       self.phi, p)
        if self.include_flow_term:
            phi_hat = self.link.forward(self.u, self.phi)
            out = out + gateaux_flow_derivative(self.N, self.u, self.flow,
                                                phi_hat, p)
        return out


def symmetry_defect(N, link, u, flow, phi, psi, variant, quad):
    """Evaluate both sides of the selected symmetry condition.

    full:           <G phi, psi> + <phi; N(u), psi>  vs  swapped
    incompressible: <G phi, psi>                     vs  swapped
    fixed-flow:     <dN/du phi, psi> + <phi; N(u), psi> vs swapped
    classical:      <dN/du phi, psi>                 vs  swapped
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; "
                         f"expected one of {VARIANTS}")
    include_flow = variant in ("full", "incompressible")
    include_variation = variant in ("full", "fixed-flow")

    g_phi = _GateauxField(N, u, flow, phi, link, include_flow)
    g_psi = _GateauxField(N, u, flow, psi, link, include_flow)
    lhs = advective_form(g_phi, psi, flow, quad)
    rhs = advective_form(g_psi, phi, flow, quad)
    if include_variation:
        nfield = OperatorField(N, u, flow)
        lhs += advective_form_variation(nfield, psi, u, phi, link, flow, quad)
        rhs += advective_form_variation(nfield, phi, u, psi, link, flow, quad)

    norm_phi = np.sqrt(max(advective_form(phi, phi, flow, quad), 0.0))
    norm_psi = np.sqrt(max(advective_form(psi, psi, flow, quad), 0.0))
    normalization = max(norm_phi * norm_psi, 1e-300)
    lhs_n = float(lhs / normalization)
    rhs_n = float(rhs / normalization)
    return SymmetryReport(defect=lhs_n - rhs_n, lhs=lhs_n, rhs=rhs_n,
                          variant=variant, normalization=float(normalization))
