"""Pointwise differential-geometry kernels of a coordinate flow.

A flow map takes particle labels sigma = (sigma^0 .. sigma^n), sigma^0 being
time, to spatial-temporal positions x. Everything here is local: Jacobian,
cofactor, determinant, inverse, metric, Christoffel symbols, and their
first-order variations under a flow perturbation.

All kernels use explicit small-matrix formulas (sizes up to 4x4) instead of
numpy.linalg so they stay exact under dual-number evaluation; numpy.linalg is
reserved for independent cross-checks in the test suite.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .dual import Dual, d1, d2, d3, value
from .errors import DegenerateFlow, NonFinite

DEGENERACY_THRESHOLD = 1e-12


# ---------------------------------------------------------------------------
# points and maps

@dataclass(frozen=True)
class Point:
    """A space-time particle label, coords = (sigma^0 .. sigma^n)."""

    coords: tuple

    def __post_init__(self):
        coords = tuple(float(c) for c in self.coords)
        if not 2 <= len(coords) <= 4:
            raise ValueError(f"point must have 2..4 coordinates, got {len(coords)}")
        if not all(np.isfinite(coords)):
            raise NonFinite(f"non-finite point coordinates: {coords}")
        object.__setattr__(self, "coords", coords)

    @property
    def dim(self):
        """Spatial dimension n (coords has n+1 entries)."""
        return len(self.coords) - 1


def as_coords(p, ncomp=None):
    """Normalize a Point or coordinate sequence to a list of scalars."""
    coords = list(p.coords) if isinstance(p, Point) else list(p)
    if ncomp is not None and len(coords) != ncomp:
        raise ValueError(f"expected {ncomp} coordinates, got {len(coords)}")
    return coords


class SmoothMap:
    """Analytic map sigma -> R^(n+1) from per-component closures.

    Each component closure takes a coordinate sequence (entries may be floats
    or Duals) and returns a scalar. Derivatives are exact via nested duals.
    """

    def __init__(self, dim, components):
        if len(components) != dim + 1:
            raise ValueError("need dim+1 component closures")
        self.dim = dim
        self.components = list(components)

    def eval(self, p):
        coords = as_coords(p, self.dim + 1)
        return np.array([c(coords) for c in self.components])

    def deriv1(self, p, mu, nu):
        return d1(self.components[mu], as_coords(p, self.dim + 1), nu)

    def deriv2(self, p, mu, nu, lam):
        return d2(self.components[mu], as_coords(p, self.dim + 1), nu, lam)

    def deriv3(self, p, mu, nu, lam, rho):
        return d3(self.components[mu], as_coords(p, self.dim + 1), nu, lam, rho)


class FlowMap(SmoothMap):
    """A coordinate flow x = xhat(sigma) with exact derivative access.

    ``time_identity`` declares xhat^0 = sigma^0 (time not transformed).
    """

    def __init__(self, dim, components, time_identity=False):
        super().__init__(dim, components)
        self.time_identity = time_identity

    @classmethod
    def identity(cls, dim):
        comps = [(lambda s, i=i: s[i]) for i in range(dim + 1)]
        return cls(dim, comps, time_identity=True)

    @classmethod
    def from_spatial(cls, dim, spatial_components):
        """Time-identity flow: xhat^0 = sigma^0, spatial parts as given."""
        comps = [lambda s: s[0]] + list(spatial_components)
        return cls(dim, comps, time_identity=True)


class FlowPerturbation(SmoothMap):
    """A perturbation direction of a flow, same smoothness access."""

    @classmethod
    def zero(cls, dim):
        return cls(dim, [(lambda s: 0.0) for _ in range(dim + 1)])


def perturbed_flow(flow, pert, eps, time_identity=None):
    """The finitely displaced analytic flow xhat + eps * phi_hat."""
    comps = [
        (lambda s, f=f, g=g: f(s) + eps * g(s))
        for f, g in zip(flow.components, pert.components)
    ]
    if time_identity is None:
        time_identity = False
    return FlowMap(flow.dim, comps, time_identity=time_identity)


class DualPerturbedFlow:
    """Flow whose jet entries are duals along a perturbation direction.

    ``eval``/``deriv1``/``deriv2`` return Dual(base part, direction part),
    which turns any residual evaluation into an exact directional derivative
    with respect to the flow jet. Evaluate at real (non-dual) points only.
    """

    def __init__(self, flow, pert, time_identity=None):
        self.dim = flow.dim
        self.flow = flow
        self.pert = pert
        self.time_identity = (flow.time_identity if time_identity is None
                              else time_identity)

    def eval(self, p):
        base = self.flow.eval(p)
        tang = self.pert.eval(p)
        return np.array([Dual(b, t) for b, t in zip(base, tang)], dtype=object)

    def deriv1(self, p, mu, nu):
        return Dual(self.flow.deriv1(p, mu, nu), self.pert.deriv1(p, mu, nu))

    def deriv2(self, p, mu, nu, lam):
        return Dual(self.flow.deriv2(p, mu, nu, lam),
                    self.pert.deriv2(p, mu, nu, lam))


# ---------------------------------------------------------------------------
# result records

@dataclass
class GeometryBundle:
    """All local geometric quantities of a flow at one point."""

    jac: np.ndarray        # J^mu_nu
    cof: np.ndarray        # C^lambda_rho, transpose of the algebraic complement
    det: float             # J
    inv: np.ndarray        # A^lambda_rho = C^lambda_rho / J
    metric: np.ndarray     # g_mu_nu
    gamma: np.ndarray      # Gamma^alpha_mu_nu, symmetric in (mu, nu)


@dataclass
class GeometryPerturbation:
    """First-order geometric response to a flow perturbation."""

    h: np.ndarray          # metric variation h_mu_nu
    dgamma: np.ndarray     # Christoffel variation, symmetric lower indices
    dj: float              # Jacobian-determinant variation
    div_phi: float         # Cartesian divergence of the perturbation


# ---------------------------------------------------------------------------
# small-matrix primitives (dual-safe)

def as_tensor(entries):
    """Nested lists to ndarray; float64 when no Duals are present."""
    arr = np.array(entries, dtype=object)
    try:
        return arr.astype(float)
    except (TypeError, ValueError):
        return arr


def det_small(m):
    """Determinant by Laplace expansion, sizes 1..4, dual-safe."""
    size = len(m)
    if size == 1:
        return m[0][0]
    if size == 2:
        return m[0][0] * m[1][1] - m[0][1] * m[1][0]
    total = 0.0
    for j in range(size):
        minor = [[row[k] for k in range(size) if k != j] for row in m[1:]]
        term = m[0][j] * det_small(minor)
        total = total + (term if j % 2 == 0 else -term)
    return total


def adjugate(m):
    """Transpose of the cofactor matrix: m @ adjugate(m) = det(m) * I."""
    size = len(m)
    if size == 1:
        return as_tensor([[1.0]])
    out = [[None] * size for _ in range(size)]
    for i in range(size):
        for j in range(size):
            # entry (i, j) of the adjugate is the (j, i) cofactor
            minor = [[m[r][c] for c in range(size) if c != i]
                     for r in range(size) if r != j]
            cof = det_small(minor)
            out[i][j] = cof if (i + j) % 2 == 0 else -cof
    return as_tensor(out)


def _perm_sign(perm):
    perm = list(perm)
    sign = 1
    for i in range(len(perm)):
        while perm[i] != i:
            j = perm[i]
            perm[i], perm[j] = perm[j], perm[i]
            sign = -sign
    return sign


_PERM_CACHE = {}


def _levi_civita_groups(size):
    if size not in _PERM_CACHE:
        groups = {k: [] for k in range(size)}
        for perm in itertools.permutations(range(size)):
            groups[perm[0]].append((perm[1:], _perm_sign(perm)))
        _PERM_CACHE[size] = groups
    return _PERM_CACHE[size]


def _cofactor_levi_civita(jac, size):
    """C^l_r = (1/n!) eps^{l,nus} eps_{r,mus} prod_k J^{mu_k}_{nu_k}."""
    groups = _levi_civita_groups(size)
    norm = 1.0
    for k in range(2, size):
        norm *= k
    out = [[None] * size for _ in range(size)]
    for lam in range(size):
        for rho in range(size):
            acc = 0.0
            for nus, s1 in groups[lam]:
                for mus, s2 in groups[rho]:
                    term = s1 * s2
                    for mu_k, nu_k in zip(mus, nus):
                        term = term * jac[mu_k][nu_k]
                    acc = acc + term
            out[lam][rho] = acc / norm
    return out


# ---------------------------------------------------------------------------
# kernel operations

def _check_finite(arr, what):
    flat = np.asarray(arr, dtype=object).ravel()
    for entry in flat:
        v = value(entry)
        if not np.isfinite(v):
            raise NonFinite(f"{what} contains a non-finite entry")


def jacobian_matrix(flow, p):
    """J^mu_nu = d xhat^mu / d sigma^nu as an (n+1)x(n+1) array."""
    m = flow.dim + 1
    jac = as_tensor([[flow.deriv1(p, mu, nu) for nu in range(m)]
                   for mu in range(m)])
    _check_finite(jac, "jacobian")
    return jac


def _cofactor_from_jac(jac, dim):
    if dim in (1, 3):
        return as_tensor(_cofactor_levi_civita(jac, dim + 1))
    return adjugate(jac)


def cofactor_matrix(flow, p):
    """Transpose of the algebraic complement of the Jacobian.

    Satisfies J^mu_nu C^nu_lam = det(J) delta^mu_lam. Closed Levi-Civita
    contractions are used for n in {1, 3}; other sizes fall back to the
    generic adjugate.
    """
    jac = jacobian_matrix(flow, p)
    cof = _cofactor_from_jac(jac, flow.dim)
    _check_finite(cof, "cofactor")
    return cof


def _det_from_contraction(jac, cof, dim):
    m = dim + 1
    acc = 0.0
    for mu in range(m):
        for nu in range(m):
            acc = acc + jac[mu][nu] * cof[nu][mu]
    return acc / m


def jacobian_determinant(flow, p):
    """det(J), computed by the trace contraction J^mu_nu C^nu_mu / (n+1)."""
    jac = jacobian_matrix(flow, p)
    cof = _cofactor_from_jac(jac, flow.dim)
    det = _det_from_contraction(jac, cof, flow.dim)
    if abs(value(det)) < DEGENERACY_THRESHOLD:
        raise DegenerateFlow(f"|det J| = {abs(value(det)):.3e} below threshold")
    return det


def inverse_jacobian(flow, p):
    """A^lam_rho = C^lam_rho / det(J)."""
    jac = jacobian_matrix(flow, p)
    cof = _cofactor_from_jac(jac, flow.dim)
    det = _det_from_contraction(jac, cof, flow.dim)
    if abs(value(det)) < DEGENERACY_THRESHOLD:
        raise DegenerateFlow(f"|det J| = {abs(value(det)):.3e} below threshold")
    m = flow.dim + 1
    return as_tensor([[cof[i][j] / det for j in range(m)] for i in range(m)])


def metric_tensor(flow, p):
    """g_mu_nu = sum_beta J^beta_mu J^beta_nu (pullback of the flat metric)."""
    jac = jacobian_matrix(flow, p)
    m = flow.dim + 1
    g = [[sum(jac[beta][mu] * jac[beta][nu] for beta in range(m))
          for nu in range(m)] for mu in range(m)]
    return as_tensor(g)


def _second_derivatives(flow, p):
    """D2[mu][nu][lam] = d^2 xhat^mu / d sigma^nu d sigma^lam (symmetric)."""
    m = flow.dim + 1
    d2v = [[[None] * m for _ in range(m)] for _ in range(m)]
    for mu in range(m):
        for nu in range(m):
            for lam in range(nu, m):
                val = flow.deriv2(p, mu, nu, lam)
                d2v[mu][nu][lam] = val
                d2v[mu][lam][nu] = val
    return d2v


def _metric_gradient(jac, d2v, m):
    """dg[lam][mu][nu] = d g_mu_nu / d sigma^lam, assembled analytically."""
    dg = [[[None] * m for _ in range(m)] for _ in range(m)]
    for lam in range(m):
        for mu in range(m):
            for nu in range(mu, m):
                acc = 0.0
                for beta in range(m):
                    acc = acc + d2v[beta][mu][lam] * jac[beta][nu] \
                              + jac[beta][mu] * d2v[beta][nu][lam]
                dg[lam][mu][nu] = acc
                dg[lam][nu][mu] = acc
    return dg


def _inverse_small(mat, size):
    det = det_small(mat)
    if abs(value(det)) < DEGENERACY_THRESHOLD:
        raise DegenerateFlow("matrix not invertible")
    adj = adjugate(mat)
    return [[adj[i][j] / det for j in range(size)] for i in range(size)]


def _christoffel_from_parts(ginv, dg, m):
    gamma = [[[None] * m for _ in range(m)] for _ in range(m)]
    for alpha in range(m):
        for mu in range(m):
            for nu in range(mu, m):
                acc = 0.0
                for rho in range(m):
                    acc = acc + ginv[alpha][rho] * (
                        dg[nu][rho][mu] + dg[mu][rho][nu] - dg[rho][mu][nu])
                val = 0.5 * acc
                gamma[alpha][mu][nu] = val
                gamma[alpha][nu][mu] = val
    return gamma


def christoffel_symbols(flow, p):
    """Christoffel symbols of the second kind of the pulled-back metric.

    Metric derivatives are assembled analytically from the flow's second
    derivatives, so no third derivatives of the flow are ever required.
    """
    m = flow.dim + 1
    jac = jacobian_matrix(flow, p)
    d2v = _second_derivatives(flow, p)
    g = [[sum(jac[b][mu] * jac[b][nu] for b in range(m))
          for nu in range(m)] for mu in range(m)]
    ginv = _inverse_small(g, m)
    dg = _metric_gradient(jac, d2v, m)
    return as_tensor(_christoffel_from_parts(ginv, dg, m))


def geometry_bundle(flow, p):
    """All local quantities at once, sharing intermediate results."""
    m = flow.dim + 1
    jac = jacobian_matrix(flow, p)
    cof = _cofactor_from_jac(jac, flow.dim)
    det = _det_from_contraction(jac, cof, flow.dim)
    if abs(value(det)) < DEGENERACY_THRESHOLD:
        raise DegenerateFlow(f"|det J| = {abs(value(det)):.3e} below threshold")
    inv = as_tensor([[cof[i][j] / det for j in range(m)] for i in range(m)])
    g = [[sum(jac[b][mu] * jac[b][nu] for b in range(m))
          for nu in range(m)] for mu in range(m)]
    ginv = _inverse_small(g, m)
    d2v = _second_derivatives(flow, p)
    dg = _metric_gradient(jac, d2v, m)
    gamma = as_tensor(_christoffel_from_parts(ginv, dg, m))
    return GeometryBundle(jac=jac, cof=cof, det=det, inv=inv,
                          metric=as_tensor(g), gamma=gamma)


def check_jacobian_identity(flow, p):
    """Residual of d(det J)/d sigma^mu = det(J) * Gamma^nu_nu_mu, per mu.

    The left side is an independent dual-number derivative of a plain Laplace
    determinant, deliberately not the cofactor contraction that proves the
    identity in closed form.
    """
    m = flow.dim + 1
    coords = as_coords(p, m)

    def det_at(q):
        jac = [[flow.deriv1(q, mu, nu) for nu in range(m)] for mu in range(m)]
        return det_small(jac)

    bundle = geometry_bundle(flow, p)
    trace_gamma = [sum(bundle.gamma[nu][nu][mu] for nu in range(m))
                   for mu in range(m)]
    residual = [d1(det_at, coords, mu) - bundle.det * trace_gamma[mu]
                for mu in range(m)]
    return np.array([value(r) for r in residual], dtype=float)


def inverse_jacobian_derivative(flow, p):
    """dA[lam][mu][rho] = d A^lam_mu / d sigma^rho.

    Exact identity dA = -A (dJ) A with (dJ)^a_b = xhat^a_{,b rho}, valid for
    any twice-differentiable flow, including interpolated ones.
    """
    m = flow.dim + 1
    inv = inverse_jacobian(flow, p)
    d2v = _second_derivatives(flow, p)
    da = [[[None] * m for _ in range(m)] for _ in range(m)]
    for lam in range(m):
        for mu in range(m):
            for rho in range(m):
                acc = 0.0
                for a in range(m):
                    for b in range(m):
                        acc = acc + inv[lam][a] * d2v[a][b][rho] * inv[b][mu]
                da[lam][mu][rho] = -acc
    return as_tensor(da)


def divergence_of_perturbation(flow, pert, p):
    """Cartesian divergence of phi_hat: A^nu_mu * d phi_hat^mu / d sigma^nu."""
    m = flow.dim + 1
    inv = inverse_jacobian(flow, p)
    acc = 0.0
    for mu in range(m):
        for nu in range(m):
            acc = acc + inv[nu][mu] * pert.deriv1(p, mu, nu)
    return acc


def geometry_perturbation(flow, pert, p, verify=True, tol=1e-8):
    """First-order response of metric, connection and determinant.

    dgamma is assembled by the direct (non-covariant) formula; with
    ``verify`` the equivalent covariant form is evaluated too and any
    disagreement above ``tol`` (scaled) raises, which would indicate a
    kernel bug rather than a user error.
    """
    m = flow.dim + 1
    bundle = geometry_bundle(flow, p)
    jac = bundle.jac
    d2x = _second_derivatives(flow, p)
    dphi1 = [[pert.deriv1(p, mu, nu) for nu in range(m)] for mu in range(m)]
    dphi2 = [[[pert.deriv2(p, mu, nu, lam) for lam in range(m)]
              for nu in range(m)] for mu in range(m)]

    h = [[sum(dphi1[b][mu] * jac[b][nu] + jac[b][mu] * dphi1[b][nu]
              for b in range(m))
          for nu in range(m)] for mu in range(m)]

    # dh[lam][mu][nu] = d h_mu_nu / d sigma^lam, analytic assembly
    dh = [[[sum(dphi2[b][mu][lam] * jac[b][nu]
                + dphi1[b][mu] * d2x[b][nu][lam]
                + d2x[b][mu][lam] * dphi1[b][nu]
                + jac[b][mu] * dphi2[b][nu][lam]
                for b in range(m))
            for nu in range(m)] for mu in range(m)] for lam in range(m)]

    g = [[bundle.metric[i][j] for j in range(m)] for i in range(m)]
    ginv = _inverse_small(g, m)
    gamma = bundle.gamma

    dgamma = [[[None] * m for _ in range(m)] for _ in range(m)]
    for alpha in range(m):
        for mu in range(m):
            for nu in range(m):
                lowered = 0.0
                correction = 0.0
                for rho in range(m):
                    lowered = lowered + ginv[alpha][rho] * (
                        dh[nu][rho][mu] + dh[mu][rho][nu] - dh[rho][mu][nu])
                    for beta in range(m):
                        correction = correction + \
                            ginv[alpha][rho] * h[rho][beta] * gamma[beta][mu][nu]
                dgamma[alpha][mu][nu] = 0.5 * lowered - correction

    div_phi = 0.0
    for mu in range(m):
        for nu in range(m):
            div_phi = div_phi + bundle.inv[nu][mu] * dphi1[mu][nu]
    dj = bundle.det * div_phi

    if verify:
        cov = christoffel_perturbation_covariant(flow, pert, p)
        scale = max(1.0, float(np.max(np.abs(
            np.vectorize(value)(np.array(dgamma, dtype=object))))))
        gap = float(np.max(np.abs(np.vectorize(value)(
            np.array(dgamma, dtype=object)) - cov)))
        if gap > tol * scale:
            raise NonFinite(
                f"covariant and direct connection variations disagree: {gap:.3e}")

    return GeometryPerturbation(h=as_tensor(h), dgamma=as_tensor(dgamma),
                                dj=dj, div_phi=div_phi)


def christoffel_perturbation_covariant(flow, pert, p):
    """Connection variation via covariant derivatives of h.

    h_ab;c = h_ab,c - Gamma^d_ac h_db - Gamma^d_bc h_ad, then
    dgamma^alpha_mu_nu = (1/2) g^{alpha rho} (h_rho_mu;nu + h_rho_nu;mu
    - h_mu_nu;rho). Equivalent to the direct formula; kept as a cross-check.
    """
    m = flow.dim + 1
    bundle = geometry_bundle(flow, p)
    jac = bundle.jac
    gamma = bundle.gamma
    d2x = _second_derivatives(flow, p)
    dphi1 = [[pert.deriv1(p, mu, nu) for nu in range(m)] for mu in range(m)]
    dphi2 = [[[pert.deriv2(p, mu, nu, lam) for lam in range(m)]
              for nu in range(m)] for mu in range(m)]

    h = [[sum(dphi1[b][mu] * jac[b][nu] + jac[b][mu] * dphi1[b][nu]
              for b in range(m))
          for nu in range(m)] for mu in range(m)]
    dh = [[[sum(dphi2[b][mu][lam] * jac[b][nu]
                + dphi1[b][mu] * d2x[b][nu][lam]
                + d2x[b][mu][lam] * dphi1[b][nu]
                + jac[b][mu] * dphi2[b][nu][lam]
                for b in range(m))
            for nu in range(m)] for mu in range(m)] for lam in range(m)]

    def cov_dh(a, b, c):
        acc = dh[c][a][b]
        for d in range(m):
            acc = acc - gamma[d][a][c] * h[d][b] - gamma[d][b][c] * h[a][d]
        return acc

    g = [[bundle.metric[i][j] for j in range(m)] for i in range(m)]
    ginv = _inverse_small(g, m)
    out = np.zeros((m, m, m))
    for alpha in range(m):
        for mu in range(m):
            for nu in range(m):
                acc = 0.0
                for rho in range(m):
                    acc = acc + ginv[alpha][rho] * (
                        cov_dh(rho, mu, nu) + cov_dh(rho, nu, mu)
                        - cov_dh(mu, nu, rho))
                out[alpha][mu][nu] = value(0.5 * acc)
    return out
