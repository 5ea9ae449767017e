"""Determining equations for symmetrizing coordinate flows.

For second-order scalar laws written on an algebraic flow ansatz
xhat(sigma, u): link coefficients of the flow response, the order-0/1/2
coefficients of the linearized law, the determining-equation residual on
the induced flow, its classical fixed-frame reduction, and a deterministic
Levenberg-Marquardt fitter for parametric flow families.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .dual import seed, tangent, value
from .errors import NonFinite
from .fields import VectorField
from .geometry import FlowMap, FlowPerturbation, as_tensor, christoffel_symbols
from .intrinsic import FlowLink, IntrinsicOperator, identity_link


# ---------------------------------------------------------------------------
# laws

@dataclass
class LawJet:
    """Arguments of a second-order scalar law at one point.

    ``grad``/``hess`` are the label-coordinate derivatives of the field;
    ``flow_grad``/``flow_hess`` the first and second derivatives of the
    coordinate flow. Entries may be dual numbers.
    """

    value: object
    grad: np.ndarray        # u_{,nu}
    hess: np.ndarray        # u_{,nu rho}
    flow_grad: np.ndarray   # xhat^mu_{,nu}
    flow_hess: np.ndarray   # xhat^mu_{,nu rho}


@dataclass
class SecondOrderScalarLaw:
    """A pointwise law f(jet) -> scalar with dual-safe arithmetic."""

    ncoords: int
    f: object
    name: str = ""


def heat_law(alpha):
    """Fixed-frame heat law u_t - alpha u_ss (ignores the flow slots)."""
    return SecondOrderScalarLaw(
        2, lambda jet: jet.grad[0] - alpha * jet.hess[1][1], name="heat")


def laplace_law(ncoords=3):
    """Sum of the spatial second derivatives (self-adjoint)."""
    def f(jet):
        return sum(jet.hess[k][k] for k in range(1, ncoords))

    return SecondOrderScalarLaw(ncoords, f, name="laplace")


def comoving_heat_law(alpha):
    """Literal 1+1D heat law on a time-identity flow, via the flow slots."""
    def f(jet):
        xs = jet.flow_grad[1][1]
        xt = jet.flow_grad[1][0]
        xss = jet.flow_hess[1][1][1]
        return (jet.grad[0] - jet.grad[1] * xt / xs
                - alpha / xs ** 3 * (xs * jet.hess[1][1] - xss * jet.grad[1]))

    return SecondOrderScalarLaw(2, f, name="comoving_heat")


# ---------------------------------------------------------------------------
# flow ansatz

@dataclass
class AlgebraicFlowAnsatz:
    """Parametric flow xhat^mu(sigma, u; theta), identity at theta = 0.

    Each component closure takes (sigma coords, u value, theta) and must be
    dual-safe in the coordinates and the u value.
    """

    ncoords: int
    components: tuple
    params: tuple = ()
    param_names: tuple = None
    time_identity: bool = True

    def __post_init__(self):
        if len(self.components) != self.ncoords:
            raise ValueError("need one component closure per coordinate")
        self.params = tuple(float(t) for t in self.params)
        if self.param_names is None:
            self.param_names = tuple(f"theta{i}"
                                     for i in range(len(self.params)))

    @classmethod
    def identity(cls, ncoords):
        comps = tuple((lambda s, w, th, mu=mu: s[mu])
                      for mu in range(ncoords))
        return cls(ncoords, comps)

    def with_params(self, theta):
        return replace(self, params=tuple(float(t) for t in theta))

    def induced_flow(self, u):
        """The flow along u: sigma -> xhat(sigma, u(sigma))."""
        comps = [
            (lambda s, c=c: c(s, u.eval(s), self.params))
            for c in self.components
        ]
        return FlowMap(self.ncoords - 1, comps,
                       time_identity=self.time_identity)

    def frozen_flow(self, u, p):
        """The flow with the u argument pinned to its value at p."""
        w0 = value(u.eval(list(p)))
        comps = [
            (lambda s, c=c: c(s, w0, self.params))
            for c in self.components
        ]
        return FlowMap(self.ncoords - 1, comps,
                       time_identity=self.time_identity)

    def flow_perturbation(self, u, phi):
        """Perturbation direction (d xhat / d u) phi induced by phi."""
        def comp(s, mu):
            return _ansatz_partial(self, mu, s, u.eval(s),
                                   u_order=1) * phi.eval(s)

        return FlowPerturbation(
            self.ncoords - 1,
            [(lambda s, mu=mu: comp(s, mu)) for mu in range(self.ncoords)])

    def link(self):
        """FlowLink carrying the forward response and the pointwise slope."""
        return FlowLink(
            forward=lambda u, phi: self.flow_perturbation(u, phi),
            algebraic=lambda s, w: np.array(
                [_ansatz_partial(self, mu, s, w, u_order=1)
                 for mu in range(self.ncoords)]))


def _ansatz_partial(ansatz, mu, p, w, sigma_axes=(), u_order=0):
    """Exact mixed partial of component mu in sigma axes and u.

    Seeds one dual layer per differentiation over the joint (sigma, u)
    entry list, so coordinates and u value may already hold duals.
    """
    comp = ansatz.components[mu]
    theta = ansatz.params
    m = ansatz.ncoords
    axes = list(sigma_axes) + [m] * u_order

    def rec(entries, rem):
        if not rem:
            return comp(entries[:m], entries[m], theta)
        return tangent(rec(seed(entries, rem[0]), rem[1:]))

    return rec(list(p) + [w], axes)


# ---------------------------------------------------------------------------
# link coefficients

@dataclass
class LinkCoefficients:
    """Flow response to a field perturbation phi, by derivative order.

    The induced perturbation obeys phi_hat^mu = value_coeff^mu phi,
    phi_hat^mu_{,nu} = gradient_coeff^mu_nu phi + value_coeff^mu phi_{,nu},
    and the analogous second-order expansion with hessian_coeff.
    """

    value_coeff: np.ndarray     # (m,)
    gradient_coeff: np.ndarray  # (m, m)
    hessian_coeff: np.ndarray   # (m, m, m), symmetric in the lower pair


def _scalar_component(u):
    if isinstance(u, VectorField):
        if len(u) != 1:
            raise ValueError("scalar laws take a single-component field")
        return u.components[0]
    return u


def link_coefficients(ansatz, u, p):
    """Evaluate the flow-response coefficients along u at p.

    value_coeff is the u-slope of the ansatz; gradient_coeff and
    hessian_coeff are its first and second total sigma-derivatives along u.
    """
    uf = _scalar_component(u)
    m = ansatz.ncoords
    p = list(p)
    w = uf.eval(p)
    du = [uf.deriv1(p, nu) for nu in range(m)]
    ddu = [[uf.deriv2(p, nu, rho) for rho in range(m)] for nu in range(m)]

    a = [None] * m
    b = [[None] * m for _ in range(m)]
    c = [[[None] * m for _ in range(m)] for _ in range(m)]
    for mu in range(m):
        au = _ansatz_partial(ansatz, mu, p, w, u_order=1)
        auu = _ansatz_partial(ansatz, mu, p, w, u_order=2)
        auuu = _ansatz_partial(ansatz, mu, p, w, u_order=3)
        au_n = [_ansatz_partial(ansatz, mu, p, w, (nu,), 1)
                for nu in range(m)]
        auu_n = [_ansatz_partial(ansatz, mu, p, w, (nu,), 2)
                 for nu in range(m)]
        a[mu] = au
        for nu in range(m):
            b[mu][nu] = au_n[nu] + auu * du[nu]
        for nu in range(m):
            for rho in range(m):
                c[mu][nu][rho] = (
                    _ansatz_partial(ansatz, mu, p, w, (nu, rho), 1)
                    + auu_n[nu] * du[rho] + auu_n[rho] * du[nu]
                    + auuu * du[nu] * du[rho] + auu * ddu[nu][rho])

    coeffs = LinkCoefficients(value_coeff=as_tensor(a),
                              gradient_coeff=as_tensor(b),
                              hessian_coeff=as_tensor(c))
    for arr in (coeffs.value_coeff, coeffs.gradient_coeff,
                coeffs.hessian_coeff):
        for entry in np.asarray(arr, dtype=object).ravel():
            if not np.isfinite(value(entry)):
                raise NonFinite("link coefficients are not finite")
    return coeffs


# ---------------------------------------------------------------------------
# law partials and symmetry coefficients

@dataclass
class _LawPartials:
    wrt_value: object
    wrt_grad: list          # per nu
    wrt_hess: list          # per (nu, rho), symmetrized
    wrt_flow_grad: list     # per (mu, nu)
    wrt_flow_hess: list     # per (mu, nu, rho), symmetrized in (nu, rho)


def _law_jet(law, ansatz, u, p):
    """Jet of the law along u on the induced flow; dual-safe in p."""
    uf = _scalar_component(u)
    m = law.ncoords
    flow = ansatz.induced_flow(uf)
    p = list(p)
    grad = [uf.deriv1(p, nu) for nu in range(m)]
    hess = [[uf.deriv2(p, nu, rho) for rho in range(m)] for nu in range(m)]
    fgrad = [[flow.deriv1(p, mu, nu) for nu in range(m)] for mu in range(m)]
    fhess = [[[flow.deriv2(p, mu, nu, rho) for rho in range(m)]
              for nu in range(m)] for mu in range(m)]
    return LawJet(value=uf.eval(p), grad=as_tensor(grad),
                  hess=as_tensor(hess), flow_grad=as_tensor(fgrad),
                  flow_hess=as_tensor(fhess))


def _law_partials(law, jet):
    """All slot partials of f at the jet, second-order slots symmetrized."""
    m = law.ncoords
    entries = ([jet.value]
               + [jet.grad[nu] for nu in range(m)]
               + [jet.hess[nu][rho] for nu in range(m) for rho in range(m)]
               + [jet.flow_grad[mu][nu]
                  for mu in range(m) for nu in range(m)]
               + [jet.flow_hess[mu][nu][rho] for mu in range(m)
                  for nu in range(m) for rho in range(m)])

    def rebuild(vals):
        k = 0
        val = vals[k]; k += 1
        grad = vals[k:k + m]; k += m
        hess = np.array(vals[k:k + m * m],
                        dtype=object).reshape(m, m); k += m * m
        fgrad = np.array(vals[k:k + m * m],
                         dtype=object).reshape(m, m); k += m * m
        fhess = np.array(vals[k:k + m ** 3],
                         dtype=object).reshape(m, m, m)
        return LawJet(val, np.array(grad, dtype=object), hess, fgrad, fhess)

    def partial(axis):
        return tangent(law.f(rebuild(seed(entries, axis))))

    k = 0
    wrt_value = partial(k); k += 1
    wrt_grad = [partial(k + nu) for nu in range(m)]; k += m
    hess_raw = np.array([partial(k + i) for i in range(m * m)],
                        dtype=object).reshape(m, m); k += m * m
    wrt_flow_grad = np.array([partial(k + i) for i in range(m * m)],
                             dtype=object).reshape(m, m); k += m * m
    fhess_raw = np.array([partial(k + i) for i in range(m ** 3)],
                         dtype=object).reshape(m, m, m)

    wrt_hess = [[0.5 * (hess_raw[nu][rho] + hess_raw[rho][nu])
                 for rho in range(m)] for nu in range(m)]
    wrt_flow_hess = [[[0.5 * (fhess_raw[mu][nu][rho] + fhess_raw[mu][rho][nu])
                       for rho in range(m)] for nu in range(m)]
                     for mu in range(m)]
    return _LawPartials(wrt_value, wrt_grad, wrt_hess, wrt_flow_grad,
                        wrt_flow_hess)


@dataclass
class SymmetryCoefficients:
    """Coefficients of the linearized law by derivative order of the probe.

    The linearization along phi with its induced flow response reads
    order0 * phi + order1^nu phi_{,nu} + order2^{rho nu} phi_{,nu rho}.
    """

    order0: object          # scalar
    order1: np.ndarray      # (m,)
    order2: np.ndarray      # (m, m)


def symmetry_coefficients(law, ansatz, u, p):
    """Assemble the probe-derivative coefficients at p; dual-safe in p."""
    if law.ncoords != ansatz.ncoords:
        raise ValueError("law and ansatz coordinate counts differ")
    m = law.ncoords
    jet = _law_jet(law, ansatz, u, p)
    parts = _law_partials(law, jet)
    lc = link_coefficients(ansatz, u, p)
    a, b, c = lc.value_coeff, lc.gradient_coeff, lc.hessian_coeff

    order0 = parts.wrt_value
    for mu in range(m):
        for nu in range(m):
            order0 = order0 + parts.wrt_flow_grad[mu][nu] * b[mu][nu]
            for rho in range(m):
                order0 = order0 + (parts.wrt_flow_hess[mu][nu][rho]
                                   * c[mu][nu][rho])

    order1 = [parts.wrt_grad[nu] for nu in range(m)]
    for nu in range(m):
        for mu in range(m):
            order1[nu] = order1[nu] + parts.wrt_flow_grad[mu][nu] * a[mu]
            for rho in range(m):
                order1[nu] = order1[nu] + (2.0
                                           * parts.wrt_flow_hess[mu][nu][rho]
                                           * b[mu][rho])

    order2 = [[parts.wrt_hess[nu][rho] for nu in range(m)]
              for rho in range(m)]
    for rho in range(m):
        for nu in range(m):
            for mu in range(m):
                order2[rho][nu] = order2[rho][nu] + (
                    parts.wrt_flow_hess[mu][rho][nu] * a[mu])

    return SymmetryCoefficients(order0=order0, order1=as_tensor(order1),
                                order2=as_tensor(order2))


# ---------------------------------------------------------------------------
# determining residual and the classical reduction

@dataclass
class DeterminingResidual:
    """Residual of the symmetry conditions at one point.

    ``residual`` collects div(order2) + trace-connection terms minus order1;
    ``skew`` is order2 minus its transpose (zero when the second-order
    block is symmetric). Both must vanish for the law to be potential on
    the induced flow.
    """

    residual: np.ndarray    # (m,)
    skew: np.ndarray        # (m, m)


def determining_residual(law, ansatz, u, p, frozen_connection=False):
    """Pointwise defect of the symmetry conditions on the induced flow.

    The divergence of the second-order coefficient is a total derivative
    along u (dual numbers through the whole jet). The connection trace is
    built from the u-composed flow by default; ``frozen_connection`` pins
    u to its value at p instead, for comparing the two readings.
    """
    m = law.ncoords
    p = [float(x) for x in p]
    sc = symmetry_coefficients(law, ansatz, u, p)
    order2 = sc.order2.astype(float)
    order1 = sc.order1.astype(float)

    div2 = np.zeros(m)
    for rho in range(m):
        seeded = seed(p, rho)
        scd = symmetry_coefficients(law, ansatz, u, seeded)
        for nu in range(m):
            div2[nu] += tangent(scd.order2[nu][rho])

    uf = _scalar_component(u)
    flow = (ansatz.frozen_flow(uf, p) if frozen_connection
            else ansatz.induced_flow(uf))
    gamma = christoffel_symbols(flow, p)
    trace = np.array([sum(gamma[beta][beta][rho] for beta in range(m))
                      for rho in range(m)])

    residual = np.array([
        div2[nu] + sum(trace[rho] * order2[rho][nu] for rho in range(m))
        - order1[nu]
        for nu in range(m)
    ])
    return DeterminingResidual(residual=residual,
                               skew=order2 - order2.T)


def classical_symmetry_residual(law, u, p):
    """Fixed-frame symmetry defect: wrt_grad minus the divergence of wrt_hess.

    Sign convention: component nu is df/du_{,nu} - D_rho(df/du_{,nu rho}),
    which equals minus determining_residual on the identity ansatz.
    """
    m = law.ncoords
    p = [float(x) for x in p]
    ansatz = AlgebraicFlowAnsatz.identity(m)
    parts0 = _law_partials(law, _law_jet(law, ansatz, u, p))

    out = np.zeros(m)
    for nu in range(m):
        out[nu] = float(parts0.wrt_grad[nu])
    for rho in range(m):
        seeded = seed(p, rho)
        parts = _law_partials(law, _law_jet(law, ansatz, u, seeded))
        for nu in range(m):
            out[nu] -= tangent(parts.wrt_hess[nu][rho])
    return out


def operator_from_law(law, ansatz=None):
    """Wrap a law as a pointwise operator N(u, flow, p) on explicit flows."""
    m = law.ncoords

    def res(u, flow, p):
        uf = _scalar_component(u)
        p_ = list(p)
        grad = [uf.deriv1(p_, nu) for nu in range(m)]
        hess = [[uf.deriv2(p_, nu, rho) for rho in range(m)]
                for nu in range(m)]
        fgrad = [[flow.deriv1(p_, mu, nu) for nu in range(m)]
                 for mu in range(m)]
        fhess = [[[flow.deriv2(p_, mu, nu, rho) for rho in range(m)]
                  for nu in range(m)] for mu in range(m)]
        jet = LawJet(value=uf.eval(p_), grad=as_tensor(grad),
                     hess=as_tensor(hess), flow_grad=as_tensor(fgrad),
                     flow_hess=as_tensor(fhess))
        return np.atleast_1d(law.f(jet))

    link = ansatz.link() if ansatz is not None else identity_link(m - 1)
    return IntrinsicOperator(residual=res, law_params={"law": law.name},
                             link=link)


# ---------------------------------------------------------------------------
# least-squares fit of a parametric family

@dataclass
class FitResult:
    """Outcome of the determining-equation fit."""

    params: np.ndarray
    residual_norm: float
    status: str             # converged | no_convergence | max_iterations
    trace: list = field(default_factory=list)


def _stacked_residual(law, family, theta, u_samples, grid,
                      frozen_connection=False):
    ansatz = family.with_params(theta)
    entries = []
    for u in u_samples:
        for p in itertools.product(*grid.node_arrays()):
            out = determining_residual(law, ansatz, u, list(p),
                                       frozen_connection=frozen_connection)
            entries.extend(out.residual)
            entries.extend(out.skew.ravel())
    return np.array(entries, dtype=float)


def fit_symmetrizing_flow(law, family, u_samples, grid, *, tol=1e-10,
                          max_iter=100, fd_step=1e-6, init_damping=1e-3,
                          frozen_connection=False):
    """Least-squares fit of theta so the determining residual vanishes.

    Levenberg-Marquardt from theta = 0 with forward-difference Jacobians;
    damping shrinks by 0.3 on accepted steps and grows by 10 on rejected
    ones. Stagnation (relative decrease below 1e-12 for 10 consecutive
    iterations while the norm exceeds tol) reports no_convergence in the
    status rather than raising.
    """
    if not u_samples:
        raise ValueError("need at least one field sample")
    nparams = len(family.params)
    theta = np.zeros(nparams)

    def norm_of(t):
        r = _stacked_residual(law, family, t, u_samples, grid,
                              frozen_connection)
        return r, float(np.linalg.norm(r))

    r, norm = norm_of(theta)
    trace = [{"iteration": 0, "residual_norm": norm,
              "gradient_norm": 0.0, "damping": init_damping}]
    if norm <= tol:
        return FitResult(theta, norm, "converged", trace)

    damping = init_damping
    stagnant = 0
    for it in range(1, max_iter + 1):
        jac = np.zeros((len(r), nparams))
        for j in range(nparams):
            shifted = theta.copy()
            shifted[j] += fd_step
            rj, _ = norm_of(shifted)
            jac[:, j] = (rj - r) / fd_step
        grad = jac.T @ r
        grad_norm = float(np.max(np.abs(grad))) if nparams else 0.0

        accepted = False
        lam = damping
        for _ in range(8):
            step = (np.linalg.solve(jac.T @ jac + lam * np.eye(nparams),
                                    -grad) if nparams else np.zeros(0))
            if not np.any(step):
                break
            cand = theta + step
            rc, cand_norm = norm_of(cand)
            if cand_norm < norm:
                theta, r, prev, norm = cand, rc, norm, cand_norm
                damping = lam * 0.3
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            prev = norm
            damping = lam
        trace.append({"iteration": it, "residual_norm": norm,
                      "gradient_norm": grad_norm, "damping": damping})

        if norm <= tol:
            return FitResult(theta, norm, "converged", trace)
        decrease = (prev - norm) / max(prev, 1e-300)
        stagnant = stagnant + 1 if decrease < 1e-12 else 0
        if stagnant >= 10:
            return FitResult(theta, norm, "no_convergence", trace)
    return FitResult(theta, norm, "max_iterations", trace)


# ---------------------------------------------------------------------------
# exports

def export_fit_trace(result, path):
    """CSV of the iteration log."""
    with open(path, "w") as fh:
        fh.write("iteration,residual_norm,gradient_norm,damping\n")
        for row in result.trace:
            fh.write(f"{row['iteration']},{row['residual_norm']!r},"
                     f"{row['gradient_norm']!r},{row['damping']!r}\n")


def export_residual_table(law, ansatz, u, grid, path,
                          frozen_connection=False):
    """CSV of the determining residual over all grid nodes."""
    m = law.ncoords
    with open(path, "w") as fh:
        coords = ",".join(f"s{i}" for i in range(grid.ndim))
        comps = ",".join(f"r{nu}" for nu in range(m))
        fh.write(f"{coords},{comps},skew_max\n")
        for p in itertools.product(*grid.node_arrays()):
            out = determining_residual(law, ansatz, u, list(p),
                                       frozen_connection=frozen_connection)
            skew_max = float(np.max(np.abs(out.skew)))
            row = ([repr(float(x)) for x in p]
                   + [repr(float(v)) for v in out.residual]
                   + [repr(skew_max)])
            fh.write(",".join(row) + "\n")


def save_fit_params(result, family, path):
    """Plain-text record of the fitted coefficients."""
    with open(path, "w") as fh:
        fh.write(f"status = {result.status}\n")
        fh.write(f"residual_norm = {result.residual_norm!r}\n")
        for name, val in zip(family.param_names, result.params):
            fh.write(f"{name} = {float(val)!r}\n")
