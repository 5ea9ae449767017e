"""Scalar and vector fields on label space, and flows built from velocities.

Fields are functions of space-time coordinates (sigma^0 .. sigma^n) with
uniform derivative access up to second order. Analytic fields differentiate
exactly through dual numbers; sampled fields interpolate grid data with local
Lagrange windows. Velocity fields generate flow maps by trajectory
integration (classical RK4) with optional Brownian-style label noise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .dual import d1, d2, d3
from .errors import BlowUp, NonFinite, OutOfDomain

STENCIL_MIN_COUNT = 5


# ---------------------------------------------------------------------------
# grids

@dataclass(frozen=True)
class Grid:
    """Uniform tensor-product grid; axes = ((lo, hi, count), ...)."""

    axes: tuple

    def __post_init__(self):
        axes = tuple((float(lo), float(hi), int(count))
                     for lo, hi, count in self.axes)
        for lo, hi, count in axes:
            if count < STENCIL_MIN_COUNT:
                raise ValueError(f"need at least {STENCIL_MIN_COUNT} nodes "
                                 f"per axis, got {count}")
            if not hi > lo:
                raise ValueError("axis extent must have hi > lo")
        object.__setattr__(self, "axes", axes)

    @property
    def ndim(self):
        return len(self.axes)

    @property
    def shape(self):
        return tuple(count for _, _, count in self.axes)

    def nodes(self, axis):
        lo, hi, count = self.axes[axis]
        return np.linspace(lo, hi, count)

    def node_arrays(self):
        return [self.nodes(ax) for ax in range(self.ndim)]

    def spacing(self, axis):
        lo, hi, count = self.axes[axis]
        return (hi - lo) / (count - 1)

    def contains(self, coords):
        return all(lo - 1e-12 <= c <= hi + 1e-12
                   for c, (lo, hi, _) in zip(coords, self.axes))

    def bounding_box(self, factor=10.0):
        """Axis-aligned box widened ``factor`` times about the grid center."""
        box = []
        for lo, hi, _ in self.axes:
            center = 0.5 * (lo + hi)
            half = 0.5 * (hi - lo) * factor
            box.append((center - half, center + half))
        return box


# ---------------------------------------------------------------------------
# scalar fields

class ScalarField:
    """Base: a scalar function of (sigma^0 .. sigma^n) with derivatives."""

    kind = "analytic"

    @property
    def dim(self):
        raise NotImplementedError

    def eval(self, p):
        raise NotImplementedError

    def deriv1(self, p, nu):
        raise NotImplementedError

    def deriv2(self, p, nu, rho):
        raise NotImplementedError


class AnalyticScalarField(ScalarField):
    """Closed-form field; derivatives are exact via nested duals."""

    kind = "analytic"

    def __init__(self, dim, func):
        self._dim = dim
        self.func = func

    @property
    def dim(self):
        return self._dim

    def _coords(self, p):
        coords = list(p.coords) if hasattr(p, "coords") else list(p)
        if len(coords) != self._dim + 1:
            raise ValueError(f"expected {self._dim + 1} coordinates")
        return coords

    def eval(self, p):
        return self.func(self._coords(p))

    def deriv1(self, p, nu):
        return d1(self.func, self._coords(p), nu)

    def deriv2(self, p, nu, rho):
        return d2(self.func, self._coords(p), nu, rho)

    def deriv3(self, p, nu, rho, lam):
        return d3(self.func, self._coords(p), nu, rho, lam)


def _lagrange_weights(xs, x, order):
    """Weights of the Lagrange interpolant's order-th derivative at x."""
    npts = len(xs)
    w = np.empty(npts)
    for i in range(npts):
        denom = 1.0
        for k in range(npts):
            if k != i:
                denom *= xs[i] - xs[k]
        if order == 0:
            num = 1.0
            for k in range(npts):
                if k != i:
                    num *= x - xs[k]
        elif order == 1:
            num = 0.0
            for m in range(npts):
                if m == i:
                    continue
                prod = 1.0
                for k in range(npts):
                    if k != i and k != m:
                        prod *= x - xs[k]
                num += prod
        elif order == 2:
            num = 0.0
            for m in range(npts):
                if m == i:
                    continue
                for l in range(npts):
                    if l == i or l == m:
                        continue
                    prod = 1.0
                    for k in range(npts):
                        if k not in (i, m, l):
                            prod *= x - xs[k]
                    num += prod
        else:
            raise ValueError("derivative order must be <= 2")
        w[i] = num / denom
    return w


class SampledScalarField(ScalarField):
    """Grid samples with local Lagrange-window interpolation.

    Window width adapts to the requested derivative order so that first and
    second derivatives both converge at the declared stencil order.
    """

    kind = "sampled"

    def __init__(self, grid, values, order=4):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            raise ValueError(f"values shape {values.shape} does not match "
                             f"grid shape {grid.shape}")
        if not np.all(np.isfinite(values)):
            raise NonFinite("sampled field contains non-finite values")
        self.grid = grid
        self.values = values
        self.order = int(order)

    @property
    def dim(self):
        return self.grid.ndim - 1

    def _coords(self, p):
        coords = list(p.coords) if hasattr(p, "coords") else list(p)
        if len(coords) != self.grid.ndim:
            raise ValueError(f"expected {self.grid.ndim} coordinates")
        coords = [float(c) for c in coords]
        if not self.grid.contains(coords):
            raise OutOfDomain(f"point {coords} outside grid extents")
        return coords

    def _collapse(self, coords, dorders):
        weights = []
        starts = []
        for ax, (x, d) in enumerate(zip(coords, dorders)):
            nodes = self.grid.nodes(ax)
            count = len(nodes)
            npts = min(self.order + 1 + max(0, d - 1), count)
            idx = int(np.searchsorted(nodes, x) - 1)
            start = int(np.clip(idx - (npts - 1) // 2, 0, count - npts))
            starts.append((start, npts))
            weights.append(_lagrange_weights(nodes[start:start + npts], x, d))
        window = self.values[tuple(slice(s, s + n) for s, n in starts)]
        out = window
        for w in weights:
            out = np.tensordot(w, out, axes=(0, 0))
        return float(out)

    def eval(self, p):
        coords = self._coords(p)
        return self._collapse(coords, [0] * self.grid.ndim)

    def deriv1(self, p, nu):
        coords = self._coords(p)
        dorders = [0] * self.grid.ndim
        dorders[nu] = 1
        return self._collapse(coords, dorders)

    def deriv2(self, p, nu, rho):
        coords = self._coords(p)
        dorders = [0] * self.grid.ndim
        dorders[nu] += 1
        dorders[rho] += 1
        return self._collapse(coords, dorders)


class ComposedField(ScalarField):
    """u(sigma) = U(xhat(sigma)): a Cartesian field pulled back by a flow.

    Derivatives are assembled by the chain rule from the flow's jet, so the
    flow only ever needs real-point first and second derivatives (works for
    integrated, interpolated flows).
    """

    kind = "analytic"

    def __init__(self, cartesian_field, flow):
        self.field = cartesian_field
        self.flow = flow

    @property
    def dim(self):
        return self.flow.dim

    def eval(self, p):
        return self.field.eval(self.flow.eval(p))

    def deriv1(self, p, nu):
        x = self.flow.eval(p)
        m = self.flow.dim + 1
        return sum(self.field.deriv1(x, mu) * self.flow.deriv1(p, mu, nu)
                   for mu in range(m))

    def deriv2(self, p, nu, rho):
        x = self.flow.eval(p)
        m = self.flow.dim + 1
        jac = [[self.flow.deriv1(p, mu, a) for a in (nu, rho)]
               for mu in range(m)]
        acc = 0.0
        for mu in range(m):
            for lam in range(m):
                acc += self.field.deriv2(x, mu, lam) * jac[lam][1] * jac[mu][0]
            acc += self.field.deriv1(x, mu) * self.flow.deriv2(p, mu, nu, rho)
        return acc


class BlendedField(ScalarField):
    """Pointwise linear combination of fields (shared domain)."""

    def __init__(self, fields, weights):
        if len(fields) != len(weights):
            raise ValueError("need one weight per field")
        self.fields = list(fields)
        self.weights = [float(w) for w in weights]
        self.kind = ("analytic" if all(f.kind == "analytic" for f in fields)
                     else "sampled")

    @property
    def dim(self):
        return self.fields[0].dim

    def eval(self, p):
        return sum(w * f.eval(p) for f, w in zip(self.fields, self.weights))

    def deriv1(self, p, nu):
        return sum(w * f.deriv1(p, nu)
                   for f, w in zip(self.fields, self.weights))

    def deriv2(self, p, nu, rho):
        return sum(w * f.deriv2(p, nu, rho)
                   for f, w in zip(self.fields, self.weights))

    def deriv3(self, p, nu, rho, lam):
        return sum(w * f.deriv3(p, nu, rho, lam)
                   for f, w in zip(self.fields, self.weights))


def blend_fields(fields, weights):
    return BlendedField(fields, weights)


# ---------------------------------------------------------------------------
# vector fields

class VectorField:
    """Tuple of scalar components over a shared domain."""

    def __init__(self, components):
        self.components = list(components)
        if not self.components:
            raise ValueError("vector field needs at least one component")

    @property
    def dim(self):
        return self.components[0].dim

    def __len__(self):
        return len(self.components)

    def eval(self, p):
        return np.array([c.eval(p) for c in self.components])

    def deriv1(self, p, j, nu):
        return self.components[j].deriv1(p, nu)

    def deriv2(self, p, j, nu, rho):
        return self.components[j].deriv2(p, nu, rho)


def field_derivative(f, p, idx):
    """Uniform derivative access: idx is a multi-index of order <= 2."""
    idx = tuple(idx)
    if len(idx) == 0:
        return f.eval(p)
    if len(idx) == 1:
        return f.deriv1(p, idx[0])
    if len(idx) == 2:
        return f.deriv2(p, idx[0], idx[1])
    raise ValueError(f"multi-index order {len(idx)} exceeds 2")


# ---------------------------------------------------------------------------
# trajectory integration

def _eval_velocity(U, t, X):
    """Velocity samples at points X (N, n) and common time t, shape (N, n)."""
    npts, n = X.shape
    cols = [np.full(npts, t)] + [X[:, k] for k in range(n)]
    out = np.empty((npts, n))
    for j, comp in enumerate(U.components):
        func = getattr(comp, "func", None)
        if func is not None:
            try:
                out[:, j] = np.broadcast_to(func(cols), (npts,))
                continue
            except (TypeError, ValueError):
                pass  # closure does not vectorize; fall through
        out[:, j] = [comp.eval([t] + list(X[i])) for i in range(npts)]
    return out


def _hermite_weights(tau, order):
    if order == 0:
        return (2 * tau ** 3 - 3 * tau ** 2 + 1,
                tau ** 3 - 2 * tau ** 2 + tau,
                -2 * tau ** 3 + 3 * tau ** 2,
                tau ** 3 - tau ** 2)
    if order == 1:
        return (6 * tau ** 2 - 6 * tau,
                3 * tau ** 2 - 4 * tau + 1,
                -6 * tau ** 2 + 6 * tau,
                3 * tau ** 2 - 2 * tau)
    if order == 2:
        return (12 * tau - 6, 6 * tau - 4, -12 * tau + 6, 6 * tau - 2)
    raise ValueError("time derivative order must be <= 2")


class IntegratedFlowMap:
    """Time-identity flow interpolating integrated trajectories.

    Spatial interpolation is a tensor cubic spline over the label grid at
    each stored time; time interpolation is cubic Hermite using the stored
    velocities. Satisfies the FlowMap protocol (dim, time_identity, eval,
    deriv1, deriv2) at real points.
    """

    time_identity = True

    def __init__(self, grid, times, positions, velocities):
        self.grid = grid
        self.times = times                      # (steps+1,)
        self.positions = positions              # (steps+1, *grid.shape, n)
        self.velocities = velocities            # same shape
        self._axis0_splines = {}

    @property
    def dim(self):
        return self.grid.ndim

    def _coords(self, p):
        coords = list(p.coords) if hasattr(p, "coords") else list(p)
        if len(coords) != self.dim + 1:
            raise ValueError(f"expected {self.dim + 1} coordinates")
        return [float(c) for c in coords]

    def _spatial(self, data_kind, knot, comp, sigma, dorders):
        arr_all = (self.positions if data_kind == "X" else self.velocities)
        key = (data_kind, knot, comp)
        spline = self._axis0_splines.get(key)
        if spline is None:
            spline = CubicSpline(self.grid.nodes(0), arr_all[knot, ..., comp],
                                 axis=0)
            self._axis0_splines[key] = spline
        arr = spline(sigma[0], nu=dorders[0])
        for ax in range(1, self.dim):
            inner = CubicSpline(self.grid.nodes(ax), arr, axis=0)
            arr = inner(sigma[ax], nu=dorders[ax])
        return float(arr)

    def _interval(self, t):
        k = int(np.searchsorted(self.times, t, side="right") - 1)
        k = min(max(k, 0), len(self.times) - 2)
        dt = self.times[k + 1] - self.times[k]
        tau = (t - self.times[k]) / dt
        return k, dt, tau

    def _component(self, comp, t, sigma, t_order, dorders):
        k, dt, tau = self._interval(t)
        w = _hermite_weights(tau, t_order)
        xk = self._spatial("X", k, comp, sigma, dorders)
        vk = self._spatial("V", k, comp, sigma, dorders)
        xk1 = self._spatial("X", k + 1, comp, sigma, dorders)
        vk1 = self._spatial("V", k + 1, comp, sigma, dorders)
        val = w[0] * xk + w[1] * dt * vk + w[2] * xk1 + w[3] * dt * vk1
        return val / dt ** t_order

    def eval(self, p):
        coords = self._coords(p)
        t, sigma = coords[0], coords[1:]
        out = [t]
        for j in range(self.dim):
            out.append(self._component(j, t, sigma, 0, [0] * self.dim))
        return np.array(out)

    def deriv1(self, p, mu, nu):
        coords = self._coords(p)
        t, sigma = coords[0], coords[1:]
        if mu == 0:
            return 1.0 if nu == 0 else 0.0
        t_order = 1 if nu == 0 else 0
        dorders = [0] * self.dim
        if nu > 0:
            dorders[nu - 1] = 1
        return self._component(mu - 1, t, sigma, t_order, dorders)

    def deriv2(self, p, mu, nu, lam):
        coords = self._coords(p)
        t, sigma = coords[0], coords[1:]
        if mu == 0:
            return 0.0
        t_order = (1 if nu == 0 else 0) + (1 if lam == 0 else 0)
        dorders = [0] * self.dim
        for idx in (nu, lam):
            if idx > 0:
                dorders[idx - 1] += 1
        return self._component(mu - 1, t, sigma, t_order, dorders)

    def export_trajectories(self, path):
        """One CSV row per (node, stored time): labels, time, position."""
        n = self.dim
        nodes = np.stack(np.meshgrid(*self.grid.node_arrays(), indexing="ij"),
                         axis=-1).reshape(-1, n)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"s{k + 1}" for k in range(n)] + ["t"]
                            + [f"x{k + 1}" for k in range(n)])
            flat = self.positions.reshape(len(self.times), -1, n)
            for i, label in enumerate(nodes):
                for k, t in enumerate(self.times):
                    writer.writerow(list(label) + [t] + list(flat[k, i]))


def _check_box(X, box):
    for k, (lo, hi) in enumerate(box):
        if np.any(X[:, k] < lo) or np.any(X[:, k] > hi):
            raise BlowUp(f"trajectory left the bounding box on axis {k}")


def _integrate(U, grid, t0, t1, steps, offset=None):
    if steps < 1:
        raise ValueError("need at least one time step")
    n = grid.ndim
    if len(U) != n:
        raise ValueError(f"velocity has {len(U)} components for a "
                         f"{n}-axis grid")
    times = np.linspace(t0, t1, steps + 1)
    nodes = np.stack(np.meshgrid(*grid.node_arrays(), indexing="ij"),
                     axis=-1).reshape(-1, n)
    box = grid.bounding_box()

    def rhs(t, X):
        Xq = X if offset is None else X + offset(t)
        return _eval_velocity(U, t, Xq)

    X = nodes.copy()
    positions = np.empty((steps + 1, len(nodes), n))
    velocities = np.empty_like(positions)
    positions[0] = X
    velocities[0] = rhs(times[0], X)
    dt = (t1 - t0) / steps
    for k in range(steps):
        t = times[k]
        k1 = rhs(t, X)
        k2 = rhs(t + 0.5 * dt, X + 0.5 * dt * k1)
        k3 = rhs(t + 0.5 * dt, X + 0.5 * dt * k2)
        k4 = rhs(t + dt, X + dt * k3)
        X = X + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(X)):
            raise BlowUp("trajectory became non-finite")
        _check_box(X, box)
        positions[k + 1] = X
        velocities[k + 1] = rhs(times[k + 1], X)

    shape = (steps + 1,) + grid.shape + (n,)
    return IntegratedFlowMap(grid, times, positions.reshape(shape),
                             velocities.reshape(shape))


def integrate_flow_map(U, grid, t0, t1, steps):
    """Flow map from velocity field U by classical RK4 over grid labels.

    The spatial part solves dX/dt = U(X, t) with X(t0) = sigma exactly at
    the stored initial time; time is never transformed.
    """
    return _integrate(U, grid, t0, t1, steps)


def integrate_noisy_flow_map(U, noise, grid, t0, t1, steps):
    """As integrate_flow_map, with labels noise-shifted inside U.

    The velocity argument is offset per node: dX/dt = U(X + B(sigma, t), t).
    Deterministic given the noise path's seed.
    """
    n = grid.ndim
    nodes = np.stack(np.meshgrid(*grid.node_arrays(), indexing="ij"),
                     axis=-1).reshape(-1, n)

    def offset(t):
        return np.array([noise.eval(label, t) for label in nodes])

    return _integrate(U, grid, t0, t1, steps, offset=offset)


# ---------------------------------------------------------------------------
# label noise

class NoisePath:
    """Per-node Brownian-style paths, piecewise linear in time.

    Each grid node carries an independent Gaussian random walk with increment
    variance sigma^2 * dt, pinned to zero at t0. Off-grid labels use the
    nearest node's path. Fully determined by the seed.
    """

    def __init__(self, grid, t0, t1, steps, sigma=1.0, seed=0):
        self.grid = grid
        self.seed = int(seed)
        self.sigma = float(sigma)
        self.times = np.linspace(t0, t1, steps + 1)
        n = grid.ndim
        rng = np.random.default_rng(self.seed)
        dt = (t1 - t0) / steps
        increments = rng.normal(0.0, sigma * np.sqrt(dt),
                                size=(steps,) + grid.shape + (n,))
        paths = np.zeros((steps + 1,) + grid.shape + (n,))
        np.cumsum(increments, axis=0, out=paths[1:])
        self.paths = paths

    def _node_index(self, label):
        idx = []
        for ax, c in enumerate(label):
            nodes = self.grid.nodes(ax)
            idx.append(int(np.argmin(np.abs(nodes - c))))
        return tuple(idx)

    def eval(self, label, t):
        """Offset vector at (label, t); zero at t0 by construction."""
        idx = self._node_index(label)
        times = self.times
        if t <= times[0]:
            return self.paths[(0,) + idx].copy()
        if t >= times[-1]:
            return self.paths[(len(times) - 1,) + idx].copy()
        k = int(np.searchsorted(times, t, side="right") - 1)
        tau = (t - times[k]) / (times[k + 1] - times[k])
        a = self.paths[(k,) + idx]
        b = self.paths[(k + 1,) + idx]
        return (1.0 - tau) * a + tau * b


# ---------------------------------------------------------------------------
# CSV I/O for sampled fields

def save_sampled_field(field, path):
    """Header names the axes; one grid node per row, C order."""
    grid = field.grid
    names = [f"s{k}" for k in range(grid.ndim)]
    nodes = np.stack(np.meshgrid(*grid.node_arrays(), indexing="ij"),
                     axis=-1).reshape(-1, grid.ndim)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names + ["value"])
        for coords, val in zip(nodes, field.values.ravel()):
            writer.writerow(list(coords) + [repr(float(val))])


def load_sampled_field(path, order=4):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(c) for c in row] for row in reader])
    ndim = len(header) - 1
    axes = []
    shape = []
    for ax in range(ndim):
        uniq = np.unique(rows[:, ax])
        spacings = np.diff(uniq)
        if len(uniq) < 2 or not np.allclose(spacings, spacings[0],
                                            rtol=1e-8, atol=1e-12):
            raise ValueError(f"axis {header[ax]} is not uniformly spaced")
        axes.append((float(uniq[0]), float(uniq[-1]), len(uniq)))
        shape.append(len(uniq))
    grid = Grid(tuple(axes))
    values = rows[:, -1].reshape(shape)
    return SampledScalarField(grid, values, order=order)
