"""Declarative scenario runner.

A scenario is a TOML file naming a coordinate flow, scalar fields, a law,
and a list of checks. ``run`` executes the checks in declared order and
emits a JSON report; for a fixed config and seed the report is byte-stable
apart from the per-check ``runtime`` entries. Exit codes: 0 when every
non-info check passes, 1 when a check fails, 2 when the config is invalid.

Check failures are report entries, never process errors. A check whose
config says ``expect = "fail"`` reports ``info`` when it fails (a known,
documented defect); if such a check unexpectedly passes it is flagged as a
failure, since the documentation it encodes is then stale.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import tomli

from . import __version__
from .determine import (
    AlgebraicFlowAnsatz,
    SecondOrderScalarLaw,
    classical_symmetry_residual,
    comoving_heat_law,
    determining_residual,
    fit_symmetrizing_flow,
)
from .dual import sin
from .errors import ComovingError, ConfigError
from .expressions import parse_expression
from .fields import (
    AnalyticScalarField,
    Grid,
    VectorField,
    integrate_flow_map,
)
from .geometry import (
    FlowMap,
    adjugate,
    cofactor_matrix,
    check_jacobian_identity,
    det_small,
    jacobian_determinant,
    jacobian_matrix,
    metric_tensor,
)
from .intrinsic import (
    PressureField,
    heat_operator,
    heat_residual,
    heat_residual_cartesian,
    identity_link,
    navier_stokes_residual,
    pushforward_gradient,
    pushforward_hessian,
    IntrinsicOperator,
)
from .variational import (
    QuadratureSpec,
    path_integral,
    quadratic_detour,
    stationarity_check,
    straight_line,
    symmetry_defect,
    zero_field_like,
    VARIANTS,
)

_ALIASES = ("t", "x", "y", "z")

_GRAD_NAME = re.compile(r"^u_(\d)$")
_HESS_NAME = re.compile(r"^u_(\d)(\d)$")
_FLOW_GRAD_NAME = re.compile(r"^x(\d)_(\d)$")
_FLOW_HESS_NAME = re.compile(r"^x(\d)_(\d)(\d)$")


def _coordinate_names(m):
    names = {f"s{i}" for i in range(m)}
    names.update(_ALIASES[:m])
    return names


def _coordinate_env(coords):
    env = {}
    for i, c in enumerate(coords):
        env[f"s{i}"] = c
        if i < len(_ALIASES):
            env[_ALIASES[i]] = c
    return env


def _jet_names(m, flow_slots):
    names = {"u"}
    for i in range(m):
        names.add(f"u_{i}")
        for j in range(m):
            names.add(f"u_{i}{j}")
    if flow_slots:
        for mu in range(m):
            for i in range(m):
                names.add(f"x{mu}_{i}")
                for j in range(m):
                    names.add(f"x{mu}_{i}{j}")
    return names


def _jet_env(jet, m, needed):
    env = {}
    for name in needed:
        if name == "u":
            env[name] = jet.value
            continue
        match = _GRAD_NAME.match(name)
        if match:
            env[name] = jet.grad[int(match.group(1))]
            continue
        match = _HESS_NAME.match(name)
        if match:
            env[name] = jet.hess[int(match.group(1))][int(match.group(2))]
            continue
        match = _FLOW_GRAD_NAME.match(name)
        if match:
            env[name] = jet.flow_grad[int(match.group(1))][int(match.group(2))]
            continue
        match = _FLOW_HESS_NAME.match(name)
        if match:
            mu, i, j = (int(g) for g in match.groups())
            env[name] = jet.flow_hess[mu][i][j]
    return env


def _validate_slot_indices(variables, m, where):
    for name in variables:
        for pattern in (_GRAD_NAME, _HESS_NAME,
                        _FLOW_GRAD_NAME, _FLOW_HESS_NAME):
            match = pattern.match(name)
            if match and any(int(g) >= m for g in match.groups()):
                raise ConfigError(
                    f"{where}: index in {name!r} exceeds the coordinate "
                    f"count {m}")


def _heat_jet_law(alpha, m):
    """Fixed-frame heat law u_t - alpha * laplacian(u) on jets, any n."""
    def f(jet):
        lap = jet.hess[1][1]
        for k in range(2, m):
            lap = lap + jet.hess[k][k]
        return jet.grad[0] - alpha * lap
    return SecondOrderScalarLaw(m, f, name="heat")


# ---------------------------------------------------------------------------
# scenario loading


@dataclass
class Scenario:
    """A parsed, validated scenario ready to run."""

    name: str
    dimension: int
    flow_kind: str
    flow: object
    fields: dict
    law: dict
    checks: tuple
    quadrature: QuadratureSpec
    seed: int
    tolerances: dict
    echo: dict


def _require(table, key, kind, where):
    if key not in table:
        raise ConfigError(f"{where}: missing required key {key!r}")
    value = table[key]
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind):
        raise ConfigError(
            f"{where}.{key}: expected {kind.__name__}, "
            f"got {type(value).__name__}")
    return value


def _reject_unknown(table, allowed, where):
    unknown = set(table) - set(allowed)
    if unknown:
        raise ConfigError(
            f"{where}: unknown key(s) {sorted(unknown)!r}; "
            f"allowed: {sorted(allowed)!r}")


def _field_from_expression(name, text, dim):
    expr = parse_expression(text)
    bad = expr.variables - _coordinate_names(dim + 1)
    if bad:
        raise ConfigError(
            f"field {name!r}: unknown name(s) {sorted(bad)!r} in "
            f"{text!r}; fields are functions of coordinates only")

    def fn(s):
        return expr.evaluate(_coordinate_env(s))

    return AnalyticScalarField(dim, fn)


def _expression_flow(components, dim):
    m = dim + 1
    if len(components) != m:
        raise ConfigError(
            f"flow: need {m} components for dimension {dim}, "
            f"got {len(components)}")
    closures = []
    for i, text in enumerate(components):
        expr = parse_expression(text)
        bad = expr.variables - _coordinate_names(m)
        if bad:
            raise ConfigError(
                f"flow component {i}: unknown name(s) {sorted(bad)!r}")
        closures.append(
            (lambda e: lambda s: e.evaluate(_coordinate_env(s)))(expr))
    time_identity = components[0].strip() in ("s0", "t")
    return FlowMap(dim, tuple(closures), time_identity=time_identity)


def _ansatz_flow(table, dim, where):
    m = dim + 1
    components = _require(table, "components", list, where)
    params = tuple(float(v) for v in table.get("params", ()))
    if len(components) != m:
        raise ConfigError(
            f"{where}: need {m} components for dimension {dim}, "
            f"got {len(components)}")
    theta_names = {f"theta{k}" for k in range(len(params))}
    closures = []
    for i, text in enumerate(components):
        expr = parse_expression(text)
        allowed = _coordinate_names(m) | {"u"} | theta_names
        bad = expr.variables - allowed
        if bad:
            raise ConfigError(
                f"{where} component {i}: unknown name(s) {sorted(bad)!r}; "
                f"allowed coordinates, 'u', and {sorted(theta_names)!r}")

        def closure(s, w, th, e=expr):
            env = _coordinate_env(s)
            env["u"] = w
            for k, v in enumerate(th):
                env[f"theta{k}"] = v
            return e.evaluate(env)

        closures.append(closure)
    if components[0].strip() not in ("s0", "t"):
        raise ConfigError(f"{where}: the first (time) component must be 's0'")
    return AlgebraicFlowAnsatz(m, tuple(closures), params=params)


def _integrated_flow(table, dim, where):
    m = dim + 1
    velocity = _require(table, "velocity", list, where)
    if len(velocity) != dim:
        raise ConfigError(
            f"{where}: need {dim} velocity components, got {len(velocity)}")
    comps = []
    for i, text in enumerate(velocity):
        comps.append(_field_from_expression(f"velocity[{i}]", text, dim))
    t0 = float(table.get("t0", 0.0))
    t1 = _require(table, "t1", float, where)
    steps = int(table.get("steps", 32))
    axes = _require(table, "grid", list, where)
    if len(axes) != dim:
        raise ConfigError(f"{where}.grid: need {dim} spatial axes")
    grid = Grid(tuple(tuple(ax) for ax in axes))
    return integrate_flow_map(VectorField(comps), grid, t0, t1, steps)


_COMMON_CHECK_KEYS = {"name", "tolerance", "expect"}

_CHECK_KEYS = {
    "geometry_identities": {"points"},
    "intrinsic_reduction": {"points"},
    "symmetry_defect": {"variant", "pairs"},
    "path_independence": set(),
    "stationarity": {"directions"},
    "determining_residual": {"points"},
    "classical_symmetry": {"points"},
    "fit": {"grid", "max_iter", "fit_tolerance"},
}


def _normalize_checks(raw_checks, tolerances):
    checks = []
    seen = set()
    for idx, entry in enumerate(raw_checks):
        where = f"checks[{idx}]"
        if not isinstance(entry, dict):
            raise ConfigError(f"{where}: each check must be a table")
        name = _require(entry, "name", str, where)
        if name not in _CHECK_KEYS:
            raise ConfigError(
                f"{where}: unknown check {name!r}; known: "
                f"{sorted(_CHECK_KEYS)!r}")
        if name in seen:
            raise ConfigError(
                f"{where}: duplicate check {name!r}; each check may be "
                f"requested once")
        seen.add(name)
        _reject_unknown(entry, _CHECK_KEYS[name] | _COMMON_CHECK_KEYS, where)
        expect = entry.get("expect", "pass")
        if expect not in ("pass", "fail"):
            raise ConfigError(
                f"{where}.expect: must be 'pass' or 'fail', got {expect!r}")
        cfg = dict(entry)
        cfg["expect"] = expect
        cfg["tolerance"] = float(
            entry.get("tolerance",
                      tolerances.get(name, tolerances.get("default", 1e-8))))
        checks.append(cfg)
    return tuple(checks)


def scenario_from_dict(raw, seed_override=None, quad_override=None):
    """Validate a parsed config mapping and build the Scenario."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a table")
    _reject_unknown(
        raw,
        {"name", "dimension", "seed", "flow", "fields", "law", "checks",
         "quadrature", "tolerances"},
        "config")
    name = _require(raw, "name", str, "config")
    dim = _require(raw, "dimension", int, "config")
    if dim < 1:
        raise ConfigError("config.dimension: must be a positive integer")
    m = dim + 1
    seed = int(raw.get("seed", 0)) if seed_override is None else int(
        seed_override)

    quad_table = raw.get("quadrature", {})
    _reject_unknown(quad_table, {"axes", "lambda_count"}, "quadrature")
    axes_raw = quad_table.get("axes",
                              [[0.0, 1.0, 12] for _ in range(m)])
    if len(axes_raw) != m:
        raise ConfigError(
            f"quadrature.axes: need {m} axes for dimension {dim}, "
            f"got {len(axes_raw)}")
    axes = []
    for ax in axes_raw:
        if isinstance(ax, (int, float)):
            axes.append(float(ax))
        elif isinstance(ax, list) and len(ax) == 3:
            lo, hi, count = ax
            if quad_override is not None:
                count = quad_override
            axes.append((float(lo), float(hi), int(count)))
        else:
            raise ConfigError(
                "quadrature.axes: each axis is [lo, hi, count] or a pinned "
                f"number, got {ax!r}")
    try:
        quadrature = QuadratureSpec(
            tuple(axes), lambda_count=int(quad_table.get("lambda_count", 16)))
    except ValueError as exc:
        raise ConfigError(f"quadrature: {exc}") from None

    fields = {}
    for idx, entry in enumerate(raw.get("fields", [])):
        where = f"fields[{idx}]"
        _reject_unknown(entry, {"name", "expression"}, where)
        fname = _require(entry, "name", str, where)
        if fname in fields:
            raise ConfigError(f"{where}: duplicate field {fname!r}")
        text = _require(entry, "expression", str, where)
        fields[fname] = _field_from_expression(fname, text, dim)

    flow_table = raw.get("flow", {"kind": "expression",
                                  "components": [f"s{i}" for i in range(m)]})
    kind = _require(flow_table, "kind", str, "flow")
    if kind == "expression":
        _reject_unknown(flow_table, {"kind", "components"}, "flow")
        components = _require(flow_table, "components", list, "flow")
        flow = _expression_flow(components, dim)
    elif kind == "ansatz":
        _reject_unknown(flow_table, {"kind", "components", "params"}, "flow")
        flow = _ansatz_flow(flow_table, dim, "flow")
    elif kind == "integrated":
        _reject_unknown(
            flow_table,
            {"kind", "velocity", "t0", "t1", "steps", "grid"}, "flow")
        flow = _integrated_flow(flow_table, dim, "flow")
    else:
        raise ConfigError(
            f"flow.kind: expected 'expression', 'ansatz' or 'integrated', "
            f"got {kind!r}")

    law_table = raw.get("law", {"kind": "heat", "alpha": 1.0})
    law_kind = _require(law_table, "kind", str, "law")
    if law_kind == "heat":
        _reject_unknown(law_table, {"kind", "alpha"}, "law")
        law = {"kind": "heat", "alpha": float(law_table.get("alpha", 1.0))}
    elif law_kind == "navier_stokes":
        _reject_unknown(
            law_table, {"kind", "reynolds", "velocity", "pressure"}, "law")
        velocity = _require(law_table, "velocity", list, "law")
        pressure = _require(law_table, "pressure", str, "law")
        for fname in list(velocity) + [pressure]:
            if fname not in fields:
                raise ConfigError(
                    f"law: references undeclared field {fname!r}")
        if len(velocity) != dim:
            raise ConfigError(
                f"law.velocity: need {dim} components, got {len(velocity)}")
        law = {"kind": "navier_stokes",
               "reynolds": _require(law_table, "reynolds", float, "law"),
               "velocity": list(velocity), "pressure": pressure}
    elif law_kind == "custom":
        _reject_unknown(law_table, {"kind", "f"}, "law")
        text = _require(law_table, "f", str, "law")
        expr = parse_expression(text)
        _validate_slot_indices(expr.variables, m, "law.f")
        allowed = _jet_names(m, True) | _coordinate_names(m)
        bad = expr.variables - allowed
        if bad:
            raise ConfigError(
                f"law.f: unknown name(s) {sorted(bad)!r} in {text!r}")
        law = {"kind": "custom", "f": text}
    else:
        raise ConfigError(
            f"law.kind: expected 'heat', 'navier_stokes' or 'custom', "
            f"got {law_kind!r}")

    tolerances = {k: float(v)
                  for k, v in raw.get("tolerances", {}).items()}
    checks = _normalize_checks(raw.get("checks", []), tolerances)
    if not checks:
        raise ConfigError("config: at least one check is required")

    return Scenario(name=name, dimension=dim, flow_kind=kind, flow=flow,
                    fields=fields, law=law, checks=checks,
                    quadrature=quadrature, seed=seed, tolerances=tolerances,
                    echo=raw)


def load_scenario(path, seed_override=None, quad_override=None):
    """Parse and validate the TOML scenario at ``path``."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return scenario_from_dict(raw, seed_override=seed_override,
                              quad_override=quad_override)


# ---------------------------------------------------------------------------
# law and flow adapters


def _named_field(scn, fname, where):
    if fname not in scn.fields:
        raise ConfigError(
            f"{where}: requires a declared field named {fname!r}")
    return scn.fields[fname]


def _flow_object(scn):
    """The concrete flow: an ansatz is composed with the field 'u'."""
    if scn.flow_kind == "ansatz":
        return scn.flow.induced_flow(_named_field(scn, "u", "ansatz flow"))
    return scn.flow


def _flow_of(scn):
    if scn.flow_kind == "ansatz":
        return scn.flow.induced_flow
    flow = scn.flow
    return lambda u: flow


def _scalar_operator(scn, where):
    """The law as a pointwise operator for the variational checks."""
    law = scn.law
    if law["kind"] == "heat":
        return heat_operator(law["alpha"], link=identity_link(scn.dimension))
    if law["kind"] == "custom":
        return _operator_from_expression(law["f"], scn.dimension)
    raise ConfigError(f"{where}: supports scalar laws only, "
                      f"not {law['kind']!r}")


def _operator_from_expression(text, dim):
    expr = parse_expression(text)
    m = dim + 1
    needed = expr.variables

    def res(u, flow, p):
        comp = u.components[0] if isinstance(u, VectorField) else u
        coords = list(p)
        env = _coordinate_env(coords)
        for name in needed:
            if name in env:
                continue
            if name == "u":
                env[name] = comp.eval(coords)
                continue
            match = _GRAD_NAME.match(name)
            if match:
                env[name] = comp.deriv1(coords, int(match.group(1)))
                continue
            match = _HESS_NAME.match(name)
            if match:
                env[name] = comp.deriv2(coords, int(match.group(1)),
                                        int(match.group(2)))
                continue
            match = _FLOW_GRAD_NAME.match(name)
            if match:
                env[name] = flow.deriv1(coords, int(match.group(1)),
                                        int(match.group(2)))
                continue
            match = _FLOW_HESS_NAME.match(name)
            if match:
                mu, i, j = (int(g) for g in match.groups())
                env[name] = flow.deriv2(coords, mu, i, j)
        return np.atleast_1d(expr.evaluate(env))

    return IntrinsicOperator(residual=res, law_params={"f": text},
                             link=identity_link(dim))


def _determine_law(scn, where, flow_slots=True):
    """The law on jets for the determining-equation checks."""
    law = scn.law
    m = scn.dimension + 1
    if law["kind"] == "heat":
        if flow_slots and scn.dimension == 1:
            return comoving_heat_law(law["alpha"])
        return _heat_jet_law(law["alpha"], m)
    if law["kind"] == "custom":
        expr = parse_expression(law["f"])
        coords = expr.variables & _coordinate_names(m)
        if coords:
            raise ConfigError(
                f"{where}: law must be position-free on jets, but f uses "
                f"{sorted(coords)!r}")
        if not flow_slots:
            slots = expr.variables - _jet_names(m, False)
            if slots:
                raise ConfigError(
                    f"{where}: the fixed-frame law cannot read flow slots "
                    f"{sorted(slots)!r}")
        needed = expr.variables

        def f(jet):
            return expr.evaluate(_jet_env(jet, m, needed))

        return SecondOrderScalarLaw(m, f, name="custom")
    raise ConfigError(f"{where}: supports scalar laws only, "
                      f"not {law['kind']!r}")


# ---------------------------------------------------------------------------
# probe helpers


def _probe_points(scn, rng, count):
    points = []
    for _ in range(int(count)):
        coords = []
        for ax in scn.quadrature.axes:
            if isinstance(ax, tuple):
                lo, hi, _ = ax
                pad = 0.1 * (hi - lo)
                coords.append(float(rng.uniform(lo + pad, hi - pad)))
            else:
                coords.append(float(ax))
        points.append(coords)
    return points


def _sine_probe(scn, rng):
    """A product over integrated axes of three-mode sine combinations.

    Multi-mode factors keep accidental orthogonality between two probes a
    measure-zero event; every factor vanishes on its axis boundaries.
    """
    waves = []
    for ax in scn.quadrature.axes:
        if isinstance(ax, tuple):
            lo, hi, _ = ax
            coeffs = (rng.uniform(0.3, 1.0, size=3)
                      * rng.choice([-1.0, 1.0], size=3))
            waves.append((lo, hi - lo, [float(c) for c in coeffs]))
        else:
            waves.append(None)

    def fn(s):
        out = 1.0
        for i, wave in enumerate(waves):
            if wave is not None:
                lo, span, coeffs = wave
                shat = (s[i] - lo) / span
                axis_val = coeffs[0] * sin(np.pi * shat)
                for k in (1, 2):
                    axis_val = axis_val + coeffs[k] * sin(
                        (k + 1) * np.pi * shat)
                out = out * axis_val
        return out

    return AnalyticScalarField(scn.dimension, fn)


# ---------------------------------------------------------------------------
# check runners: each returns (measured dict, worst scalar)


def _check_geometry_identities(scn, cfg, rng):
    if scn.flow_kind == "integrated":
        raise ConfigError(
            "geometry_identities: needs an analytic flow ('expression' or "
            "'ansatz'); integrated flows support real points only")
    flow = _flow_object(scn)
    worst = {"jacobian_identity": 0.0, "cofactor_vs_adjugate": 0.0,
             "metric_det_vs_jacobian_sq": 0.0}
    for p in _probe_points(scn, rng, cfg.get("points", 5)):
        res = np.abs(np.asarray(check_jacobian_identity(flow, p),
                                dtype=float))
        worst["jacobian_identity"] = max(worst["jacobian_identity"],
                                         float(res.max()))
        jac = jacobian_matrix(flow, p)
        diff = (np.asarray(cofactor_matrix(flow, p), dtype=float)
                - np.asarray(adjugate(jac), dtype=float))
        worst["cofactor_vs_adjugate"] = max(worst["cofactor_vs_adjugate"],
                                            float(np.abs(diff).max()))
        det = float(jacobian_determinant(flow, p))
        detg = float(det_small(metric_tensor(flow, p)))
        rel = abs(detg - det ** 2) / max(det ** 2, 1e-300)
        worst["metric_det_vs_jacobian_sq"] = max(
            worst["metric_det_vs_jacobian_sq"], rel)
    return worst, max(worst.values())


def _ns_cartesian_residual(vel, pres, flow, reynolds, p):
    n = flow.dim
    grads = [pushforward_gradient(c, flow, p) for c in vel.components]
    vals = [c.eval(list(p)) for c in vel.components]
    pgrad = pushforward_gradient(pres.inner, flow, p)
    out = []
    for j in range(n):
        hess = pushforward_hessian(vel.components[j], flow, p)
        adv = sum(vals[k] * grads[j][k + 1] for k in range(n))
        lap = sum(hess[k + 1][k + 1] for k in range(n))
        out.append(grads[j][0] + adv + pgrad[j + 1] - lap / reynolds)
    out.append(sum(grads[j][j + 1] for j in range(n)))
    return np.asarray(out, dtype=float)


def _check_intrinsic_reduction(scn, cfg, rng):
    flow = _flow_object(scn)
    law = scn.law
    points = _probe_points(scn, rng, cfg.get("points", 5))
    worst = 0.0
    if law["kind"] == "heat":
        if scn.dimension != 1:
            raise ConfigError(
                "intrinsic_reduction: the closed-form heat residual needs "
                "dimension 1; use a custom or navier_stokes law otherwise")
        u = _named_field(scn, "u", "intrinsic_reduction")
        for p in points:
            a = float(heat_residual(u, flow, law["alpha"], p))
            b = float(heat_residual_cartesian(u, flow, law["alpha"], p))
            worst = max(worst, abs(a - b))
    elif law["kind"] == "navier_stokes":
        vel = VectorField([_named_field(scn, fname, "intrinsic_reduction")
                           for fname in law["velocity"]])
        pres = PressureField(
            _named_field(scn, law["pressure"], "intrinsic_reduction"))
        for p in points:
            a = np.asarray(navier_stokes_residual(
                vel, pres, flow, law["reynolds"], p), dtype=float)
            b = _ns_cartesian_residual(vel, pres, flow, law["reynolds"], p)
            worst = max(worst, float(np.abs(a - b).max()))
    else:
        raise ConfigError(
            "intrinsic_reduction: supports 'heat' and 'navier_stokes' laws")
    return {"max_difference": worst, "points": len(points)}, worst


def _check_symmetry_defect(scn, cfg, rng):
    variant = cfg.get("variant", "classical")
    if variant not in VARIANTS:
        raise ConfigError(
            f"symmetry_defect.variant: expected one of {VARIANTS!r}, "
            f"got {variant!r}")
    op = _scalar_operator(scn, "symmetry_defect")
    u = _named_field(scn, "u", "symmetry_defect")
    flow = _flow_object(scn)
    pairs = int(cfg.get("pairs", 3))
    worst = 0.0
    for _ in range(pairs):
        phi = _sine_probe(scn, rng)
        psi = _sine_probe(scn, rng)
        report = symmetry_defect(op, op.link, u, flow, phi, psi, variant,
                                 scn.quadrature)
        worst = max(worst, abs(report.defect))
    return {"max_defect": worst, "variant": variant, "pairs": pairs}, worst


def _check_path_independence(scn, cfg, rng):
    op = _scalar_operator(scn, "path_independence")
    u = _named_field(scn, "u", "path_independence")
    flow_of = _flow_of(scn)
    u0 = zero_field_like(u)
    detour_shape = _sine_probe(scn, rng)
    straight = path_integral(op, flow_of, straight_line(u0, u),
                             scn.quadrature)
    detour = path_integral(op, flow_of,
                           quadratic_detour(u0, u, detour_shape),
                           scn.quadrature)
    diff = abs(straight - detour)
    measured = {"action_straight": float(straight),
                "action_detour": float(detour),
                "difference": float(diff)}
    return measured, float(diff)


def _check_stationarity(scn, cfg, rng):
    op = _scalar_operator(scn, "stationarity")
    u = _named_field(scn, "u", "stationarity")
    flow_of = _flow_of(scn)
    count = int(cfg.get("directions", 3))
    directions = [_sine_probe(scn, rng) for _ in range(count)]
    worst = float(stationarity_check(op, flow_of, u, directions,
                                     scn.quadrature))
    return {"max_defect": worst, "directions": count}, worst


def _determine_ansatz(scn):
    if scn.flow_kind == "ansatz":
        return scn.flow
    if scn.flow_kind == "expression":
        comps = tuple((lambda c: lambda s, w, th: c(s))(c)
                      for c in scn.flow.components)
        return AlgebraicFlowAnsatz(
            scn.dimension + 1, comps,
            time_identity=getattr(scn.flow, "time_identity", False))
    raise ConfigError(
        "determining-equation checks need an algebraic flow "
        "('ansatz' or 'expression' kind), not an integrated one")


def _check_determining_residual(scn, cfg, rng):
    law = _determine_law(scn, "determining_residual")
    ansatz = _determine_ansatz(scn)
    u = _named_field(scn, "u", "determining_residual")
    worst_res = 0.0
    worst_skew = 0.0
    for p in _probe_points(scn, rng, cfg.get("points", 3)):
        out = determining_residual(law, ansatz, u, p)
        worst_res = max(worst_res,
                        float(np.abs(np.asarray(out.residual)).max()))
        worst_skew = max(worst_skew,
                         float(np.abs(np.asarray(out.skew)).max()))
    measured = {"max_residual": worst_res, "max_skew": worst_skew}
    return measured, worst_res


def _check_classical_symmetry(scn, cfg, rng):
    law = _determine_law(scn, "classical_symmetry", flow_slots=False)
    u = _named_field(scn, "u", "classical_symmetry")
    m = scn.dimension + 1
    component_max = [0.0] * m
    for p in _probe_points(scn, rng, cfg.get("points", 3)):
        res = classical_symmetry_residual(law, u, p)
        for nu in range(m):
            component_max[nu] = max(component_max[nu],
                                    abs(float(res[nu])))
    worst = max(component_max)
    return {"residual": component_max, "max_abs": worst}, worst


def _check_fit(scn, cfg, rng):
    if scn.flow_kind != "ansatz":
        raise ConfigError("fit: requires an 'ansatz' flow with parameters")
    law = _determine_law(scn, "fit")
    u = _named_field(scn, "u", "fit")
    if "grid" in cfg:
        axes = tuple(tuple(ax) for ax in cfg["grid"])
    else:
        axes = []
        for ax in scn.quadrature.axes:
            if not isinstance(ax, tuple):
                raise ConfigError(
                    "fit: give an explicit grid when quadrature axes are "
                    "pinned")
            lo, hi, _ = ax
            axes.append((lo, hi, 5))
        axes = tuple(axes)
    try:
        grid = Grid(axes)
    except ValueError as exc:
        raise ConfigError(f"fit.grid: {exc}") from None
    result = fit_symmetrizing_flow(
        law, scn.flow, [u], grid,
        tol=float(cfg.get("fit_tolerance", 1e-10)),
        max_iter=int(cfg.get("max_iter", 25)))
    measured = {"residual_norm": float(result.residual_norm),
                "status": result.status,
                "iterations": len(result.trace) - 1,
                "params": [float(v) for v in result.params]}
    return measured, float(result.residual_norm)


CHECKS = {
    "geometry_identities": (
        _check_geometry_identities,
        "determinant-derivative identity, cofactor agreement, metric "
        "determinant vs squared Jacobian"),
    "intrinsic_reduction": (
        _check_intrinsic_reduction,
        "comoving residual equals the composed fixed-frame residual"),
    "symmetry_defect": (
        _check_symmetry_defect,
        "normalized two-sided defect of the chosen symmetry variant"),
    "path_independence": (
        _check_path_independence,
        "straight and detour homotopies give the same work integral"),
    "stationarity": (
        _check_stationarity,
        "action derivative matches the residual pairing along directions"),
    "determining_residual": (
        _check_determining_residual,
        "pointwise residual of the flow-ansatz determining equations"),
    "classical_symmetry": (
        _check_classical_symmetry,
        "fixed-frame formal-symmetry residual of the law"),
    "fit": (
        _check_fit,
        "least-squares fit of the flow-ansatz parameters"),
}


def _run_check(scn, cfg, index):
    rng = np.random.default_rng((scn.seed, index))
    runner = CHECKS[cfg["name"]][0]
    start = time.perf_counter()
    try:
        measured, worst = runner(scn, cfg, rng)
        worst = float(worst)
        ok = worst <= cfg["tolerance"]
    except ConfigError:
        raise
    except ComovingError as exc:
        measured = {"error": f"{type(exc).__name__}: {exc}"}
        worst = None
        ok = False
    runtime = time.perf_counter() - start
    if cfg["expect"] == "fail":
        status = "info" if not ok else "fail"
    else:
        status = "pass" if ok else "fail"
    return {"name": cfg["name"], "status": status, "value": worst,
            "measured": measured, "tolerance": cfg["tolerance"],
            "expect": cfg["expect"], "runtime": round(runtime, 6)}


def run_scenario(scn, parallel=False):
    """Execute every check; returns the report mapping."""
    indexed = list(enumerate(scn.checks))
    if parallel and len(indexed) > 1:
        with ThreadPoolExecutor(max_workers=len(indexed)) as pool:
            records = list(pool.map(
                lambda pair: _run_check(scn, pair[1], pair[0]), indexed))
    else:
        records = [_run_check(scn, cfg, i) for i, cfg in indexed]
    return {
        "scenario": scn.echo,
        "checks": records,
        "environment": {"package": "comoving", "version": __version__,
                        "seed": scn.seed},
    }


def report_text(report):
    """Canonical JSON serialization (stable key order)."""
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def exit_code(report):
    bad = [rec for rec in report["checks"] if rec["status"] == "fail"]
    return 1 if bad else 0


def _summarize(report, stream):
    for rec in report["checks"]:
        shown = "n/a" if rec["value"] is None else f"{rec['value']:.3e}"
        print(f"[{rec['status']:>4}] {rec['name']:<22} "
              f"value={shown} tol={rec['tolerance']:.1e} "
              f"({rec['runtime']:.2f}s)", file=stream)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="comoving",
        description="Run declarative verification scenarios.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a scenario config")
    run_p.add_argument("config")
    run_p.add_argument("--report", default=None,
                       help="write the JSON report here instead of stdout")
    run_p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
    run_p.add_argument("--quad", type=int, default=None,
                       help="override integrated-axis quadrature counts")
    run_p.add_argument("--parallel", action="store_true",
                       help="run independent checks concurrently")

    sub.add_parser("list-checks", help="list known check names")

    val_p = sub.add_parser("validate", help="parse and validate a config")
    val_p.add_argument("config")

    args = parser.parse_args(argv)
    try:
        if args.command == "list-checks":
            for name in sorted(CHECKS):
                print(f"{name:<22} {CHECKS[name][1]}")
            return 0
        if args.command == "validate":
            scn = load_scenario(args.config)
            print(f"ok: {scn.name} ({len(scn.checks)} checks, "
                  f"dimension {scn.dimension})")
            return 0
        scn = load_scenario(args.config, seed_override=args.seed,
                            quad_override=args.quad)
        report = run_scenario(scn, parallel=args.parallel)
        text = report_text(report)
        if args.report is not None:
            Path(args.report).write_text(text)
            _summarize(report, sys.stdout)
        else:
            sys.stdout.write(text)
            _summarize(report, sys.stderr)
        return exit_code(report)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
