"""Shared builders for randomized flows, perturbations, and points."""

import numpy as np

from comoving.dual import cos, sin
from comoving.geometry import FlowMap, FlowPerturbation


def random_point(rng, dim, scale=0.5):
    return [float(c) for c in rng.uniform(-scale, scale, size=dim + 1)]


def _wavy_component(rng, m, amplitude, base_axis=None):
    a1, a2 = rng.uniform(-amplitude, amplitude, size=2)
    w = rng.uniform(0.3, 1.0, size=m)
    v = rng.uniform(0.3, 1.0, size=m)
    c1, c2 = rng.uniform(0.0, 2.0 * np.pi, size=2)

    def comp(s, a1=a1, a2=a2, w=w, v=v, c1=c1, c2=c2, axis=base_axis):
        phase1 = c1
        phase2 = c2
        for k in range(m):
            phase1 = phase1 + w[k] * s[k]
            phase2 = phase2 + v[k] * s[k]
        wave = a1 * sin(phase1) + a2 * cos(phase2)
        return wave if axis is None else s[axis] + wave

    return comp


def random_flow(rng, dim, amplitude=None, time_identity=False):
    """Identity plus small smooth waves: invertible on moderate domains."""
    m = dim + 1
    if amplitude is None:
        amplitude = 0.08 if dim < 3 else 0.04
    comps = []
    for mu in range(m):
        if mu == 0 and time_identity:
            comps.append(lambda s: s[0])
        else:
            comps.append(_wavy_component(rng, m, amplitude, base_axis=mu))
    return FlowMap(dim, comps, time_identity=time_identity)


def random_perturbation(rng, dim, amplitude=1.0, time_fixed=False):
    m = dim + 1
    comps = []
    for mu in range(m):
        if mu == 0 and time_fixed:
            comps.append(lambda s: 0.0)
        else:
            comps.append(_wavy_component(rng, m, amplitude))
    return FlowPerturbation(dim, comps)
