"""Analytic signed-distance fields with the same evaluation surface as SdfNetwork.

Anything with ``forward(p)`` and ``value_and_jacobian(p)`` can be handed to the
iso-point sampler, validation and mesh extraction.
"""
from __future__ import annotations

import numpy as np


class AnalyticField:
    def __call__(self, p):
        return self.forward(p)

    def jacobian(self, p):
        return self.value_and_jacobian(p)[1]

    def forward(self, p):
        return self.value_and_jacobian(p)[0]


class SphereField(AnalyticField):
    def __init__(self, radius=1.0, center=(0.0, 0.0, 0.0)):
        self.radius = float(radius)
        self.center = np.asarray(center, float)

    def value_and_jacobian(self, p):
        d = np.asarray(p, float) - self.center
        r = np.linalg.norm(d, axis=-1)
        J = d / np.maximum(r, 1e-300)[..., None]
        return r - self.radius, J


class PlaneField(AnalyticField):
    """``f(p) = n . p - offset`` for a unit normal ``n``."""

    def __init__(self, normal=(0.0, 0.0, 1.0), offset=0.0):
        n = np.asarray(normal, float)
        self.normal = n / np.linalg.norm(n)
        self.offset = float(offset)

    def value_and_jacobian(self, p):
        p = np.asarray(p, float)
        f = p @ self.normal - self.offset
        return f, np.broadcast_to(self.normal, p.shape).copy()


class BoxField(AnalyticField):
    def __init__(self, half_extents=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)):
        self.half = np.asarray(half_extents, float)
        self.center = np.asarray(center, float)

    def value_and_jacobian(self, p):
        d = np.asarray(p, float) - self.center
        q = np.abs(d) - self.half
        pos = np.maximum(q, 0.0)
        out_norm = np.linalg.norm(pos, axis=-1)
        inside = out_norm <= 0
        f = np.where(inside, q.max(axis=-1), out_norm)
        sgn = np.where(d >= 0, 1.0, -1.0)
        g_out = sgn * pos / np.maximum(out_norm, 1e-300)[..., None]
        axis = np.argmax(q, axis=-1)
        g_in = np.zeros_like(d)
        np.put_along_axis(g_in, axis[..., None], np.take_along_axis(sgn, axis[..., None], -1), -1)
        J = np.where(inside[..., None], g_in, g_out)
        return f, J


class ScaledField(AnalyticField):
    """``c * field`` (for homogeneity checks)."""

    def __init__(self, field, c):
        self.field = field
        self.c = float(c)

    def value_and_jacobian(self, p):
        f, J = self.field.value_and_jacobian(p)
        return self.c * f, self.c * J


def field_for_surface(surface):
    """Exact SDF field for analytic primitives, or ``None``."""
    kind = getattr(surface, "kind", None)
    if kind == "sphere":
        return SphereField(surface.radius, surface.center)
    if kind == "box":
        return BoxField(surface.half, surface.center)
    return None
