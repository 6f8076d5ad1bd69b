"""Shared helpers for the preset constructors."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np

from ..sysmodel import ScaleProfile, SystemBundle, ZoneParams, zone_of

__all__ = ["Poly", "as_poly", "direction_grid", "measure_izone_bound",
           "measure_growth_bound", "finalize_bundle"]


@dataclass(frozen=True)
class Poly:
    """Polynomial coefficient function of t with exact Taylor data at 0."""

    coeffs: tuple

    def __call__(self, t: float) -> complex:
        acc = 0.0 + 0.0j
        for c in reversed(self.coeffs):
            acc = acc * t + complex(c)
        return acc

    def deriv(self) -> "Poly":
        return Poly(tuple(k * c for k, c in enumerate(self.coeffs) if k >= 1))

    def at_zero(self) -> complex:
        return complex(self.coeffs[0]) if self.coeffs else 0.0 + 0.0j

    def is_constant(self) -> bool:
        return all(c == 0 for c in self.coeffs[1:])

    def taylor(self) -> tuple:
        return self.coeffs


def as_poly(x) -> Poly:
    if isinstance(x, Poly):
        return x
    if isinstance(x, (list, tuple)):
        return Poly(tuple(x))
    return Poly((x,))


def direction_grid(d: int, seed: int = 5) -> list:
    """2 d^2 unit directions: the signed axes plus seeded random fill."""
    dirs = []
    eye = np.eye(d)
    for k in range(d):
        dirs.append(eye[k].copy())
        dirs.append(-eye[k].copy())
    rng = np.random.default_rng(seed)
    while len(dirs) < 2 * d * d:
        v = rng.normal(size=d)
        dirs.append(v / np.linalg.norm(v))
    return [np.asarray(v, dtype=float) for v in dirs[: max(2 * d * d, 2)]]


def measure_izone_bound(bundle: SystemBundle, margin: float = 2.0) -> float:
    """Coarse sup of |A_U|/fac over the intermediate zone, with margin."""
    scale, zones = bundle.scale, bundle.zones
    worst = 0.0
    for mag in np.geomspace(0.5, 1e4, 12):
        for v in direction_grid(scale.d)[:4]:
            xi = mag * v
            fac = scale.zfac(xi)
            for z in np.geomspace(zones.rho0, 1 / zones.rho0, 9):
                t = z / fac
                if t > scale.T:
                    continue
                a = bundle.u_system(xi, "I")(t)
                worst = max(worst, float(np.linalg.norm(a, 2)) / fac)
    return margin * worst


def measure_growth_bound(bundle: SystemBundle, use_extremes: bool) -> float:
    """Grid bound c on |Re b| growth: sup of |Re diag B_H| (or of the group
    extremes) over the late zone sample grid."""
    from ..renorm_h import group_diagonal_part, hermitian_extremes

    scale, zones = bundle.scale, bundle.zones
    part = bundle.partition_hint
    worst = 0.0
    for mag in np.geomspace(10.0, 1e4, 7):
        for v in direction_grid(scale.d)[:4]:
            xi = mag * v
            fac = scale.zfac(xi)
            t_h = 1.0 / (zones.rho0 * fac)
            if t_h >= scale.T:
                continue
            for t in np.geomspace(t_h, scale.T, 9):
                b = np.asarray(bundle.hzone.b_h(t, xi), dtype=complex)
                if use_extremes and part is not None:
                    bg = group_diagonal_part(b, part)
                    plus, minus = hermitian_extremes(bg, part)
                    worst = max(worst, float(np.max(np.abs(np.diag(plus)))),
                                float(np.max(np.abs(np.diag(minus)))))
                else:
                    worst = max(worst, float(np.max(np.abs(np.real(np.diag(b))))))
    return worst


def finalize_bundle(bundle: SystemBundle) -> SystemBundle:
    """Fill measured constants (intermediate-zone bound, growth bound)."""
    b = replace(bundle, izone_bound=measure_izone_bound(bundle))
    part = b.partition_hint
    use_ext = part is not None and not part.is_singletons()
    extras = dict(b.extras)
    extras["b_h_growth_bound"] = measure_growth_bound(b, use_ext)
    return replace(b, extras=extras)
