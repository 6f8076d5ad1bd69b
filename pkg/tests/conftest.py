"""Shared synthetic fixtures: a minimal scalar bundle exercising the early
zone machinery without any preset overhead."""

from fractions import Fraction

import numpy as np
import pytest

from fuchsflow.phsym import PHExpansion
from fuchsflow.renorm_p import JordanSpec
from fuchsflow.sysmodel import (
    CutoffProfile,
    HZoneData,
    PZoneData,
    ScaleProfile,
    SystemBundle,
    WeightSpec,
    ZoneParams,
)


def make_scalar_bundle(ell=Fraction(0), rho0=0.1, T=1.0, r_coeff=0.5, r_power=Fraction(1, 2), b_eig=0):
    """One-component system dU/dz = (z^-1 b + c z^a) U with trivial late zone."""
    scale = ScaleProfile(d=1, ell=(ell,), T=T)
    zones = ZoneParams(rho0)
    jordan = JordanSpec(((b_eig, 1),))

    def r_p(xi):
        return [[PHExpansion.monomial(r_coeff, r_power)]]

    pzone = PZoneData(
        m_p=lambda xi: np.eye(1, dtype=complex),
        m_p_inv=lambda xi: np.eye(1, dtype=complex),
        jordan=jordan,
        r_p=r_p,
        a_p=Fraction(r_power),
    )
    hzone = HZoneData(
        m_h=lambda t, xi: np.eye(1, dtype=complex),
        m_h_inv=lambda t, xi: np.eye(1, dtype=complex),
        d_h=lambda t, xi: np.array([1.0]),
        b_h=lambda t, xi: np.zeros((1, 1), dtype=complex),
        r_h=lambda t, xi: np.zeros((1, 1), dtype=complex),
        a_h=-2.0,
    )

    def phys_system(xi, zone):
        fac = scale.zfac(xi)
        b = complex(b_eig)

        def coeff(t):
            z = fac * t
            return np.array([[(b / z + r_coeff * z ** float(r_power)) * fac]], dtype=complex)

        return coeff

    return SystemBundle(
        name="scalar-synthetic",
        n=1,
        scale=scale,
        zones=zones,
        pzone=pzone,
        hzone=hzone,
        izone_bound=10.0,
        cutoff=CutoffProfile(rho0),
        weight=WeightSpec(powers=(0,), t_inverse=False),
        phys_system=phys_system,
        suggested_m_p=0,
    )


@pytest.fixture
def scalar_bundle():
    return make_scalar_bundle()
