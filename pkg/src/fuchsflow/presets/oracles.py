"""Closed-form reference solutions: the Kummer series and the exact model
wave solution built from its two confluent-hypergeometric branches.

The series runs at a working precision chosen from |x| so that the huge
cancellation of the oscillatory regime (terms peak near e^|x|) never eats into
the requested accuracy; within a precision context the summation is
compensated and stops on the term ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath as mp
import numpy as np

__all__ = ["kummer_1f1", "model_wave_exact", "KummerDomainError"]

KUMMER_CAP = 600.0


class KummerDomainError(ValueError):
    pass


def _is_nonpositive_int(b: complex, tol: float = 1e-12) -> bool:
    return abs(b.imag) < tol and b.real <= 0.5 and abs(b.real - round(b.real)) < tol


def kummer_1f1(a, b, x) -> complex:
    """Confluent hypergeometric 1F1(a, b, x) by its Taylor series.

    Terms t_(n+1) = t_n * (a+n)/((b+n)(n+1)) * x are accumulated with
    compensated summation; the loop stops once three consecutive terms fall
    below 1e-14 of the running sum past the term-magnitude hump.  Working
    precision grows linearly with |x| to absorb cancellation.
    """
    a, b, x = complex(a), complex(b), complex(x)
    if _is_nonpositive_int(b):
        raise KummerDomainError(f"second parameter {b} is a nonpositive integer")
    if abs(x) > KUMMER_CAP:
        raise KummerDomainError(f"|x| = {abs(x):g} exceeds the series cap {KUMMER_CAP:g}")
    dps = 25 + int(0.5 * abs(x))
    with mp.workdps(dps):
        am, bm, xm = mp.mpc(a), mp.mpc(b), mp.mpc(x)
        term = mp.mpc(1)
        total = mp.mpc(0)
        comp = mp.mpc(0)  # compensated (Kahan) accumulator
        small_run = 0
        n = 0
        while True:
            yk = term - comp
            tk = total + yk
            comp = (tk - total) - yk
            total = tk
            # a nonpositive-integer numerator terminates the series exactly
            ratio_num = am + n
            if ratio_num == 0:
                break
            term = term * ratio_num / ((bm + n) * (n + 1)) * xm
            n += 1
            if abs(term) <= mp.mpf("1e-14") * max(abs(total), mp.mpf(1e-300)):
                small_run += 1
                if small_run >= 3 and n > abs(x):
                    break
            else:
                small_run = 0
            if n > 40000:
                raise KummerDomainError("series failed to converge")
        return complex(total)


@dataclass(frozen=True)
class ModelWaveValue:
    phi: complex
    dt_phi: complex


def model_wave_exact(ell: int, c, phi0, phi1, t: float, xi: float) -> ModelWaveValue:
    """Exact Fourier-mode solution of  phi'' + t^(2 ell) xi^2 phi
    + c t^(ell-1) (i xi) phi = 0  with data (phi0, phi1) at t = 0.

    Branch one is e^(-i Theta) 1F1((ell-c)/(2(ell+1)), ell/(ell+1), 2 i Theta);
    branch two (the velocity channel) is t e^(-i Theta) 1F1 with both
    parameters shifted, normalized so its t-derivative at 0 is one.  The time
    derivative uses the term-differentiated series via the contiguous relation
    d/dx 1F1(a, b, x) = (a/b) 1F1(a+1, b+1, x).
    """
    ell = int(ell)
    if ell < 1:
        raise ValueError("the model oracle needs a positive integer exponent")
    a1 = (ell - c) / (2 * (ell + 1))
    b1 = ell / (ell + 1)
    a2 = (ell - c + 2) / (2 * (ell + 1))
    b2 = (ell + 2) / (ell + 1)
    if t == 0.0:
        return ModelWaveValue(phi=complex(phi0), dt_phi=complex(phi1))
    theta = t ** (ell + 1) * xi / (ell + 1)
    x = 2j * theta
    phase = np.exp(-1j * theta)
    f1 = kummer_1f1(a1, b1, x)
    f2 = kummer_1f1(a2, b2, x)
    d_f1 = (a1 / b1) * kummer_1f1(a1 + 1, b1 + 1, x)
    d_f2 = (a2 / b2) * kummer_1f1(a2 + 1, b2 + 1, x)
    dtheta = t**ell * xi
    dx = 2j * dtheta
    branch1 = phase * f1
    d_branch1 = phase * (-1j * dtheta * f1 + dx * d_f1)
    branch2 = t * phase * f2
    d_branch2 = phase * f2 + t * phase * (-1j * dtheta * f2 + dx * d_f2)
    return ModelWaveValue(
        phi=phi0 * branch1 + phi1 * branch2,
        dt_phi=phi0 * d_branch1 + phi1 * d_branch2,
    )
