"""Exact arithmetic on polyhomogeneous expansions in the rescaled time z.

An expansion is a finite sum of terms ``c * z**a * log(z)**p`` with complex
rational coefficient c, rational real exponent a and integer log-power p >= 0.
All ring operations and the antiderivative are exact, so algebraic identities
(e.g. that the antiderivative inverts d/dz) hold with literally empty residual
after normalization, not merely to rounding error.

Exactness is what makes resonance detection reliable: the borderline exponent
``a = -1`` in the antiderivative, and the eigenvalue-difference shifts that the
zone renormalization feeds through it, are decided by exact rational (complex
rational) comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Union

__all__ = [
    "QC",
    "LogMonomial",
    "PHExpansion",
    "LogDegreeCapExceeded",
    "as_power",
    "as_coeff",
    "combine",
    "antiderivative",
    "derivative",
    "evaluate",
    "truncate",
]

# Floats whose nearest small rational is this close are snapped to it, so that
# exponents entered as 0.3 or -1/3 land on the same lattice as exact input.
_POWER_SNAP_TOL = 1e-12


class LogDegreeCapExceeded(RuntimeError):
    """Raised when a resonance chain pushes a log-power past the configured cap."""

    def __init__(self, logpow: int, cap: int, where: str = ""):
        self.logpow = logpow
        self.cap = cap
        self.where = where
        msg = f"log-power {logpow} exceeds cap {cap}"
        if where:
            msg += f" ({where})"
        super().__init__(msg)


class QC:
    """Complex number with exact rational real and imaginary parts."""

    __slots__ = ("re", "im")

    def __init__(self, re=0, im=0):
        self.re = re if isinstance(re, Fraction) else Fraction(re)
        self.im = im if isinstance(im, Fraction) else Fraction(im)

    @staticmethod
    def from_value(v) -> "QC":
        if isinstance(v, QC):
            return v
        if isinstance(v, complex):
            return QC(Fraction(v.real), Fraction(v.imag))
        return QC(Fraction(v), Fraction(0))

    def __add__(self, o):
        o = QC.from_value(o)
        return QC(self.re + o.re, self.im + o.im)

    __radd__ = __add__

    def __neg__(self):
        return QC(-self.re, -self.im)

    def __sub__(self, o):
        o = QC.from_value(o)
        return QC(self.re - o.re, self.im - o.im)

    def __rsub__(self, o):
        return QC.from_value(o) - self

    def __mul__(self, o):
        o = QC.from_value(o)
        return QC(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)

    __rmul__ = __mul__

    def __truediv__(self, o):
        o = QC.from_value(o)
        d = o.re * o.re + o.im * o.im
        if d == 0:
            raise ZeroDivisionError("division by exact zero")
        return QC((self.re * o.re + self.im * o.im) / d, (self.im * o.re - self.re * o.im) / d)

    def __eq__(self, o):
        o = QC.from_value(o)
        return self.re == o.re and self.im == o.im

    def __hash__(self):
        return hash((self.re, self.im))

    def is_zero(self) -> bool:
        return self.re == 0 and self.im == 0

    def conj(self) -> "QC":
        return QC(self.re, -self.im)

    def to_complex(self) -> complex:
        return complex(self.re) + 1j * complex(self.im)

    def round_bits(self, bits: int) -> "QC":
        """Round both parts to dyadic rationals with ~bits of precision."""

        def rb(x: Fraction) -> Fraction:
            if x == 0:
                return x
            # round to nearest multiple of 2**e where 2**e ~ |x| * 2**-bits
            m = abs(x)
            e = m.numerator.bit_length() - m.denominator.bit_length() - bits
            step = Fraction(1)
            if e >= 0:
                step = Fraction(2**e)
            else:
                step = Fraction(1, 2**(-e))
            return Fraction(round(x / step)) * step

        return QC(rb(self.re), rb(self.im))

    def __repr__(self):
        return f"QC({self.re}, {self.im})"


def as_power(x) -> Fraction:
    """Coerce an exponent to an exact Fraction, snapping near-rational floats."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x)
    if isinstance(x, float):
        exact = Fraction(x)
        snapped = exact.limit_denominator(10**9)
        if abs(float(snapped) - x) <= _POWER_SNAP_TOL * max(1.0, abs(x)):
            return snapped
        return exact
    raise TypeError(f"cannot interpret {x!r} as an exponent")


def as_coeff(x) -> QC:
    return QC.from_value(x)


@dataclass(frozen=True)
class LogMonomial:
    """One term ``coeff * z**power * log(z)**logpow``."""

    coeff: QC
    power: Fraction
    logpow: int

    def __post_init__(self):
        if self.logpow < 0:
            raise ValueError("logpow must be nonnegative")

    def eval(self, z: float) -> complex:
        lz = math.log(z)
        return self.coeff.to_complex() * z ** float(self.power) * lz**self.logpow


class PHExpansion:
    """Normalized finite polyhomogeneous expansion.

    ``terms`` is sorted by (power, logpow) with no duplicate keys and no zero
    coefficients.  ``order`` is an optional validity threshold: the expansion
    represents its function only modulo terms of z-power >= order (None means
    the representation is exact).
    """

    __slots__ = ("terms", "order")

    def __init__(self, terms: Iterable[LogMonomial] = (), order: Optional[Fraction] = None):
        merged: dict = {}
        for t in terms:
            key = (t.power, t.logpow)
            if key in merged:
                merged[key] = merged[key] + t.coeff
            else:
                merged[key] = t.coeff
        out = []
        for (power, logpow), c in merged.items():
            if not c.is_zero():
                if order is not None and power >= order:
                    continue
                out.append(LogMonomial(c, power, logpow))
        out.sort(key=lambda t: (t.power, t.logpow))
        self.terms = tuple(out)
        self.order = order

    # -- constructors ------------------------------------------------------

    @staticmethod
    def zero(order: Optional[Fraction] = None) -> "PHExpansion":
        return PHExpansion((), order)

    @staticmethod
    def monomial(coeff, power=0, logpow: int = 0) -> "PHExpansion":
        c = as_coeff(coeff)
        if c.is_zero():
            return PHExpansion.zero()
        return PHExpansion((LogMonomial(c, as_power(power), logpow),))

    @staticmethod
    def const(coeff) -> "PHExpansion":
        return PHExpansion.monomial(coeff, 0, 0)

    # -- inspection --------------------------------------------------------

    def is_zero(self) -> bool:
        return not self.terms

    def min_power(self) -> Optional[Fraction]:
        return self.terms[0].power if self.terms else None

    def max_power(self) -> Optional[Fraction]:
        return self.terms[-1].power if self.terms else None

    def max_logpow(self) -> int:
        return max((t.logpow for t in self.terms), default=0)

    def sup_norm_hint(self, z: float) -> float:
        """Sum of term magnitudes at z; a cheap scale for relative residuals."""
        return sum(abs(t.eval(z)) for t in self.terms)

    # -- arithmetic --------------------------------------------------------

    def _merged_order(self, other: "PHExpansion") -> Optional[Fraction]:
        if self.order is None:
            return other.order
        if other.order is None:
            return self.order
        return min(self.order, other.order)

    def __add__(self, other: "PHExpansion") -> "PHExpansion":
        return PHExpansion(self.terms + other.terms, self._merged_order(other))

    def __sub__(self, other: "PHExpansion") -> "PHExpansion":
        return self + other.scaled(-1)

    def scaled(self, c) -> "PHExpansion":
        c = as_coeff(c)
        if c.is_zero():
            return PHExpansion.zero(self.order)
        return PHExpansion(
            tuple(LogMonomial(t.coeff * c, t.power, t.logpow) for t in self.terms), self.order
        )

    def shifted(self, dpower) -> "PHExpansion":
        """Multiply by z**dpower."""
        dp = as_power(dpower)
        order = None if self.order is None else self.order + dp
        return PHExpansion(
            tuple(LogMonomial(t.coeff, t.power + dp, t.logpow) for t in self.terms), order
        )

    def __mul__(self, other: "PHExpansion") -> "PHExpansion":
        order = _product_order(self, other)
        prod = []
        for a in self.terms:
            for b in other.terms:
                prod.append(LogMonomial(a.coeff * b.coeff, a.power + b.power, a.logpow + b.logpow))
        return PHExpansion(prod, order)

    def compress(self, bits: int) -> "PHExpansion":
        """Round coefficients to dyadics with ~bits precision (size control)."""
        return PHExpansion(
            tuple(LogMonomial(t.coeff.round_bits(bits), t.power, t.logpow) for t in self.terms),
            self.order,
        )

    def __eq__(self, other):
        return isinstance(other, PHExpansion) and self.terms == other.terms

    def __hash__(self):
        return hash(self.terms)

    def __repr__(self):
        if not self.terms:
            return "PH(0)"
        bits = []
        for t in self.terms:
            c = t.coeff.to_complex()
            s = f"({c.real:g}{c.imag:+g}i)" if c.imag else f"{c.real:g}"
            if t.power:
                s += f"*z^{t.power}"
            if t.logpow:
                s += f"*log^{t.logpow}"
            bits.append(s)
        tail = "" if self.order is None else f" + O(z^{self.order})"
        return " + ".join(bits) + tail


def _product_order(a: PHExpansion, b: PHExpansion) -> Optional[Fraction]:
    cands = []
    if a.order is not None:
        bp = b.min_power()
        cands.append(a.order + (bp if bp is not None else Fraction(0)))
        if b.order is not None:
            cands.append(a.order + b.order)
    if b.order is not None:
        ap = a.min_power()
        cands.append(b.order + (ap if ap is not None else Fraction(0)))
    return min(cands) if cands else None


def combine(lhs: PHExpansion, rhs: Optional[PHExpansion] = None, mode: str = "add", factor=None) -> PHExpansion:
    """Spec-level entry point for the closed algebra: add, multiply, scale."""
    if mode == "add":
        assert rhs is not None
        return lhs + rhs
    if mode == "multiply":
        assert rhs is not None
        return lhs * rhs
    if mode == "scale":
        return lhs.scaled(factor)
    raise ValueError(f"unknown combine mode {mode!r}")


def _antider_term(c: QC, a: Fraction, p: int) -> list[LogMonomial]:
    """Exact antiderivative of c * z**a * log(z)**p in dz.

    For a != -1 the closed form z**(a+1) * sum_k (-1)^k p!/(p-k)! /(a+1)^(k+1)
    * log**(p-k) is anchored so that it vanishes at 0 (a > -1) or at infinity
    (a < -1).  For a = -1 the antiderivative is log**(p+1)/(p+1), anchored at
    z = 1, and raises the log degree by one.
    """
    if a == -1:
        return [LogMonomial(c / (p + 1), Fraction(0), p + 1)]
    out = []
    denom = QC(a + 1)
    coeff = c / denom
    for k in range(p + 1):
        out.append(LogMonomial(coeff, a + 1, p - k))
        if k < p:
            coeff = coeff * QC(-(p - k)) / denom
    return out


def antiderivative(g: PHExpansion) -> PHExpansion:
    """The exact z-antiderivative; d/dz(antiderivative(g)) == g termwise."""
    out: list[LogMonomial] = []
    for t in g.terms:
        out.extend(_antider_term(t.coeff, t.power, t.logpow))
    order = None if g.order is None else g.order + 1
    return PHExpansion(out, order)


def derivative(e: PHExpansion) -> PHExpansion:
    out = []
    for t in e.terms:
        if t.power != 0:
            out.append(LogMonomial(t.coeff * QC(t.power), t.power - 1, t.logpow))
        if t.logpow > 0:
            out.append(LogMonomial(t.coeff * QC(t.logpow), t.power - 1, t.logpow - 1))
    order = None if e.order is None else e.order - 1
    return PHExpansion(out, order)


def evaluate(e: PHExpansion, z: float) -> complex:
    if not z > 0:
        raise ValueError(f"evaluation requires z > 0, got {z}")
    return sum((t.eval(z) for t in e.terms), 0j)


def truncate(e: PHExpansion, max_power) -> PHExpansion:
    """Drop terms with power > max_power; record the dropped leading order."""
    mp = as_power(max_power)
    kept = tuple(t for t in e.terms if t.power <= mp)
    dropped = [t.power for t in e.terms if t.power > mp]
    if dropped:
        order = min(dropped)
        if e.order is not None:
            order = min(order, e.order)
    else:
        order = e.order
    return PHExpansion(kept, order)
