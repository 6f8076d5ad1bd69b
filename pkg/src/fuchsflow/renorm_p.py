"""Early-zone renormalization: commutator flow, order-m stack, Jordan factor.

Given the reduced system  dU/dz = (z^-1 B + R(z)) U  with B constant in Jordan
form and R a polyhomogeneous matrix of order a > -1, the order-m plan produces
diagonal corrections D^(1..m), correctors N^(1..m) and a remainder R^(m) of
order m(a+1)+a so that Q = I + sum N conjugates the system into

    d(QU)/dz = (z^-1 B + sum_k D^(k)) (QU) + R^(m) Q^-1 (QU).

Each corrector solves the commutator flow  dN/dz + [N, z^-1 B] = Y  exactly in
the expansion algebra; the integrating factor exp(-log z * B) then removes the
Fuchsian term, leaving an integrable right-hand side whose solutions have
finite limits at z = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Sequence

import numpy as np

from .phsym import (
    QC,
    LogDegreeCapExceeded,
    LogMonomial,
    PHExpansion,
    antiderivative,
    as_coeff,
    as_power,
    derivative,
    evaluate,
    truncate,
)

__all__ = [
    "JordanSpec",
    "PRenormPlan",
    "solve_commutator_flow",
    "build_p_renorm",
    "ep_factor",
    "select_m_p",
    "renormalized_p",
    "renormalized_p_inverse",
    "commutator_flow_residual",
    "stage_identity_residual",
    "render_plan",
]

ExpMatrix = List[List[PHExpansion]]


@dataclass(frozen=True)
class JordanSpec:
    """Ordered Jordan blocks (eigenvalue, size); the block matrix is upper
    bidiagonal with unit superdiagonal inside each block."""

    blocks: tuple

    def __post_init__(self):
        norm = tuple((as_coeff(e), int(s)) for e, s in self.blocks)
        if any(s <= 0 for _, s in norm):
            raise ValueError("block sizes must be positive")
        object.__setattr__(self, "blocks", norm)

    @property
    def size(self) -> int:
        return sum(s for _, s in self.blocks)

    def diag_entries(self) -> list:
        out = []
        for eig, s in self.blocks:
            out.extend([eig] * s)
        return out

    def super_entries(self) -> list:
        """super_entries()[i] is B[i, i+1] (1 inside a block, else 0)."""
        out = []
        for _, s in self.blocks:
            out.extend([1] * (s - 1))
            out.append(0)
        return out[:-1] if out else []

    def dense(self) -> np.ndarray:
        n = self.size
        out = np.zeros((n, n), dtype=complex)
        diag = self.diag_entries()
        sup = self.super_entries()
        for i in range(n):
            out[i, i] = diag[i].to_complex()
            if i + 1 < n and sup[i]:
                out[i, i + 1] = 1.0
        return out

    def spread(self) -> float:
        """max_{i,j} Re(B_ii - B_jj) >= 0."""
        res = [float(e.re) for e, _ in self.blocks]
        return max(res) - min(res)

    def max_block_size(self) -> int:
        return max(s for _, s in self.blocks)


def _zero_matrix(n: int) -> ExpMatrix:
    return [[PHExpansion.zero() for _ in range(n)] for _ in range(n)]


def mat_add(a: ExpMatrix, b: ExpMatrix) -> ExpMatrix:
    return [[a[i][j] + b[i][j] for j in range(len(a))] for i in range(len(a))]


def mat_sub(a: ExpMatrix, b: ExpMatrix) -> ExpMatrix:
    return [[a[i][j] - b[i][j] for j in range(len(a))] for i in range(len(a))]


def mat_mul(a: ExpMatrix, b: ExpMatrix) -> ExpMatrix:
    n = len(a)
    out = _zero_matrix(n)
    for i in range(n):
        for k in range(n):
            if a[i][k].is_zero():
                continue
            for j in range(n):
                if b[k][j].is_zero():
                    continue
                out[i][j] = out[i][j] + a[i][k] * b[k][j]
    return out


def mat_dz(a: ExpMatrix) -> ExpMatrix:
    return [[derivative(e) for e in row] for row in a]


def mat_eval(a: ExpMatrix, z: float) -> np.ndarray:
    n = len(a)
    out = np.zeros((n, n), dtype=complex)
    for i in range(n):
        for j in range(n):
            if a[i][j].terms:
                out[i, j] = evaluate(a[i][j], z)
    return out


def mat_truncate(a: ExpMatrix, cutoff) -> ExpMatrix:
    return [[truncate(e, cutoff) for e in row] for row in a]


def mat_compress(a: ExpMatrix, bits: int) -> ExpMatrix:
    return [[e.compress(bits) for e in row] for row in a]


def mat_is_zero(a: ExpMatrix) -> bool:
    return all(e.is_zero() for row in a for e in row)


def jordan_fuchsian_matrix(jordan: JordanSpec) -> ExpMatrix:
    """The symbolic matrix z^-1 B."""
    n = jordan.size
    diag = jordan.diag_entries()
    sup = jordan.super_entries()
    out = _zero_matrix(n)
    for i in range(n):
        if not diag[i].is_zero():
            out[i][i] = PHExpansion.monomial(diag[i], -1)
        if i + 1 < n and sup[i]:
            out[i][i + 1] = PHExpansion.monomial(1, -1)
    return out


# ---------------------------------------------------------------------------
# Commutator flow
# ---------------------------------------------------------------------------


def _solve_scalar_flow(rhs: PHExpansion, q: QC) -> PHExpansion:
    """Exact particular solution of dN/dz + q z^-1 N = rhs(z).

    Termwise: a term c z^alpha log^p maps, when alpha+1+q != 0, to
    z^(alpha+1) sum_k b_k log^(p-k) with b_0 = c/(alpha+1+q) and
    b_k = -(p-k+1) b_(k-1)/(alpha+1+q); the resonant case alpha+1+q = 0
    (decided exactly) integrates to c z^(alpha+1) log^(p+1)/(p+1), matching
    the basepoint-1 antiderivative convention.
    """
    out: list[LogMonomial] = []
    for t in rhs.terms:
        shift = QC(t.power + 1) + q
        if shift.is_zero():
            out.append(LogMonomial(t.coeff / (t.logpow + 1), t.power + 1, t.logpow + 1))
            continue
        coeff = t.coeff / shift
        for k in range(t.logpow + 1):
            out.append(LogMonomial(coeff, t.power + 1, t.logpow - k))
            if k < t.logpow:
                coeff = coeff * QC(-(t.logpow - k)) / shift
    order = None if rhs.order is None else rhs.order + 1
    return PHExpansion(out, order)


def solve_commutator_flow(
    y: ExpMatrix, jordan: JordanSpec, max_logpow: Optional[int] = None
) -> ExpMatrix:
    """Solve dN/dz + [N, z^-1 B] = Y exactly.

    Entries are filled bottom row first, left to right, then upward: the (i,j)
    equation couples only to the entry below (through the superdiagonal of B)
    and the entry to the left, so each right-hand side is already known.
    """
    n = jordan.size
    if len(y) != n:
        raise ValueError("matrix size does not match Jordan spec")
    cap = max_logpow if max_logpow is not None else 2 * n
    diag = jordan.diag_entries()
    sup = jordan.super_entries()
    nmat = _zero_matrix(n)
    for i in range(n - 1, -1, -1):
        for j in range(n):
            rhs = y[i][j]
            if i + 1 < n and sup[i]:
                rhs = rhs + nmat[i + 1][j].shifted(-1)
            if j - 1 >= 0 and sup[j - 1]:
                rhs = rhs - nmat[i][j - 1].shifted(-1)
            q = diag[j] - diag[i]
            sol = _solve_scalar_flow(rhs, q)
            if sol.max_logpow() > cap:
                raise LogDegreeCapExceeded(
                    sol.max_logpow(), cap, where=f"corrector entry ({i + 1},{j + 1})"
                )
            nmat[i][j] = sol
    return nmat


def commutator_flow_residual(nmat: ExpMatrix, y: ExpMatrix, jordan: JordanSpec) -> ExpMatrix:
    """dN/dz + [N, z^-1 B] - Y; empty for an exact solution."""
    bz = jordan_fuchsian_matrix(jordan)
    comm = mat_sub(mat_mul(nmat, bz), mat_mul(bz, nmat))
    return mat_sub(mat_add(mat_dz(nmat), comm), y)


# ---------------------------------------------------------------------------
# Order-m stack
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PRenormPlan:
    """Transformation stack for one frequency: diagonals D^(k), correctors
    N^(k), composite Q = I + sum N, remainder R^(m) with its order tag."""

    order: int
    jordan: JordanSpec
    a_p: Fraction
    d_stages: tuple  # tuple of ExpMatrix
    n_stages: tuple
    q_matrix: ExpMatrix
    remainder: ExpMatrix
    remainder_order: Fraction

    @property
    def n(self) -> int:
        return self.jordan.size

    def q_at(self, z: float) -> np.ndarray:
        return np.eye(self.n, dtype=complex) + sum(
            (mat_eval(nk, z) for nk in self.n_stages), np.zeros((self.n, self.n), complex)
        )

    def d_sum_at(self, z: float) -> np.ndarray:
        return sum(
            (mat_eval(dk, z) for dk in self.d_stages), np.zeros((self.n, self.n), complex)
        )

    def remainder_at(self, z: float) -> np.ndarray:
        return mat_eval(self.remainder, z)

    def conjugated_rhs_at(self, z: float) -> np.ndarray:
        """S(z) = E (sum D + R^(m) Q^-1) E^-1; integrable near 0 for valid m."""
        e, einv = ep_factor(self.jordan, z)
        core = self.d_sum_at(z)
        if self.order > 0 or not mat_is_zero(self.remainder):
            core = core + self.remainder_at(z) @ np.linalg.inv(self.q_at(z))
        return e @ core @ einv

    def corrector_sup(self, z_max: float) -> float:
        """max_k ||N^(k)(z)|| over (0, z_max]; positive powers peak at z_max."""
        worst = 0.0
        for nk in self.n_stages:
            worst = max(worst, float(np.linalg.norm(mat_eval(nk, z_max), 2)))
        return worst


def build_p_renorm(
    r_p: ExpMatrix,
    jordan: JordanSpec,
    m: int,
    *,
    a_p=None,
    log_cap: Optional[int] = None,
    power_cutoff=None,
    coeff_bits: Optional[int] = None,
) -> PRenormPlan:
    """Run the inductive diagonalization to order m.

    Stage k takes the diagonal of the running remainder as D^(k), solves the
    commutator flow for N^(k) with Y = D^(k) - R^(k-1), and updates
    R^(k) = N^(k) R - sum_{j<k} D^(j) N^(k) - D^(k) sum_{j<=k} N^(j).
    ``power_cutoff`` truncates stored expansions above the given z-power
    (legitimate: dropped action lands in the remainder, which only ever needs
    accuracy below the integrability threshold).
    """
    n = jordan.size
    if len(r_p) != n:
        raise ValueError("remainder matrix size does not match Jordan spec")
    if a_p is None:
        a_p = min(
            (e.min_power() for row in r_p for e in row if not e.is_zero()),
            default=Fraction(0),
        )
    a_p = as_power(a_p)

    def tidy(mat: ExpMatrix) -> ExpMatrix:
        if power_cutoff is not None:
            mat = mat_truncate(mat, power_cutoff)
        if coeff_bits is not None:
            mat = mat_compress(mat, coeff_bits)
        return mat

    r_run = tidy([row[:] for row in r_p])
    d_stages: list[ExpMatrix] = []
    n_stages: list[ExpMatrix] = []
    n_total = _zero_matrix(n)
    for k in range(1, m + 1):
        d_k = _zero_matrix(n)
        for i in range(n):
            d_k[i][i] = r_run[i][i]
        y = mat_sub(d_k, r_run)
        try:
            n_k = solve_commutator_flow(y, jordan, max_logpow=log_cap)
        except LogDegreeCapExceeded as exc:
            raise LogDegreeCapExceeded(exc.logpow, exc.cap, where=f"stage {k}: {exc.where}")
        n_k = tidy(n_k)
        n_total = mat_add(n_total, n_k)
        r_new = mat_mul(n_k, r_p)
        for d_prev in d_stages:
            r_new = mat_sub(r_new, mat_mul(d_prev, n_k))
        r_new = mat_sub(r_new, mat_mul(d_k, n_total))
        r_run = tidy(r_new)
        d_stages.append(d_k)
        n_stages.append(n_k)

    q = _zero_matrix(n)
    for i in range(n):
        q[i][i] = PHExpansion.const(1)
    q = mat_add(q, n_total)
    return PRenormPlan(
        order=m,
        jordan=jordan,
        a_p=a_p,
        d_stages=tuple(d_stages),
        n_stages=tuple(n_stages),
        q_matrix=q,
        remainder=r_run,
        remainder_order=m * (a_p + 1) + a_p,
    )


def stage_identity_residual(plan: PRenormPlan, r_p: ExpMatrix) -> ExpMatrix:
    """Residual of the defining identity for the final remainder:

    R^(m) = sum_k dN^(k)/dz + Q (z^-1 B + R) - (z^-1 B + sum_k D^(k)) Q.
    Empty when the plan is exact (no truncation/compression applied).
    """
    n = plan.n
    bz = jordan_fuchsian_matrix(plan.jordan)
    lhs = _zero_matrix(n)
    for nk in plan.n_stages:
        lhs = mat_add(lhs, mat_dz(nk))
    lhs = mat_add(lhs, mat_mul(plan.q_matrix, mat_add(bz, r_p)))
    rhs_coeff = mat_add(bz, _sum_mats(plan.d_stages, n))
    lhs = mat_sub(lhs, mat_mul(rhs_coeff, plan.q_matrix))
    return mat_sub(lhs, plan.remainder)


def _sum_mats(mats: Sequence[ExpMatrix], n: int) -> ExpMatrix:
    out = _zero_matrix(n)
    for m in mats:
        out = mat_add(out, m)
    return out


# ---------------------------------------------------------------------------
# Integrating factor and selection rule
# ---------------------------------------------------------------------------


def ep_factor(jordan: JordanSpec, z: float):
    """exp(-log z * B) and its inverse, blockwise closed form.

    Inside a block with eigenvalue b the (i, j >= i) entry is
    (-log z)^(j-i) z^-b / (j-i)!; the inverse flips both signs.
    """
    if not z > 0:
        raise ValueError("z must be positive")
    n = jordan.size
    e = np.zeros((n, n), dtype=complex)
    einv = np.zeros((n, n), dtype=complex)
    lz = math.log(z)
    k0 = 0
    for eig, s in jordan.blocks:
        b = eig.to_complex()
        zb = z ** (-b)
        zbi = z**b
        for r in range(s):
            fact = 1.0
            for c in range(r, s):
                p = c - r
                if p > 0:
                    fact *= p
                e[k0 + r, k0 + c] = (-lz) ** p * zb / fact
                einv[k0 + r, k0 + c] = lz**p * zbi / fact
        k0 += s
    return e, einv


def select_m_p(a_p, jordan: JordanSpec, margin: float = 0.05) -> int:
    """Smallest m with m(a_p+1) + a_p - spread > -1 + margin.

    The spread max Re(B_ii - B_jj) is the worst exponent shift the integrating
    factor applies to the conjugated remainder; the rule makes that remainder
    z-integrable on the early zone with the stated margin.
    """
    a = float(as_power(a_p))
    if a <= -1:
        raise ValueError("a_p must exceed -1")
    spread = jordan.spread()
    m = 0
    while m * (a + 1.0) + a - spread <= -1.0 + margin:
        m += 1
    return m


def renormalized_p(plan: PRenormPlan, jordan: JordanSpec, u_p: np.ndarray, z: float) -> np.ndarray:
    """The bounded unknown  E Q(z) U_P  on the early zone."""
    e, _ = ep_factor(jordan, z)
    return e @ plan.q_at(z) @ np.asarray(u_p, dtype=complex)


def renormalized_p_inverse(plan: PRenormPlan, jordan: JordanSpec, u_pz: np.ndarray, z: float) -> np.ndarray:
    _, einv = ep_factor(jordan, z)
    return np.linalg.solve(plan.q_at(z), einv @ np.asarray(u_pz, dtype=complex))


def render_plan(plan: PRenormPlan) -> str:
    """Structured textual dump of the plan for inspection and snapshots."""
    lines = [
        f"order m = {plan.order}",
        f"a_p = {plan.a_p}, remainder order tag = {plan.remainder_order}",
        f"jordan blocks = {[(str(e.to_complex()), s) for e, s in plan.jordan.blocks]}",
    ]
    for k, (dk, nk) in enumerate(zip(plan.d_stages, plan.n_stages), start=1):
        lines.append(f"stage {k}:")
        for label, mat in (("D", dk), ("N", nk)):
            for i, row in enumerate(mat):
                for j, e in enumerate(row):
                    if not e.is_zero():
                        lines.append(f"  {label}^({k})[{i + 1},{j + 1}] = {e!r}")
    lines.append("remainder R^(m):")
    for i, row in enumerate(plan.remainder):
        for j, e in enumerate(row):
            if not e.is_zero():
                lines.append(f"  R[{i + 1},{j + 1}] = {e!r}")
    return "\n".join(lines)
