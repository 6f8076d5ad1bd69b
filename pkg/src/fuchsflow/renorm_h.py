"""Late-zone renormalization: speed partitions, algebraic diagonalization,
quadrature integrating factors, and the one-sided factors for systems whose
characteristic speeds are not uniformly separated.

On the hyperbolic zone the reduced system reads (in the rescaled time z)

    dU/dz = (i Zc D + z^-1 B + R) U,

with D real diagonal and Zc the rescaled degeneracy.  The stage-k corrector is
*algebraic*: off-group entries of the running remainder are divided by
i Zc (D_ii - D_jj), gaining one power of the degeneracy per stage.  The group
diagonal Fuchsian part is then removed by the integrating factor exp(-b) with
b the log-time quadrature of the diagonal of B -- or, for the one-sided
forward/backward estimates, of the extreme eigenvalues of the Hermitian parts
of the groups of B.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "SpeedPartition",
    "HRenormPlan",
    "EHFactor",
    "SemiStrictnessError",
    "PartitionGapError",
    "QuadratureError",
    "check_semi_strict",
    "speed_partition",
    "build_h_renorm",
    "hermitian_extremes",
    "eh_factor",
    "select_m_h",
    "renormalized_h",
    "is_reversible",
    "group_diagonal_part",
    "adaptive_log_quadrature",
]


class SemiStrictnessError(RuntimeError):
    pass


class PartitionGapError(RuntimeError):
    pass


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class SpeedPartition:
    """Partition of component indices into groups of non-separated speeds."""

    groups: tuple  # tuple of frozensets
    gap: float  # minimum cross-group speed gap found on the grid

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(frozenset(g) for g in self.groups))

    @property
    def n(self) -> int:
        return sum(len(g) for g in self.groups)

    def group_of(self) -> np.ndarray:
        out = np.empty(self.n, dtype=int)
        for gi, g in enumerate(self.groups):
            for i in g:
                out[i] = gi
        return out

    def same_group_mask(self) -> np.ndarray:
        g = self.group_of()
        return g[:, None] == g[None, :]

    @staticmethod
    def singletons(n: int, gap: float) -> "SpeedPartition":
        return SpeedPartition(tuple(frozenset((i,)) for i in range(n)), gap)

    def is_singletons(self) -> bool:
        return all(len(g) == 1 for g in self.groups)


def check_semi_strict(d_h: Callable, grid: Sequence, min_gap: float = 1e-6) -> float:
    """Minimum pairwise speed gap over the grid, reduced by a 0.9 safety
    factor; raises SemiStrictnessError if any pair falls below ``min_gap``."""
    gap = math.inf
    for (t, xi) in grid:
        d = np.asarray(d_h(t, xi), dtype=float)
        diff = np.abs(d[:, None] - d[None, :])
        np.fill_diagonal(diff, math.inf)
        gap = min(gap, float(diff.min()))
    if not math.isfinite(gap) or gap < min_gap:
        raise SemiStrictnessError(f"speeds are not uniformly separated (min gap {gap:g})")
    return 0.9 * gap


def speed_partition(d_h: Callable, grid: Sequence, gap_threshold: float) -> SpeedPartition:
    """Groups = connected components of the graph joining pairs whose minimum
    grid gap is below the threshold; the returned gap is the smallest
    cross-group separation seen on the grid."""
    first = np.asarray(d_h(*grid[0]), dtype=float)
    n = len(first)
    min_gap = np.full((n, n), math.inf)
    for (t, xi) in grid:
        d = np.asarray(d_h(t, xi), dtype=float)
        min_gap = np.minimum(min_gap, np.abs(d[:, None] - d[None, :]))
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if min_gap[i, j] < gap_threshold:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[ri] = rj
    comp: dict = {}
    for i in range(n):
        comp.setdefault(find(i), set()).add(i)
    groups = tuple(frozenset(g) for g in sorted(comp.values(), key=min))
    cross = math.inf
    for gi, ga in enumerate(groups):
        for gb in groups[gi + 1 :]:
            for i in ga:
                for j in gb:
                    cross = min(cross, float(min_gap[i, j]))
    return SpeedPartition(groups, cross if math.isfinite(cross) else 0.0)


def group_diagonal_part(w: np.ndarray, part: SpeedPartition) -> np.ndarray:
    return np.where(part.same_group_mask(), np.asarray(w, dtype=complex), 0.0)


def hermitian_extremes(w: np.ndarray, part: SpeedPartition, tol: float = 1e-10):
    """Per group: extreme eigenvalues of the Hermitian part of the group block,
    broadcast to the group's diagonal positions.  Input must be group-diagonal."""
    w = np.asarray(w, dtype=complex)
    off = np.where(part.same_group_mask(), 0.0, np.abs(w))
    scale = max(float(np.max(np.abs(w))) if w.size else 0.0, 1.0)
    if off.size and float(np.max(off)) > tol * scale:
        raise PartitionGapError(
            f"matrix is not group-diagonal (off-group magnitude {float(np.max(off)):g})"
        )
    n = part.n
    w_plus = np.zeros(n)
    w_minus = np.zeros(n)
    ws = 0.5 * (w + w.conj().T)
    for g in part.groups:
        idx = sorted(g)
        ev = np.linalg.eigvalsh(ws[np.ix_(idx, idx)])
        for i in idx:
            w_plus[i] = ev[-1]
            w_minus[i] = ev[0]
    return np.diag(w_plus), np.diag(w_minus)


# ---------------------------------------------------------------------------
# Higher-order algebraic stack
# ---------------------------------------------------------------------------


@dataclass
class HRenormPlan:
    """Order-m algebraic stack at fixed late-zone data.

    All stage quantities are evaluated on demand at (t, xi); the running
    remainder's z-derivative terms use 4th-order finite differences in log t,
    with the recursion memoized per (stage, t) for one frequency at a time.
    """

    order: int
    part: SpeedPartition
    hdata: object  # HZoneData: b_h, r_h, d_h callables
    zfac: Callable  # xi -> rescaled frequency measure
    zc: Callable  # (t, xi) -> rescaled degeneracy
    remainder_order: float
    gap_tol: float = 1e-12
    fd_rel_step: float = 3e-4
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.part.n

    # -- recursion ----------------------------------------------------------

    def _key(self, kind, k, t, xi):
        return (kind, k, round(t, 15), tuple(np.asarray(xi).ravel().tolist()))

    def r_stage(self, k: int, t: float, xi) -> np.ndarray:
        """Running remainder R^(k); R^(0) = z^-1 B + R."""
        key = self._key("r", k, t, xi)
        if key in self._cache:
            return self._cache[key]
        if k == 0:
            z = self.zfac(xi) * t
            out = np.asarray(self.hdata.b_h(t, xi), dtype=complex) / z + np.asarray(
                self.hdata.r_h(t, xi), dtype=complex
            )
        else:
            n_k = self.n_stage(k, t, xi)
            d_k = self.d_stage(k, t, xi)
            out = self._dz_n_stage(k, t, xi) + n_k @ self.r_stage(0, t, xi)
            for j in range(1, k):
                out = out - self.d_stage(j, t, xi) @ n_k
            acc = np.zeros((self.n, self.n), dtype=complex)
            for j in range(1, k + 1):
                acc = acc + self.n_stage(j, t, xi)
            out = out - d_k @ acc
        self._cache[key] = out
        if len(self._cache) > 4096:
            self._cache.clear()
        return out

    def d_stage(self, k: int, t: float, xi) -> np.ndarray:
        return group_diagonal_part(self.r_stage(k - 1, t, xi), self.part)

    def n_stage(self, k: int, t: float, xi) -> np.ndarray:
        r_prev = self.r_stage(k - 1, t, xi)
        zc = self.zc(t, xi)
        d = np.asarray(self.hdata.d_h(t, xi), dtype=float)
        denom = 1j * zc * (d[:, None] - d[None, :])
        same = self.part.same_group_mask()
        out = np.zeros((self.n, self.n), dtype=complex)
        for i in range(self.n):
            for j in range(self.n):
                if same[i, j]:
                    continue
                if abs(denom[i, j]) < self.gap_tol:
                    raise PartitionGapError(
                        f"vanishing cross-group gap for pair ({i + 1},{j + 1}) "
                        f"at t={t:g}: |i Zc (D_ii - D_jj)| = {abs(denom[i, j]):g}"
                    )
                out[i, j] = r_prev[i, j] / denom[i, j]
        return out

    def _dz_n_stage(self, k: int, t: float, xi) -> np.ndarray:
        """d/dz N^(k) by 4th-order central differences in s = log t."""
        h = self.fd_rel_step
        vals = [self.n_stage(k, t * math.exp(j * h), xi) for j in (-2, -1, 1, 2)]
        ds = (vals[0] - 8 * vals[1] + 8 * vals[2] - vals[3]) / (12 * h)
        # d/dz = (zfac t)^-1 d/ds
        return ds / (self.zfac(xi) * t)

    # -- aggregates ---------------------------------------------------------

    def q_at(self, t: float, xi) -> np.ndarray:
        out = np.eye(self.n, dtype=complex)
        for k in range(1, self.order + 1):
            out = out + self.n_stage(k, t, xi)
        return out

    def d_sum_at(self, t: float, xi) -> np.ndarray:
        out = np.zeros((self.n, self.n), dtype=complex)
        for k in range(1, self.order + 1):
            out = out + self.d_stage(k, t, xi)
        return out

    def remainder_at(self, t: float, xi) -> np.ndarray:
        return self.r_stage(self.order, t, xi)

    def stage_identity_residual(self, t: float, xi) -> float:
        """Worst relative residual of R^(k-1) - D^(k) + [N^(k), i Zc D] over
        stages k <= m; zero up to roundoff by construction of N^(k)."""
        worst = 0.0
        zc = self.zc(t, xi)
        dmat = np.diag(np.asarray(self.hdata.d_h(t, xi), dtype=float)).astype(complex)
        for k in range(1, self.order + 1):
            r_prev = self.r_stage(k - 1, t, xi)
            d_k = self.d_stage(k, t, xi)
            n_k = self.n_stage(k, t, xi)
            comm = n_k @ (1j * zc * dmat) - (1j * zc * dmat) @ n_k
            resid = r_prev - d_k + comm
            scale = max(float(np.linalg.norm(r_prev, 2)), 1e-300)
            worst = max(worst, float(np.linalg.norm(resid, 2)) / scale)
        return worst

    def corrector_sup(self, t: float, xi) -> float:
        return max(
            float(np.linalg.norm(self.n_stage(k, t, xi), 2))
            for k in range(1, self.order + 1)
        )


def build_h_renorm(hdata, part: SpeedPartition, m: int, *, scale, ell_star=None) -> HRenormPlan:
    """Assemble the order-m late-zone stack for the given zone data.

    ``scale`` supplies the rescaled frequency measure and degeneracy; the
    remainder order tag is -m(l*+1)-1.
    """
    if m < 1:
        raise ValueError("the late-zone stack starts at order 1")
    lstar = float(ell_star if ell_star is not None else scale.ell_star)

    def zc(t, xi):
        return scale.hyp(t, xi) / scale.zfac(xi)

    return HRenormPlan(
        order=m,
        part=part,
        hdata=hdata,
        zfac=scale.zfac,
        zc=zc,
        remainder_order=-m * (lstar + 1.0) - 1.0,
    )


# ---------------------------------------------------------------------------
# Integrating factors
# ---------------------------------------------------------------------------


def adaptive_log_quadrature(f: Callable[[float], np.ndarray], t_lo: float, t_hi: float,
                            rel_tol: float = 1e-10, max_depth: int = 24) -> np.ndarray:
    """integral of f(tau) dtau/tau over [t_lo, t_hi], adaptively in log tau.

    Composite 7-point Gauss-Legendre with interval halving; an interval is
    accepted when halving changes its contribution by less than rel_tol times
    the running scale.  Signed: t_hi < t_lo yields the negated integral.
    """
    sign = 1.0
    if t_hi < t_lo:
        t_lo, t_hi = t_hi, t_lo
        sign = -1.0
    if t_lo <= 0:
        raise QuadratureError("quadrature requires positive times")
    a, b = math.log(t_lo), math.log(t_hi)
    if a == b:
        return 0.0 * np.asarray(f(t_lo))
    nodes, weights = np.polynomial.legendre.leggauss(7)

    def gauss(lo, hi):
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        acc = None
        for x, w in zip(nodes, weights):
            val = np.asarray(f(math.exp(mid + half * x)), dtype=complex) * (w * half)
            acc = val if acc is None else acc + val
        return acc

    whole_scale = max(float(np.max(np.abs(gauss(a, b)))), 1e-300)

    def recurse(lo, hi, coarse, depth):
        mid = 0.5 * (lo + hi)
        left, right = gauss(lo, mid), gauss(mid, hi)
        fine = left + right
        err = float(np.max(np.abs(fine - coarse)))
        if err <= rel_tol * max(whole_scale, float(np.max(np.abs(fine)))):
            return fine
        if depth >= max_depth:
            raise QuadratureError(
                f"quadrature failed to converge on log-interval "
                f"[{lo:.6g}, {hi:.6g}] (error {err:g})"
            )
        return recurse(lo, mid, left, depth + 1) + recurse(mid, hi, right, depth + 1)

    return sign * recurse(a, b, gauss(a, b), 0)


@dataclass(frozen=True)
class EHFactor:
    """Diagonal integrating factor exp(-b) with its quadrature exponents."""

    b: np.ndarray  # per-component quadrature values
    variant: str  # two_sided | plus | minus | simplified
    anchor_t: float

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(np.exp(-self.b))

    @property
    def inverse(self) -> np.ndarray:
        return np.diag(np.exp(self.b))


def eh_factor(hdata, part: SpeedPartition, variant: str, t: float, xi, *,
              scale, zones, rel_tol: float = 1e-10) -> EHFactor:
    """Integrating factor on the late zone, anchored to the identity at the
    zone entry time t = 1/(rho0 * fac(xi)).

    variant 'two_sided': b_i integrates the (complex) diagonal of B;
    'plus'/'minus': the extreme Hermitian eigenvalues of the group blocks;
    'simplified': closed power z^-B0 from the direction-limit data.
    """
    fac = scale.zfac(xi)
    anchor = 1.0 / (zones.rho0 * fac)
    xi = np.asarray(xi, dtype=float)
    if variant == "simplified":
        if hdata.b_h_zero is None:
            raise ValueError("no direction-limit data for the simplified factor")
        norm = float(np.linalg.norm(xi))
        omega = xi / norm if norm > 0 else xi
        b0 = np.asarray(hdata.b_h_zero(omega), dtype=complex)
        z = fac * t
        b = b0 * math.log(zones.rho0 * z)
        return EHFactor(b=b, variant=variant, anchor_t=anchor)

    if variant == "two_sided":
        def integrand(tau):
            return np.diag(np.asarray(hdata.b_h(tau, xi), dtype=complex))
    elif variant in ("plus", "minus"):
        idx = 0 if variant == "plus" else 1

        def integrand(tau):
            bg = group_diagonal_part(np.asarray(hdata.b_h(tau, xi), dtype=complex), part)
            ext = hermitian_extremes(bg, part)
            return np.diag(ext[idx]).astype(complex)
    else:
        raise ValueError(f"unknown factor variant {variant!r}")

    b = adaptive_log_quadrature(integrand, anchor, t, rel_tol=rel_tol)
    b = np.asarray(b, dtype=complex)
    return EHFactor(b=b, variant=variant, anchor_t=anchor)


def select_m_h(ell_star, c: float, margin: float = 0.05) -> int:
    """Smallest m >= 1 with m(l*+1) > 2c + margin; c bounds the growth
    exponent of |Re b| so the conjugated remainder stays integrable."""
    lstar = float(ell_star)
    if lstar <= -1:
        raise ValueError("l* must exceed -1")
    m = 1
    while m * (lstar + 1.0) <= 2.0 * c + margin:
        m += 1
    return m


def renormalized_h(plan: HRenormPlan, factor: EHFactor, u_h: np.ndarray, t: float, xi) -> np.ndarray:
    """The controlled unknown  exp(-b) Q^(m)(t) U_H  on the late zone."""
    return factor.matrix @ plan.q_at(t, xi) @ np.asarray(u_h, dtype=complex)


def renormalized_h_inverse(plan: HRenormPlan, factor: EHFactor, u_hz: np.ndarray, t: float, xi) -> np.ndarray:
    return np.linalg.solve(plan.q_at(t, xi), factor.inverse @ np.asarray(u_hz, dtype=complex))


def is_reversible(hdata, part: SpeedPartition, grid: Sequence, tol: float = 1e-10) -> bool:
    """True when the forward and backward group extremes coincide on the grid,
    i.e. one common factor serves both the asymptotic and scattering bounds."""
    for (t, xi) in grid:
        bg = group_diagonal_part(np.asarray(hdata.b_h(t, xi), dtype=complex), part)
        plus, minus = hermitian_extremes(bg, part)
        scale = max(float(np.max(np.abs(bg))), 1.0)
        if float(np.max(np.abs(plus - minus))) > tol * scale:
            return False
    return True
