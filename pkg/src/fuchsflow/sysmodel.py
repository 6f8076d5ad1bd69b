"""System specification, anisotropic rescaled time, zone geometry, validation.

The central coordinate is the frequency-rescaled time z = fac(xi) * t with
fac(xi) = max_i <xi_i>^(1/(ell_i+1)), <x> = sqrt(1+x^2).  The (t, xi) plane
splits into an early zone P (z <= rho0) where the Fuchsian t^-1 coefficient
dominates, a late hyperbolic zone H (z >= 1/rho0) where the degenerate wave
operator dominates, and a bounded intermediate zone I between them.  Boundary
points belong to I; the zones deliberately overlap there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from .phsym import PHExpansion, as_power, evaluate

__all__ = [
    "ScaleProfile",
    "ZoneParams",
    "CutoffProfile",
    "WeightSpec",
    "PZoneData",
    "HZoneData",
    "SystemBundle",
    "zone_of",
    "validate_bundle",
    "ValidationReport",
    "CheckResult",
    "StructuralAssumptionError",
]


class StructuralAssumptionError(RuntimeError):
    """A structural hypothesis (ellipticity, boundedness) failed numerically."""


def _bracket(x: float) -> float:
    return math.sqrt(1.0 + x * x)


@dataclass(frozen=True)
class ScaleProfile:
    """Degeneracy exponents and principal coefficient of the system.

    ``lam(t)`` is the d x d real coefficient matrix of the degenerate
    quadratic form H^2 = sum_ij t^(ell_i+ell_j) lam_ij(t) xi_i xi_j;
    ``lam_deriv`` is its t-derivative (None means constant).
    """

    d: int
    ell: tuple
    T: float
    lam: Optional[Callable[[float], np.ndarray]] = None
    lam_deriv: Optional[Callable[[float], np.ndarray]] = None

    def __post_init__(self):
        ells = tuple(as_power(e) for e in self.ell)
        object.__setattr__(self, "ell", ells)
        if len(ells) != self.d:
            raise ValueError("need one exponent per spatial direction")
        if any(e <= -1 for e in ells):
            raise ValueError("every exponent must exceed -1")

    @property
    def ell_star(self) -> Fraction:
        return min(self.ell)

    def lam_at(self, t: float) -> np.ndarray:
        if self.lam is None:
            return np.eye(self.d)
        return np.asarray(self.lam(t), dtype=float)

    def lam_deriv_at(self, t: float) -> np.ndarray:
        if self.lam_deriv is None:
            return np.zeros((self.d, self.d))
        return np.asarray(self.lam_deriv(t), dtype=float)

    def zfac(self, xi) -> float:
        """The rescaled frequency measure max_i <xi_i>^(1/(ell_i+1)); >= 1."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        return max(
            _bracket(x) ** (1.0 / (float(e) + 1.0)) for x, e in zip(xi, self.ell)
        )

    def hyp(self, t: float, xi) -> float:
        """The degeneracy H(t, xi) = sqrt(sum t^(ell_i+ell_j) lam_ij xi_i xi_j)."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        w = np.array([t ** float(e) * x for x, e in zip(xi, self.ell)])
        h2 = float(w @ self.lam_at(t) @ w)
        if h2 < 0:
            raise StructuralAssumptionError(
                f"negative degeneracy radicand {h2} at t={t}, xi={xi.tolist()}"
            )
        return math.sqrt(h2)

    def hyp_t_deriv(self, t: float, xi) -> float:
        """d/dt H, from the exact derivative of the quadratic form."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        h = self.hyp(t, xi)
        if h == 0:
            return 0.0
        w = np.array([t ** float(e) * x for x, e in zip(xi, self.ell)])
        dw = np.array(
            [float(e) * t ** (float(e) - 1.0) * x for x, e in zip(xi, self.ell)]
        )
        lam = self.lam_at(t)
        dh2 = 2.0 * float(dw @ lam @ w) + float(w @ self.lam_deriv_at(t) @ w)
        return 0.5 * dh2 / h

    def rescaled(self, t: float, xi):
        """Return (z, H, Zc) with z = fac*t and Zc = H/fac."""
        fac = self.zfac(xi)
        h = self.hyp(t, xi)
        return fac * t, h, h / fac


@dataclass(frozen=True)
class ZoneParams:
    rho0: float = 0.1

    def __post_init__(self):
        if not 0 < self.rho0 < 1:
            raise ValueError("rho0 must lie in (0, 1)")


def zone_of(t: float, xi, scale: ScaleProfile, zones: ZoneParams) -> str:
    """Classify (t, xi): 'P' for z < rho0, 'H' for z > 1/rho0, else 'I'."""
    z = scale.zfac(xi) * t
    if z < zones.rho0:
        return "P"
    if z > 1.0 / zones.rho0:
        return "H"
    return "I"


# ---------------------------------------------------------------------------
# Cutoff profile and interpolation weights tying the early- and late-zone
# unknowns into one globally defined state.
# ---------------------------------------------------------------------------


def _ramp(u: float) -> float:
    """Smooth 0->1 ramp on [0, 1] (standard mollifier quotient)."""
    if u <= 0.0:
        return 0.0
    if u >= 1.0:
        return 1.0
    g = 1.0 / u - 1.0 / (1.0 - u)
    if g > 700.0:
        return 0.0
    if g < -700.0:
        return 1.0
    return 1.0 / (1.0 + math.exp(g))


def _ramp_deriv(u: float) -> float:
    if u <= 0.0 or u >= 1.0:
        return 0.0
    g = 1.0 / u - 1.0 / (1.0 - u)
    if abs(g) > 700.0:
        return 0.0
    s = 1.0 / (1.0 + math.exp(g))
    dg = -1.0 / (u * u) - 1.0 / ((1.0 - u) * (1.0 - u))
    return -dg * s * (1.0 - s)


@dataclass(frozen=True)
class CutoffProfile:
    """chi(z): identically 0 up to 1/(2 rho0) and identically 1 from 1/rho0."""

    rho0: float

    @property
    def lo(self) -> float:
        return 0.5 / self.rho0

    @property
    def hi(self) -> float:
        return 1.0 / self.rho0

    def chi(self, z: float) -> float:
        return _ramp((z - self.lo) / (self.hi - self.lo))

    def chi_deriv(self, z: float) -> float:
        return _ramp_deriv((z - self.lo) / (self.hi - self.lo)) / (self.hi - self.lo)


@dataclass(frozen=True)
class WeightSpec:
    """Diagonal weight W(t, xi) mapping the physical state p to the unknown U.

    Slot j carries W_jj = (t^-s * Xi)^e_j with Xi = (1-chi(z)) + i t H chi(z),
    s = 1 for wave-type unknowns (t^-1 phi early, i t^l |xi| phi late) and
    s = 0 for states that interpolate between p and i t H p directly.
    """

    powers: tuple
    t_inverse: bool = True

    def xi_factor(self, t, z, h, cutoff: CutoffProfile) -> complex:
        c = cutoff.chi(z)
        return (1.0 - c) + 1j * t * h * c

    def xi_factor_deriv(self, t, z, h, dh, zfac, cutoff: CutoffProfile) -> complex:
        c = cutoff.chi(z)
        dc = cutoff.chi_deriv(z) * zfac  # d/dt of chi(zfac * t)
        return -dc + 1j * ((h + t * dh) * c + t * h * dc)

    def matrix(self, t, scale: ScaleProfile, xi, cutoff: CutoffProfile) -> np.ndarray:
        z, h, _ = scale.rescaled(t, xi)
        base = self.xi_factor(t, z, h, cutoff)
        if self.t_inverse:
            base = base / t
        return np.diag([base**e for e in self.powers]).astype(complex)

    def matrix_deriv(self, t, scale: ScaleProfile, xi, cutoff: CutoffProfile) -> np.ndarray:
        z, h, _ = scale.rescaled(t, xi)
        dh = scale.hyp_t_deriv(t, xi)
        fac = scale.zfac(xi)
        b = self.xi_factor(t, z, h, cutoff)
        db = self.xi_factor_deriv(t, z, h, dh, fac, cutoff)
        if self.t_inverse:
            db = db / t - b / (t * t)
            b = b / t
        out = []
        for e in self.powers:
            out.append(0.0 if e == 0 else e * b ** (e - 1) * db)
        return np.diag(out).astype(complex)


# ---------------------------------------------------------------------------
# Per-zone coefficient data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PZoneData:
    """Early-zone reduction: M_P A M_P^-1 + (dM_P) M_P^-1 = t^-1 B_P + fac R_P."""

    m_p: Callable[[np.ndarray], np.ndarray]
    m_p_inv: Callable[[np.ndarray], np.ndarray]
    jordan: "JordanSpec"  # noqa: F821  (renorm_p defines it; duck-typed here)
    r_p: Callable[[np.ndarray], list]  # xi -> matrix of PHExpansion in z
    a_p: Fraction
    log_cap: Optional[int] = None

    def r_p_at(self, xi, z: float) -> np.ndarray:
        mat = self.r_p(np.asarray(xi, dtype=float))
        n = len(mat)
        out = np.zeros((n, n), dtype=complex)
        for i in range(n):
            for j in range(n):
                out[i, j] = evaluate(mat[i][j], z) if mat[i][j].terms else 0.0
        return out


@dataclass(frozen=True)
class HZoneData:
    """Late-zone reduction: M_H A M_H^-1 + (dM_H) M_H^-1 = iH D_H + t^-1 B_H + fac R_H."""

    m_h: Callable[[float, np.ndarray], np.ndarray]
    m_h_inv: Callable[[float, np.ndarray], np.ndarray]
    d_h: Callable[[float, np.ndarray], np.ndarray]  # real diagonal entries (vector)
    b_h: Callable[[float, np.ndarray], np.ndarray]
    r_h: Callable[[float, np.ndarray], np.ndarray]
    a_h: float
    m_h_deriv: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    b_h_zero: Optional[Callable[[np.ndarray], np.ndarray]] = None  # direction limit
    b_h_zero_rate: Optional[float] = None  # delta with |B_H - B_H0| <= C t^delta


@dataclass(frozen=True)
class SystemBundle:
    """Complete per-preset description consumed by the zone pipeline.

    ``phys_system(xi, zone)`` returns the coefficient function t -> A(t) of the
    physical first-order system in the given zone flavor ('P', 'I', 'H'; they
    coincide except for gauge-scheduled systems).  ``weight`` maps the physical
    state to the interpolated unknown U.
    """

    name: str
    n: int
    scale: ScaleProfile
    zones: ZoneParams
    pzone: PZoneData
    hzone: HZoneData
    izone_bound: float
    cutoff: CutoffProfile
    weight: WeightSpec
    phys_system: Callable[[np.ndarray, str], Callable[[float], np.ndarray]]
    forcing: Optional[Callable] = None
    suggested_m_p: Optional[int] = None
    partition_hint: Optional[tuple] = None
    extras: dict = field(default_factory=dict)

    def with_zones(self, zones: ZoneParams) -> "SystemBundle":
        return replace(
            self, zones=zones, cutoff=CutoffProfile(zones.rho0)
        )

    def t_boundary_p(self, xi) -> float:
        return self.zones.rho0 / self.scale.zfac(xi)

    def t_boundary_h(self, xi) -> float:
        return 1.0 / (self.zones.rho0 * self.scale.zfac(xi))

    def weight_at(self, t, xi) -> np.ndarray:
        return self.weight.matrix(t, self.scale, xi, self.cutoff)

    def weight_deriv_at(self, t, xi) -> np.ndarray:
        return self.weight.matrix_deriv(t, self.scale, xi, self.cutoff)

    def u_system(self, xi, zone: str) -> Callable[[float], np.ndarray]:
        """Coefficient of the interpolated unknown: W A W^-1 + W' W^-1."""
        a_phys = self.phys_system(np.asarray(xi, dtype=float), zone)

        def coeff(t: float) -> np.ndarray:
            w = self.weight_at(t, xi)
            dw = self.weight_deriv_at(t, xi)
            winv = np.diag(1.0 / np.diag(w))
            return w @ a_phys(t) @ winv + dw @ winv

        return coeff


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    value: float
    threshold: Optional[float]
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    bundle: str
    checks: list

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def constant(self, name: str) -> float:
        for c in self.checks:
            if c.name == name:
                return c.value
        raise KeyError(name)

    def summary(self) -> str:
        lines = [f"validation[{self.bundle}]: {'ok' if self.ok else 'FAILED'}"]
        for c in self.checks:
            mark = "ok " if c.passed else "FAIL"
            thr = "" if c.threshold is None else f" (thr {c.threshold:g})"
            lines.append(f"  [{mark}] {c.name} = {c.value:.6g}{thr} {c.detail}")
        return "\n".join(lines)


def default_grid(scale: ScaleProfile, *, t_decades=4, xi_max=1e4, xi_decades=6, seed=7):
    """Sampling plan: log-spaced t (32/decade), log |xi| (8/decade), directions."""
    T = scale.T
    ts = np.geomspace(T * 10.0**-t_decades, T, 32 * t_decades + 1)
    mags = np.geomspace(xi_max * 10.0**-xi_decades, xi_max, 8 * xi_decades + 1)
    d = scale.d
    rng = np.random.default_rng(seed)
    dirs = [np.eye(d)[k] for k in range(d)] + [-np.eye(d)[k] for k in range(d)]
    while len(dirs) < 2 * d * d:
        v = rng.normal(size=d)
        dirs.append(v / np.linalg.norm(v))
    return ts, mags, [np.asarray(v, dtype=float) for v in dirs[: 2 * d * d]]


def _mat_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=complex), 2))


def validate_bundle(bundle: SystemBundle, grid=None, *, fast=False) -> ValidationReport:
    """Grid-check the structural assumptions and report worst-case constants."""
    scale, zones = bundle.scale, bundle.zones
    if grid is None:
        grid = default_grid(scale, t_decades=3 if fast else 4,
                            xi_decades=4 if fast else 6)
    ts, mags, dirs = grid
    if fast:
        ts = ts[::4]
        mags = mags[::2]
    ell_star = float(scale.ell_star)
    checks: list[CheckResult] = []

    # ellipticity margin
    ell_margin = math.inf
    for t in ts[:: max(1, len(ts) // 16)]:
        lam = scale.lam_at(t)
        lam_sym = 0.5 * (lam + lam.T)
        ev = float(np.linalg.eigvalsh(lam_sym)[0])
        ell_margin = min(ell_margin, ev)
    checks.append(
        CheckResult("ellipticity_margin", ell_margin, 0.0, ell_margin > 0.0)
    )

    sup_pi, inf_hi = 0.0, math.inf   # tH vs z^(l*+1) two-sided
    sup_zpi, inf_zhi = 0.0, math.inf  # Zc vs z^l*
    sup_izone = 0.0
    zones_p_ok, zones_h_ok = True, True
    xi_floor = 0.5 * (zones.rho0 / scale.T) ** (ell_star + 1.0)
    for m in mags:
        for v in dirs:
            xi = m * v
            fac = scale.zfac(xi)
            for t in ts:
                z = fac * t
                h = scale.hyp(t, xi)
                ratio = (t * h) / z ** (ell_star + 1.0)
                zratio = (h / fac) / z**ell_star
                zone = zone_of(t, xi, scale, zones)
                if zone in ("P", "I"):
                    sup_pi = max(sup_pi, ratio)
                    sup_zpi = max(sup_zpi, zratio)
                if zone in ("H", "I"):
                    inf_hi = min(inf_hi, ratio)
                    inf_zhi = min(inf_zhi, zratio)
                if zone == "P" and t > zones.rho0 + 1e-12:
                    zones_p_ok = False
                if zone == "H" and float(np.linalg.norm(xi)) < xi_floor:
                    zones_h_ok = False
                if zone == "I":
                    a_u = bundle.u_system(xi, "I")(t)
                    sup_izone = max(sup_izone, _mat_norm(a_u) / fac)
    checks.append(CheckResult("degen_upper_PI", sup_pi, None, math.isfinite(sup_pi)))
    checks.append(CheckResult("degen_lower_HI", inf_hi, 0.0, inf_hi > 0.0))
    checks.append(CheckResult("rescaled_upper_PI", sup_zpi, None, math.isfinite(sup_zpi)))
    checks.append(CheckResult("rescaled_lower_HI", inf_zhi, 0.0, inf_zhi > 0.0))
    checks.append(
        CheckResult("izone_bound", sup_izone, bundle.izone_bound,
                    sup_izone <= bundle.izone_bound)
    )
    checks.append(CheckResult("zone_P_time_containment", 1.0 if zones_p_ok else 0.0, None, zones_p_ok))
    checks.append(CheckResult("zone_H_frequency_containment", 1.0 if zones_h_ok else 0.0, None, zones_h_ok))

    # transformation pairs and per-zone residuals at a thinner subgrid
    sub_mags = mags[:: max(1, len(mags) // 6)]
    sub_dirs = dirs[: min(len(dirs), 4)]
    mp_pair = 0.0
    mh_pair = 0.0
    p_resid_c = 0.0
    r_p_const = 0.0
    h_resid_c = 0.0
    r_h_const = 0.0
    d_h_real = 0.0
    b_h_xi_dep = 0.0
    pz, hz = bundle.pzone, bundle.hzone
    a_p = float(pz.a_p)
    for m in sub_mags:
        for v in sub_dirs:
            xi = m * v
            fac = scale.zfac(xi)
            mp = pz.m_p(xi)
            mpi = pz.m_p_inv(xi)
            mp_pair = max(mp_pair, _mat_norm(mp @ mpi - np.eye(bundle.n)))
            b_p = jordan_matrix(pz.jordan)
            rp_mat = pz.r_p(xi)
            max_logpow = max(
                (e.max_logpow() for row in rp_mat for e in row), default=0
            )
            a_sys_p = bundle.phys_system(xi, "P")
            for t in ts[:: max(1, len(ts) // 10)]:
                z = fac * t
                zone = zone_of(t, xi, scale, zones)
                if zone == "P":
                    a_u = bundle.u_system(xi, "P")(t)
                    lhs = mp @ a_u @ mpi  # constant M_P: derivative term absent
                    rp_val = pz.r_p_at(xi, z)
                    resid = lhs - b_p / t - fac * rp_val
                    p_resid_c = max(p_resid_c, _mat_norm(resid) * t)
                    bound = z**a_p * (1.0 + abs(math.log(z))) ** max_logpow
                    r_p_const = max(r_p_const, _mat_norm(rp_val) / bound)
                if zone == "H":
                    h = scale.hyp(t, xi)
                    a_u = bundle.u_system(xi, "H")(t)
                    mh = hz.m_h(t, xi)
                    mhi = hz.m_h_inv(t, xi)
                    mh_pair = max(mh_pair, _mat_norm(mh @ mhi - np.eye(bundle.n)))
                    dmh = (
                        hz.m_h_deriv(t, xi)
                        if hz.m_h_deriv is not None
                        else _fd_matrix(lambda s: hz.m_h(s, xi), t)
                    )
                    lhs = mh @ a_u @ mhi + dmh @ mhi
                    dh = np.asarray(hz.d_h(t, xi))
                    d_h_real = max(d_h_real, float(np.max(np.abs(dh.imag))) if np.iscomplexobj(dh) else 0.0)
                    resid = lhs - 1j * h * np.diag(dh.real.astype(float)) - hz.b_h(t, xi) / t
                    rh_ref = hz.r_h(t, xi)
                    h_resid_c = max(h_resid_c, _mat_norm(resid - fac * rh_ref) / (fac * z**hz.a_h + 1e-300))
                    r_h_const = max(r_h_const, _mat_norm(rh_ref) / (z**hz.a_h))
                    # |xi|-independence of B_H: compare against doubled magnitude
                    b1 = hz.b_h(t, xi)
                    b2 = hz.b_h(t, 2.0 * xi)
                    if zone_of(t, 2.0 * xi, scale, zones) == "H":
                        b_h_xi_dep = max(b_h_xi_dep, _mat_norm(b1 - b2))
    checks.append(CheckResult("m_p_inverse_pair", mp_pair, 1e-10, mp_pair <= 1e-10))
    checks.append(CheckResult("m_h_inverse_pair", mh_pair, 1e-9, mh_pair <= 1e-9))
    checks.append(
        CheckResult("p_reduction_residual_t", p_resid_c, 1e-6, p_resid_c <= 1e-6,
                    "t*|M_P A M_P^-1 - t^-1 B_P - fac R_P|")
    )
    checks.append(CheckResult("r_p_symbol_constant", r_p_const, None, math.isfinite(r_p_const)))
    checks.append(
        CheckResult("h_reduction_residual", h_resid_c, 10.0, h_resid_c <= 10.0,
                    "|resid - fac R_H| / (fac z^a_H)")
    )
    checks.append(CheckResult("r_h_symbol_constant", r_h_const, None, math.isfinite(r_h_const)))
    checks.append(CheckResult("d_h_imag_part", d_h_real, 1e-12, d_h_real <= 1e-12))
    checks.append(CheckResult("b_h_xi_independence", b_h_xi_dep, 1e-8, b_h_xi_dep <= 1e-8))

    if hz.b_h_zero is not None and hz.b_h_zero_rate is not None:
        rate_c = 0.0
        for v in sub_dirs:
            xi = mags[-1] * v
            b0 = np.asarray(hz.b_h_zero(v), dtype=complex)
            for t in ts[:: max(1, len(ts) // 10)]:
                if zone_of(t, xi, scale, zones) != "H":
                    continue
                diag = np.diag(np.asarray(hz.b_h(t, xi), dtype=complex))
                rate_c = max(
                    rate_c, float(np.max(np.abs(diag - b0))) / t**hz.b_h_zero_rate
                )
        checks.append(CheckResult("b_h_zero_rate_constant", rate_c, None, math.isfinite(rate_c)))

    return ValidationReport(bundle.name, checks)


def _fd_matrix(f: Callable[[float], np.ndarray], t: float, rel=1e-6) -> np.ndarray:
    h = rel * max(t, 1e-12)
    return (np.asarray(f(t + h), dtype=complex) - np.asarray(f(t - h), dtype=complex)) / (2 * h)


def jordan_matrix(jordan) -> np.ndarray:
    """Dense matrix of a block-Jordan spec (duck-typed to avoid an import cycle)."""
    size = sum(b[1] for b in jordan.blocks)
    out = np.zeros((size, size), dtype=complex)
    k = 0
    for eig, sz in jordan.blocks:
        lam = eig.to_complex() if hasattr(eig, "to_complex") else complex(eig)
        for r in range(sz):
            out[k + r, k + r] = lam
            if r + 1 < sz:
                out[k + r, k + r + 1] = 1.0
        k += sz
    return out
