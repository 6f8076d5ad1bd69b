import math
from fractions import Fraction

import numpy as np
import pytest

from fuchsflow.odeflow import (
    EvolutionProblem,
    PipelineEngine,
    PipelineOptions,
    evolve,
    full_pipeline,
    limit_at_zero,
    scatter_from_zero,
    sobolev_convergence,
)

from conftest import make_scalar_bundle


def const_problem(mat, **kw):
    a = np.asarray(mat, dtype=complex)
    return EvolutionProblem(coefficient=lambda z: a, **kw)


def test_evolve_zero_coefficient_identity():
    prob = const_problem(np.zeros((2, 2)))
    u0 = np.array([1.0 + 1j, -2.0])
    u1, _ = evolve(prob, 0.5, 2.0, u0)
    assert np.allclose(u1, u0, rtol=1e-12)


def test_evolve_scalar_fuchsian_power_law():
    beta = 0.37 - 0.2j
    prob = EvolutionProblem(coefficient=lambda z: np.array([[beta / z]]))
    u0 = np.array([1.0 + 0j])
    z0, z1 = 0.01, 1.7
    u1, _ = evolve(prob, z0, z1, u0, tol=1e-11)
    assert abs(u1[0] - (z1 / z0) ** beta) < 1e-8 * abs((z1 / z0) ** beta)


def test_evolve_oscillatory_with_phase_cap():
    omega = 200.0
    prob = EvolutionProblem(
        coefficient=lambda z: np.array([[1j * omega]]),
        phase_rate=lambda z: omega,
    )
    u1, _ = evolve(prob, 1.0, 3.0, np.array([1.0 + 0j]), tol=1e-10)
    expect = np.exp(1j * omega * 2.0)
    assert abs(u1[0] - expect) < 1e-7


def test_evolve_forcing_quadrature():
    prob = EvolutionProblem(
        coefficient=lambda z: np.zeros((1, 1), dtype=complex),
        forcing=lambda z: np.array([math.cos(z)]),
    )
    u1, _ = evolve(prob, 0.2, 1.4, np.array([0.0 + 0j]), tol=1e-11)
    assert abs(u1[0] - (math.sin(1.4) - math.sin(0.2))) < 1e-9


def test_evolve_records_land_exactly():
    prob = EvolutionProblem(coefficient=lambda z: np.array([[1.0 / z]]))
    zs = [0.3, 0.7, 1.1]
    u1, recs = evolve(prob, 0.2, 1.5, np.array([1.0 + 0j]), record_zs=zs)
    assert [round(z, 9) for z, _ in recs] == [round(z, 9) for z in zs]
    for z, v in recs:
        assert abs(v[0] - z / 0.2) < 1e-8 * (z / 0.2)


def test_evolve_step_doubling_consistency():
    prob = EvolutionProblem(coefficient=lambda z: np.array([[math.sin(3 * z) / z]]))
    u0 = np.array([1.0 + 0j])
    u_a, _ = evolve(prob, 0.05, 2.0, u0, tol=1e-8)
    u_b, _ = evolve(prob, 0.05, 2.0, u0, tol=1e-10)
    assert abs(u_a[0] - u_b[0]) < 1e-7 * abs(u_b[0])


def test_limit_trivial_coefficient():
    prob = const_problem(np.zeros((2, 2)))
    u = np.array([0.5, -1.0 + 2j])
    u_a, err = limit_at_zero(prob, 0.1, u)
    assert np.allclose(u_a, u)
    assert err < 1e-8


def test_limit_closed_form_scalar():
    # dU/dz = c z^(-1+eps) U  ->  U(z) = exp(c z^eps / eps) u_a
    c, eps = 0.8, 0.5
    prob = EvolutionProblem(coefficient=lambda z: np.array([[c * z ** (-1 + eps)]]))
    z_start = 0.09
    u_a_true = np.array([1.3 - 0.4j])
    u_start = u_a_true * math.exp(c * z_start**eps / eps)
    u_a, err = limit_at_zero(prob, z_start, u_start, tol=1e-11)
    assert abs(u_a[0] - u_a_true[0]) < 1e-9 * abs(u_a_true[0])


def test_scatter_closed_form_and_roundtrip():
    c, eps = -0.45, 0.4
    prob = EvolutionProblem(coefficient=lambda z: np.array([[c * z ** (-1 + eps)]]))
    u_a = np.array([2.0 + 1j])
    z1 = 0.1
    u1, _ = scatter_from_zero(prob, u_a, z1, tol=1e-11)
    assert abs(u1[0] - u_a[0] * math.exp(c * z1**eps / eps)) < 1e-9 * abs(u1[0])
    back, err = limit_at_zero(prob, z1, u1, tol=1e-11)
    assert abs(back[0] - u_a[0]) < 1e-8 * abs(u_a[0])


def test_scatter_zero_data_zero_solution():
    prob = EvolutionProblem(coefficient=lambda z: np.array([[0.3 / z**0.5]]))
    u1, _ = scatter_from_zero(prob, np.array([0.0 + 0j]), 0.2)
    assert np.allclose(u1, 0.0)


def test_pipeline_roundtrip_scalar_bundle():
    bundle = make_scalar_bundle(r_coeff=0.4, r_power=Fraction(1, 2), b_eig=Fraction(-1, 2))
    xi = np.array([30.0])
    opts = PipelineOptions(tol=1e-11)
    fwd = full_pipeline(bundle, {"asymptotic": np.array([1.0 + 0.5j])}, xi, opts)
    assert fwd.status == "ok"
    back = full_pipeline(bundle, {"at_T": fwd.u_at_T}, xi, opts)
    assert back.status == "ok"
    assert abs(back.u_a[0] - (1.0 + 0.5j)) < 1e-8


def test_pipeline_zone_geometry_small_frequency():
    bundle = make_scalar_bundle()
    out = full_pipeline(bundle, {"asymptotic": np.array([1.0 + 0j])}, np.array([0.0]))
    assert out.status == "ok"
    assert "H" not in out.zones_visited  # zfac = 1: never reaches the late zone


def test_pipeline_handoff_continuity(scalar_bundle):
    # physical value reconstructed from the early-zone frame at the boundary
    # agrees with direct physical evolution across it
    bundle = scalar_bundle
    xi = np.array([50.0])
    opts = PipelineOptions(tol=1e-12)
    engine = PipelineEngine(bundle, opts)
    sol = full_pipeline(bundle, {"asymptotic": np.array([1.0 + 0j])}, xi, opts)
    t_p = sol.t_boundary_p
    p_at_tp_direct, _ = engine.evolve_phys(xi, "I", bundle.scale.T, t_p, sol.u_at_T)
    plan = engine.p_plan(xi)
    prob = engine.renormalized_problem(plan)
    z_p = bundle.scale.zfac(xi) * t_p
    v_top, _ = scatter_from_zero(prob, sol.u_a, z_p, tol=1e-12)
    from fuchsflow.renorm_p import renormalized_p_inverse

    u_p = renormalized_p_inverse(plan, bundle.pzone.jordan, v_top, z_p)
    p_from_frame = engine.phys_from_u_p(u_p, t_p, xi)
    assert abs(p_from_frame[0] - p_at_tp_direct[0]) < 1e-8 * abs(p_at_tp_direct[0])


def test_pipeline_failure_is_captured_not_raised():
    bundle = make_scalar_bundle()
    out = full_pipeline(bundle, {"bogus": None}, np.array([1.0]))
    assert out.status.startswith("failed")


def test_sobolev_scalar_model_rate():
    # saturating model: per-mode error z^eps0 with eps0 = (l*+1) delta
    delta, s = 0.25, 1.0
    ell = Fraction(0)
    eps0 = (float(ell) + 1.0) * delta
    bundle = make_scalar_bundle(ell=ell, rho0=0.5, r_coeff=eps0, r_power=Fraction(eps0).limit_denominator(16) - 1)
    xi_grid = [np.array([x]) for x in np.geomspace(1.0, 4.0, 10)]
    ts = [10.0**-k for k in range(2, 6)]
    out = sobolev_convergence(
        bundle, lambda xi: np.array([1.0 + 0j]), s, delta, ts, xi_grid=xi_grid
    )
    assert out["monotone_decreasing"]
    assert out["fitted_rate"] == pytest.approx(out["guaranteed_rate"], rel=0.2)


def test_sobolev_delta_zero_flagged():
    bundle = make_scalar_bundle(rho0=0.5)
    xi_grid = [np.array([x]) for x in np.geomspace(1.0, 10.0, 6)]
    out = sobolev_convergence(
        bundle, lambda xi: np.array([1.0 + 0j]), 1.0, 0.0, [1e-1, 1e-2], xi_grid=xi_grid
    )
    assert out["flagged_no_guarantee"]
