import math
import random
from fractions import Fraction

import numpy as np
import pytest

from fuchsflow.phsym import PHExpansion, LogDegreeCapExceeded
from fuchsflow.renorm_p import (
    JordanSpec,
    build_p_renorm,
    commutator_flow_residual,
    ep_factor,
    mat_eval,
    mat_is_zero,
    renormalized_p,
    renormalized_p_inverse,
    select_m_p,
    solve_commutator_flow,
    stage_identity_residual,
)

PH = PHExpansion.monomial


def zeros(n):
    return [[PHExpansion.zero() for _ in range(n)] for _ in range(n)]


def test_flow_single_offdiagonal_nonresonant():
    # B = diag(p, q), Y12 = z^a with a+1+q-p != 0  ->  N12 = z^(a+1)/(a+1+q-p)
    p, q, a = Fraction(2), Fraction(1, 2), Fraction(1)
    jord = JordanSpec(((p, 1), (q, 1)))
    y = zeros(2)
    y[0][1] = PH(1, a)
    n = solve_commutator_flow(y, jord)
    expect = PH(Fraction(1) / (a + 1 + q - p), a + 1)
    assert n[0][1] == expect
    assert mat_is_zero(commutator_flow_residual(n, y, jord))


def test_flow_single_offdiagonal_resonant():
    # resonance a+1 = p-q  ->  N12 = z^(a+1) log z
    p, q = Fraction(3), Fraction(1)
    a = p - q - 1
    jord = JordanSpec(((p, 1), (q, 1)))
    y = zeros(2)
    y[0][1] = PH(1, a)
    n = solve_commutator_flow(y, jord)
    assert n[0][1] == PH(1, a + 1, 1)
    assert mat_is_zero(commutator_flow_residual(n, y, jord))


def test_flow_zero_input():
    jord = JordanSpec(((1, 2),))
    n = solve_commutator_flow(zeros(2), jord)
    assert mat_is_zero(n)


def test_flow_jordan_block_identity_source():
    # single 2-block, Y = z^a I: diagonal part z^(a+1)/(a+1) I; the two
    # superdiagonal couplings cancel exactly, so no corner term survives
    b, a = Fraction(1), Fraction(2)
    jord = JordanSpec(((b, 2),))
    y = zeros(2)
    y[0][0] = PH(1, a)
    y[1][1] = PH(1, a)
    n = solve_commutator_flow(y, jord)
    assert n[0][0] == PH(Fraction(1, 3), a + 1)
    assert n[1][1] == PH(Fraction(1, 3), a + 1)
    assert n[0][1].is_zero()
    assert mat_is_zero(commutator_flow_residual(n, y, jord))


def test_flow_jordan_block_corner_correction():
    # distinct diagonal sources feed the superdiagonal coupling: corner term
    b, a = Fraction(1), Fraction(2)
    jord = JordanSpec(((b, 2),))
    y = zeros(2)
    y[0][0] = PH(1, a)
    y[1][1] = PH(3, a)
    n = solve_commutator_flow(y, jord)
    assert not n[0][1].is_zero()
    assert mat_is_zero(commutator_flow_residual(n, y, jord))


def _random_expansion(rng, max_terms=3):
    out = PHExpansion.zero()
    for _ in range(rng.randrange(max_terms + 1)):
        c = complex(rng.randint(-3, 3), rng.randint(-3, 3))
        a = Fraction(rng.randint(-4, 6), rng.choice([1, 2, 3]))
        p = rng.randrange(3)
        out = out + PH(c, a, p)
    return out


def _random_jordan(rng, n):
    blocks = []
    left = n
    while left > 0:
        s = rng.randint(1, min(2, left))
        eig = complex(rng.randint(-2, 2), rng.randint(-1, 1))
        blocks.append((eig, s))
        left -= s
    return JordanSpec(tuple(blocks))


def test_flow_randomized_exactness_with_forced_resonances():
    # acceptance-style randomized check: symbolic residual empty, always
    rng = random.Random(20240811)
    for trial in range(50):
        n_dim = rng.randint(2, 4)
        jord = _random_jordan(rng, n_dim)
        y = [[_random_expansion(rng) for _ in range(n_dim)] for _ in range(n_dim)]
        if trial % 2 == 0:
            # force a resonant entry: power so that alpha+1+(B_jj-B_ii) = 0
            diag = jord.diag_entries()
            i, j = rng.randrange(n_dim), rng.randrange(n_dim)
            q = diag[j] - diag[i]
            if q.im == 0:
                y[i][j] = y[i][j] + PH(1, Fraction(-1) - q.re)
        n = solve_commutator_flow(y, jord, max_logpow=40)
        assert mat_is_zero(commutator_flow_residual(n, y, jord))


def test_log_degree_cap_raises_with_location():
    jord = JordanSpec(((0, 1),))
    y = zeros(1)
    y[0][0] = PH(1, -1, 0)
    with pytest.raises(LogDegreeCapExceeded) as err:
        solve_commutator_flow(y, jord, max_logpow=0)
    assert "(1,1)" in str(err.value)


def test_build_order_zero_is_trivial():
    jord = JordanSpec(((Fraction(-1), 1), (Fraction(-2), 1)))
    r = zeros(2)
    r[0][0] = PH(1, Fraction(1, 2))
    plan = build_p_renorm(r, jord, 0)
    assert plan.order == 0
    assert np.allclose(plan.q_at(0.3), np.eye(2))
    assert np.allclose(plan.remainder_at(0.3), mat_eval(r, 0.3))


def test_build_stage_identity_exact():
    rng = random.Random(7)
    jord = _random_jordan(rng, 3)
    r = [[_random_expansion(rng) for _ in range(3)] for _ in range(3)]
    # keep inputs integrable-side to mimic a genuine remainder
    r = [[PH(1, Fraction(1, 2)) + e if i == j else e for j, e in enumerate(row)] for i, row in enumerate(r)]
    r = [[_shift_up(e) for e in row] for row in r]
    plan = build_p_renorm(r, jord, 2)
    assert mat_is_zero(stage_identity_residual(plan, r))


def _shift_up(e):
    # move powers above -1 so the input is a legal order a > -1 remainder
    out = PHExpansion.zero()
    for t in e.terms:
        p = t.power if t.power > -1 else t.power + abs(t.power.__floor__()) + Fraction(1, 3)
        out = out + PHExpansion((type(t)(t.coeff, p, t.logpow),))
    return out


def test_build_diagonal_extraction_of_offdiagonal_matrix():
    # strictly off-diagonal constant * z^a remainder: D^(1) = 0
    jord = JordanSpec(((Fraction(-1), 1), (Fraction(0), 1)))
    r = zeros(2)
    r[1][0] = PH(2, Fraction(1, 2))
    plan = build_p_renorm(r, jord, 1)
    assert mat_is_zero(plan.d_stages[0])


def test_remainder_decay_exponent_increases_per_stage():
    # fitted slope of ||R^(m)(z)|| over two decades equals m(a+1)+a within 0.1
    jord = JordanSpec(((Fraction(-4, 5), 1), (Fraction(-1, 2), 1)))
    a = Fraction(0)
    r = zeros(2)
    r[0][0] = PH(1.0, a)
    r[0][1] = PH(0.5, a) + PH(0.25, a + 1)
    r[1][0] = PH(-0.75, a)
    r[1][1] = PH(0.3, a)
    for m in (1, 2, 3):
        plan = build_p_renorm(r, jord, m)
        zs = np.geomspace(1e-4, 1e-2, 9)
        norms = [np.linalg.norm(plan.remainder_at(z), 2) for z in zs]
        slope = np.polyfit(np.log(zs), np.log(norms), 1)[0]
        assert abs(slope - float(m * (a + 1) + a)) < 0.1


def test_ep_factor_identity_at_one():
    jord = JordanSpec(((2 + 1j, 2), (Fraction(-1), 1)))
    e, einv = ep_factor(jord, 1.0)
    assert np.allclose(e, np.eye(3))
    assert np.allclose(einv, np.eye(3))


def test_ep_factor_diagonal_case():
    jord = JordanSpec(((Fraction(1), 1), (Fraction(-2), 1)))
    z = 0.37
    e, _ = ep_factor(jord, z)
    assert np.allclose(e, np.diag([z**-1.0, z**2.0]))


def test_ep_factor_two_block_and_inverse():
    b = 0.7 - 0.2j
    jord = JordanSpec(((b, 2),))
    z = 0.05
    e, einv = ep_factor(jord, z)
    lz = math.log(z)
    assert np.allclose(e, [[z**-b, -lz * z**-b], [0, z**-b]])
    assert np.linalg.norm(e @ einv - np.eye(2)) < 1e-12 * np.linalg.norm(e)


def test_select_m_examples():
    j0 = JordanSpec(((0, 1),))
    assert select_m_p(0, j0) == 0
    j1 = JordanSpec(((Fraction(-1), 1), (Fraction(0), 1)))  # spread 1
    assert select_m_p(0, j1) == 1
    j2 = JordanSpec(((Fraction(1), 1), (Fraction(-1), 1)))  # spread 2
    assert select_m_p(Fraction(-1, 2), j2) == 4


def test_renormalized_p_trivial_and_inverse():
    jord = JordanSpec(((0, 1), (0, 1)))
    r = zeros(2)
    plan = build_p_renorm(r, jord, 0)
    u = np.array([1.0 + 2j, -3.0])
    assert np.allclose(renormalized_p(plan, jord, u, 0.2), u)
    jord2 = JordanSpec(((Fraction(-1), 2),))
    r2 = zeros(2)
    r2[1][0] = PH(1, Fraction(1, 3))
    plan2 = build_p_renorm(r2, jord2, 1)
    w = renormalized_p(plan2, jord2, u, 0.05)
    back = renormalized_p_inverse(plan2, jord2, w, 0.05)
    assert np.allclose(back, u, rtol=1e-12)


def test_renormalized_kasner_structure():
    # Jordan block eigenvalue -1 reproduces the (x - log z * y, y) pair times z^-b
    jord = JordanSpec(((Fraction(-1), 2),))
    plan = build_p_renorm(zeros(2), jord, 0)
    z = 0.01
    u = np.array([0.3 + 0j, 1.1 + 0j])
    got = renormalized_p(plan, jord, u, z)
    expect = z ** 1.0 * np.array([u[0] - math.log(z) * u[1], u[1]])
    assert np.allclose(got, expect)


def test_conjugated_rhs_integrable_exponent():
    # conjugation bound: ||E R Q^-1 E^-1|| <= C z^(-1+margin) on a z-grid
    jord = JordanSpec(((Fraction(-1), 1), (Fraction(0), 1)))  # spread 1
    r = zeros(2)
    for i in range(2):
        for j in range(2):
            r[i][j] = PH(0.5 + 0.1 * i - 0.2 * j, Fraction(0))
    m = select_m_p(0, jord)
    plan = build_p_renorm(r, jord, m)
    zs = np.geomspace(1e-6, 1e-2, 12)
    vals = [np.linalg.norm(plan.conjugated_rhs_at(z), 2) * z ** (1 - 0.05) for z in zs]
    assert max(vals) < 1e3
    assert vals[0] <= vals[-1] * 10  # no blow-up toward z -> 0
