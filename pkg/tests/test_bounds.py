import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adasingan.bounds import (POLE_RTOL, BoundReport, BoundTerms, ConvOperator, assemble_report, f_fgm,
                              f_pgd, lip_bar, margin_loss, pgd_ratio, power_iteration, rademacher_factor,
                              rhs, spectral_norm)
from adasingan.errors import InvalidInputError
from oracles import conv_matrix, mp_f_fgm, mp_f_pgd, mp_lip_bar, mp_rhs, mp_w_check


def terms(spectral=(1.0, 1.0), frob=None, h=4, B=1.0, kappa=1.0, gamma=1.0, beta=0.05, m=10):
    frob = spectral if frob is None else frob
    return BoundTerms.from_norms(spectral, frob, h=h, B=B, kappa=kappa, gamma=gamma, beta=beta, m=m)


def rel(a, b):
    return abs(float(a) - float(b)) / max(abs(float(b)), 1e-300)


# --- spectral norm --------------------------------------------------------------

def test_power_iteration_identity_and_rank_one(rng):
    assert abs(spectral_norm(np.eye(7)) - 1) < 1e-12
    u, v = rng.standard_normal(5), rng.standard_normal(8)
    u, v = u / np.linalg.norm(u), v / np.linalg.norm(v)
    assert abs(spectral_norm(np.outer(u, v)) - 1) < 1e-12


def test_power_iteration_zero_operator():
    assert spectral_norm(np.zeros((4, 3))) == 0.0


def test_power_iteration_warm_start(rng):
    W = rng.standard_normal((20, 15))
    s, v = power_iteration(W, iters=500)
    s2, _ = power_iteration(W * 1.01, iters=3, v0=v)
    assert rel(s2, 1.01 * s) < 1e-6


def test_power_iteration_rejects_zero_iters():
    with pytest.raises(InvalidInputError):
        power_iteration(np.eye(2), iters=0)


def test_conv_operator_adjoint(rng):
    w = rng.standard_normal((3, 2, 3, 3))
    op = ConvOperator(w, (5, 4), 1)
    x, y = rng.standard_normal(op.shape[1]), rng.standard_normal(op.shape[0])
    assert abs(op.matvec(x) @ y - x @ op.rmatvec(y)) < 1e-10
    assert np.allclose(op.todense(), conv_matrix(w, (5, 4), 1))


# --- factor formulas ---------------------------------------------------------------

def test_f_fgm_examples():
    t = terms((1.0, 1.0))
    assert t.W_dot == 1 and t.W_check == 2
    assert f_fgm(t, 1.0) == pytest.approx(18.0, rel=1e-15)
    t2 = terms((2.0, 3.0), (2.5, 4.0))
    assert f_fgm(t2, 0.0) == pytest.approx(t2.W_dot**2 * t2.W_check, rel=1e-15)


@pytest.mark.parametrize("kw", [dict(kappa=0.0), dict(kappa=-1.0), dict(B=0.0)])
def test_f_fgm_rejects_nonpositive(kw):
    with pytest.raises(InvalidInputError):
        f_fgm(terms(**kw), 1.0)


def test_lip_bar_examples():
    assert lip_bar(terms((2.0, 3.0))) == 48
    for d in range(1, 8):
        assert lip_bar(terms((1.0,) * d)) == d


def test_f_pgd_examples():
    t = BoundTerms(W_dot=1.0, W_check=1.0, lip_bar=1.0, d=2, h=1, B=1.0, kappa=2.0, gamma=1.0,
                   beta=0.05, m=1)
    assert f_pgd(t, 1.0, 1, 0.5) == pytest.approx(0.5, rel=1e-15)
    assert f_pgd(t, 1.0, 0, 0.5) == 0.0


def test_f_pgd_pole_is_flagged_series():
    kappa, alpha, lip = 2.0, 0.5, 2.0  # kappa == 2 alpha lip exactly
    val, flagged = pgd_ratio(kappa, alpha, lip, 4)
    assert flagged and val == pytest.approx(4 / kappa)
    near = lip * (1 + 0.1 * POLE_RTOL)
    v2, f2 = pgd_ratio(kappa, alpha, near, 4)
    assert f2 and math.isfinite(v2)
    t = BoundTerms(W_dot=1.0, W_check=1.0, lip_bar=lip, d=2, h=1, B=1.0, kappa=kappa, gamma=1.0,
                   beta=0.05, m=1)
    rep = assemble_report(0, 0, t, 1.0, 4, alpha, 0.0, 0.0)
    assert rep.pgd_near_pole and math.isfinite(rep.F_pgd)


def test_rhs_examples():
    t = terms(m=10**8)
    collapse = rhs(t, 0.0, 1.0)
    assert collapse == pytest.approx(math.sqrt(math.log(1e8 / 0.05) / 1e8), rel=1e-12)
    t1, t2 = terms(gamma=1.0), terms(gamma=2.0)
    assert rhs(t2, 3.0, 1.0) == pytest.approx(rhs(t1, 3.0, 1.0) / 2, rel=1e-14)


def test_margin_loss_examples():
    assert margin_loss([1.0, 2.0, 0.5], 1, 0.0) == 0.0
    assert margin_loss([1.0, -2.0, 0.5], [1, -1, 1], 0.0) == 0.0
    assert margin_loss([1.0, -2.0, 0.5], [1, -1, 1], 1e9) == 1.0
    assert margin_loss([2.0, -1.0, 0.5], 1, 1.0) == pytest.approx(2 / 3)
    with pytest.raises(InvalidInputError):
        margin_loss([], 1, 1.0)


def test_margin_loss_brute_force(rng):
    s, y = rng.standard_normal(200), rng.choice([-1, 1], 200)
    g = 0.3
    assert margin_loss(s, y, g) == sum(1 for a, b in zip(s, y) if a * b <= g) / 200


def test_rademacher_examples(rng):
    clean, adv = rademacher_factor(1.0, 2, 8, 0.0)
    assert clean == pytest.approx(2 * math.sqrt(2 * math.log(4) / 8)) and adv == clean
    for eps in rng.uniform(0, 5, 100):
        c, a = rademacher_factor(1.3, 7, 50, float(eps))
        assert a / c == pytest.approx(1 + eps, rel=1e-14)


# --- independent evaluator -----------------------------------------------------------

def _random_config(rng):
    d = int(rng.integers(1, 7))
    spectral = rng.uniform(0.1, 2.5, d)
    frob = spectral * rng.uniform(1.0, 4.0, d)
    return dict(spectral=tuple(spectral), frob=tuple(frob), h=int(rng.integers(1, 64)),
                B=float(rng.uniform(0.1, 20)), kappa=float(rng.uniform(0.05, 30)),
                gamma=float(rng.uniform(0.1, 3)), beta=float(rng.uniform(0.01, 0.5)),
                m=int(rng.integers(1, 10**5)))


def check_against_mpmath(rng, draws=1000, tol=1e-10):
    """Compare every bound quantity with the mpmath transcription; returns the worst error."""
    worst = 0.0
    for _ in range(draws):
        c = _random_config(rng)
        t = terms(**c)
        r, alpha, steps = float(rng.uniform(0, 3)), float(rng.uniform(0.01, 1)), int(rng.integers(0, 10))
        lip_ref = mp_lip_bar(c["spectral"])
        wdot = mpmath.fprod([mpmath.mpf(s) for s in c["spectral"]])
        wcheck = mp_w_check(c["spectral"], c["frob"])
        pairs = [(t.lip_bar, lip_ref), (t.W_check, wcheck),
                 (f_fgm(t, r), mp_f_fgm(wdot, wcheck, r, c["kappa"], c["B"]))]
        den = c["kappa"] - 2 * alpha * t.lip_bar
        if abs(den) > 1e-3 * c["kappa"]:
            pairs.append((f_pgd(t, r, steps, alpha), mp_f_pgd(wdot, wcheck, lip_ref, c["kappa"], alpha, steps)))
        Fv = f_fgm(t, r)
        pairs.append((rhs(t, Fv, r), mp_rhs(c["B"], r, t.d, c["h"], Fv, c["m"], c["beta"], c["gamma"])))
        for ours, ref in pairs:
            if ref == 0:
                assert ours == 0
                continue
            e = rel(ours, ref)
            worst = max(worst, e)
            assert e < tol, (c, ours, ref)
    return worst


def test_formulas_match_mpmath_evaluator(rng):
    check_against_mpmath(rng, draws=300)


def check_monotonicity(rng, configs=200):
    for _ in range(configs):
        c = _random_config(rng)
        t = terms(**c)
        r1, r2 = sorted(rng.uniform(0.01, 3, 2))
        if r2 - r1 < 1e-6:
            continue
        assert f_fgm(t, r1) < f_fgm(t, r2)
        Fp = f_pgd(t, r1, 3, 0.1)
        if t.d * t.h == 1:
            # log(d h) = 0: the complexity term drops out and r has no effect.
            assert rhs(t, f_fgm(t, r1), r1) == rhs(t, f_fgm(t, r2), r2)
        else:
            assert rhs(t, f_fgm(t, r1), r1) < rhs(t, f_fgm(t, r2), r2)
            assert rhs(t, Fp, r1) < rhs(t, Fp, r2)
        g1, g2 = sorted(rng.uniform(0.1, 3, 2))
        if g2 - g1 > 1e-6:
            assert rhs(terms(**{**c, "gamma": g1}), 1.0, r1) > rhs(terms(**{**c, "gamma": g2}), 1.0, r1)
        # q < 1: F_pgd increasing in t and bounded by the t -> inf limit.
        alpha = float(rng.uniform(0.05, 0.95)) * c["kappa"] / (2 * t.lip_bar)
        vals = [f_pgd(t, r1, s, alpha) for s in range(1, 12)]
        assert all(a < b for a, b in zip(vals, vals[1:])) or vals[0] == vals[-1] == 0
        limit = (1 / (t.kappa - 2 * alpha * t.lip_bar)) ** 2 * t.W_dot * (1 + t.W_dot) * t.W_check
        assert vals[-1] <= limit * (1 + 1e-12)
        # q > 1: geometric growth in t.
        alpha_big = float(rng.uniform(1.5, 3.0)) * c["kappa"] / (2 * t.lip_bar)
        q = 2 * alpha_big * t.lip_bar / t.kappa
        a5, a10 = f_pgd(t, r1, 5, alpha_big), f_pgd(t, r1, 10, alpha_big)
        assert a10 > a5 * q ** 8


def test_monotonicity(rng):
    check_monotonicity(rng, configs=200)


@given(m=st.integers(10, 10**7), beta=st.floats(1e-3, 0.5))
def test_rhs_decreasing_in_m_when_log_large(m, beta):
    if math.log(m / beta) < 2:
        return
    t1, t2 = terms(m=m, beta=beta), terms(m=m + 1, beta=beta)
    assert rhs(t2, 0.5, 1.0) <= rhs(t1, 0.5, 1.0)


def check_spectral_vs_svd(rng, n_dense=100, n_conv=20, tol=1e-4):
    worst = 0.0
    for _ in range(n_dense):
        a, b = int(rng.integers(1, 129)), int(rng.integers(1, 129))
        W = rng.standard_normal((a, b))
        ref = np.linalg.svd(W, compute_uv=False)[0]
        worst = max(worst, rel(power_iteration(W, iters=5000, tol=1e-8)[0], ref))
    for _ in range(n_conv):
        o, c, k = int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.choice([1, 3]))
        hw = (int(rng.integers(3, 8)), int(rng.integers(3, 8)))
        w = rng.standard_normal((o, c, k, k))
        op = ConvOperator(w, hw, k // 2)
        ref = np.linalg.svd(conv_matrix(w, hw, k // 2), compute_uv=False)[0]
        worst = max(worst, rel(power_iteration(op, iters=5000, tol=1e-8)[0], ref))
    assert worst < tol, worst
    return worst


def test_spectral_norm_vs_svd(rng):
    check_spectral_vs_svd(rng, n_dense=30, n_conv=8)


def test_report_roundtrip():
    t = terms((1.2, 0.8), (2.0, 1.5))
    rep = assemble_report(2, 100, t, 1.0, 3, 0.4, 0.25, 0.5)
    assert BoundReport.from_dict(rep.to_dict()) == rep
    assert rep.rhs_fgm >= 0 and rep.rhs_pgd >= 0 and rep.F_pgd >= 0
