import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import enumerate_level, m2_instance
from wiretap_keys.channel import rng_for
from wiretap_keys.constellation import (
    InfoProfile,
    build_shaped_ask,
    info_profile,
    optimize_constellation,
)
from wiretap_keys.ldpc import SHIPPED_RATES, DegreeDistribution, LdpcCode, build_code
from wiretap_keys.reconciliation import (
    LevelPlan,
    PlanError,
    demap,
    efficiency,
    encode_syndromes,
    exit_curves,
    gaussian_apriori,
    j_function,
    j_inverse,
    level_cond_entropy_given_others,
    llr_information,
    log_joint,
    multistage_decode,
    plan_rates,
    tunnel_open,
)


def _profile(rates, h=2.0, i=1.0):
    return InfoProfile(i, h, h - i, tuple(1.0 - r for r in rates))


def test_plan_thirteen_db_row():
    plan = plan_rates(_profile((0.264, 0.928, 1.0, 1.0)), SHIPPED_RATES)
    assert plan.practical_rates == (0.25, 0.86, 1.0, 1.0)
    assert plan.code_rates[2:] == (None, None)


def test_plan_two_db_row():
    plan = plan_rates(_profile((0.19, 0.892)), SHIPPED_RATES)
    assert plan.practical_rates == (0.16, 0.86)


@pytest.mark.parametrize(
    "opt,expected",
    [
        ((0.257, 0.925, 1.0), (0.24, 0.86, 1.0)),
        ((0.286, 0.938, 1.0), (0.27, 0.88, 1.0)),
        ((0.254, 0.923, 1.0, 1.0, 1.0), (0.24, 0.86, 1.0, 1.0, 1.0)),
    ],
)
def test_plan_other_rows(opt, expected):
    assert plan_rates(_profile(opt), SHIPPED_RATES).practical_rates == expected


def test_plan_all_unit_rates_discloses_nothing():
    plan = plan_rates(_profile((1.0, 1.0)), SHIPPED_RATES)
    assert plan.coded_levels == [] and plan.disclosure_rate == 0.0


def test_plan_fails_below_smallest_code():
    with pytest.raises(PlanError):
        plan_rates(_profile((0.10, 0.8)), SHIPPED_RATES)


def test_plan_validator_requires_total_disclosure():
    with pytest.raises(PlanError):
        LevelPlan((0.3, 0.9), (0.29, 0.95), (0.29, 0.95))
    # a level above its optimum is fine when another level compensates
    LevelPlan((0.3, 0.9), (0.2, 0.95), (0.2, 0.95))
    with pytest.raises(PlanError):
        LevelPlan((0.3, 1.0), (0.2, 0.99), (0.2, 0.99))


# published rates, information values and efficiencies
TABLE_TWO = [
    (2, (0.16, 0.86), 0.684, 1.603, 0.909),
    (10, (0.27, 0.88, 1), 1.726, 2.502, 0.9571),
    (13, (0.25, 0.86, 1, 1), 2.192, 3.000, 0.9615),
    (20, (0.24, 0.86, 1, 1, 1), 3.327, 4.149, 0.976),
]


@pytest.mark.parametrize("snr,rates,mi,h,eff", TABLE_TWO)
def test_efficiency_identity(snr, rates, mi, h, eff):
    n = 100_000
    disclosed = round(n * sum(1 - r for r in rates))
    prof = InfoProfile(mi, h, h - mi, (h - mi,))
    assert efficiency(disclosed, n, prof) == pytest.approx(eff, abs=0.005)


def test_encode_syndromes_hand_example():
    c = build_shaped_ask(4, 0.45, 0.2)
    code = LdpcCode.from_checks(4, [[0, 1], [1, 2, 3]])
    plan = LevelPlan((0.5, 0.5), (0.5, 0.5), (0.5, 0.5))
    sym = np.array([0, 1, 3, 2])  # labels 00, 01, 11, 10 (l_1 l_0)
    l0 = [0, 1, 1, 0]
    l1 = [0, 0, 1, 1]
    syn = encode_syndromes(c, plan, sym, [code, code])
    assert list(syn[0]) == [l0[0] ^ l0[1], l0[1] ^ l0[2] ^ l0[3]]
    assert list(syn[1]) == [l1[0] ^ l1[1], l1[1] ^ l1[2] ^ l1[3]]


def test_encode_syndromes_zero_planes_and_rate_one():
    c = build_shaped_ask(4, 0.45, 0.2)
    code = build_code(DegreeDistribution.regular(3, 6), 40, seed=0)
    plan = LevelPlan((0.4, 1.0), (0.4, 1.0), (0.4, None))
    # point 0 has label 00
    syn = encode_syndromes(c, plan, np.zeros(40, int), [code, None])
    assert not syn[0].any() and syn[1].size == 0
    with pytest.raises(ValueError):
        encode_syndromes(c, plan, np.zeros(41, int), [code, None])


def _demap_enumerated(c, y, noise_var, ext, level):
    """Per-symbol brute force with independent bit priors from the extrinsics."""
    out = np.zeros(y.size)
    for i in range(y.size):
        num = den = 0.0
        for j in range(c.size):
            w = c.pmf[j] * math.exp(-((y[i] - c.points[j]) ** 2) / (2 * noise_var))
            for p in range(c.label_bits):
                if p == level:
                    continue
                p0 = 1.0 / (1.0 + math.exp(-ext[p, i]))
                w *= p0 if c.bit(p)[j] == 0 else 1.0 - p0
            if c.bit(level)[j] == 0:
                num += w
            else:
                den += w
        out[i] = math.log(num) - math.log(den)
    return out


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([4, 6, 8]), st.integers(0, 2**31))
def test_demapper_matches_enumeration(size, seed):
    rng = np.random.default_rng(seed)
    c = build_shaped_ask(size, 0.35, 0.4)
    nv = 0.05
    y = rng.normal(0, 1.0, 7)
    ext = rng.normal(0, 3.0, (c.label_bits, 7))
    for k in range(c.label_bits):
        got = demap(c, log_joint(c, y, nv), ext, k)
        assert np.allclose(got, _demap_enumerated(c, y, nv, ext, k), atol=1e-9)


def test_demapper_ignores_own_extrinsic_and_is_idempotent():
    c = build_shaped_ask(8, 0.3, 0.5)
    rng = np.random.default_rng(1)
    logp = log_joint(c, rng.normal(0, 1, 20), 0.05)
    ext = rng.normal(0, 2, (3, 20))
    a = demap(c, logp, ext, 1)
    ext2 = ext.copy()
    ext2[1] = 99.0
    assert np.array_equal(a, demap(c, logp, ext2, 1))
    assert np.array_equal(a, demap(c, logp, ext, 1))


@pytest.mark.parametrize("n,seed", [(3, 0), (4, 1), (5, 2), (6, 3), (6, 4)])
def test_multistage_posteriors_match_enumeration(n, seed):
    c, nv, codes, plan, y, syn = m2_instance(n, seed)
    res = multistage_decode(c, plan, y, syn, codes, nv, sweeps=1, max_iter=2 * n, early_stop=False)
    exact0 = enumerate_level(c, nv, y, codes[0].check_lists(), syn[0], 0, {})
    assert np.allclose(res.level_posteriors[0], exact0, atol=1e-5)
    # level 1 sees level 0's extrinsic as independent priors
    ext0 = res.level_posteriors[0] - demap(c, log_joint(c, y, nv), np.zeros((2, n)), 0)
    exact1 = enumerate_level(c, nv, y, codes[1].check_lists(), syn[1], 1, {0: ext0})
    assert np.allclose(res.level_posteriors[1], exact1, atol=1e-5)


def test_noiseless_reconciliation_is_immediate():
    nv_design = 10 ** -1.3
    c = optimize_constellation(nv_design)
    prof = info_profile(c, nv_design)
    plan = plan_rates(prof, SHIPPED_RATES)
    n = 500
    codes = [None if r is None else build_code(DegreeDistribution.regular(3, 4 if r < 0.5 else 21), n, k)
             for k, r in enumerate(plan.code_rates)]
    plan = LevelPlan(plan.optimal_rates, tuple(1.0 if cd is None else cd.rate for cd in codes), plan.code_rates)
    rng = rng_for(0)
    sym = c.sample(n, rng)
    y = c.points[sym] + 1e-3 * rng.standard_normal(n)
    syn = encode_syndromes(c, plan, sym, codes)
    res = multistage_decode(c, plan, y, syn, codes, 1e-6, reference=sym, profile=prof)
    assert res.success and res.sweeps == 1
    assert res.disclosed_bits == sum(s.size for s in syn)
    assert np.array_equal(res.symbols, sym)


def test_failed_decode_reports_failure():
    c, nv, codes, plan, y, syn = m2_instance(6, 9)
    bad = [s ^ 1 for s in syn]
    res = multistage_decode(c, plan, y + 5.0, bad, codes, nv, sweeps=2, reference=np.zeros(6, int))
    assert not res.success


def test_j_function_inverse():
    for mi in (0.05, 0.3, 0.7, 0.99):
        assert j_function(j_inverse(mi)) == pytest.approx(mi, abs=1e-9)
    assert j_function(0.0) == 0.0


def test_gaussian_apriori_information():
    rng = np.random.default_rng(0)
    bits = rng.integers(0, 2, 200_000)
    for mi in (0.2, 0.6, 0.9):
        assert llr_information(bits, gaussian_apriori(bits, mi, rng)) == pytest.approx(mi, abs=0.01)


def test_exit_demapper_end_point_matches_quadrature():
    nv = 10 ** -1.3
    c = optimize_constellation(nv)
    curves = exit_curves(c, nv, 0, None, mc_frames=2, seed=3, n=20_000, grid=[0.0, 1.0])
    target = 1.0 - level_cond_entropy_given_others(c, nv, 0)
    assert curves.demapper[-1] == pytest.approx(target, abs=0.01)
    # no a-priori: the level sees the channel alone
    assert curves.demapper[0] == pytest.approx(info_profile(c, nv).optimal_rates[0], abs=0.01)
    # rate-one level: identity decoder curve
    assert np.allclose(curves.decoder, curves.ia)


def test_tunnel_open_logic():
    from wiretap_keys.reconciliation import ExitCurves

    ia = np.linspace(0, 1, 11)
    assert tunnel_open(ExitCurves(ia, 0.3 + 0.7 * ia, np.minimum(1, 0.2 + ia)))
    assert not tunnel_open(ExitCurves(ia, 0.5 * ia, 0.5 * ia))
