import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from wiretap_keys.constellation import (
    Constellation,
    ConstellationError,
    OptimizationFailure,
    build_shaped_ask,
    count_coded_levels,
    dumps_constellation,
    info_profile,
    loads_constellation,
    mutual_information,
    natural_labels,
    optimize_constellation,
    optimize_shaping,
    qam_from_ask,
    qam_mutual_information,
)


def quad_mutual_information(points, pmf, noise_var):
    """Direct adaptive integration of I(X;Y) = h(Y) - h(Y|X)."""
    points = np.asarray(points, float)
    pmf = np.asarray(pmf, float)
    s = math.sqrt(noise_var)

    def py(y):
        return float(np.sum(pmf * np.exp(-((y - points) ** 2) / (2 * noise_var)))) / math.sqrt(
            2 * math.pi * noise_var
        )

    def integrand(y):
        p = py(y)
        return -p * math.log2(p) if p > 0 else 0.0

    lo, hi = points.min() - 12 * s, points.max() + 12 * s
    brk = list(points)
    hy = quad(integrand, lo, hi, points=brk, limit=400, epsabs=1e-12)[0]
    hyx = 0.5 * math.log2(2 * math.pi * math.e * noise_var)
    return hy - hyx


def test_natural_labels_offsets():
    assert natural_labels(4) == (2, pytest.approx(np.array([0, 1, 2, 3])))
    m, lab = natural_labels(12)
    assert m == 4 and lab[0] == 2 and lab[-1] == 13
    m, lab = natural_labels(6)
    assert m == 3 and list(lab) == [1, 2, 3, 4, 5, 6]


def test_table_one_label_rows():
    # label rows of the published 12-point constellation, l_0 first
    rows = [
        [0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1],
        [1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0],
        [0, 0, 1, 1, 1, 1, 0, 0, 0, 0, 1, 1],
        [0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1],
    ]
    c = build_shaped_ask(12, 0.25779, 0.4895)
    for k, row in enumerate(rows):
        assert list(c.bit(k)) == row


def test_bit_planes_roundtrip():
    c = build_shaped_ask(6, 0.3, 0.5)
    sym = np.arange(6).repeat(3)
    planes = c.bit_planes(sym)
    assert planes.shape == (3, 18)
    assert np.array_equal(c.symbols_from_bits(planes), sym)
    bad = np.zeros((3, 1), dtype=np.uint8)  # label 0 is unused for 6 points
    assert c.symbols_from_bits(bad)[0] == -1


@pytest.mark.parametrize("n", [1, 3, 0])
def test_odd_or_tiny_sizes_rejected(n):
    with pytest.raises(ConstellationError):
        build_shaped_ask(n, 1.0, 0.0)


def test_constellation_validation():
    with pytest.raises(ConstellationError):
        Constellation(np.array([0.0, 1.0]), np.array([0.6, 0.6]), 1, np.array([0, 1]))
    with pytest.raises(ConstellationError):
        Constellation(np.array([1.0, 0.0]), np.array([0.5, 0.5]), 1, np.array([0, 1]))
    with pytest.raises(ConstellationError):
        Constellation(np.array([0.0, 1.0]), np.array([0.5, 0.5]), 1, np.array([1, 1]))


@pytest.mark.parametrize(
    "n,alpha,lam,noise",
    [(2, 1.0, 0.0, 1.0), (4, 0.45, 0.3, 0.2), (8, 0.3, 0.6, 0.05), (12, 0.25779, 0.4895, 10 ** -1.3)],
)
def test_mutual_information_matches_adaptive_quadrature(n, alpha, lam, noise):
    c = build_shaped_ask(n, alpha, lam)
    assert mutual_information(c, noise) == pytest.approx(
        quad_mutual_information(c.points, c.pmf, noise), abs=1e-7
    )


def test_bpsk_high_and_low_snr_limits():
    c = build_shaped_ask(2, 1.0, 0.0)
    assert mutual_information(c, 1e-3) == pytest.approx(1.0, abs=1e-9)
    assert mutual_information(c, 1e3) < 1e-3


@settings(max_examples=15, deadline=None)
@given(
    st.sampled_from([2, 4, 6, 8]),
    st.floats(0.1, 1.0),
    st.floats(0.0, 1.0),
    st.floats(0.02, 2.0),
)
def test_chain_rule_and_bounds(n, alpha, lam, noise):
    c = build_shaped_ask(n, alpha, lam)
    p = info_profile(c, noise)
    assert sum(p.per_level_cond_entropy) == pytest.approx(p.cond_entropy, abs=1e-9)
    assert -1e-9 <= p.mutual_info <= p.entropy + 1e-9
    assert p.mutual_info <= math.log2(n) + 1e-9
    assert all(0.0 <= r <= 1.0 for r in p.optimal_rates)


def test_mutual_information_below_gaussian_capacity():
    noise = 0.1
    c = optimize_shaping(8, noise)
    assert c.power <= 1.0
    assert mutual_information(c, noise) < 0.5 * math.log2(1 + 1 / noise)


def test_serialization_roundtrip_exact():
    c = build_shaped_ask(12, 0.25779, 0.4895)
    c2 = loads_constellation(dumps_constellation(c))
    assert np.array_equal(c.points, c2.points)
    assert np.array_equal(c.pmf, c2.pmf)
    assert np.array_equal(c.labels, c2.labels)
    assert c2.shaping == c.shaping


def test_serialization_rational_pmf():
    c = build_shaped_ask(2, 1.0, 0.0)
    text = dumps_constellation(c, rational_pmf=[Fraction(1, 2), Fraction(1, 2)])
    assert "1/2" in text
    assert np.array_equal(loads_constellation(text).pmf, [0.5, 0.5])


def test_qam_mutual_information_is_twice_ask():
    c = optimize_shaping(4, 0.1)
    snr = 10.0
    re, im = qam_from_ask(c)
    assert re.power == pytest.approx(0.5 * c.power)
    assert qam_mutual_information(c, snr) == pytest.approx(2 * mutual_information(re, 1 / (2 * snr)))


# published operating points: |X|, I(X;Y_M), C_M, H(X), optimal rates
TABLE_TWO = {
    2: (4, 0.684, 0.685, 1.603, (0.189, 0.891)),
    7: (6, 1.291, 1.294, 2.109, (0.257, 0.925, 1.0)),
    10: (8, 1.726, 1.730, 2.502, (0.286, 0.938, 1.0)),
    13: (12, 2.192, 2.194, 3.000, (0.264, 0.928, 1.0, 1.0)),
}


@pytest.mark.parametrize("snr_db", sorted(TABLE_TWO))
def test_optimizer_reproduces_table_two(snr_db):
    size, mi, cap, ent, rates = TABLE_TWO[snr_db]
    noise = 10 ** (-snr_db / 10)
    c = optimize_constellation(noise)
    p = info_profile(c, noise)
    assert c.size == size
    assert p.mutual_info == pytest.approx(mi, abs=0.01)
    assert 0.5 * math.log2(1 + 1 / noise) == pytest.approx(cap, abs=0.01)
    assert p.entropy == pytest.approx(ent, abs=0.01)
    assert np.allclose(p.optimal_rates, rates, atol=0.01)
    assert count_coded_levels(p) <= 2


def test_optimizer_fails_below_supported_range():
    with pytest.raises(OptimizationFailure):
        optimize_constellation(1.0)


def test_fixed_size_request():
    c = optimize_constellation(10 ** -1.3, num_points=12)
    assert c.size == 12
