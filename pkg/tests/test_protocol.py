import math

import numpy as np
import pytest
from scipy import special

from wiretap_keys.channel import CsiNoiseModel, FadingDraw, draw_fading
from wiretap_keys.protocol import (
    KeyStarvation,
    ProtocolConfig,
    analytic_throughputs,
    decide_transmit,
    monte_carlo_run,
    run_session,
)


def _draw(g_m, g_w_est, g_w=None):
    g_w = g_w_est if g_w is None else g_w
    return FadingDraw(complex(math.sqrt(g_m)), complex(math.sqrt(g_w)), complex(math.sqrt(g_w_est)))


def test_decide_transmit_examples():
    cfg = ProtocolConfig(1.0, 1.0)
    d = decide_transmit(_draw(3, 1), cfg)
    assert d.transmit and d.c_secrecy_est == pytest.approx(1.0)
    assert not decide_transmit(_draw(1, 3), cfg).transmit
    assert not decide_transmit(_draw(2, 2), cfg).transmit
    assert not decide_transmit(_draw(3, 1), ProtocolConfig(1.0, 1.0, main_threshold=2.0)).transmit


def test_decide_transmit_uses_estimate():
    cfg = ProtocolConfig(1.0, 1.0, secrecy_threshold=0.5)
    # Eve truly stronger, but Alice estimates her weaker
    assert decide_transmit(_draw(3, 1, g_w=5), cfg).transmit


def test_config_validation():
    with pytest.raises(ValueError):
        ProtocolConfig(1.0, 1.0, safety_margin=0.1)
    with pytest.raises(ValueError):
        ProtocolConfig(1.0, 1.0, key_ratio=0)
    with pytest.raises(ValueError):
        ProtocolConfig(1.0, 1.0, beta="guess")
    ProtocolConfig(1.0, 1.0, safety_margin=0.1, secrecy_threshold=0.1, beta="measured")


def _secure_oracle(gm_bar, gw_bar, nodes=300):
    """E[(C_M - C_W) 1{g_W < g_M}] with a closed-form inner integral."""
    t, w = special.roots_laguerre(nodes)
    g = gm_bar * t
    mu = gw_bar
    # int_0^g ln(1+x) e^{-x/mu}/mu dx
    inner = -np.exp(-g / mu) * np.log1p(g) + np.exp(1 / mu) * (special.exp1(1 / mu) - special.exp1((1 + g) / mu))
    f = np.log2(1 + g) * -np.expm1(-g / mu) - inner / math.log(2)
    return float(np.sum(w * f))


@pytest.mark.parametrize("gm,gw", [(1.0, 1.0), (10.0, 10.0), (10.0, 1.0), (100.0, 3.0)])
def test_analytic_secure_throughput_matches_oracle(gm, gw):
    rep = analytic_throughputs(ProtocolConfig(gm, gw))
    assert rep.secure_throughput == pytest.approx(_secure_oracle(gm, gw), abs=1e-3)
    assert rep.true_secure_throughput == rep.secure_throughput and rep.leaked_throughput == 0


def test_analytic_eta_scaling():
    a = analytic_throughputs(ProtocolConfig(10.0, 1.0))
    b = analytic_throughputs(ProtocolConfig(10.0, 1.0, key_ratio=0.5))
    assert b.secure_throughput == pytest.approx(2 * a.secure_throughput, rel=1e-12)


def test_analytic_weak_eavesdropper_limit():
    rep = analytic_throughputs(ProtocolConfig(10.0, 1e-6))
    avg_cm = math.exp(0.1) * special.exp1(0.1) / math.log(2)
    assert rep.secure_throughput == pytest.approx(avg_cm, abs=1e-4)
    assert rep.transmit_fraction == pytest.approx(1.0, abs=1e-5)


def test_analytic_probability_of_region():
    # equal means: P(g_M > g_W) = 1/2
    assert analytic_throughputs(ProtocolConfig(5.0, 5.0)).transmit_fraction == pytest.approx(0.5, abs=1e-8)


def test_negative_comm_throughput_diagnostic():
    rep = analytic_throughputs(ProtocolConfig(10.0, 1.0))
    assert rep.comm_throughput < 0
    assert any("secrecy threshold" in d for d in rep.diagnostics)


def test_comm_throughput_identity():
    cfg = ProtocolConfig(10.0, 1.0, secrecy_threshold=1.0, beta=0.9)
    rep = analytic_throughputs(cfg)
    mc, _ = monte_carlo_run(cfg, 200_000, seed=11)
    assert rep.comm_throughput == pytest.approx(mc.comm_throughput, abs=4 * mc.comm_se)


def test_measured_beta_needs_full_stack():
    with pytest.raises(ValueError):
        analytic_throughputs(ProtocolConfig(10.0, 1.0, beta="measured"))


def test_monte_carlo_matches_analytic():
    cfg = ProtocolConfig(10.0, 3.0)
    rep = analytic_throughputs(cfg)
    mc, _ = monte_carlo_run(cfg, 100_000, seed=2)
    assert abs(mc.secure_throughput - rep.secure_throughput) < 3 * mc.secure_se


def test_perfect_csi_never_leaks():
    mc, _ = monte_carlo_run(ProtocolConfig(10.0, 3.0), 20_000, seed=3)
    assert mc.leaked_throughput == 0.0
    assert mc.true_secure_throughput == pytest.approx(mc.secure_throughput, rel=1e-12)


def _csi_cfg(sigma2, alpha, gm=100.0, gw=1.0, thr=0.2):
    return ProtocolConfig(gm, gw, secrecy_threshold=thr, safety_margin=alpha, csi=CsiNoiseModel(sigma2))


def test_partition_identity_and_alpha_monotonicity():
    prev = None
    for alpha in (0.0, 0.05, 0.1, 0.2):
        mc, _ = monte_carlo_run(_csi_cfg(10.0, alpha), 50_000, seed=4)
        total = mc.true_secure_throughput + mc.leaked_throughput
        assert total == pytest.approx(mc.secure_throughput, rel=1e-9)
        if prev is not None:
            assert mc.leaked_throughput <= prev.leaked_throughput
            assert mc.secure_throughput <= prev.secure_throughput
        prev = mc
    assert prev.leaked_throughput < monte_carlo_run(_csi_cfg(10.0, 0.0), 50_000, seed=4)[0].leaked_throughput


def test_estimation_asymmetry():
    noisy, _ = monte_carlo_run(_csi_cfg(10.0, 0.0, thr=0.0), 100_000, seed=5)
    assert noisy.leaked_fraction < 0.5
    sharp, _ = monte_carlo_run(_csi_cfg(1e-4, 0.0, thr=0.0), 100_000, seed=5)
    assert sharp.overestimate_fraction == pytest.approx(0.5, abs=0.05)


def test_zero_secrecy_frames_carry_no_key():
    cfg = ProtocolConfig(1.0, 1.0)
    draws = draw_fading(1.0, 1.0, cfg.csi, seed=6, size=5000)
    dec = decide_transmit(draws, cfg)
    assert not np.any(dec.transmit & (draws.snr_main <= draws.snr_wiretap))


def test_monte_carlo_deterministic():
    cfg = _csi_cfg(10.0, 0.1)
    a, _ = monte_carlo_run(cfg, 5000, seed=9)
    b, _ = monte_carlo_run(cfg, 5000, seed=9)
    assert repr(a) == repr(b)


def test_session_end_to_end_and_deterministic():
    cfg = ProtocolConfig(100.0, 1.0)
    msg = np.random.default_rng(0).integers(0, 2, 64)
    tr = run_session(cfg, msg, seed=3)
    assert np.array_equal(tr.decrypted, msg)
    assert not np.array_equal(tr.ciphertext, msg)
    tr.check_order()
    assert tr.ledger_disclosed_bits == tr.wire_bits == tr.disclosed_bits > 0
    assert run_session(cfg, msg, seed=3).to_json() == tr.to_json()


def test_session_starves_with_unreachable_threshold():
    cfg = ProtocolConfig(10.0, 1.0, secrecy_threshold=60.0)
    with pytest.raises(KeyStarvation) as info:
        run_session(cfg, np.zeros(64, np.uint8), seed=0, max_frames=5)
    assert "key_usage" not in info.value.trace.kinds()


def test_session_requires_one_time_pad():
    with pytest.raises(ValueError):
        run_session(ProtocolConfig(10.0, 1.0, key_ratio=0.5), np.zeros(8), seed=0)
