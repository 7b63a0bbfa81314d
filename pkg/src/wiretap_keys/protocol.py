"""Opportunistic key agreement over quasi-static Rayleigh fading.

Two tiers share one configuration.  The abstract tier replaces coding by
capacities and evaluates the average throughputs either by quadrature
(perfect CSI) or by Monte Carlo.  The full-stack tier sends real shaped
constellations, reconciles them with the multilevel decoder and hashes
the result into keys.

Averages over a region D are taken over all fading draws with the
indicator of D applied, ``E[X 1_D]``, so that contributions from D and
its complement add up to a per-channel-use figure.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Union

import numpy as np
from scipy import integrate

from .channel import (
    BRANCH_BOB,
    BRANCH_FADING,
    BRANCH_SOURCE,
    CsiNoiseModel,
    FadingDraw,
    Seed,
    draw_fading,
    instantaneous_capacities,
    rng_for,
    secrecy_capacity,
    transmit_fading,
)
from .constellation import (
    Constellation,
    InfoProfile,
    OptimizationFailure,
    info_profile,
    mutual_information,
    optimize_constellation,
    qam_from_ask,
)
from .ldpc import DegreeDistribution, LdpcCode, shipped_codebook
from .reconciliation import (
    LevelPlan,
    PlanError,
    build_level_codes,
    encode_syndromes,
    multistage_decode,
    plan_rates,
)
from .secrecy import (
    KeyReservoir,
    LeakageLedger,
    NoKeyError,
    SecretKey,
    one_time_pad,
    privacy_amplify,
)
from .wire import SyndromeFrame, constellation_id, dumps_hash_seed, loads_hash_seed

Beta = Union[float, str]

# H(X) of the random symbols is modelled as C_M plus this many bits
ENTROPY_OVERHEAD = 2.0
# lowest SNR (dB, per real dimension) the shipped code rates support
MIN_DESIGN_SNR_DB = 2.0


class KeyStarvation(NoKeyError):
    """The frame budget ran out before enough key existed for the message."""

    def __init__(self, msg: str, trace: "SessionTrace"):
        super().__init__(msg)
        self.trace = trace


@dataclass(frozen=True)
class ProtocolConfig:
    """Thresholds, key ratio, safety margin and channel statistics.

    SNRs are linear.  ``safety_margin`` is ``alpha = r0 / n`` in bits per
    channel use.  ``beta`` is a fixed efficiency or ``"measured"``, which
    only the full-stack tier can honour.
    """

    mean_snr_main: float
    mean_snr_wiretap: float
    secrecy_threshold: float = 0.0
    main_threshold: float = 0.0
    key_ratio: float = 1.0
    safety_margin: float = 0.0
    csi: CsiNoiseModel = field(default_factory=lambda: CsiNoiseModel(0.0))
    beta: Beta = 1.0
    # full-stack only
    safety_bits: int = 30
    slack_bits: int = 30
    design_backoff_db: float = 1.0
    sweeps: int = 10
    max_iter: int = 100

    def __post_init__(self):
        if not (self.mean_snr_main > 0 and self.mean_snr_wiretap > 0):
            raise ValueError("mean SNRs must be positive")
        if self.secrecy_threshold < 0 or self.main_threshold < 0:
            raise ValueError("thresholds must be >= 0")
        if not 0 < self.key_ratio <= 1:
            raise ValueError("key_ratio must lie in (0, 1]")
        if self.safety_margin < 0:
            raise ValueError("safety_margin must be >= 0")
        if self.safety_margin > 0 and self.secrecy_threshold < self.safety_margin:
            raise ValueError("secrecy_threshold must be >= safety_margin when a margin is used")
        if isinstance(self.beta, str):
            if self.beta != "measured":
                raise ValueError("beta must be a number in (0, 1] or 'measured'")
        elif not 0 < self.beta <= 1:
            raise ValueError("beta must lie in (0, 1]")

    @property
    def normalization(self) -> float:
        return math.log2(1.0 + self.mean_snr_main)

    def fixed_beta(self) -> float:
        if self.beta == "measured":
            raise ValueError("beta='measured' needs the full-stack tier")
        return float(self.beta)


@dataclass
class ThroughputReport:
    """Average throughputs in bits per channel use (not normalised)."""

    secure_throughput: float
    comm_throughput: float
    true_secure_throughput: float
    leaked_throughput: float
    transmit_fraction: float
    normalization: float
    secure_se: float = 0.0
    comm_se: float = 0.0
    frames: int = 0
    leaked_fraction: float = 0.0
    overestimate_fraction: float = float("nan")
    measured_beta: float = float("nan")
    diagnostics: list[str] = field(default_factory=list)

    def normalized(self) -> dict[str, float]:
        z = self.normalization
        return {
            "Ts": self.secure_throughput / z,
            "Tc": self.comm_throughput / z,
            "Rs": self.true_secure_throughput / z,
            "Rl": self.leaked_throughput / z,
        }


@dataclass
class TraceEvent:
    kind: str
    frame: int
    detail: dict = field(default_factory=dict)
    disclosed_bits: int = 0
    public_bits: int = 0
    key_bits: int = 0


_ORDER = {"transmission": 0, "reconciliation": 1, "privacy_amplification": 2}


@dataclass
class SessionTrace:
    events: list[TraceEvent] = field(default_factory=list)
    message: np.ndarray | None = None
    ciphertext: np.ndarray | None = None
    decrypted: np.ndarray | None = None
    ledger_disclosed_bits: int = 0

    def add(self, kind: str, frame: int, **kw) -> TraceEvent:
        ev = TraceEvent(kind, frame, **kw)
        self.events.append(ev)
        return ev

    def kinds(self) -> list[str]:
        return [e.kind for e in self.events]

    @property
    def disclosed_bits(self) -> int:
        return sum(e.disclosed_bits for e in self.events)

    @property
    def public_bits(self) -> int:
        return sum(e.public_bits for e in self.events)

    @property
    def wire_bits(self) -> int:
        return 8 * sum(len(e.detail.get("wire", "")) // 2 for e in self.events)

    def check_order(self) -> None:
        """Raise if events leave the transmit, reconcile, amplify, use order."""
        extracted = False
        last: dict[int, int] = {}
        for e in self.events:
            if e.kind == "key_usage":
                if not extracted:
                    raise AssertionError("key used before any extraction")
                continue
            if e.kind not in _ORDER:
                continue
            step = _ORDER[e.kind]
            if step != last.get(e.frame, -1) + 1:
                raise AssertionError(f"{e.kind} out of order in frame {e.frame}")
            last[e.frame] = step
            extracted |= e.kind == "privacy_amplification"

    def to_json(self) -> str:
        def enc(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            raise TypeError(type(v))

        body = {
            "events": [asdict(e) for e in self.events],
            "message": self.message,
            "ciphertext": self.ciphertext,
            "decrypted": self.decrypted,
        }
        return json.dumps(body, default=enc, sort_keys=True)


# -- decision ----------------------------------------------------------------


@dataclass(frozen=True)
class TransmitDecision:
    transmit: bool | np.ndarray
    c_main: float | np.ndarray
    c_wiretap_est: float | np.ndarray
    c_secrecy_est: float | np.ndarray


def decide_transmit(draw: FadingDraw, cfg: ProtocolConfig) -> TransmitDecision:
    """Transmit iff ``C^_s >= C_s^t``, ``C^_s > 0`` and ``C_M > C_M^t``.

    ``C^_s`` uses Alice's estimate of Eve's gain.  The ``C^_s > 0`` clause
    keeps frames where Eve looks stronger out of D when ``C_s^t = 0``.
    Works on single draws and on batches.
    """
    g_m = draw.snr_main
    g_w = draw.snr_wiretap_est
    c_m = np.log2(1.0 + g_m)
    c_w = np.log2(1.0 + g_w)
    c_s = secrecy_capacity(g_m, g_w)
    go = (np.asarray(c_s) >= cfg.secrecy_threshold) & (np.asarray(c_s) > 0) & (c_m > cfg.main_threshold)
    if np.ndim(go) == 0:
        return TransmitDecision(bool(go), float(c_m), float(c_w), float(c_s))
    return TransmitDecision(go, c_m, c_w, np.asarray(c_s))


# -- abstract tier -----------------------------------------------------------


def _region_bounds(cfg: ProtocolConfig) -> tuple[float, callable]:
    g_lo = max(2.0**cfg.main_threshold - 1.0, 2.0**cfg.secrecy_threshold - 1.0)

    def g_w_max(g_m):
        # C_M - C_W >= C_s^t  <=>  g_W <= (1 + g_M) 2^-C_s^t - 1
        return min(g_m, (1.0 + g_m) * 2.0**-cfg.secrecy_threshold - 1.0)

    return g_lo, g_w_max


def analytic_throughputs(cfg: ProtocolConfig) -> ThroughputReport:
    """Average throughputs by nested quadrature over the exponential SNR laws.

    Perfect CSI only.  ``H(X)`` is taken as ``C_M + ENTROPY_OVERHEAD``.
    """
    if cfg.csi.variance != 0:
        raise ValueError("the analytic tier assumes perfect CSI")
    beta = cfg.fixed_beta()
    gm_bar, gw_bar = cfg.mean_snr_main, cfg.mean_snr_wiretap
    g_lo, g_w_max = _region_bounds(cfg)
    opts = dict(epsabs=1e-11, epsrel=1e-10, limit=200)

    def pdf(g, mean):
        return math.exp(-g / mean) / mean

    def inner(g_m):
        b = g_w_max(g_m)
        if b <= 0:
            return 0.0, 0.0
        p_w = -math.expm1(-b / gw_bar)
        e_cw = integrate.quad(lambda g: math.log2(1.0 + g) * pdf(g, gw_bar), 0.0, b, **opts)[0]
        return p_w, e_cw

    def outer(fn):
        return integrate.quad(fn, g_lo, math.inf, **opts)[0]

    def key_term(g_m):
        p_w, e_cw = inner(g_m)
        return pdf(g_m, gm_bar) * (beta * math.log2(1.0 + g_m) * p_w - e_cw)

    def p_term(g_m):
        return pdf(g_m, gm_bar) * inner(g_m)[0]

    def cm_term(g_m):
        return pdf(g_m, gm_bar) * math.log2(1.0 + g_m) * inner(g_m)[0]

    key = outer(key_term)
    p_d = outer(p_term)
    cm_d = outer(cm_term)
    cm_all = integrate.quad(lambda g: pdf(g, gm_bar) * math.log2(1.0 + g), 0.0, math.inf, **opts)[0]

    t_s = key / cfg.key_ratio
    # <C_M>_Dbar - <H - beta C_M>_D - <H>_D - T_s with H = C_M + 2
    t_c = (cm_all - cm_d) - (ENTROPY_OVERHEAD * p_d + (1 - beta) * cm_d) - (cm_d + ENTROPY_OVERHEAD * p_d) - t_s
    rep = ThroughputReport(t_s, t_c, t_s, 0.0, p_d, cfg.normalization)
    _diagnose(rep)
    return rep


def _diagnose(rep: ThroughputReport) -> None:
    if rep.comm_throughput < 0:
        rep.diagnostics.append(
            f"communication throughput is negative ({rep.comm_throughput:.4f} bits/use) with "
            f"P(D) = {rep.transmit_fraction:.3f}; raise the secrecy threshold C_s^t to transmit less often"
        )


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    n = x.size
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0


def monte_carlo_run(
    cfg: ProtocolConfig,
    frames: int,
    symbols_per_frame: int = 1000,
    seed: Seed = 0,
    full_stack: bool = False,
    record_trace: bool = False,
) -> tuple[ThroughputReport, SessionTrace]:
    """Monte-Carlo throughputs over ``frames`` independent fading draws.

    The same seed gives the same fading and estimation noise whatever
    ``alpha`` or the thresholds, so parameter sweeps are matched.
    """
    if frames < 1:
        raise ValueError("frames must be >= 1")
    draws = draw_fading(cfg.mean_snr_main, cfg.mean_snr_wiretap, cfg.csi, rng_for(seed, BRANCH_FADING).integers(2**63), size=frames)
    dec = decide_transmit(draws, cfg)
    _, _, c_s_true = instantaneous_capacities(draws)
    d = dec.transmit
    c_m = dec.c_main
    over = dec.c_secrecy_est - c_s_true
    d_s = d & (over <= cfg.safety_margin)
    d_l = d & ~d_s
    trace = SessionTrace()

    if full_stack:
        key_rate, cost, beta_meas = _full_stack_frames(cfg, draws, d, symbols_per_frame, seed, trace)
    else:
        beta = cfg.fixed_beta()
        key_rate = np.where(d, beta * c_m - dec.c_wiretap_est - cfg.safety_margin, 0.0)
        h = c_m + ENTROPY_OVERHEAD
        cost = np.where(d, (h - beta * c_m) + h, 0.0)
        beta_meas = float("nan")
        if record_trace:
            for i in np.flatnonzero(d):
                trace.add("transmission", int(i), detail={"c_secrecy_est": float(dec.c_secrecy_est[i])},
                          key_bits=0)

    secure = key_rate / cfg.key_ratio
    comm = np.where(d, -cost - secure, c_m)
    t_s, se_s = _mean_se(secure)
    t_c, se_c = _mean_se(comm)
    r_s = float(np.sum(secure[d_s]) / frames)
    r_l = float(np.sum(secure[d_l]) / frames)
    n_d = int(d.sum())
    changed = d & (over != 0)
    rep = ThroughputReport(
        t_s,
        t_c,
        r_s,
        r_l,
        n_d / frames,
        cfg.normalization,
        secure_se=se_s,
        comm_se=se_c,
        frames=frames,
        leaked_fraction=int(d_l.sum()) / n_d if n_d else 0.0,
        overestimate_fraction=float(np.mean(over[changed] > 0)) if changed.any() else float("nan"),
        measured_beta=beta_meas,
    )
    _diagnose(rep)
    return rep, trace


# -- full-stack tier ---------------------------------------------------------


@dataclass
class _Design:
    constellation: Constellation
    profile: InfoProfile
    plan: LevelPlan


class StackContext:
    """Caches of constellations, plans and codes shared across frames."""

    def __init__(self, codebook: dict[float, DegreeDistribution] | None = None):
        self.codebook = shipped_codebook() if codebook is None else codebook
        self._designs: dict[float, _Design | None] = {}
        self._codes: dict[tuple, list[LdpcCode | None]] = {}

    def design(self, snr_db: float) -> _Design | None:
        """Shaped ASK and rate plan for a real channel, on a 0.5 dB grid rounded down."""
        key = math.floor(2.0 * snr_db) / 2.0
        if key not in self._designs:
            self._designs[key] = self._make_design(key)
        return self._designs[key]

    def _make_design(self, snr_db: float) -> _Design | None:
        if snr_db < MIN_DESIGN_SNR_DB:
            return None
        nv = 10.0 ** (-snr_db / 10.0)
        try:
            c = optimize_constellation(nv)
            prof = info_profile(c, nv)
            plan = plan_rates(prof, self.codebook)
        except (OptimizationFailure, PlanError):
            return None
        return _Design(c, prof, plan)

    def codes(self, plan: LevelPlan, n: int) -> list[LdpcCode | None]:
        key = (plan.code_rates, n)
        if key not in self._codes:
            self._codes[key] = build_level_codes(plan, self.codebook, n, seed=[n])
        return self._codes[key]


def _real_views(r: np.ndarray, h: complex) -> np.ndarray:
    """Equalise a complex frame and return both dimensions at unit symbol power."""
    z = r / h * math.sqrt(2.0)
    return np.concatenate([z.real, z.imag])


@dataclass
class FrameOutcome:
    alice_key: SecretKey | None
    bob_key: SecretKey | None
    disclosed_bits: int
    public_bits: int
    beta: float
    success: bool


def key_frame(
    ctx: StackContext,
    cfg: ProtocolConfig,
    draw: FadingDraw,
    n: int,
    frame: int,
    seed: Seed,
    trace: SessionTrace,
) -> FrameOutcome | None:
    """One opportunistic frame through the whole pipeline.

    The frame carries ``n`` complex symbols, i.e. ``2n`` real symbols of a
    shaped ASK per dimension designed for ``design_backoff_db`` below the
    true main SNR.  Returns ``None`` when the SNR is outside what the
    shipped codes support.
    """
    g_m = float(draw.snr_main)
    design = ctx.design(10.0 * math.log10(max(g_m, 1e-300)) - cfg.design_backoff_db)
    if design is None:
        trace.add("skipped", frame, detail={"snr_main": g_m, "reason": "below supported SNR"})
        return None
    c, prof, plan = design.constellation, design.profile, design.plan
    base = [int(v) for v in np.atleast_1d(seed)] + [frame]
    rng = rng_for(base, BRANCH_SOURCE)
    m = 2 * n
    sym = c.sample(m, rng)
    i_dim, _ = qam_from_ask(c)
    x = i_dim.points[sym[:n]] + 1j * i_dim.points[sym[n:]]
    r_bob = transmit_fading(x, draw.h_main, draw.noise_var_main, base + [BRANCH_BOB])
    y = _real_views(r_bob, draw.h_main)
    noise_real = 1.0 / g_m  # per real dimension after equalisation and rescaling
    trace.add("transmission", frame, detail={"snr_main": g_m, "constellation": constellation_id(c), "n": n})

    codes = ctx.codes(plan, m)
    syn = encode_syndromes(c, plan, sym, codes)
    cid = constellation_id(c)
    wire = SyndromeFrame(m, tuple(plan.practical_rates), cid, frame, syn).to_bytes()
    received = SyndromeFrame.from_bytes(wire)
    res = multistage_decode(
        c, plan, y, received.syndromes, codes, noise_real, sweeps=cfg.sweeps, max_iter=cfg.max_iter, profile=prof
    )

    # Alice budgets with her estimate of Eve's channel
    g_w_est = float(draw.snr_wiretap_est)
    i_w = mutual_information(c, 1.0 / g_w_est) if g_w_est > 0 else 0.0
    i_m = mutual_information(c, noise_real)
    r0 = cfg.slack_bits + math.ceil(cfg.safety_margin * n)
    ledger = LeakageLedger(m, c.entropy, i_m, i_w, cfg.safety_bits, r0)
    ledger.disclose(8 * len(wire), "syndrome frame")
    ok = bool(res.syndromes_ok)
    trace.add(
        "reconciliation",
        frame,
        detail={"wire": wire.hex(), "syndromes_ok": ok, "sweeps": res.sweeps},
        disclosed_bits=8 * len(wire),
    )
    trace.ledger_disclosed_bits += ledger.reconciliation_bits
    if not ok:
        trace.add("discarded", frame, detail={"reason": "reconciliation failed"})
        return FrameOutcome(None, None, 8 * len(wire), 0, ledger.efficiency, False)

    try:
        a_key, hseed = privacy_amplify(c.bit_planes(sym).ravel(), ledger, base)
    except NoKeyError:
        trace.add("discarded", frame, detail={"reason": "no key budget"})
        return FrameOutcome(None, None, 8 * len(wire), 0, ledger.efficiency, True)
    seed_wire = dumps_hash_seed(hseed)
    b_key, _ = _bob_amplify(c, res.symbols, loads_hash_seed(seed_wire))
    trace.add(
        "privacy_amplification",
        frame,
        detail={"hash_seed": seed_wire.hex(), "keys_agree": bool(np.array_equal(a_key.bits, b_key.bits))},
        public_bits=8 * len(seed_wire),
        key_bits=len(a_key),
    )
    return FrameOutcome(a_key, b_key, 8 * len(wire), 8 * len(seed_wire), ledger.efficiency, True)


def _bob_amplify(c: Constellation, symbols: np.ndarray, hseed) -> tuple[SecretKey, object]:
    from .secrecy import gf_multiply_hash

    return SecretKey(gf_multiply_hash(hseed, c.bit_planes(symbols).ravel())), hseed


def _full_stack_frames(cfg, draws, d, n, seed, trace):
    ctx = StackContext()
    frames = len(draws)
    key_rate = np.zeros(frames)
    cost = np.zeros(frames)
    betas = []
    for i in np.flatnonzero(d):
        one = FadingDraw(
            complex(draws.h_main[i]),
            complex(draws.h_wiretap[i]),
            complex(draws.h_wiretap_est[i]),
            draws.noise_var_main,
            draws.noise_var_wiretap,
        )
        out = key_frame(ctx, cfg, one, n, int(i), seed, trace)
        if out is None:
            continue
        betas.append(out.beta)
        k = len(out.alice_key) if out.alice_key is not None else 0
        key_rate[i] = k / n
        cost[i] = (out.disclosed_bits + out.public_bits) / n
    return key_rate, cost, float(np.mean(betas)) if betas else float("nan")


def run_session(
    cfg: ProtocolConfig,
    message,
    seed: Seed,
    symbols_per_frame: int = 1000,
    max_frames: int = 50,
    context: StackContext | None = None,
) -> SessionTrace:
    """Agree on keys frame by frame until the message can be one-time padded.

    Raises :class:`KeyStarvation` (carrying the trace) when ``max_frames``
    pass without enough key.
    """
    if cfg.key_ratio != 1:
        raise ValueError("only the one-time pad (key_ratio = 1) is implemented")
    msg = np.asarray(message, dtype=np.uint8)
    ctx = StackContext() if context is None else context
    alice, bob = KeyReservoir(), KeyReservoir()
    trace = SessionTrace(message=msg.copy())
    base = [int(v) for v in np.atleast_1d(seed)]
    for frame in range(max_frames):
        draw = draw_fading(cfg.mean_snr_main, cfg.mean_snr_wiretap, cfg.csi, base + [frame, BRANCH_FADING])
        dec = decide_transmit(draw, cfg)
        if not dec.transmit:
            trace.add("idle", frame, detail={"c_secrecy_est": dec.c_secrecy_est})
            continue
        out = key_frame(ctx, cfg, draw, symbols_per_frame, frame, base, trace)
        if out is None or out.alice_key is None:
            continue
        alice.add(out.alice_key)
        bob.add(out.bob_key)
        if alice.available >= msg.size:
            ct = one_time_pad(alice.draw(msg.size), msg)
            trace.ciphertext = ct
            trace.decrypted = one_time_pad(bob.draw(msg.size), ct)
            trace.add("key_usage", frame, detail={"bits": int(msg.size)}, key_bits=-int(msg.size))
            return trace
    raise KeyStarvation(
        f"{max_frames} frames gave {alice.available} key bits, {msg.size} needed", trace
    )
