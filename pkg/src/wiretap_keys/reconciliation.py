"""Multilevel syndrome reconciliation with multistage decoding.

Alice publishes, for every coded level ``k``, the syndrome of the bit-plane
``l_k(x^n)``.  Bob decodes the levels in order with syndrome BP, feeding
each level's extrinsic information back into the symbol demapper of the
other levels, and repeats the sweep until every syndrome checks.

Demapper.  With extrinsics ``e_p = lambda_p - m_p`` (log P0/P1), the
intrinsic of level ``k`` is

    m_k = log sum_{x: l_k(x)=0} p(y, x) exp(sum_{p!=k} (1 - l_p(x)) e_p)
        - log sum_{x: l_k(x)=1} (same)

i.e. every other level contributes a factor ``P_p(0)/P_p(1)`` on the
points whose ``p``-th bit is zero.  Expressed with log P1/P0 ratios this
is the familiar ``exp(-sum (1 - l_p) e_p)`` weighting: both forms differ
from the textbook ``prod P_p(l_p(x))`` by a factor common to all points,
which cancels in the ratio.  ``tests/test_reconciliation.py`` checks the
demapper against exhaustive enumeration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .channel import Seed, rng_for
from .constellation import Constellation, InfoProfile, info_profile
from .ldpc import DegreeDistribution, LdpcCode, SyndromeBP, build_code, compute_syndrome

RATE_ONE_TOL = 1e-3
_LLR_CAP = 50.0


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class LevelPlan:
    """Per-level optimal and practical rates; ``code_rates[k] is None`` marks rate one."""

    optimal_rates: tuple[float, ...]
    practical_rates: tuple[float, ...]
    code_rates: tuple[float | None, ...]

    def __post_init__(self):
        m = len(self.optimal_rates)
        if len(self.practical_rates) != m or len(self.code_rates) != m:
            raise PlanError("plan fields must have one entry per level")
        for r_opt, r, ref in zip(self.optimal_rates, self.practical_rates, self.code_rates):
            if ref is None and r != 1.0:
                raise PlanError("rate-one marker requires practical rate 1")
            if ref is not None and not 0.0 < r < 1.0:
                raise PlanError(f"coded level rate must lie in (0, 1), got {r}")
            if r_opt >= 1.0 - RATE_ONE_TOL and ref is not None:
                raise PlanError("levels with unit optimal rate must carry the rate-one marker")
        need = sum(1.0 - r for r in self.optimal_rates)
        have = sum(1.0 - r for r in self.practical_rates)
        if have < need - 1e-12:
            raise PlanError(
                f"plan discloses {have:.4f} bits/symbol, below the conditional entropy {need:.4f}"
            )

    @property
    def num_levels(self) -> int:
        return len(self.optimal_rates)

    @property
    def coded_levels(self) -> list[int]:
        return [k for k, ref in enumerate(self.code_rates) if ref is not None]

    @property
    def disclosure_rate(self) -> float:
        """Nominal syndrome bits per symbol."""
        return sum(1.0 - r for r in self.practical_rates)


def plan_rates(
    profile: InfoProfile,
    codebook: Mapping[float, DegreeDistribution] | Sequence[float],
    low_margin: float = 0.01,
    high_margin: float = 0.05,
    high_rate_floor: float = 0.5,
) -> LevelPlan:
    """Assign a shipped code rate to every level of ``profile``.

    The first coded level gets the largest low rate not above
    ``R_opt - low_margin``; every later coded level gets the largest rate
    at or above ``high_rate_floor`` not above ``R_opt - high_margin``.  If
    a margin leaves no candidate it is dropped and the smallest rate not
    above ``R_opt`` is used instead, the most conservative fit.
    """
    rates = sorted(float(r) for r in codebook)
    opt = tuple(profile.optimal_rates)
    practical, refs = [], []
    first = True
    for k, r_opt in enumerate(opt):
        if r_opt >= 1.0 - RATE_ONE_TOL:
            practical.append(1.0)
            refs.append(None)
            continue
        pool = [r for r in rates if r < high_rate_floor] if first else [r for r in rates if r >= high_rate_floor]
        margin = low_margin if first else high_margin
        pick = _largest_at_most(pool, r_opt - margin)
        if pick is None:
            fits = [r for r in pool if r <= r_opt + 1e-12]
            pick = min(fits) if fits else None
        if pick is None:
            raise PlanError(
                f"no shipped code rate <= {r_opt:.4f} for level {k}; the SNR is below the supported range"
            )
        practical.append(pick)
        refs.append(pick)
        first = False
    return LevelPlan(opt, tuple(practical), tuple(refs))


def _largest_at_most(pool, bound):
    ok = [r for r in pool if r <= bound + 1e-12]
    return max(ok) if ok else None


def build_level_codes(
    plan: LevelPlan,
    codebook: Mapping[float, DegreeDistribution],
    n: int,
    seed: Seed,
) -> list[LdpcCode | None]:
    """One code per coded level (``None`` for rate-one levels), seeded per level."""
    base = [seed] if isinstance(seed, (int, np.integer)) else list(seed)
    codes: list[LdpcCode | None] = []
    for k, ref in enumerate(plan.code_rates):
        if ref is None:
            codes.append(None)
            continue
        codes.append(build_code(codebook[ref], n, base + [k]))
    return codes


def encode_syndromes(
    c: Constellation,
    plan: LevelPlan,
    symbols,
    codes: Sequence[LdpcCode | None],
) -> list[np.ndarray]:
    """Syndrome of each coded bit-plane; rate-one levels give an empty vector."""
    sym = np.asarray(symbols)
    if sym.ndim != 1 or sym.size == 0:
        raise ValueError("symbols must be a non-empty 1-D array")
    if len(codes) != plan.num_levels or c.label_bits != plan.num_levels:
        raise ValueError("plan, codes and constellation disagree on the number of levels")
    planes = c.bit_planes(sym)
    out = []
    for k, code in enumerate(codes):
        if plan.code_rates[k] is None:
            out.append(np.zeros(0, dtype=np.uint8))
            continue
        if code.num_variables != sym.size:
            raise ValueError(f"level {k} code has length {code.num_variables}, block has {sym.size}")
        out.append(compute_syndrome(code, planes[k]))
    return out


def log_joint(c: Constellation, y, noise_var: float) -> np.ndarray:
    """``log p(y_i, x_j)`` up to a constant, shape ``(n, |X|)``."""
    y = np.asarray(y, dtype=float)
    return np.log(c.pmf)[None, :] - (y[:, None] - c.points[None, :]) ** 2 / (2.0 * noise_var)


def demap(c: Constellation, logp: np.ndarray, extrinsic: np.ndarray, level: int) -> np.ndarray:
    """Intrinsic LLR (log P0/P1) of ``level`` given the other levels' extrinsics."""
    bits = np.stack([c.bit(p) for p in range(c.label_bits)])  # (m, N)
    zero = (1 - bits).astype(float)
    ext = np.clip(extrinsic, -_LLR_CAP, _LLR_CAP)
    others = np.delete(np.arange(c.label_bits), level)
    metric = logp + ext[others].T @ zero[others]
    own = bits[level]
    l0 = logsumexp(metric[:, own == 0], axis=1)
    l1 = logsumexp(metric[:, own == 1], axis=1)
    return l0 - l1


@dataclass
class ReconciliationResult:
    symbols: np.ndarray
    success: bool
    syndromes_ok: bool
    disclosed_bits: int
    efficiency: float
    sweeps: int
    level_posteriors: list[np.ndarray] = field(repr=False)
    level_bits: np.ndarray = field(repr=False, default=None)


def efficiency(disclosed_bits: int, n: int, profile: InfoProfile) -> float:
    """``1 - (M/n - H(X|Y)) / I(X;Y)``."""
    return 1.0 - (disclosed_bits / n - profile.cond_entropy) / profile.mutual_info


def multistage_decode(
    c: Constellation,
    plan: LevelPlan,
    y,
    syndromes: Sequence[np.ndarray],
    codes: Sequence[LdpcCode | None],
    noise_var: float,
    sweeps: int = 10,
    max_iter: int = 100,
    reference=None,
    profile: InfoProfile | None = None,
    early_stop: bool = True,
    warm_start: bool = True,
) -> ReconciliationResult:
    """Bob's side: recover Alice's symbols from ``y`` and the syndromes.

    Coded levels are decoded in index order; rate-one levels are decided
    last in each sweep by the sign of their intrinsic LLR.  With
    ``early_stop`` the sweeps end as soon as every syndrome checks.  With
    ``warm_start`` each level's BP resumes from its check messages of the
    previous sweep, so a slowly converging level keeps its progress.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    m = plan.num_levels
    if c.label_bits != m or len(codes) != m or len(syndromes) != m:
        raise ValueError("plan, codes, syndromes and constellation disagree on the number of levels")
    coded = plan.coded_levels
    for k in coded:
        if codes[k].num_variables != n:
            raise ValueError(f"level {k} code length does not match the block")
    if profile is None:
        profile = info_profile(c, noise_var)
    decoders = {k: SyndromeBP(codes[k]) for k in coded}
    syn = [np.asarray(s, dtype=np.uint8) for s in syndromes]
    disclosed = int(sum(syn[k].size for k in coded))

    logp = log_joint(c, y, noise_var)
    ext = np.zeros((m, n))
    post = [np.zeros(n) for _ in range(m)]
    bits = np.zeros((m, n), dtype=np.uint8)
    ok = {k: False for k in coded}
    uncoded = [k for k in range(m) if k not in coded]
    done = 0
    for sweep in range(1, max(1, sweeps) + 1):
        done = sweep
        for k in coded:
            intr = demap(c, logp, ext, k)
            res = decoders[k].decode(
                intr, syn[k], max_iter=max_iter, early_stop=early_stop, warm_start=warm_start and sweep > 1
            )
            post[k] = res.posterior_llr
            ext[k] = res.posterior_llr - intr
            bits[k] = res.bits
            ok[k] = res.converged
        for k in uncoded:
            intr = demap(c, logp, ext, k)
            post[k] = intr
            bits[k] = (intr < 0).astype(np.uint8)
        if early_stop and all(ok.values()):
            break
    symbols = c.symbols_from_bits(bits)
    syndromes_ok = all(ok.values()) and bool(np.all(symbols >= 0))
    if reference is not None:
        success = bool(np.array_equal(symbols, np.asarray(reference)))
    else:
        success = syndromes_ok
    return ReconciliationResult(
        symbols=symbols,
        success=success,
        syndromes_ok=syndromes_ok,
        disclosed_bits=disclosed,
        efficiency=efficiency(disclosed, n, profile),
        sweeps=done,
        level_posteriors=post,
        level_bits=bits,
    )


# -- EXIT charts -------------------------------------------------------------

_GH_T, _GH_W = np.polynomial.hermite_e.hermegauss(96)
_GH_W = _GH_W / math.sqrt(2.0 * math.pi)


def j_function(sigma: float) -> float:
    """Mutual information of a consistent Gaussian LLR ``N(sigma^2/2, sigma^2)``."""
    if sigma <= 0:
        return 0.0
    if sigma > 60:
        return 1.0
    llr = sigma**2 / 2.0 + sigma * _GH_T
    return float(1.0 - np.sum(_GH_W * np.logaddexp(0.0, -llr)) / math.log(2.0))


def j_inverse(mi: float) -> float:
    from scipy.optimize import brentq

    if mi <= 0:
        return 0.0
    if mi >= 1.0 - 1e-12:
        return math.inf
    return float(brentq(lambda s: j_function(s) - mi, 1e-9, 60.0, xtol=1e-12))


def gaussian_apriori(bits: np.ndarray, mi: float, rng: np.random.Generator) -> np.ndarray:
    """LLRs (log P0/P1) carrying ``mi`` bits of information about ``bits``."""
    sign = 1.0 - 2.0 * np.asarray(bits, dtype=float)
    s = j_inverse(mi)
    if math.isinf(s):
        return sign * _LLR_CAP
    return sign * (s**2 / 2.0 + s * rng.standard_normal(np.shape(bits)))


def llr_information(bits: np.ndarray, llr: np.ndarray) -> float:
    """``1 - E log2(1 + exp(-(1 - 2b) L))``, the time-average EXIT estimator."""
    sign = 1.0 - 2.0 * np.asarray(bits, dtype=float)
    return float(1.0 - np.mean(np.logaddexp(0.0, -sign * llr)) / math.log(2.0))


@dataclass
class ExitCurves:
    ia: np.ndarray
    demapper: np.ndarray
    decoder: np.ndarray


EXIT_GRID = np.round(np.linspace(0.0, 1.0, 11), 10)


def exit_curves(
    c: Constellation,
    noise_var: float,
    level: int,
    code: LdpcCode | None,
    mc_frames: int,
    seed: Seed,
    n: int | None = None,
    grid=EXIT_GRID,
    max_iter: int = 100,
) -> ExitCurves:
    """Monte-Carlo EXIT curves of the demapper and the decoder of one level.

    Demapper: Gaussian a-priori of content ``I_A`` on every other level,
    output is the information of the level's intrinsic LLR.  Decoder:
    Gaussian a-priori of content ``I_A`` on the level's own bits, output is
    the information of the BP extrinsic.  A rate-one level (``code`` None)
    has the identity decoder curve.
    """
    if mc_frames < 1:
        raise ValueError("mc_frames must be >= 1")
    grid = np.asarray(grid, dtype=float)
    if n is None:
        n = code.num_variables if code is not None else 10_000
    sd = math.sqrt(noise_var)
    dem = np.zeros(grid.size)
    dec = np.zeros(grid.size)
    others = [p for p in range(c.label_bits) if p != level]
    bp = SyndromeBP(code) if code is not None else None
    for f in range(mc_frames):
        rng = rng_for(seed, f)
        sym = c.sample(n, rng)
        planes = c.bit_planes(sym)
        y = c.points[sym] + sd * rng.standard_normal(n)
        logp = log_joint(c, y, noise_var)
        syn = compute_syndrome(code, planes[level]) if code is not None else None
        for g, ia in enumerate(grid):
            ext = np.zeros((c.label_bits, n))
            for p in others:
                ext[p] = gaussian_apriori(planes[p], ia, rng)
            dem[g] += llr_information(planes[level], demap(c, logp, ext, level))
            if bp is None:
                dec[g] += ia
            else:
                prior = gaussian_apriori(planes[level], ia, rng)
                res = bp.decode(prior, syn, max_iter=max_iter, early_stop=True)
                extr = res.posterior_llr - prior
                if res.converged:
                    # a solved block carries full information about every bit
                    extr = (1.0 - 2.0 * res.bits) * _LLR_CAP
                dec[g] += llr_information(planes[level], extr)
    return ExitCurves(grid.copy(), dem / mc_frames, dec / mc_frames)


def tunnel_open(curves: ExitCurves, delta: float = 0.02) -> bool:
    """True when ``T_c(T_d(x)) > x`` on the grid for all ``x < 1 - delta``."""
    for x in curves.ia[curves.ia < 1.0 - delta]:
        td = np.interp(x, curves.ia, curves.demapper)
        tc = np.interp(td, curves.ia, curves.decoder)
        if tc <= x:
            return False
    return True


def level_cond_entropy_given_others(c: Constellation, noise_var: float, level: int, q: int = 128) -> float:
    """``H(l_k | Y, l_p for all p != k)`` by Gauss-Hermite quadrature."""
    t, w = np.polynomial.hermite_e.hermegauss(q)
    w = w / math.sqrt(2.0 * math.pi)
    sd = math.sqrt(noise_var)
    total = 0.0
    mask = ((1 << c.label_bits) - 1) ^ (1 << level)
    for i in range(c.size):
        y = c.points[i] + sd * t
        lj = log_joint(c, y, noise_var)
        same = (c.labels & mask) == (c.labels[i] & mask)
        own = lj[:, i]
        grp = logsumexp(lj[:, same], axis=1)
        total += c.pmf[i] * np.sum(w * (grp - own))
    return float(total / math.log(2.0))
