"""Independent brute-force references shared by several test modules."""

import itertools

import math

import numpy as np

from wiretap_keys.constellation import build_shaped_ask
from wiretap_keys.ldpc import LdpcCode
from wiretap_keys.reconciliation import LevelPlan, encode_syndromes


def naive_mulmod(a, b, f):
    """GF(2^w) product by shift-and-add with reduction after every shift."""
    w = f.bit_length() - 1
    r = 0
    while b:
        if b & 1:
            r ^= a
        b >>= 1
        a <<= 1
        if a >> w & 1:
            a ^= f
    return r


def bits_of(value, nbits):
    return np.array([(value >> i) & 1 for i in range(nbits)], dtype=np.uint8)


def syndrome_posteriors(checks, n, prior_llr, syndrome):
    """Exact log P(b=0)/P(b=1) per bit, conditioned on H b = syndrome."""
    prior_llr = np.asarray(prior_llr, float)
    num = np.full(n, -np.inf)
    den = np.full(n, -np.inf)
    for cfg in itertools.product((0, 1), repeat=n):
        b = np.array(cfg)
        if any(sum(b[v] for v in chk) % 2 != s for chk, s in zip(checks, syndrome)):
            continue
        # log-weight relative to all-zero: bit value 1 costs its LLR
        lw = -float(np.sum(prior_llr * b))
        num = np.where(b == 0, np.logaddexp(num, lw), num)
        den = np.where(b == 1, np.logaddexp(den, lw), den)
    return num - den


def random_tree_checks(n, rng, max_check_degree=4):
    """Random check sets whose Tanner graph is a forest."""
    order = rng.permutation(n)
    checks = []
    attached = [int(order[0])]
    i = 1
    while i < n:
        k = int(rng.integers(1, max_check_degree))
        fresh = [int(v) for v in order[i : i + k]]
        i += len(fresh)
        anchor = int(rng.choice(attached))
        checks.append(sorted([anchor] + fresh))
        attached.extend(fresh)
    return checks


def m2_instance(n, seed):
    rng = np.random.default_rng(seed)
    c = build_shaped_ask(4, 0.44, 0.3)
    nv = 0.15
    codes = [LdpcCode.from_checks(n, random_tree_checks(n, rng)) for _ in range(2)]
    sym = c.sample(n, rng)
    y = c.points[sym] + math.sqrt(nv) * rng.standard_normal(n)
    r0, r1 = (1 - codes[0].num_checks / n), (1 - codes[1].num_checks / n)
    plan = LevelPlan((0.99, 0.99), (r0, r1), (r0, r1))
    syn = encode_syndromes(c, plan, sym, codes)
    return c, nv, codes, plan, y, syn


def enumerate_level(c, nv, y, checks, syn, level, priors):
    """Exact bit marginals of one level over all |X|^n sequences."""
    n = y.size
    num = np.zeros(n)
    den = np.zeros(n)
    lj = c.pmf * np.exp(-((y[:, None] - c.points[None, :]) ** 2) / (2 * nv)) / math.sqrt(2 * math.pi * nv)
    for xs in itertools.product(range(c.size), repeat=n):
        xs = np.array(xs)
        bits = c.bit(level)[xs]
        if any(sum(bits[v] for v in chk) % 2 != s for chk, s in zip(checks, syn)):
            continue
        w = np.prod(lj[np.arange(n), xs])
        for p, e in priors.items():
            pb = c.bit(p)[xs]
            p0 = 1 / (1 + np.exp(-e))
            w *= np.prod(np.where(pb == 0, p0, 1 - p0))
        num += np.where(bits == 0, w, 0.0)
        den += np.where(bits == 1, w, 0.0)
    return np.log(num) - np.log(den)
