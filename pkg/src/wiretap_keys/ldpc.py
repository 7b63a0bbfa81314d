"""Binary LDPC codes used as syndrome formers, and syndrome-conditioned BP.

LLRs in this module are ``log P(b=0) / P(b=1)``: positive favours 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .channel import Seed, rng_for

# |tanh(m/2)| is kept strictly below one; caps check messages near +-37.4
_TANH_CLIP = 1.0 - 2.0**-53
_ARG_CLIP = 30.0


class CodeConstructionError(RuntimeError):
    pass


@dataclass(frozen=True)
class DegreeDistribution:
    """Edge-perspective degree distributions ``lambda(x)`` and ``rho(x)``."""

    variable_edges: tuple[tuple[int, float], ...]
    check_edges: tuple[tuple[int, float], ...]
    name: str = ""

    def __post_init__(self):
        for side in (self.variable_edges, self.check_edges):
            if not side:
                raise ValueError("empty degree distribution")
            if any(d < 1 or f < 0 for d, f in side):
                raise ValueError("degrees must be >= 1 and fractions >= 0")
            if abs(sum(f for _, f in side) - 1.0) > 1e-9:
                raise ValueError("edge fractions must sum to 1")

    @property
    def design_rate(self) -> float:
        int_lam = sum(f / d for d, f in self.variable_edges)
        int_rho = sum(f / d for d, f in self.check_edges)
        return 1.0 - int_rho / int_lam

    @classmethod
    def regular(cls, dv: int, dc: int) -> "DegreeDistribution":
        return cls(((dv, 1.0),), ((dc, 1.0),), name=f"regular-{dv}-{dc}")

    def node_counts(self, n: int) -> tuple[dict[int, int], dict[int, int]]:
        """Integer node counts per degree for ``n`` variables with matching edge totals."""
        var = _round_counts({d: f / d for d, f in self.variable_edges}, n)
        edges = sum(d * k for d, k in var.items())
        int_rho = sum(f / d for d, f in self.check_edges)
        m = max(1, round(edges * int_rho))
        chk = _round_counts({d: f / d for d, f in self.check_edges}, m)
        # reconcile the edge count on the check side by moving single nodes
        # between adjacent degrees
        degrees = sorted(chk)
        diff = edges - sum(d * k for d, k in chk.items())
        guard = 0
        while diff != 0 and guard < 10 * edges:
            guard += 1
            if diff > 0:
                d = min((d for d in degrees if chk[d] > 0), default=None)
                if d is None:
                    break
                chk[d] -= 1
                chk[d + 1] = chk.get(d + 1, 0) + 1
                diff -= 1
            else:
                d = max(d for d in chk if chk[d] > 0)
                chk[d] -= 1
                chk[d - 1] = chk.get(d - 1, 0) + 1
                diff += 1
            degrees = sorted(chk)
        return var, {d: k for d, k in chk.items() if k > 0}

    def to_json(self) -> str:
        return json.dumps(
            {
                "name": self.name,
                "variable_edges": [list(p) for p in self.variable_edges],
                "check_edges": [list(p) for p in self.check_edges],
            },
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "DegreeDistribution":
        obj = json.loads(text)
        return cls(
            tuple((int(d), float(f)) for d, f in obj["variable_edges"]),
            tuple((int(d), float(f)) for d, f in obj["check_edges"]),
            name=obj.get("name", ""),
        )


def _round_counts(weights: dict[int, float], total: int) -> dict[int, int]:
    # largest-remainder rounding of total * w / sum(w)
    s = sum(weights.values())
    raw = {d: total * w / s for d, w in weights.items()}
    out = {d: int(math.floor(v)) for d, v in raw.items()}
    rest = total - sum(out.values())
    for d in sorted(raw, key=lambda d: raw[d] - out[d], reverse=True)[:rest]:
        out[d] += 1
    return {d: k for d, k in out.items() if k > 0}


SHIPPED_RATES = (0.16, 0.24, 0.25, 0.27, 0.86, 0.88)


def shipped_distribution(rate: float) -> DegreeDistribution:
    """Load the shipped ensemble of nominal rate ``rate``."""
    name = f"rate_{rate:.2f}.json"
    try:
        text = resources.files("wiretap_keys.data").joinpath(name).read_text()
    except FileNotFoundError as exc:
        raise KeyError(f"no shipped degree distribution for rate {rate}") from exc
    return DegreeDistribution.from_json(text)


def shipped_codebook() -> dict[float, DegreeDistribution]:
    return {r: shipped_distribution(r) for r in SHIPPED_RATES}


@dataclass(frozen=True, eq=False)
class LdpcCode:
    """Sparse parity-check graph; edges are sorted by (check, variable)."""

    num_variables: int
    num_checks: int
    edge_var: np.ndarray
    edge_chk: np.ndarray
    name: str = ""
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        ev = np.asarray(self.edge_var, dtype=np.int64)
        ec = np.asarray(self.edge_chk, dtype=np.int64)
        order = np.lexsort((ev, ec))
        ev, ec = ev[order], ec[order]
        if ev.size and (ev.min() < 0 or ev.max() >= self.num_variables):
            raise ValueError("variable index out of range")
        if ec.size and (ec.min() < 0 or ec.max() >= self.num_checks):
            raise ValueError("check index out of range")
        key = ec * self.num_variables + ev
        if np.any(np.diff(key) == 0):
            raise ValueError("duplicate edge")
        ev.setflags(write=False)
        ec.setflags(write=False)
        object.__setattr__(self, "edge_var", ev)
        object.__setattr__(self, "edge_chk", ec)

    @classmethod
    def from_checks(cls, num_variables: int, checks: Sequence[Iterable[int]], name: str = "") -> "LdpcCode":
        ev, ec = [], []
        for j, vs in enumerate(checks):
            for v in vs:
                ev.append(v)
                ec.append(j)
        return cls(num_variables, len(checks), np.array(ev, dtype=np.int64), np.array(ec, dtype=np.int64), name)

    @classmethod
    def from_matrix(cls, h, name: str = "") -> "LdpcCode":
        h = sp.coo_matrix(h)
        return cls(h.shape[1], h.shape[0], h.col.astype(np.int64), h.row.astype(np.int64), name)

    @property
    def rate(self) -> float:
        return 1.0 - self.num_checks / self.num_variables

    @property
    def num_edges(self) -> int:
        return int(self.edge_var.size)

    def matrix(self) -> sp.csr_matrix:
        if "H" not in self._cache:
            data = np.ones(self.num_edges, dtype=np.int8)
            self._cache["H"] = sp.csr_matrix(
                (data, (self.edge_chk, self.edge_var)), shape=(self.num_checks, self.num_variables)
            )
        return self._cache["H"]

    def variable_degrees(self) -> np.ndarray:
        return np.bincount(self.edge_var, minlength=self.num_variables)

    def check_degrees(self) -> np.ndarray:
        return np.bincount(self.edge_chk, minlength=self.num_checks)

    def check_lists(self) -> list[list[int]]:
        starts = np.searchsorted(self.edge_chk, np.arange(self.num_checks + 1))
        return [self.edge_var[starts[j] : starts[j + 1]].tolist() for j in range(self.num_checks)]

    def count_4cycles(self) -> int:
        """Number of variable pairs sharing two or more checks."""
        h = self.matrix().astype(np.int32)
        g = (h.T @ h).tocoo()
        off = g.row < g.col
        return int(np.sum(g.data[off] >= 2))

    def same_graph(self, other: "LdpcCode") -> bool:
        return (
            self.num_variables == other.num_variables
            and self.num_checks == other.num_checks
            and np.array_equal(self.edge_var, other.edge_var)
            and np.array_equal(self.edge_chk, other.edge_chk)
        )


def build_code(
    dist: DegreeDistribution,
    n: int,
    seed: Seed,
    avoid_4cycles: bool = True,
    max_retries: int = 20,
) -> LdpcCode:
    """Random graph with the degree profile of ``dist``, free of 2- and 4-cycles.

    Sockets are matched greedily, high-degree variables first.  For each
    variable socket, pending check sockets are scanned in random order and the
    first check that is neither already adjacent nor at distance two from the
    variable is taken.  If none qualifies, the least-loaded admissible check
    absorbs the edge, which perturbs one check degree by one.
    """
    if n < 16:
        raise ValueError("block length must be >= 16")
    var_counts, chk_counts = dist.node_counts(n)
    for attempt in range(max_retries):
        rng = rng_for(seed, attempt)
        code = _progressive_match(var_counts, chk_counts, n, rng, avoid_4cycles)
        if code is not None:
            return LdpcCode(n, code[0], code[1], code[2], name=dist.name)
    raise CodeConstructionError(
        f"could not build a 4-cycle-free graph for {dist.name or 'distribution'} at n={n} "
        f"in {max_retries} attempts"
    )


def _progressive_match(var_counts, chk_counts, n, rng, avoid_4cycles):
    var_deg = np.concatenate([np.full(k, d, dtype=np.int64) for d, k in sorted(var_counts.items())])
    rng.shuffle(var_deg)
    m = sum(chk_counts.values())
    chk_deg = np.concatenate([np.full(k, d, dtype=np.int64) for d, k in sorted(chk_counts.items())])
    rng.shuffle(chk_deg)
    stubs = np.repeat(np.arange(m), chk_deg)
    rng.shuffle(stubs)
    stubs = stubs.tolist()
    load = [0] * m
    var_adj: list[list[int]] = [[] for _ in range(n)]
    chk_adj: list[list[int]] = [[] for _ in range(m)]
    order = np.argsort(-var_deg, kind="stable")
    pos = 0
    lookahead = 64
    for v in order.tolist():
        for _ in range(int(var_deg[v])):
            banned = set(var_adj[v])
            if avoid_4cycles:
                for c in var_adj[v]:
                    for u in chk_adj[c]:
                        banned.update(var_adj[u])
            chosen = None
            stop = min(len(stubs), pos + lookahead)
            for t in range(pos, stop):
                if stubs[t] not in banned:
                    chosen = stubs[t]
                    stubs[pos], stubs[t] = stubs[t], stubs[pos]
                    pos += 1
                    break
            if chosen is None:
                # fall back to the least-loaded admissible check
                cand = [c for c in range(m) if c not in banned]
                if not cand:
                    return None
                chosen = min(cand, key=lambda c: (load[c], rng.random()))
                pos += 1
            load[chosen] += 1
            var_adj[v].append(chosen)
            chk_adj[chosen].append(v)
    ev = np.array([v for v in range(n) for _ in var_adj[v]], dtype=np.int64)
    ec = np.array([c for v in range(n) for c in var_adj[v]], dtype=np.int64)
    used = np.unique(ec)
    if used.size < m:
        # drop checks left without edges by the fallback path
        remap = -np.ones(m, dtype=np.int64)
        remap[used] = np.arange(used.size)
        ec = remap[ec]
        m = used.size
    return m, ev, ec


def compute_syndrome(code: LdpcCode, bits) -> np.ndarray:
    """Per-check XOR of the adjacent bits."""
    b = np.asarray(bits)
    if b.shape != (code.num_variables,):
        raise ValueError(f"expected {code.num_variables} bits, got shape {b.shape}")
    acc = np.bincount(code.edge_chk, weights=b[code.edge_var].astype(np.float64), minlength=code.num_checks)
    return (acc.astype(np.int64) & 1).astype(np.uint8)


@dataclass
class DecodeResult:
    bits: np.ndarray
    posterior_llr: np.ndarray
    converged: bool
    iterations: int


class SyndromeBP:
    """Flooding sum-product decoder on the coset selected by a syndrome.

    Check-to-variable messages are multiplied by ``1 - 2 s(c)`` before they
    enter variable sums.  With an all-zero syndrome this is ordinary BP.
    The instance keeps its check-to-variable messages; ``warm_start``
    resumes from them with fresh priors, which is how multistage decoding
    carries a level's BP state from one sweep to the next.
    """

    def __init__(self, code: LdpcCode):
        self.code = code
        ec = code.edge_chk
        self._chk_start = np.searchsorted(ec, np.arange(code.num_checks + 1))
        self.check_to_var = np.zeros(code.num_edges)

    def _check_update(self, var_to_check: np.ndarray) -> np.ndarray:
        code = self.code
        ec = code.edge_chk
        t = np.tanh(np.clip(var_to_check, -2 * _ARG_CLIP, 2 * _ARG_CLIP) / 2.0)
        t = np.clip(t, -_TANH_CLIP, _TANH_CLIP)
        zero = t == 0.0
        absval = np.where(zero, 1.0, np.abs(t))
        logabs = np.log(absval)
        neg = (t < 0).astype(np.int64)
        m = code.num_checks
        tot_log = np.bincount(ec, weights=logabs, minlength=m)
        tot_neg = np.bincount(ec, weights=neg, minlength=m).astype(np.int64)
        tot_zero = np.bincount(ec, weights=zero, minlength=m).astype(np.int64)
        ext_log = tot_log[ec] - logabs
        ext_neg = tot_neg[ec] - neg
        ext_zero = tot_zero[ec] - zero
        mag = np.where(ext_zero > 0, 0.0, np.exp(ext_log))
        prod = np.where(ext_neg & 1, -mag, mag)
        prod = np.clip(prod, -_TANH_CLIP, _TANH_CLIP)
        return 2.0 * np.arctanh(prod)

    def decode(
        self,
        prior_llr,
        syndrome,
        max_iter: int = 100,
        early_stop: bool = True,
        warm_start: bool = False,
    ) -> DecodeResult:
        code = self.code
        prior = np.asarray(prior_llr, dtype=float)
        syn = np.asarray(syndrome).astype(np.int64)
        if prior.shape != (code.num_variables,):
            raise ValueError("prior length does not match the code")
        if syn.shape != (code.num_checks,):
            raise ValueError("syndrome length does not match the code")
        ev, ec = code.edge_var, code.edge_chk
        sign = (1 - 2 * syn)[ec].astype(float)
        n = code.num_variables

        post = prior.copy()
        bits = (post < 0).astype(np.uint8)
        if early_stop and np.array_equal(compute_syndrome(code, bits), syn.astype(np.uint8)):
            return DecodeResult(bits, post, True, 0)
        if warm_start:
            c2v = self.check_to_var
            v2c = (prior + np.bincount(ev, weights=c2v, minlength=n))[ev] - c2v
        else:
            v2c = prior[ev]
        it = 0
        for it in range(1, max_iter + 1):
            c2v = sign * self._check_update(v2c)
            post = prior + np.bincount(ev, weights=c2v, minlength=n)
            v2c = post[ev] - c2v
            bits = (post < 0).astype(np.uint8)
            if early_stop and np.array_equal(compute_syndrome(code, bits), syn.astype(np.uint8)):
                self.check_to_var = c2v
                return DecodeResult(bits, post, True, it)
        if max_iter:
            self.check_to_var = c2v
        converged = bool(np.array_equal(compute_syndrome(code, bits), syn.astype(np.uint8)))
        return DecodeResult(bits, post, converged, it)


def syndrome_decode(code: LdpcCode, prior_llr, syndrome, max_iter: int = 100, early_stop: bool = True) -> DecodeResult:
    return SyndromeBP(code).decode(prior_llr, syndrome, max_iter=max_iter, early_stop=early_stop)


# -- alist -------------------------------------------------------------------


def dumps_alist(code: LdpcCode) -> str:
    """MacKay alist text, 1-based indices, ascending within each list."""
    n, m = code.num_variables, code.num_checks
    col = [[] for _ in range(n)]
    row = code.check_lists()
    for j, vs in enumerate(row):
        for v in vs:
            col[v].append(j)
    for c in col:
        c.sort()
    row = [sorted(r) for r in row]
    max_c = max((len(c) for c in col), default=0)
    max_r = max((len(r) for r in row), default=0)
    lines = [f"{n} {m}", f"{max_c} {max_r}"]
    lines.append(" ".join(str(len(c)) for c in col))
    lines.append(" ".join(str(len(r)) for r in row))
    for c in col:
        lines.append(" ".join(str(j + 1) for j in c + [-1] * (max_c - len(c))))
    for r in row:
        lines.append(" ".join(str(v + 1) for v in r + [-1] * (max_r - len(r))))
    return "\n".join(lines) + "\n"


def loads_alist(text: str, name: str = "") -> LdpcCode:
    tok = text.split("\n")
    lines = [ln.split() for ln in tok if ln.strip()]
    n, m = map(int, lines[0])
    col_deg = list(map(int, lines[2]))
    checks: list[list[int]] = [[] for _ in range(m)]
    for v in range(n):
        for j in lines[4 + v][: col_deg[v]]:
            checks[int(j) - 1].append(v)
    row_deg = list(map(int, lines[3]))
    for j in range(m):
        listed = sorted(int(v) - 1 for v in lines[4 + n + j][: row_deg[j]])
        if listed != sorted(checks[j]):
            raise ValueError(f"alist row {j} disagrees with the column lists")
    return LdpcCode.from_checks(n, checks, name=name)
