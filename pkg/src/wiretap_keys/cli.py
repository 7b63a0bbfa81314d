"""Command-line front end.

Every run is fixed by a YAML config plus a seed.  SNRs in configs are in
dB and converted with ``10^(dB/10)``; for the real AWGN commands the SNR is
``1/N_M``, for the fading commands it is the mean ``gamma``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

import numpy as np
import yaml

from .channel import CsiNoiseModel, gaussian_capacity, rng_for
from .constellation import OptimizationFailure, dumps_constellation, info_profile, optimize_constellation
from .ldpc import DegreeDistribution, shipped_codebook
from .protocol import KeyStarvation, ProtocolConfig, analytic_throughputs, monte_carlo_run, run_session
from .reconciliation import (
    EXIT_GRID,
    LevelPlan,
    PlanError,
    build_level_codes,
    efficiency,
    encode_syndromes,
    exit_curves,
    multistage_decode,
    plan_rates,
    tunnel_open,
)
from .secrecy import NoKeyError

SCHEMA = "wiretap-keys/1"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
COMMANDS = ("optimize", "rates", "reconcile", "exit-chart", "protocol", "session")

DEFAULTS: dict[str, dict[str, Any]] = {
    "optimize": {"snr_db": [2, 7, 10, 13, 20]},
    "rates": {"snr_db": [2, 7, 10, 13, 20]},
    "reconcile": {
        "snr_db": 13.0,
        "n": 10_000,
        "frames": 20,
        "sweeps": 10,
        "max_iter": 100,
        "noiseless": False,
        "rates": None,
        "code_files": {},
    },
    "exit-chart": {"snr_db": 13.0, "level": 0, "n": 10_000, "mc_frames": 2, "max_iter": 100, "grid": list(EXIT_GRID)},
    "protocol": {
        "gamma_m_db": [0, 5, 10, 15, 20, 25, 30],
        "gamma_w_db": [0],
        "eta": [1.0],
        "alpha": [0.0],
        "sigma2": [0.0],
        "secrecy_threshold": 0.0,
        "main_threshold": 0.0,
        "beta": 1.0,
        "mode": "auto",
        "frames": 100_000,
    },
    "session": {"gamma_m_db": 20.0, "gamma_w_db": 0.0, "message_bits": 64, "n": 1000, "max_frames": 50},
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Versioned config tree: globals plus one parameter block per command."""

    seed: int = 0
    out: str = "results"
    threads: int = 1
    blocks: dict[str, dict[str, Any]] = field(default_factory=dict)
    schema: str = SCHEMA

    def block(self, command: str) -> dict[str, Any]:
        merged = dict(DEFAULTS[command])
        given = self.blocks.get(command, {})
        unknown = set(given) - set(merged)
        if unknown:
            raise ConfigError(f"unknown keys in '{command}': {sorted(unknown)}")
        merged.update(given)
        return merged


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    raw = dict(raw)
    schema = raw.pop("schema", SCHEMA)
    if schema != SCHEMA:
        raise ConfigError(f"unsupported config schema {schema!r}, expected {SCHEMA!r}")
    cfg = ExperimentConfig(
        seed=int(raw.pop("seed", 0)),
        out=str(raw.pop("out", "results")),
        threads=int(raw.pop("threads", 1)),
        schema=schema,
    )
    for key, val in raw.items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config section {key!r}")
        if not isinstance(val, dict):
            raise ConfigError(f"section {key!r} must be a mapping")
        cfg.blocks[key] = dict(val)
    return cfg


def emit_config(cfg: ExperimentConfig) -> str:
    tree = {"schema": cfg.schema, "seed": cfg.seed, "out": cfg.out, "threads": cfg.threads}
    tree.update(cfg.blocks)
    return yaml.safe_dump(tree, sort_keys=True)


# -- helpers -----------------------------------------------------------------


def _as_list(v) -> list:
    if v is None:
        return []
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _write_csv(path: Path, header: list[str], rows: Iterable[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(round(v, 10))
    return str(v)


def _pmap(fn: Callable, items: list, threads: int) -> list:
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(fn, items))


def _design(snr_db: float):
    nv = 10.0 ** (-snr_db / 10.0)
    c = optimize_constellation(nv)
    return nv, c, info_profile(c, nv)


def _codebook(block: dict) -> dict[float, DegreeDistribution]:
    book = dict(shipped_codebook())
    for rate, path in (block.get("code_files") or {}).items():
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"code file for rate {rate} not found: {p}")
        book[float(rate)] = DegreeDistribution.from_json(p.read_text())
    return book


# -- commands ----------------------------------------------------------------


def cmd_optimize(cfg: ExperimentConfig, out: Path) -> None:
    b = cfg.block("optimize")
    snrs = [float(s) for s in _as_list(b["snr_db"])]
    designs = _pmap(_design, snrs, cfg.threads)
    rows = []
    for snr, (nv, c, prof) in zip(snrs, designs):
        (out / "constellations").mkdir(parents=True, exist_ok=True)
        (out / "constellations" / f"snr_{snr:g}dB.txt").write_text(dumps_constellation(c))
        rates = ";".join(f"{r:.4f}" for r in prof.optimal_rates)
        rows.append([snr, c.size, prof.mutual_info, gaussian_capacity(nv), prof.entropy, rates])
    _write_csv(out / "optimize.csv", ["snr_db", "num_points", "mutual_info", "capacity", "entropy", "optimal_rates"], rows)


def cmd_rates(cfg: ExperimentConfig, out: Path) -> None:
    b = cfg.block("rates")
    book = shipped_codebook()
    rows = []
    for snr in (float(s) for s in _as_list(b["snr_db"])):
        _, _, prof = _design(snr)
        plan = plan_rates(prof, book)
        n = 100_000
        disclosed = round(n * plan.disclosure_rate)
        eff = efficiency(disclosed, n, prof)
        for k, (ro, rp) in enumerate(zip(plan.optimal_rates, plan.practical_rates)):
            rows.append([snr, k, ro, rp, eff])
    _write_csv(out / "rates.csv", ["snr_db", "level", "optimal_rate", "practical_rate", "planned_efficiency"], rows)


def _resolve_plan(block: dict, prof, book) -> LevelPlan:
    rates = block.get("rates")
    if rates is None:
        return plan_rates(prof, book)
    rates = [float(r) for r in rates]
    if len(rates) != prof.num_levels:
        raise ConfigError(
            f"{len(rates)} code rates given for a constellation with {prof.num_levels} label levels"
        )
    refs = []
    for r in rates:
        if r >= 1.0:
            refs.append(None)
        elif r not in book:
            raise ConfigError(f"no code of rate {r} in the codebook")
        else:
            refs.append(r)
    try:
        return LevelPlan(tuple(prof.optimal_rates), tuple(rates), tuple(refs))
    except PlanError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_reconcile(cfg: ExperimentConfig, out: Path) -> None:
    b = cfg.block("reconcile")
    book = _codebook(b)
    snr = float(b["snr_db"])
    nv, c, prof = _design(snr)
    plan = _resolve_plan(b, prof, book)
    n = int(b["n"])
    if n < 16:
        raise ConfigError("n must be >= 16")

    def frame(f: int):
        codes = build_level_codes(plan, book, n, [cfg.seed, f])
        rng = rng_for([cfg.seed, f])
        sym = c.sample(n, rng)
        y = c.points[sym].astype(float)
        if not b["noiseless"]:
            y = y + math.sqrt(nv) * rng.standard_normal(n)
        syn = encode_syndromes(c, plan, sym, codes)
        res = multistage_decode(
            c, plan, y, syn, codes, nv, sweeps=int(b["sweeps"]), max_iter=int(b["max_iter"]), reference=sym, profile=prof
        )
        return [f, int(res.success), res.sweeps, res.disclosed_bits, res.efficiency]

    rows = _pmap(frame, list(range(int(b["frames"]))), cfg.threads)
    _write_csv(out / "reconcile_frames.csv", ["frame", "success", "sweeps", "disclosed_bits", "efficiency"], rows)
    ok = [r for r in rows if r[1]]
    beta = float(np.mean([r[4] for r in ok])) if ok else float("nan")
    planned = sum(sum(book[r].node_counts(n)[1].values()) for r in plan.code_rates if r is not None)
    summary = [[snr, n, len(rows), len(ok) / max(1, len(rows)), beta, planned]]
    _write_csv(out / "reconcile_summary.csv", ["snr_db", "n", "frames", "success_rate", "mean_beta", "planned_disclosed"], summary)


def cmd_exit_chart(cfg: ExperimentConfig, out: Path) -> None:
    b = cfg.block("exit-chart")
    nv, c, prof = _design(float(b["snr_db"]))
    plan = plan_rates(prof, shipped_codebook())
    level = int(b["level"])
    if not 0 <= level < prof.num_levels:
        raise ConfigError(f"level {level} outside 0..{prof.num_levels - 1}")
    n = int(b["n"])
    ref = plan.code_rates[level]
    code = None if ref is None else build_level_codes(plan, shipped_codebook(), n, cfg.seed)[level]
    curves = exit_curves(
        c, nv, level, code, mc_frames=int(b["mc_frames"]), seed=cfg.seed, n=n, grid=b["grid"], max_iter=int(b["max_iter"])
    )
    rows = [[a, d, e] for a, d, e in zip(curves.ia, curves.demapper, curves.decoder)]
    _write_csv(out / f"exit_level{level}.csv", ["ia", "demapper", "decoder"], rows)
    print(f"level {level} rate {plan.practical_rates[level]}: tunnel {'open' if tunnel_open(curves) else 'closed'}")


PROTOCOL_COLUMNS = [
    "gammaBarM_dB",
    "gammaBarW_dB",
    "eta",
    "alpha",
    "sigma2",
    "Ts",
    "Tc",
    "Rs",
    "Rl",
    "transmitFraction",
    "normalization",
]


def cmd_protocol(cfg: ExperimentConfig, out: Path) -> None:
    b = cfg.block("protocol")
    if b["mode"] not in ("auto", "analytic", "montecarlo"):
        raise ConfigError("protocol.mode must be auto, analytic or montecarlo")
    grid = list(
        itertools.product(
            *(map(float, _as_list(b[k])) for k in ("gamma_m_db", "gamma_w_db", "eta", "alpha", "sigma2"))
        )
    )
    try:
        beta = b["beta"] if b["beta"] == "measured" else float(b["beta"])
        pcs = [
            ProtocolConfig(
                10 ** (gm / 10),
                10 ** (gw / 10),
                secrecy_threshold=max(float(b["secrecy_threshold"]), a),
                main_threshold=float(b["main_threshold"]),
                key_ratio=eta,
                safety_margin=a,
                csi=CsiNoiseModel(s2),
                beta=beta,
            )
            for gm, gw, eta, a, s2 in grid
        ]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    def point(pc: ProtocolConfig):
        analytic = b["mode"] == "analytic" or (b["mode"] == "auto" and pc.csi.variance == 0)
        if analytic:
            return analytic_throughputs(pc)
        return monte_carlo_run(pc, int(b["frames"]), seed=cfg.seed)[0]

    reports = _pmap(point, pcs, cfg.threads)
    rows = []
    for (gm, gw, eta, a, s2), rep in zip(grid, reports):
        z = rep.normalized()
        rows.append([gm, gw, eta, a, s2, z["Ts"], z["Tc"], z["Rs"], z["Rl"], rep.transmit_fraction, rep.normalization])
        for d in rep.diagnostics:
            print(f"[gammaBarM={gm:g} dB eta={eta:g}] {d}", file=sys.stderr)
    _write_csv(out / "protocol.csv", PROTOCOL_COLUMNS, rows)


def cmd_session(cfg: ExperimentConfig, out: Path) -> None:
    b = cfg.block("session")
    pc = ProtocolConfig(10 ** (float(b["gamma_m_db"]) / 10), 10 ** (float(b["gamma_w_db"]) / 10))
    msg = rng_for([cfg.seed, 99]).integers(0, 2, int(b["message_bits"]))
    try:
        trace = run_session(pc, msg, cfg.seed, symbols_per_frame=int(b["n"]), max_frames=int(b["max_frames"]))
    except KeyStarvation as exc:
        out.mkdir(parents=True, exist_ok=True)
        (out / "session.json").write_text(exc.trace.to_json())
        raise
    out.mkdir(parents=True, exist_ok=True)
    (out / "session.json").write_text(trace.to_json())
    ok = bool(np.array_equal(trace.decrypted, trace.message))
    print(
        f"frames used: {1 + trace.events[-1].frame}, disclosed bits: {trace.disclosed_bits}, "
        f"decrypted correctly: {ok}"
    )


HANDLERS = {
    "optimize": cmd_optimize,
    "rates": cmd_rates,
    "reconcile": cmd_reconcile,
    "exit-chart": cmd_exit_chart,
    "protocol": cmd_protocol,
    "session": cmd_session,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wiretap-keys", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, help="YAML experiment config")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", type=Path, help="output directory (overrides the config)")
    p.add_argument("--threads", type=int, help="worker threads for sweep points")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config is not None:
            if not args.config.is_file():
                raise ConfigError(f"config file not found: {args.config}")
            cfg = parse_config(args.config.read_text())
        else:
            cfg = ExperimentConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        if args.threads is not None:
            cfg.threads = args.threads
        if cfg.threads < 1:
            raise ConfigError("threads must be >= 1")
        out = args.out if args.out is not None else Path(cfg.out)
        HANDLERS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OptimizationFailure, PlanError, NoKeyError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
