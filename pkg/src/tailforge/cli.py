"""Command-line front end.

    tailforge <analyze|ldcheck|vncheck|fixpoint|certify> --config run.json --out DIR [--workers N|auto]

Each run writes ``run.json`` (resolved config plus results) and ``grid.csv``
into ``--out``; ``fixpoint`` and ``certify`` also write the pool as
``pool.bin``.  Outputs are a pure function of the config: floats carry 17
significant digits and no timestamps are recorded.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from tailforge import config as cfgmod
from tailforge.certificate import CertificateConfig, certify
from tailforge.cramer import compute_profile, n0_from_log
from tailforge.errors import ConfigError, EmptyWindow, PoolMismatch, TailforgeError
from tailforge.fixedpoint import (
    Pool,
    converge,
    init_pool,
    iterate,
    load_pool,
    pool_to_bytes,
    simulate,
    stationary_moments,
    tail_report,
)
from tailforge.ldp import (
    LdpQuery,
    br_asymptote_log,
    br_upper_log,
    exact_tail_log,
    threshold,
)
from tailforge.pathevents import default_event_constants, n_window, vn_sandwich_report
from tailforge.rng import resolve_workers

log = logging.getLogger("tailforge")

EXIT_OK = 0
EXIT_USAGE = 64
BR_TOL = 0.05
BAND_GROWTH = 1.10


def fmt_float(x: float) -> str:
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return "%.17g" % x


def to_json(obj, indent: int = 0) -> str:
    """JSON with 17-digit floats; non-finite floats become strings."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return fmt_float(x) if math.isfinite(x) else json.dumps(fmt_float(x))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {to_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        items = [pad + to_json(v, indent + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    writer = csv.writer(buf, lineterminator="\n")
    header = list(rows[0])
    writer.writerow(header)
    for row in rows:
        writer.writerow(
            [fmt_float(float(row[h])) if isinstance(row[h], (float, np.floating)) else row[h] for h in header]
        )
    return buf.getvalue()


def _model_and_profile(cfg):
    model = cfgmod.model_from_dict(cfg["model"])
    prof = cfg["profile"]
    profile = compute_profile(model, gamma_margin=prof["gamma_margin"], delta=prof["delta"])
    return model, profile


def cmd_analyze(cfg, workers):
    model, profile = _model_and_profile(cfg)
    result = {"model": model.to_dict(), "profile": profile.to_dict()}
    return result, [profile.to_dict()], None


def _lattice_ratio_bound(model, profile) -> float:
    """log of ``alpha h / (1 - e^{-alpha h})``: the lattice prefactor ceiling."""
    ah = profile.alpha * model.a_law.lattice_span
    return math.log(ah / -math.expm1(-ah))


def cmd_ldcheck(cfg, workers):
    model, profile = _model_and_profile(cfg)
    sec = cfg["ldcheck"]
    ns = [int(n) for n in sec["n"]]
    ratios = [float(r) for r in sec["d_over_sqrt_n"]]
    if not ns or not ratios or any(n < 1 for n in ns) or any(r < 0 for r in ratios):
        raise ConfigError("ldcheck needs nonempty n (>= 1) and d_over_sqrt_n (>= 0) grids")
    ns = sorted(ns)
    theta = max(ratios)
    lattice = model.is_lattice
    rows = []
    for r in ratios:
        for n in ns:
            q = LdpQuery(n, r * math.sqrt(n), theta)
            exact = exact_tail_log(model, n, threshold(profile, q)).log_value
            upper = br_upper_log(profile, q)
            row = {"n": n, "d_over_sqrt_n": r, "d": q.d, "log_exact": exact, "log_envelope": upper}
            if not lattice:
                asym = br_asymptote_log(profile, q)
                row.update({"log_asymptote": asym, "abs_error": abs(exact - asym)})
            row["log_exact_minus_envelope"] = exact - upper
            rows.append(row)
    result = {"model": model.to_dict(), "profile": profile.to_dict(), "lattice": lattice}
    if lattice:
        bound = _lattice_ratio_bound(model, profile)
        worst = max(row["log_exact_minus_envelope"] for row in rows)
        result.update(
            {
                "check": "order",
                "note": "lattice law: only the envelope order is checked; the sharp asymptote needs a nonlattice law",
                "lattice_ratio_bound_log": bound,
                "max_log_exact_minus_envelope": worst,
                "passed": bool(worst <= bound + BR_TOL),
            }
        )
    else:
        columns = {}
        for row in rows:
            columns.setdefault(row["d_over_sqrt_n"], []).append(row["abs_error"])
        decreasing = all(all(np.diff(v) < 0) for v in columns.values()) if len(ns) > 1 else True
        final = max(v[-1] for v in columns.values())
        result.update(
            {
                "check": "asymptote",
                "tolerance": BR_TOL,
                "errors_decreasing_in_n": bool(decreasing),
                "max_error_at_largest_n": final,
                "passed": bool(decreasing and final <= BR_TOL),
            }
        )
    return result, rows, None


def cmd_vncheck(cfg, workers):
    model, profile = _model_and_profile(cfg)
    sec = cfg["vncheck"]
    grid = [float(x) for x in sec["log_t"]]
    if not grid or any(not x > 0 for x in grid):
        raise ConfigError("vncheck.log_t must be a nonempty list of positive numbers")
    if not model.is_lattice and cfg["seed"] is None:
        raise ConfigError("vncheck on a nonlattice model samples paths and needs a seed")
    for lt in grid:
        if not n_window(profile, lt):
            raise EmptyWindow(f"log t = {lt} gives n0 = {n0_from_log(profile, lt)}; no n in the window")
    delta = sec["delta"] if sec["delta"] is not None else profile.delta
    n_max = max(n0_from_log(profile, lt) for lt in grid)
    c_env, log_c0 = default_event_constants(model, profile, n_max)
    if sec["C0"] is not None:
        if not sec["C0"] >= 1:
            raise ConfigError("vncheck.C0 must be >= 1")
        log_c0 = math.log(sec["C0"])
    seed = cfg["seed"] or 0
    rep = vn_sandwich_report(model, profile, grid, log_c0, delta, int(sec["samples"]), seed, workers)
    result = {"model": model.to_dict(), "profile": profile.to_dict(), "c_env_log": c_env, **rep.to_dict()}
    if len(grid) >= 2:
        sub = vn_sandwich_report(model, profile, sorted(grid)[:-1], log_c0, delta, int(sec["samples"]), seed, workers)
        growth = rep.band_width / sub.band_width if sub.band_width > 0 else math.inf
        result["band_width_without_largest_t"] = sub.band_width
        result["band_growth"] = growth
        result["passed"] = bool(math.isfinite(rep.band_width) and growth <= BAND_GROWTH and not rep.monotone_drift)
    rows = [dict(row.__dict__) for row in rep.rows]
    for row in rows:
        if row["stderr"] is None:
            row["stderr"] = float("nan")
    return result, rows, None


def _moment_check(pool: Pool, model) -> dict:
    v = pool.values
    m = v.size
    out = {
        "mean": float(v.mean()),
        "mean_se": float(v.std(ddof=1) / math.sqrt(m)),
        "second_moment": float(np.mean(v * v)),
        "second_moment_se": float(np.std(v * v, ddof=1) / math.sqrt(m)),
    }
    try:
        er, er2 = stationary_moments(model)
    except ValueError:
        return out
    out["mean_exact"] = er
    out["second_moment_exact"] = er2
    out["mean_z"] = (out["mean"] - er) / out["mean_se"]
    out["second_moment_z"] = (out["second_moment"] - er2) / out["second_moment_se"]
    return out


def cmd_fixpoint(cfg, workers):
    model, profile = _model_and_profile(cfg)
    sec = cfg["fixpoint"]
    t_grid = cfgmod.t_grid_from(sec["t_grid"])
    seed = cfg["seed"]
    if sec["resume"]:
        pool = load_pool(sec["resume"], model)
        if pool.seed != seed:
            raise PoolMismatch(f"pool file was drawn with seed {pool.seed}, config asks for {seed}")
        conv = None
    else:
        if int(sec["pool_size"]) < 1000:
            raise ConfigError("fixpoint.pool_size must be >= 1000")
        pool, conv = converge(
            init_pool(model, int(sec["pool_size"]), seed),
            min_rounds=int(sec["min_rounds"]),
            max_rounds=int(sec["max_rounds"]),
            workers=workers,
        )
    if int(sec["extra_rounds"]) > 0:
        pool = iterate(pool, int(sec["extra_rounds"]), workers)
    if not np.all(np.isfinite(pool.values)):
        raise TailforgeError("pool values overflowed; the model has no moment-bounded fixed point")
    rep = tail_report(pool, profile, t_grid, k=sec["hill_k"])
    result = {
        "model": model.to_dict(),
        "profile": profile.to_dict(),
        "generation": pool.generation,
        "pool_size": pool.pool_size,
        "convergence": None
        if conv is None
        else {"rounds": conv.rounds, "converged": conv.converged, "threshold": conv.threshold, "ks_history": conv.ks_history},
        "moments": _moment_check(pool, model),
        "tail": rep.to_dict(),
    }
    return result, list(rep.rows()), pool


def cmd_certify(cfg, workers):
    model, profile = _model_and_profile(cfg)
    sec = cfg["certify"]
    seed = cfg["seed"]
    if sec["pool"]:
        pool = load_pool(sec["pool"], model)
    else:
        pool, _ = simulate(model, int(sec["pool_size"]), seed, workers=workers)
    if not np.all(np.isfinite(pool.values)):
        raise TailforgeError("pool values overflowed; the model has no moment-bounded fixed point")
    try:
        cc = CertificateConfig(
            log_t=float(sec["log_t"]),
            C1=sec["C1"],
            d=sec["d"],
            delta=sec["delta"],
            delta0=sec["delta0"],
            eps=sec["eps"],
            C0=sec["C0"],
            tail_samples=int(sec["tail_samples"]),
            vn_samples=int(sec["vn_samples"]),
            seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(f"certify: {exc}") from None
    rep = certify(model, profile, pool, cc, workers=workers)
    result = {"model": model.to_dict(), "profile": profile.to_dict(), "certificate": rep.to_dict()}
    rows = [{"level": n, "log_count": lc, "log_p_v": lp} for n, lc, lp in rep.levels]
    return result, rows, None if sec["pool"] else pool


COMMANDS = {
    "analyze": cmd_analyze,
    "ldcheck": cmd_ldcheck,
    "vncheck": cmd_vncheck,
    "fixpoint": cmd_fixpoint,
    "certify": cmd_certify,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tailforge", description="Tail diagnostics for the smoothing transform fixed point.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", default=None, help="worker threads: integer or 'auto'")
    return p


def _parse_workers(raw):
    if raw is None or raw == "auto":
        return raw
    try:
        return int(raw)
    except ValueError:
        raise ConfigError("--workers must be an integer or 'auto'") from None


def _write_outputs(out_dir: Path, files: dict[str, bytes]) -> None:
    """Write all files or none: stage in a temp dir, then move into place."""
    out_dir.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory(dir=out_dir) as tmp:
        for name, data in files.items():
            (Path(tmp) / name).write_bytes(data)
        for name in files:
            os.replace(Path(tmp) / name, out_dir / name)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    workers = _parse_workers(args.workers)
    cfg = cfgmod.load(args.config, args.command, workers)
    n_workers = resolve_workers(cfg.pop("workers"))
    log.info("%s with %d worker(s)", args.command, n_workers)
    result, rows, pool = COMMANDS[args.command](cfg, n_workers)
    # the worker count never changes results, so it is not echoed
    doc = {"command": args.command, "config": cfg, "result": result}
    files = {"run.json": (to_json(doc) + "\n").encode(), "grid.csv": to_csv(rows).encode()}
    if pool is not None:
        files["pool.bin"] = pool_to_bytes(pool)
    _write_outputs(Path(args.out), files)
    if isinstance(result, dict) and result.get("passed") is False:
        log.warning("%s: check did not pass", args.command)
    cert = result.get("certificate") if isinstance(result, dict) else None
    if cert is not None and not cert["passed"]:
        log.warning("certificate not established: %s", cert["reason"])
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return run(argv)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except TailforgeError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
