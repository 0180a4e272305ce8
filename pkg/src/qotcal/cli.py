"""Command-line interface: ``qotcal {simulate,calibrate,sweep,validate-gp}``.

Exit codes: 0 success, 2 configuration/usage error, 3 emulator validation
gate failure, 4 empty solution set, 5 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from .link import SearchWindowError, dataset_to_csv, generate_dataset, optimal_power, powers_for_penalty
from .pipeline import (EmptySolutionError, ValidationGateError, build_stages, match, target_powers)

EXIT_OK, EXIT_CONFIG, EXIT_GATE, EXIT_EMPTY, EXIT_IO = 0, 2, 3, 4, 5

log = logging.getLogger("qotcal")


class UsageError(Exception):
    pass


def config_hash(cfg: dict, **extra) -> str:
    doc = {k: v for k, v in cfg.items() if k != "output_dir"}
    doc.update(extra)
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def fmt_penalty(p: float) -> str:
    return format(float(p), "g")


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(out: Path, name: str, text: str) -> Path:
    path = out / name
    if path.resolve().parent != out.resolve():
        raise OSError(f"refusing to write outside {out}: {name}")
    path.write_text(text)
    log.info("wrote %s", path)
    return path


def _load(args) -> dict:
    cfg = cfgmod.load(args.config)
    if args.seed_override is not None:
        s = args.seed_override
        cfg["seeds"] = {"design": s, "training": s + 1, "hm": s + 2}
    return cfg


def _penalty(args, cfg) -> float:
    if args.penalty is not None:
        p = args.penalty
    elif len(cfg["penalties"]) == 1:
        p = cfg["penalties"][0]
    else:
        raise UsageError("--penalty is required when the config lists several penalties")
    if not p >= 0:
        raise UsageError(f"penalty must be >= 0 dB, got {p}")
    return float(p)


def cmd_simulate(args) -> int:
    cfg = _load(args)
    if not cfg["penalties"]:
        raise UsageError("config lists no penalties")
    gt = cfgmod.ground_truth_of(cfg)
    if gt is None:
        raise UsageError("simulate needs a ground_truth section")
    link = cfgmod.link_of(cfg)
    points = generate_dataset(gt, link, cfg["penalties"])
    h = config_hash({k: cfg[k] for k in ("link", "ground_truth", "penalties")})
    _write(_out_dir(cfg), "dataset.csv",
           dataset_to_csv(points, f"config_hash={h} seeds={json.dumps(cfg['seeds'], sort_keys=True)}"))
    print(f"optimal power: {optimal_power(gt, link):+.1f} dBm")
    for pen in cfg["penalties"]:
        lo, _, hi = powers_for_penalty(gt, link, pen)
        print(f"penalty {fmt_penalty(pen)} dB: linear {lo:+.1f} dBm, nonlinear {hi:+.1f} dBm")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _load(args)
    penalty = _penalty(args, cfg)
    ccfg = cfgmod.calibration_config(cfg, penalty)
    out = _out_dir(cfg)
    report = match(ccfg, build_stages(ccfg, args.threads), args.threads)
    _write(out, f"report_{fmt_penalty(penalty)}.json", report.to_json())
    _write(out, "estimates.csv", report.estimates_csv())
    _write(out, "validation.csv", report.validation_csv())
    _write(out, "plausible_counts.csv", report.plausible_counts_csv())
    _write(out, "plausible_set.csv", report.solutions.to_csv(f"config_hash={ccfg.hash()}"))
    for norm in ("l1", "l2"):
        est = report.estimate(norm)
        print(f"best {norm.upper()}: " + ", ".join(f"{k}={v}" for k, v in est.items()))
    print(f"|X_sol| = {len(report.solutions)}")
    return EXIT_OK


SWEEP_COLUMNS = ["penalty_db", "selection", "alpha", "gamma", "nf", "snr0", "mean_n_solutions", "status"]


def run_sweep(cfg: dict, repeats: int = 1, threads: int = 1) -> list[dict]:
    """Calibrate every configured penalty; one row per (penalty, norm)."""
    rows = []
    for pen in cfg["penalties"]:
        base = cfgmod.calibration_config(cfg, pen)
        counts, first, status = [], None, "ok"
        try:
            stages = build_stages(base, threads)
            for rep in range(repeats):
                ccfg = replace(base, seeds=replace(base.seeds, hm=base.seeds.hm + rep))
                try:
                    rep_report = match(ccfg, stages, threads)
                    counts.append(len(rep_report.solutions))
                except EmptySolutionError:
                    counts.append(0)
                    rep_report = None
                if rep == 0:
                    first = rep_report
            if first is None:
                status = "empty_solution"
        except ValidationGateError as exc:
            status = "validation_gate"
            log.error("%s", exc)
        except SearchWindowError as exc:
            status = "search_window"
            log.error("%s", exc)
        mean_n = float(np.mean(counts)) if counts else float("nan")
        for label in ("L1", "L2"):
            row = {"penalty_db": pen, "selection": label, "mean_n_solutions": mean_n, "status": status}
            est = first.estimate(label.lower()) if first is not None else {}
            for c in ("alpha", "gamma", "nf", "snr0"):
                row[c] = est.get(c)
            rows.append(row)
    return rows


def cmd_sweep(args) -> int:
    cfg = _load(args)
    if not cfg["penalties"]:
        raise UsageError("config lists no penalties")
    if args.repeats < 1:
        raise UsageError("--repeats must be >= 1")
    rows = run_sweep(cfg, args.repeats, args.threads)
    h = config_hash(cfg, repeats=args.repeats)
    buf = io.StringIO()
    buf.write(f"# config_hash={h} seeds={json.dumps(cfg['seeds'], sort_keys=True)} repeats={args.repeats}\n")
    w = csv.DictWriter(buf, SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r[k] is None else r[k]) for k in SWEEP_COLUMNS})
    out = _out_dir(cfg)
    _write(out, "sweep.csv", buf.getvalue())
    _write(out, "sweep.json", json.dumps({"config_hash": h, "seeds": cfg["seeds"], "repeats": args.repeats,
                                          "rows": rows}, indent=1) + "\n")
    print(buf.getvalue(), end="")
    return EXIT_OK


def cmd_validate_gp(args) -> int:
    cfg = _load(args)
    penalties = [_penalty(args, cfg)] if args.penalty is not None else cfg["penalties"]
    if not penalties:
        raise UsageError("config lists no penalties")
    out = _out_dir(cfg)
    h = config_hash(cfg, penalties=penalties)
    buf = io.StringIO()
    buf.write(f"# config_hash={h} seeds={json.dumps(cfg['seeds'], sort_keys=True)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["penalty_db", "power_dbm", "l1_mean_db", "l2_rms_db", "lengthscale", "nugget"])
    gate_failed = False
    for pen in penalties:
        ccfg = replace(cfgmod.calibration_config(cfg, pen), validation_gate_db=float("inf"))
        stages = build_stages(ccfg, args.threads)
        for j, s in enumerate(stages):
            w.writerow([fmt_penalty(pen), f"{s.power:.1f}", repr(s.l1_mean), repr(s.l2_rms),
                        repr(s.emulator.hp.lengthscale), repr(s.emulator.hp.nugget)])
            _write(out, f"emulator_{fmt_penalty(pen)}_{j}.json", s.emulator.to_json())
            gate_failed |= s.l1_mean > cfg["gp"]["validation_gate_db"]
    _write(out, "validation.csv", buf.getvalue())
    print(buf.getvalue(), end="")
    return EXIT_GATE if gate_failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run configuration (JSON)")
    common.add_argument("--threads", type=int, default=1, help="worker cap; results do not depend on it")
    common.add_argument("--seed-override", type=int, default=None,
                        help="replace the seed block with (s, s+1, s+2) for design/training/hm")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="qotcal", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="write the SNR-vs-power dataset")
    c = sub.add_parser("calibrate", parents=[common], help="estimate parameters at one penalty")
    c.add_argument("--penalty", type=float)
    s = sub.add_parser("sweep", parents=[common], help="calibrate every configured penalty")
    s.add_argument("--repeats", type=int, default=1)
    v = sub.add_parser("validate-gp", parents=[common], help="train emulators and report validation errors")
    v.add_argument("--penalty", type=float)
    return p


COMMANDS = {"simulate": cmd_simulate, "calibrate": cmd_calibrate, "sweep": cmd_sweep,
            "validate-gp": cmd_validate_gp}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"qotcal: usage error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (cfgmod.ConfigError, SearchWindowError) as exc:
        print(f"qotcal: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValidationGateError as exc:
        print(f"qotcal: validation gate: {exc}", file=sys.stderr)
        return EXIT_GATE
    except EmptySolutionError as exc:
        print(f"qotcal: empty solution set: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except OSError as exc:
        print(f"qotcal: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
