"""Command-line entry point.

    adahi [--config FILE] [--seed N] [--out DIR] <command> ...

Commands:

    calibrate   collect a shadow-verified corpus and write codebooks.bin,
                corpus.csv and calibration.txt into --out
    serve       run the verification server
    run         run episodes in one mode (or ``--mode all``), appending logs
                to steps.csv / episodes.csv in --out
    report      summarize the logs in a run directory into report.csv and
                cdf.csv (a pure function of the CSV files)
    sweep       re-threshold the calibrated gate for several transmission
                rates and report one adahi row per rate
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

from ..calibrate import CalibrationArtifact, CalibrationCorpus, threshold_for_tr
from ..errors import AdahiError, ConfigError
from ..proto import VerifyServer
from ..quantizer import load_codebooks, save_codebooks
from . import config as cfgmod
from . import experiment as X
from .logs import format_table, group_by_mode, read_records, write_cdf, write_records, write_report
from .metrics import compute_metrics

log = logging.getLogger("adahi")

CODEBOOKS = "codebooks.bin"
ARTIFACT = "calibration.txt"
CORPUS = "corpus.csv"


def _parse_trs(text: str) -> list[float]:
    try:
        trs = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse transmission rates {text!r}") from None
    if not trs or any(not 0 <= tr <= 1 for tr in trs):
        raise argparse.ArgumentTypeError("transmission rates must lie in [0, 1]")
    return trs


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adahi", description="Adaptive draft/target inference harness.")
    p.add_argument("--config", help="TOML run config (defaults are used when omitted)")
    p.add_argument("--seed", type=int, help="override the run seed (calibration seed for `calibrate`)")
    p.add_argument("--out", default="adahi-out", help="output / artifact directory (default: %(default)s)")
    p.add_argument("--env", help="env fixture name, overriding the config")
    p.add_argument("--paper-literal-adjust", action="store_true",
                   help="resample rejected indices from max(q - p, 0) instead of max(p - q, 0)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", help="build the calibration corpus and gate artifact")
    c.add_argument("--samples", type=int, help="minimum corpus size (default: calibration.min_samples)")
    c.add_argument("--target-tr", type=float, help="target transmission rate (default: calibration.target_tr)")

    s = sub.add_parser("serve", help="run the verification server")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8765)

    r = sub.add_parser("run", help="run episodes in one mode")
    r.add_argument("--mode", required=True, choices=cfgmod.MODES + ("all",))
    r.add_argument("--episodes", type=int, help="episode count (default: run.episodes)")
    r.add_argument("--tr", type=float, help="transmission rate for random mode (default: adahi's logged TR)")
    r.add_argument("--threshold", type=float, help="override the calibrated deviation threshold")

    rep = sub.add_parser("report", help="summarize run logs")
    rep.add_argument("--run-dir", help="directory holding steps.csv / episodes.csv (default: --out)")

    sw = sub.add_parser("sweep", help="transmission-rate ablation")
    sw.add_argument("--tr", type=_parse_trs, required=True, help="comma-separated rates, e.g. 1.0,0.8,0.6,0.4")
    sw.add_argument("--episodes", type=int, help="episodes per rate (default: run.episodes)")
    return p


def _config(args) -> dict:
    over: dict = {}
    if args.env:
        over["env"] = {"name": args.env}
    if args.paper_literal_adjust:
        over["proto"] = {"paper_literal_adjust": True}
    if args.seed is not None:
        over["calibration" if args.command == "calibrate" else "run"] = {"seed": args.seed}
    return cfgmod.load(args.config, over)


def _setup(cfg: dict, out: Path):
    cb_path = out / CODEBOOKS
    cb = load_codebooks(cb_path) if cb_path.exists() else None
    return X.build_setup(cfg, cb=cb)


def _artifact(out: Path) -> CalibrationArtifact:
    path = out / ARTIFACT
    if not path.exists():
        raise ConfigError(f"no calibration artifact at {path}; run `adahi calibrate --out {out}` first")
    return CalibrationArtifact.load(path)


def cmd_calibrate(args, cfg: dict, out: Path) -> int:
    if args.target_tr is not None:
        cfg = cfgmod.merge(cfg, {"calibration": {"target_tr": args.target_tr}})
    setup = X.build_setup(cfg)
    art, corpus = X.run_calibration(cfg, setup, args.samples)
    out.mkdir(parents=True, exist_ok=True)
    save_codebooks(setup.cb, out / CODEBOOKS)
    corpus.to_csv(out / CORPUS)
    art.save(out / ARTIFACT)
    print(f"corpus: {len(corpus)} actions, sigma = {art.sigma:.6g}")
    for form, r in art.correlations.items():
        print(f"  {form:<12} r = {r:.4f}")
    kappa = "" if art.model.kappa is None else f", kappa = {art.model.kappa:.4g}"
    print(f"model: {art.model.form} (m = {art.model.m:.4g}, b = {art.model.b:.4g}{kappa})")
    print(f"target TR {art.target_tr}: tau* = {art.tau_star:.6g}, delta_th = {art.delta_th:.6g}")
    print(f"wrote {out / ARTIFACT}")
    return 0


def cmd_serve(args, cfg: dict, out: Path) -> int:
    setup = _setup(cfg, out)
    pr = cfg["proto"]
    server = VerifyServer(setup.target, setup.cb, args.host, args.port, pr["max_payload_bytes"],
                          pr["paper_literal_adjust"])
    print(f"serving {server.url}/verify (codebook {setup.cb.checksum[:12]})", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.httpd.server_close()
    return 0


def _logged_adahi_tr(out: Path) -> float | None:
    if not (out / "episodes.csv").exists():
        return None
    rows = [r for rec in read_records(out) if rec.mode == "adahi" for r in rec.rows]
    return sum(r.transmitted for r in rows) / len(rows) if rows else None


def _save_mode_logs(records, out: Path) -> None:
    """Replace any earlier logs of the same mode(s), keep the others."""
    modes = {rec.mode for rec in records}
    kept = []
    if (out / "episodes.csv").exists():
        kept = [rec for rec in read_records(out) if rec.mode not in modes]
    write_records(kept + list(records), out)


def cmd_run(args, cfg: dict, out: Path) -> int:
    setup = _setup(cfg, out)
    episodes = args.episodes or cfg["run"]["episodes"]
    seed = cfg["run"]["seed"]
    needs_gate = args.mode in ("adahi", "all") or (args.mode == "random" and args.tr is None)
    if needs_gate:
        setup = X.apply_artifact(setup, _artifact(out), args.threshold)
    if args.mode == "all":
        groups = X.run_modes(setup, episodes, seed)
        records = [rec for recs in groups.values() for rec in recs]
    else:
        if args.mode == "random":
            tr = args.tr
            if tr is None:
                tr = _logged_adahi_tr(out)
            if tr is None:
                tr = _artifact(out).target_tr
                log.warning("no adahi logs in %s; random mode uses the calibrated target TR %.3f", out, tr)
            setup = replace(setup, random_tr=tr)
        records = X.run_episodes(args.mode, setup, episodes, seed)
    out.mkdir(parents=True, exist_ok=True)
    _save_mode_logs(records, out)
    reports = [compute_metrics(recs, cfgmod.config_hash(cfg)) for recs in group_by_mode(records).values()]
    print(format_table(reports))
    return 0


def _ordered(groups: dict) -> list:
    order = [m for m in X.MODE_ORDER if m in groups] + sorted(set(groups) - set(X.MODE_ORDER))
    return [(m, groups[m]) for m in order]


def report_dir(run_dir: Path, out: Path) -> str:
    """Recompute every metric from the CSV logs; writes report.csv and cdf.csv."""
    groups = dict(_ordered(group_by_mode(read_records(run_dir))))
    reports = [compute_metrics(recs) for recs in groups.values()]
    out.mkdir(parents=True, exist_ok=True)
    write_report(reports, out / "report.csv")
    write_cdf(groups, out / "cdf.csv")
    return format_table(reports)


def cmd_report(args, cfg: dict | None, out: Path) -> int:
    run_dir = Path(args.run_dir) if args.run_dir else out
    print(report_dir(run_dir, out))
    return 0


def cmd_sweep(args, cfg: dict, out: Path) -> int:
    setup = _setup(cfg, out)
    art = _artifact(out)
    if not (out / CORPUS).exists():
        raise ConfigError(f"no calibration corpus at {out / CORPUS}; run `adahi calibrate --out {out}` first")
    deltas = CalibrationCorpus.from_csv(out / CORPUS).delta
    episodes = args.episodes or cfg["run"]["episodes"]
    reports, thresholds = [], []
    for tr in args.tr:
        if tr >= 1:
            th = 0.0
        elif tr <= 0:
            th = math.inf
        else:
            th = threshold_for_tr(deltas, art.model, tr)[1]
        s = X.apply_artifact(setup, art, th)
        rep = compute_metrics(X.run_episodes("adahi", s, episodes, cfg["run"]["seed"]), cfgmod.config_hash(cfg))
        reports.append(rep)
        thresholds.append(th)
    rows = []
    for tr, th, rep in zip(args.tr, thresholds, reports):
        row = {"target_tr": tr, "delta_th": th}
        row.update(rep.row())
        rows.append(row)
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(rows, out / "sweep.csv")
    head = f"{'target_tr':>10}{'delta_th':>10}{'TR':>8}{'success':>9}{'TSR':>8}{'lat_ms':>10}"
    print(head)
    print("-" * len(head))
    for r in rows:
        tsr = "-" if r["tsr"] is None else f"{r['tsr']:.3f}"
        print(f"{r['target_tr']:>10.2f}{r['delta_th']:>10.3f}{r['tr']:>8.3f}{r['task_success_rate']:>9.3f}"
              f"{tsr:>8}{r['mean_per_action_latency_ms']:>10.3f}")
    return 0


def _write_rows(rows: list[dict], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if v is None else v) for k, v in row.items()})


COMMANDS = {
    "calibrate": cmd_calibrate,
    "serve": cmd_serve,
    "run": cmd_run,
    "report": cmd_report,
    "sweep": cmd_sweep,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = Path(args.out)
    try:
        cfg = None if args.command == "report" else _config(args)
        return COMMANDS[args.command](args, cfg, out)
    except AdahiError as exc:
        print(f"adahi {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"adahi {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
