"""Command-line entry point: ``lssclt {solve,params,simulate,verify,rate}``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from collections.abc import Sequence
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .clt_params import CLTParams, clt_params_for
from .config import RunConfig, RunManifest, config_hash, parse_config, with_overrides
from .errors import (
    BranchViolation,
    DegenerateFunction,
    InvalidArgument,
    LinAlgFailure,
    LSSCLTError,
    NonConvergence,
    ParseError,
    SingularFactor,
)
from .mp_core import limiting_cdf
from .simulator import ExperimentConfig, ExperimentResult, approximation_for, run_experiment
from .stats_harness import fit_rate, ks_report, rate_csv, reports_to_jsonl

logger = logging.getLogger("lssclt")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write(path: Path, text: str, manifest: RunManifest) -> None:
    path.write_text(text, encoding="utf-8")
    manifest.outputs.append(str(path))


def clt_params_for_config(config: ExperimentConfig) -> CLTParams:
    """CLT parameters of the function actually simulated (its Bernstein
    approximant when ``f`` is only C^3)."""
    params = config.model_params()
    spectrum = config.spectrum
    approx = approximation_for(config, params, spectrum)
    return clt_params_for(approx.contour_f, params, spectrum, approx.clt)


def cmd_solve(cfg: RunConfig, out: Path, manifest: RunManifest, threads: int) -> None:
    e = cfg.experiment
    table = limiting_cdf(e.model_params(), e.spectrum)
    buf = io.StringIO()
    buf.write(f"# config_hash: {manifest.config_hash}\n")
    buf.write(f"# atom_at_zero: {table.atom_at_zero:.17g}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["x", "density", "cdf"])
    for x, d, c in zip(table.x, table.pdf, table.cdf):
        writer.writerow([format(x, ".17g"), format(d, ".17g"), format(c, ".17g")])
    _write(out / "lsd_grid.csv", buf.getvalue(), manifest)


def cmd_params(cfg: RunConfig, out: Path, manifest: RunManifest, threads: int) -> None:
    res = clt_params_for_config(cfg.experiment)
    obj = {"config_hash": manifest.config_hash, **res.to_dict()}
    _write(out / "clt_params.json", json.dumps(obj, indent=2, sort_keys=True) + "\n", manifest)
    print(f"mu_n = {res.mu_n:.10g}  sigma2_n = {res.sigma2_n:.10g}")


def cmd_simulate(cfg: RunConfig, out: Path, manifest: RunManifest, threads: int) -> None:
    result = run_experiment(cfg.experiment, threads=threads)
    _write(out / "replicates.csv", result.to_csv(manifest.config_hash), manifest)
    xi = sum(r.xi_event for r in result.results)
    print(f"{len(result.results)} replicates, xi events: {xi}, centering = {result.metadata['centering']:.10g}")


def cmd_verify(cfg: RunConfig, out: Path, manifest: RunManifest, threads: int) -> None:
    e = cfg.experiment
    clt = clt_params_for_config(e)
    result = run_experiment(e, threads=threads)
    report = ks_report(result.centered, e.n, e.p, clt.mu_n, clt.sigma2_n)
    _write(out / "replicates.csv", result.to_csv(manifest.config_hash), manifest)
    _write(out / "ks_report.jsonl", reports_to_jsonl([report], "verify", manifest.config_hash), manifest)
    print(f"n={e.n} p={e.p} R={report.R} ks={report.ks:.5f} mean={report.empirical_mean:.5g} var={report.empirical_var:.5g}")


def _read_replicates(path: Path) -> tuple[dict[str, str], np.ndarray]:
    """Header comments and the ``lss_centered`` column of a replicate CSV."""
    comments: dict[str, str] = {}
    rows = []
    with path.open(encoding="utf-8") as fh:
        body = []
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                comments[key.strip()] = value.strip()
            else:
                body.append(line)
    for row in csv.DictReader(body):
        rows.append(float(row["lss_centered"]))
    return comments, np.array(rows)


def cmd_rate(cfg: RunConfig, out: Path, manifest: RunManifest, threads: int, inputs: Sequence[Path] = ()) -> None:
    if len(cfg.rate_n) < 3:
        raise InvalidArgument("rate sweeps need at least three values in run.rate_n")
    sweep = {c.n: c for c in cfg.sweep()}
    samples: dict[int, np.ndarray] = {}
    if inputs:
        for path in inputs:
            comments, values = _read_replicates(path)
            found = comments.get("config_hash")
            if found != manifest.config_hash:
                raise InvalidArgument(f"{path} has config_hash {found}, expected {manifest.config_hash}")
            n = int(comments.get("n", "0"))
            if n not in sweep:
                raise InvalidArgument(f"{path} holds n={n}, which is not in rate_n")
            samples[n] = values
    else:
        for n, c in sweep.items():
            total = replace(c, replicates=c.replicates * cfg.batches)
            result: ExperimentResult = run_experiment(total, threads=threads)
            text = result.to_csv(manifest.config_hash)
            header, _, rest = text.partition("\n")
            _write(out / f"replicates_n{n}.csv", f"{header}\n# n: {n}\n# p: {c.p}\n{rest}", manifest)
            samples[n] = result.centered
    points, reports = [], []
    for n in sorted(samples):
        c = sweep[n]
        clt = clt_params_for_config(c)
        values = samples[n]
        batches = np.array_split(values, cfg.batches)
        batch_reports = [ks_report(b, n, c.p, clt.mu_n, clt.sigma2_n) for b in batches]
        reports.extend(batch_reports)
        median_ks = float(np.median([r.ks for r in batch_reports]))
        points.append((n, median_ks))
        print(f"n={n:5d} median ks over {len(batches)} batches = {median_ks:.5f}")
    fit = fit_rate(points)
    obj = {"config_hash": manifest.config_hash, **fit.to_dict()}
    _write(out / "rate_fit.json", json.dumps(obj, indent=2) + "\n", manifest)
    _write(out / "rate.csv", rate_csv(fit, manifest.config_hash), manifest)
    _write(out / "rate_reports.jsonl", reports_to_jsonl(reports, "rate", manifest.config_hash), manifest)
    print(f"slope = {fit.slope:.4f}  r2 = {fit.r2:.4f}")


COMMANDS = {
    "solve": cmd_solve,
    "params": cmd_params,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "rate": cmd_rate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="INI run configuration")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory (default ./out)")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="replicate worker threads")
    common.add_argument("--nodes-per-side", type=int, default=None, help="override contour.nodes")
    common.add_argument("--no-truncate", action="store_true", help="feed raw entries to B_n")
    parser = argparse.ArgumentParser(prog="lssclt", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="tabulate the limiting density and CDF")
    sub.add_parser("params", parents=[common], help="compute the CLT mean and variance")
    sub.add_parser("simulate", parents=[common], help="write per-replicate LSS samples")
    sub.add_parser("verify", parents=[common], help="KS distance of simulated LSS to the CLT limit")
    rate = sub.add_parser("rate", parents=[common], help="KS distance across run.rate_n and its log-log slope")
    rate.add_argument("--inputs", nargs="*", type=Path, default=(), help="reuse replicate CSVs from an earlier sweep")
    return parser


def _configure_logging() -> None:
    level = os.environ.get("LSSCLT_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")


def main(argv: Sequence[str] | None = None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(args.config)
        cfg = with_overrides(cfg, nodes_per_side=args.nodes_per_side, no_truncate=args.no_truncate)
    except (ParseError, InvalidArgument) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    manifest = RunManifest(config_hash(cfg), __version__, args.command, _now())
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        extra = {"inputs": args.inputs} if args.command == "rate" else {}
        COMMANDS[args.command](cfg, args.out, manifest, args.threads, **extra)
        manifest.finished = _now()
        (args.out / f"{args.command}_manifest.json").write_text(
            json.dumps(manifest.to_dict(), indent=2) + "\n", encoding="utf-8"
        )
    except (ParseError, InvalidArgument) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonConvergence, SingularFactor, BranchViolation, DegenerateFunction, LinAlgFailure, LSSCLTError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
