"""
Command line: run, summarize, synth, validate
(from cfdata)

Exit status: 0 success, 1 usage or configuration error, 2 data error,
3 internal error.
"""

import argparse
import json
import os
import sys
import traceback

import pandas as pd

from . import api, ingest, pipeline, synth
from .api import IntegrityError, PipelineError, UsageError
from .utils import sha1file, storage

__all__ = ["main", "summarize", "format_summary"]


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parser():
    parser = _ArgumentParser(prog="cfdata", description="Builds car-following datasets from trajectory scenes.")
    commands = parser.add_subparsers(dest="command", metavar="command")
    commands.required = True

    p = commands.add_parser("run", help="run the pipeline")
    p.add_argument("--config", help="INI file with [section] key = value lines")
    p.add_argument("--input", help="scene files, globs or directories (comma separated)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, help="worker processes")

    p = commands.add_parser("summarize", help="print the report of a finished run")
    p.add_argument("output_dir")

    p = commands.add_parser("synth", help="generate synthetic scene files with truth")
    p.add_argument("--scenario", help="INI file with a [scenario] section")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--pairs", type=int, help="number of independent pairs (corpus mode)")
    p.add_argument("--seed", type=int, help="corpus seed (default: the scenario seed)")

    p = commands.add_parser("validate", help="check the format of a scene file")
    p.add_argument("scene_file")
    return parser


def _run(args, environ):
    cfg = api.load_config(args.config, environ)
    if args.input is not None:
        cfg.input.paths = args.input
    if args.out is not None:
        cfg.output.directory = args.out
    if args.workers is not None:
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        cfg.run.workers = args.workers
    manifest = pipeline.run(cfg)
    counts = manifest["counts"]
    print(
        "%d pairs (H-A %d, H-H %d) written to %s"
        % (counts.get("pairs_ha", 0) + counts.get("pairs_hh", 0), counts.get("pairs_ha", 0), counts.get("pairs_hh", 0), cfg.output.directory)
    )


def _read_table(directory, relpath):
    return pd.read_csv(os.path.join(directory, relpath), keep_default_na=True)


def summarize(directory):
    """
    Checks the run artifacts against the manifest and loads the report tables.
    Missing tables (disabled stages) come back as None.
    """
    path = os.path.join(directory, "manifest.json")
    try:
        with open(path, encoding="utf-8") as f:
            manifest = json.load(f)
    except OSError:
        raise IntegrityError("%s: no manifest.json, not a run directory" % directory)
    except ValueError:
        raise IntegrityError("%s: unreadable manifest.json" % directory)

    for relpath, digest in sorted(manifest["artifacts"].items()):
        full = os.path.join(directory, relpath)
        if not os.path.exists(full):
            raise IntegrityError("%s is missing" % relpath)
        if sha1file(full) != digest:
            raise IntegrityError("%s was modified after the run" % relpath)

    def table(relpath):
        return _read_table(directory, relpath) if relpath in manifest["artifacts"] else None

    return storage(
        manifest=manifest,
        pairs=table("summary.csv"),
        anomalies=table("assessment_summary.csv"),
        regimes=table("regime_summary.csv"),
        adf=table("adf_groups.csv"),
    )


def format_summary(report):
    lines = []

    def section(title, df, render):
        lines.append(title)
        if df is None or df.empty:
            lines.append("  not computed")
        else:
            lines.extend("  " + line for line in render(df))
        lines.append("")

    section(
        "Pairs",
        report.pairs,
        lambda df: ["%-4s %6d pairs %10.3f km %8.3f h" % (r.dataset, r.pairs, r.distance_km, r.duration_h) for r in df.itertuples()],
    )
    section(
        "Anomalies (human followers)",
        report.anomalies,
        lambda df: [
            "%-8s %-4s acc %7.3f%%  jerk %7.3f%%  jsi %7.3f%%  (%d frames)"
            % (r.stage, r.subset, 100 * r.frac_acc, 100 * r.frac_jerk, 100 * r.frac_jsi, r.n_frames)
            for r in df.itertuples()
        ],
    )
    section(
        "Regime time proportions",
        report.regimes,
        lambda df: ["%-4s %-2s %6.2f%%" % (r.subset, r.regime, 100 * r.fraction) for r in df.itertuples()],
    )
    section(
        "ADF groups",
        report.adf,
        lambda df: ["%-4s %-6s %5d  %6.2f%%" % (r.subset, r.group, r.count, 100 * r.fraction) for r in df.itertuples()],
    )
    return "\n".join(lines)


def _summarize(args, environ):
    print(format_summary(summarize(args.output_dir)), end="")


def _synth(args, environ):
    values = synth.scenario_values(args.scenario) if args.scenario else {}
    if args.pairs is None:
        sc = synth.load_scenario(args.scenario) if args.scenario else synth.SynthScenario()
        sim = synth.simulate_pair(sc)
        ingest.write_frames(synth.corrupt(sim), os.path.join(args.out, "%s.csv" % sc.scene_prefix))
        synth.write_truth(sim, os.path.join(args.out, "truth", "%s.csv" % sc.scene_prefix))
        print("1 pair written to %s" % args.out)
        return
    if args.pairs < 1:
        raise UsageError("--pairs must be >= 1")
    seed = args.seed if args.seed is not None else values.get("seed", 0)
    for item in synth.simulate_corpus(args.pairs, seed, values):
        prefix = item.sim.scenario.scene_prefix
        ingest.write_frames(item.frames, os.path.join(args.out, "%s.csv" % prefix))
        synth.write_truth(item.sim, os.path.join(args.out, "truth", "%s.csv" % prefix))
    print("%d pairs written to %s" % (args.pairs, args.out))


def _validate(args, environ):
    result = ingest.validate_file(args.scene_file)
    print("%s: %d records, %d scenes, %d rejected" % (args.scene_file, result.n_records, result.n_scenes, len(result.rejects)))
    for r in result.rejects.itertuples():
        print("  %s: %s" % (r.reason, r.record))


_COMMANDS = {
    "run": _run,
    "summarize": _summarize,
    "synth": _synth,
    "validate": _validate,
}


def main(argv=None, environ=None):
    """Runs one command and returns the exit status."""
    environ = os.environ if environ is None else environ
    try:
        args = _parser().parse_args(argv)
        _COMMANDS[args.command](args, environ)
    except PipelineError as e:
        print("cfdata: error: %s" % e.message, file=sys.stderr)
        return e.status
    except api.SynthError as e:
        print("cfdata: error: invalid scenario: %s" % e, file=sys.stderr)
        return 1
    except (KeyboardInterrupt, SystemExit):
        raise
    except Exception:
        traceback.print_exc(file=sys.stderr)
        return 3
    return 0


def console():
    sys.exit(main())
