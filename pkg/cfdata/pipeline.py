"""
Pipeline: per-pair stage processing with processors, and the full run
(from cfdata)
"""

import datetime
import json
import os
import time
import traceback

import numpy as np
import pandas as pd

from . import api
from .api import DataError, InsufficientData, InvalidInput
from .assess import combine_reports, kinematic_anomalies, missing_data
from .enhance import enhance_pair
from .ingest import expand_paths, read_scenes, stitch_tracks
from .regime import (
    REGIMES,
    SUBSETS,
    adf_group_counts,
    calibrate_newell,
    fleet_gap_thresholds,
    label_regimes,
    regime_time_proportions,
    segment_speed_profile,
    tau_histogram,
)
from .select import extract_pairs
from .trajkit import TimeSeries
from .utils import Counter, parallel_map, safewrite, sha1file, storage

__all__ = ["pipeline", "loadhook", "unloadhook", "LogProcessor", "run"]

ASSESSMENT_COLUMNS = ["pair_id", "vehicle", "source", "frac_acc", "frac_jerk", "frac_jsi", "n_frames"]
INDEX_COLUMNS = ["pair_id", "leader_type", "t_start", "t_end", "duration", "n_frames", "mean_gap"]
RAW_COLUMNS = ["t", "x_lead", "v_lead", "yaw_lead", "length_lead", "width_lead", "x_fol", "v_fol", "yaw_fol", "length_fol", "width_fol"]


class pipeline:
    """
    Runs one stage function on one item through a chain of processors.
    A processor takes the next handler and returns its result, like this:

        >>> p = pipeline(api.load_config(environ={}))
        >>> def shout(handler): return handler().upper()
        >>> p.add_processor(shout)
        >>> p.handle("demo", storage(pair_id="x", subset="H-H"), lambda item: "ok")
        'OK'
        >>> p.outcomes
        [<Storage {'pair_id': 'x', 'stage': 'demo', 'status': 'ok'}>]
    """

    def __init__(self, cfg=None):
        self.cfg = cfg or api.config
        self.processors = []
        self.outcomes = []
        self.add_processor(loadhook(self._load))
        self.add_processor(unloadhook(self._unload))
        self.add_processor(LogProcessor(self.cfg.run.debug))
        self.add_processor(self._catch)

    def add_processor(self, processor):
        """Adds a processor; the first added runs outermost."""
        self.processors.append(processor)

    def _load(self):
        api.ctx.status = "ok"

    def _unload(self):
        self.outcomes.append(storage(pair_id=api.ctx.pair_id, stage=api.ctx.stage, status=api.ctx.status))

    def _catch(self, handler):
        try:
            return handler()
        except self.skip as e:
            api.ctx.status = "skip: %s" % e
        except (KeyboardInterrupt, SystemExit):
            raise
        except Exception as e:
            if self.cfg.run.debug:
                api.debug.write(traceback.format_exc())
            api.ctx.status = "fail: %s: %s" % (type(e).__name__, e)
        return None

    def handle(self, stage, item, func, skip=()):
        """
        Applies `func(item)` for `stage`. Exceptions listed in `skip` mark
        the item skipped, any other exception marks it failed; both return None.
        """
        api.ctx.stage = stage
        api.ctx.pair_id = item.pair_id
        api.ctx.subset = item.subset
        self.skip = tuple(skip)

        def process(processors):
            if processors:
                p, processors = processors[0], processors[1:]
                return p(lambda: process(processors))
            else:
                return func(item)

        return process(self.processors)


def loadhook(h):
    """Converts a hook into a processor that runs it before the stage."""

    def processor(handler):
        h()
        return handler()

    return processor


def unloadhook(h):
    """Converts a hook into a processor that runs it after the stage, even on errors."""

    def processor(handler):
        try:
            return handler()
        finally:
            h()

    return processor


class LogProcessor:
    """Logs one line per (stage, pair); failures are always logged."""

    def __init__(self, verbose=False):
        self.verbose = verbose
        self.format = '%s - - [%s] "%s %s" - %s'

    def __call__(self, handler):
        result = handler()
        status = api.ctx.status
        if self.verbose or status.startswith("fail"):
            self.log(status)
        return result

    def log(self, status):
        date = time.strftime("%d/%b/%Y %H:%M:%S")
        msg = self.format % (api.ctx.pair_id, date, api.ctx.stage, api.ctx.subset, status)
        api.debug.write(msg + "\n")


def _assess_raw(pair, cfg):
    reports = []
    for vehicle, veh in (("lead", pair.lead), ("fol", pair.fol)):
        if veh.v is not None:
            report = kinematic_anomalies(TimeSeries(pair.t, veh.v), "v", cfg.limits)
        else:
            report = kinematic_anomalies(TimeSeries(pair.t, veh.x), "x", cfg.limits)
        reports.append((vehicle, report))
    gaps, missing = missing_data(pair.t, cfg.enhance.dt)
    return storage(reports=reports, gaps=gaps, missing=missing)


def _assess_enhanced(enhanced, cfg):
    return [(vehicle, kinematic_anomalies(enhanced.series(vehicle, "a"), "a", cfg.limits)) for vehicle in ("lead", "fol")]


def _process_pair(job):
    """assess(raw) -> enhance -> assess(enhanced) -> Newell fit, for one pair."""
    pair, cfg = job
    p = pipeline(cfg)
    out = storage(pair_id=pair.pair_id, subset=pair.subset, raw=None, enhanced=None, enhanced_reports=None, fit=None)
    if cfg.stages.assess:
        out.raw = p.handle("assess-raw", pair, lambda pr: _assess_raw(pr, cfg))
    if cfg.stages.enhance:
        out.enhanced = p.handle("enhance", pair, lambda pr: enhance_pair(pr, cfg))
    if out.enhanced is not None:
        if cfg.stages.assess:
            out.enhanced_reports = p.handle("assess-enhanced", out.enhanced, lambda e: _assess_enhanced(e, cfg))
        if cfg.stages.regime:
            out.fit = p.handle("newell", out.enhanced, lambda e: calibrate_newell(e, cfg.regime), skip=(InvalidInput,))
    out.outcomes = p.outcomes
    return out


def _label_pair(job):
    enhanced, fit, tau_star, cfg = job
    p = pipeline(cfg)

    def label(e):
        sections = segment_speed_profile(e.series("fol", "v"), e.series("fol", "a"), cfg.regime)
        return label_regimes(sections, e, fit, tau_star, cfg.regime)

    seq = p.handle("regime", enhanced, label)
    return storage(seq=seq, outcomes=p.outcomes)


class _Writer:
    """Writes artifacts below `directory` and remembers their sha1."""

    def __init__(self, directory, float_format):
        self.directory = directory
        self.float_format = float_format
        self.artifacts = {}

    def csv(self, relpath, df):
        text = df.to_csv(index=False, float_format=self.float_format, na_rep="", lineterminator="\n")
        self.text(relpath, text)

    def text(self, relpath, text):
        path = os.path.join(self.directory, relpath)
        safewrite(path, text)
        self.artifacts[relpath] = sha1file(path)

    def json(self, relpath, obj):
        self.text(relpath, json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    return list(obj)


def _raw_frame(pair):
    def column(veh, name):
        values = veh[name]
        return np.full(len(pair.t), np.nan) if values is None else values

    data = {"t": pair.t}
    for suffix, veh in (("lead", pair.lead), ("fol", pair.fol)):
        for name in ("x", "v", "yaw", "length", "width"):
            data["%s_%s" % (name, suffix)] = column(veh, name)
    return pd.DataFrame(data, columns=RAW_COLUMNS)


def _index_frame(pairs):
    rows = [
        {
            "pair_id": p.pair_id,
            "leader_type": p.leader_type,
            "t_start": p.t[0],
            "t_end": p.t[-1],
            "duration": p.duration,
            "n_frames": len(p.t),
            "mean_gap": float(np.mean(p.x_lead - p.x_fol)),
        }
        for p in pairs
    ]
    return pd.DataFrame(rows, columns=INDEX_COLUMNS)


def _summary_frame(pairs):
    rows = []
    for subset in SUBSETS:
        mine = [p for p in pairs if p.subset == subset]
        rows.append(
            {
                "dataset": subset,
                "pairs": len(mine),
                "distance_km": sum(float(p.x_fol[-1] - p.x_fol[0]) for p in mine) / 1000.0,
                "duration_h": sum(p.duration for p in mine) / 3600.0,
            }
        )
    return pd.DataFrame(rows, columns=["dataset", "pairs", "distance_km", "duration_h"])


def _assessment_frame(results, key):
    rows = []
    for r in results:
        reports = r[key]
        if reports is None:
            continue
        reports = reports.reports if key == "raw" else reports
        for vehicle, report in reports:
            row = report.as_row()
            row.update(pair_id=r.pair_id, vehicle=vehicle)
            rows.append(row)
    return pd.DataFrame(rows, columns=ASSESSMENT_COLUMNS)


def _assessment_summary(results):
    """Follower (human driver) reports combined per stage and subset."""
    rows = []
    for stage, key in (("raw", "raw"), ("enhanced", "enhanced_reports")):
        for subset in SUBSETS:
            reports = []
            for r in results:
                if r.subset == subset and r[key] is not None:
                    pairs = r[key].reports if key == "raw" else r[key]
                    reports.extend(rep for vehicle, rep in pairs if vehicle == "fol")
            row = {"stage": stage, "subset": subset, "frac_acc": np.nan, "frac_jerk": np.nan, "frac_jsi": np.nan, "n_frames": 0}
            if reports:
                combined = combine_reports(reports)
                row.update(
                    frac_acc=combined.frac_acc_anomaly,
                    frac_jerk=combined.frac_jerk_anomaly,
                    frac_jsi=combined.frac_jsi_anomaly,
                    n_frames=combined.n_frames,
                )
            rows.append(row)
    return pd.DataFrame(rows, columns=["stage", "subset", "frac_acc", "frac_jerk", "frac_jsi", "n_frames"])


def _regime_summary(seqs, thresholds):
    rows = []
    for subset in SUBSETS:
        mine = [s for s in seqs if s.subset == subset]
        try:
            fractions = regime_time_proportions(mine)
        except InsufficientData:
            continue
        for regime in REGIMES:
            rows.append({"subset": subset, "regime": regime, "fraction": fractions[regime], "tau_star": thresholds[subset]})
    return pd.DataFrame(rows, columns=["subset", "regime", "fraction", "tau_star"])


def run(cfg=None):
    """
    Runs every enabled stage and writes the artifacts to `cfg.output.directory`.
    Returns the manifest.
    """
    cfg = cfg or api.config
    workers = cfg.run.workers
    out = _Writer(cfg.output.directory, cfg.output.float_format)
    counts = storage()

    paths = expand_paths(cfg.input.paths)
    if not paths:
        raise DataError("no scene files in %r" % cfg.input.paths)
    scenes = read_scenes(paths, workers)
    out.csv("rejects.csv", scenes.rejects)
    tracks = stitch_tracks(scenes.scenes, cfg.stitch)
    counts.update(
        scene_files=len(paths),
        records=scenes.n_records,
        rejected_records=len(scenes.rejects),
        scenes=len(scenes.scenes),
        tracks=len(tracks),
    )

    outcomes = []
    thresholds = {}
    if cfg.stages.select:
        selected = extract_pairs(tracks, cfg.selection, workers)
        pairs = selected.ha + selected.hh
        pairs.sort(key=lambda p: p.pair_id)
        counts.update(pairs_ha=len(selected.ha), pairs_hh=len(selected.hh), selection_rejections=len(selected.rejections))
        rejections = pd.DataFrame(selected.rejections, columns=["leader", "follower", "rule", "t"])
        out.csv("rejections.csv", rejections.sort_values(["leader", "follower", "t", "rule"], kind="mergesort"))
        out.csv("pairs.csv", _index_frame(pairs))
        out.csv("summary.csv", _summary_frame(pairs))
        for p in pairs:
            out.csv("raw/%s.csv" % p.pair_id, _raw_frame(p))

        results = parallel_map(_process_pair, [(p, cfg) for p in pairs], workers)
        for r in results:
            outcomes.extend(r.outcomes)

        if cfg.stages.assess:
            out.csv("assessment_raw.csv", _assessment_frame(results, "raw"))
            missing = [
                {"pair_id": r.pair_id, "gaps": r.raw.gaps, "missing_s": r.raw.missing} for r in results if r.raw is not None
            ]
            out.csv("missing_data.csv", pd.DataFrame(missing, columns=["pair_id", "gaps", "missing_s"]))
        enhanced = [r for r in results if r.enhanced is not None]
        if cfg.stages.enhance:
            counts.enhanced = len(enhanced)
            for r in enhanced:
                out.csv("enhanced/%s.csv" % r.pair_id, r.enhanced.to_frame())
                out.json("enhanced/%s.json" % r.pair_id, r.enhanced.metadata())
        if cfg.stages.assess and cfg.stages.enhance:
            out.csv("assessment_enhanced.csv", _assessment_frame(results, "enhanced_reports"))
        if cfg.stages.assess:
            out.csv("assessment_summary.csv", _assessment_summary(results))

        if cfg.stages.regime and cfg.stages.enhance:
            fits = [r.fit for r in results if r.fit is not None]
            counts.newell_fits = len(fits)
            out.csv("newell_fits.csv", pd.DataFrame([f.as_row() for f in fits], columns=["pair_id", "subset", "tau", "delta", "rmse", "flagged"]))
            thresholds = fleet_gap_thresholds(fits, cfg.regime)
            by_subset = Counter()
            for f in fits:
                by_subset.add(f.subset)
            out.csv(
                "thresholds.csv",
                pd.DataFrame(
                    [
                        {"subset": s, "tau_star": thresholds[s], "k": cfg.regime.threshold_k, "n_fits": by_subset.get(s, 0)}
                        for s in SUBSETS
                    ],
                    columns=["subset", "tau_star", "k", "n_fits"],
                ),
            )
            out.csv("tau_hist.csv", tau_histogram(fits, cfg.regime.hist_bin, cfg.regime))

            fit_of = {f.pair_id: f for f in fits}
            jobs = []
            for r in enhanced:
                if thresholds[r.subset] is None:
                    outcomes.append(storage(pair_id=r.pair_id, stage="regime", status="skip: no gap threshold"))
                else:
                    jobs.append((r.enhanced, fit_of.get(r.pair_id), thresholds[r.subset], cfg))
            labelled = parallel_map(_label_pair, jobs, workers)
            seqs = []
            for lab in labelled:
                outcomes.extend(lab.outcomes)
                if lab.seq is not None:
                    seqs.append(lab.seq)
                    out.csv("regime/%s.csv" % lab.seq.pair_id, lab.seq.to_frame())
            counts.labelled = len(seqs)
            out.csv("regime_summary.csv", _regime_summary(seqs, thresholds))
            out.csv("adf_groups.csv", adf_group_counts(seqs))

    stages = {}
    for o in outcomes:
        status = o.status.split(":")[0]
        stages.setdefault(o.stage, {"ok": 0, "skip": 0, "fail": 0})[status] += 1
    manifest = {
        "config_hash": api.config_hash(cfg),
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "counts": dict(counts),
        "stages": stages,
        "enabled": dict(cfg.stages),
        "thresholds": thresholds,
        "failures": [dict(o) for o in sorted(outcomes, key=lambda o: (o.pair_id, o.stage)) if o.status != "ok"],
        "config": cfg,
        "artifacts": dict(sorted(out.artifacts.items())),
    }
    safewrite(os.path.join(cfg.output.directory, "manifest.json"), json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return manifest
