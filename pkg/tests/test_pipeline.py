import json
import os

import numpy as np
import pandas as pd
import pytest

from cfdata import api, ingest, pipeline, synth
from cfdata.utils import storage

N_PAIRS = 4


def write_corpus(directory, n_pairs=N_PAIRS, seed=11, scenario=None):
    corpus = synth.simulate_corpus(n_pairs, seed, scenario)
    for item in corpus:
        ingest.write_frames(item.frames, os.path.join(directory, "%s.csv" % item.sim.scenario.scene_prefix))
    return corpus


def run_config(input_dir, out_dir, **environ):
    cfg = api.load_config(environ=environ)
    cfg.input.paths = input_dir
    cfg.output.directory = out_dir
    return cfg


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    directory = str(tmp_path_factory.mktemp("corpus"))
    corpus = write_corpus(directory)
    return storage(directory=directory, corpus=corpus)


@pytest.fixture(scope="module")
def finished_run(corpus_dir, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("run"))
    manifest = pipeline.run(run_config(corpus_dir.directory, out))
    return storage(out=out, manifest=manifest, corpus=corpus_dir.corpus)


class TestPipelineClass:
    item = storage(pair_id="p1", subset="H-H")

    def make(self, **environ):
        return pipeline.pipeline(api.load_config(environ=environ))

    def test_processors_nest_in_order(self):
        p = self.make()
        calls = []

        def named(name):
            def processor(handler):
                calls.append(name + " in")
                result = handler()
                calls.append(name + " out")
                return result

            return processor

        p.add_processor(named("outer"))
        p.add_processor(named("inner"))
        result = p.handle("demo", self.item, lambda item: calls.append("stage") or item.pair_id)
        assert result == "p1"
        assert calls == ["outer in", "inner in", "stage", "inner out", "outer out"]
        assert p.outcomes[-1].status == "ok"

    def test_skip_and_fail(self, monkeypatch):
        lines = []
        monkeypatch.setattr(api.debug, "write", lines.append)
        p = self.make()

        def invalid(item):
            raise api.InvalidInput("too short")

        assert p.handle("newell", self.item, invalid, skip=(api.InvalidInput,)) is None
        assert p.outcomes[-1].status == "skip: too short"
        assert lines == []

        assert p.handle("enhance", self.item, lambda item: 1 / 0) is None
        assert p.outcomes[-1].status == "fail: ZeroDivisionError: division by zero"
        assert len(lines) == 1
        assert '"enhance H-H" - fail' in lines[0]
        assert lines[0].startswith("p1 - - [")

    def test_debug_logs_every_outcome(self, monkeypatch):
        lines = []
        monkeypatch.setattr(api.debug, "write", lines.append)
        p = self.make(CFDATA_RUN__DEBUG="true")
        p.handle("demo", self.item, lambda item: None)
        assert len(lines) == 1 and lines[0].endswith("- ok\n")

        p.handle("demo", self.item, lambda item: 1 / 0)
        # traceback first, then the log line
        assert "Traceback" in lines[1]
        assert "fail" in lines[2]

    def test_unload_runs_after_failure(self):
        p = self.make()
        p.handle("a", self.item, lambda item: 1 / 0)
        p.handle("b", self.item, lambda item: None)
        assert [o.stage for o in p.outcomes] == ["a", "b"]
        assert [o.status.split(":")[0] for o in p.outcomes] == ["fail", "ok"]

    def test_hooks(self):
        events = []
        p = self.make()
        p.add_processor(pipeline.loadhook(lambda: events.append("load")))
        p.add_processor(pipeline.unloadhook(lambda: events.append("unload")))
        p.handle("demo", self.item, lambda item: events.append("stage"))
        assert events == ["load", "stage", "unload"]


class TestRun:
    def test_counts(self, finished_run):
        counts = finished_run.manifest["counts"]
        assert counts["scene_files"] == N_PAIRS
        assert counts["rejected_records"] == 0
        assert counts["tracks"] == 2 * N_PAIRS
        assert counts["pairs_ha"] == 2
        assert counts["pairs_hh"] == 2
        assert counts["enhanced"] == N_PAIRS

    def test_no_stage_failed(self, finished_run):
        statuses = [f["status"] for f in finished_run.manifest["failures"]]
        assert not [s for s in statuses if s.startswith("fail")]
        stages = finished_run.manifest["stages"]
        assert stages["enhance"]["ok"] == N_PAIRS
        assert stages["assess-raw"]["ok"] == N_PAIRS

    def test_summary_matches_truth(self, finished_run):
        out = finished_run.out
        pairs = pd.read_csv(os.path.join(out, "pairs.csv"))
        summary = pd.read_csv(os.path.join(out, "summary.csv")).set_index("dataset")

        distance = duration = 0.0
        for row in pairs.itertuples():
            i = int(row.t_start // 1000)
            truth = finished_run.corpus[i].sim.truth
            x = np.interp([row.t_start, row.t_end], truth["t"], truth["x_fol"])
            distance += x[1] - x[0]
            duration += row.t_end - row.t_start
        assert summary["pairs"].sum() == N_PAIRS
        assert summary["distance_km"].sum() == pytest.approx(distance / 1000.0, abs=1e-5)
        assert summary["duration_h"].sum() == pytest.approx(duration / 3600.0, abs=1e-5)
        assert (pairs["duration"] > 16.0).all()

    def test_artifacts_listed_with_digests(self, finished_run):
        out = finished_run.out
        artifacts = finished_run.manifest["artifacts"]
        for name in ["rejects.csv", "pairs.csv", "summary.csv", "assessment_raw.csv", "newell_fits.csv", "thresholds.csv"]:
            assert name in artifacts
        pairs = pd.read_csv(os.path.join(out, "pairs.csv"))
        for pair_id in pairs["pair_id"]:
            assert "raw/%s.csv" % pair_id in artifacts
            assert "enhanced/%s.csv" % pair_id in artifacts
            assert "enhanced/%s.json" % pair_id in artifacts

        with open(os.path.join(out, "manifest.json")) as f:
            on_disk = json.load(f)
        assert on_disk["artifacts"] == artifacts
        assert on_disk["config"]["regime"]["tau_star"] is None

    def test_newell_fits_carry_flag(self, finished_run):
        fits = pd.read_csv(os.path.join(finished_run.out, "newell_fits.csv"))
        assert list(fits.columns) == ["pair_id", "subset", "tau", "delta", "rmse", "flagged"]
        assert len(fits) == finished_run.manifest["counts"]["newell_fits"]
        assert fits["flagged"].dtype == bool

    def test_no_threshold_means_no_regimes(self, finished_run):
        # four pairs are far below min_fits and tau_star is unset
        assert finished_run.manifest["thresholds"] == {"H-A": None, "H-H": None}
        assert finished_run.manifest["stages"]["regime"]["skip"] == N_PAIRS
        regimes = pd.read_csv(os.path.join(finished_run.out, "regime_summary.csv"))
        assert regimes.empty

    def test_worker_count_does_not_change_artifacts(self, corpus_dir, finished_run, tmp_path):
        manifest = pipeline.run(run_config(corpus_dir.directory, str(tmp_path), CFDATA_RUN__WORKERS="8"))
        assert manifest["artifacts"] == finished_run.manifest["artifacts"]
        assert manifest["config_hash"] != finished_run.manifest["config_hash"]

    def test_configured_threshold_labels_regimes(self, corpus_dir, tmp_path):
        cfg = run_config(corpus_dir.directory, str(tmp_path), CFDATA_REGIME__TAU_STAR="2.0")
        manifest = pipeline.run(cfg)
        assert manifest["thresholds"] == {"H-A": 2.0, "H-H": 2.0}
        assert manifest["counts"]["labelled"] == N_PAIRS

        regimes = pd.read_csv(os.path.join(str(tmp_path), "regime_summary.csv"))
        for _, fractions in regimes.groupby("subset")["fraction"]:
            assert fractions.sum() == pytest.approx(1.0, abs=1e-5)
        adf = pd.read_csv(os.path.join(str(tmp_path), "adf_groups.csv"))
        assert adf["count"].sum() == N_PAIRS

    def test_disabled_enhancement(self, corpus_dir, tmp_path):
        cfg = run_config(corpus_dir.directory, str(tmp_path), CFDATA_STAGES__ENHANCE="false")
        manifest = pipeline.run(cfg)
        artifacts = manifest["artifacts"]
        assert not [a for a in artifacts if a.startswith("enhanced/")]
        assert "newell_fits.csv" not in artifacts
        assert "assessment_raw.csv" in artifacts
        assert manifest["enabled"]["enhance"] is False

    def test_no_scene_files(self, tmp_path):
        cfg = run_config(os.path.join(str(tmp_path), "empty"), str(tmp_path))
        with pytest.raises(api.DataError, match="no scene files"):
            pipeline.run(cfg)


class TestCorruptedCorpus:
    scenario = {
        "pos_sigma": 0.05,
        "speed_sigma": 0.2,
        "zero_speed": True,
        "length_sigma": 0.1,
        "length_outlier_frac": 0.02,
        "hole_count": 1,
        "hole_duration": 1.0,
    }

    @pytest.fixture(scope="class")
    def corrupted_run(self, tmp_path_factory):
        scenes = str(tmp_path_factory.mktemp("corrupted"))
        write_corpus(scenes, n_pairs=6, seed=3, scenario=self.scenario)
        out = str(tmp_path_factory.mktemp("corrupted-run"))
        return storage(out=out, manifest=pipeline.run(run_config(scenes, out)))

    def test_every_pair_is_enhanced(self, corrupted_run):
        manifest = corrupted_run.manifest
        counts = manifest["counts"]
        assert counts["pairs_ha"] >= 1 and counts["pairs_hh"] >= 1
        assert counts["enhanced"] == counts["pairs_ha"] + counts["pairs_hh"]
        assert not [f for f in manifest["failures"] if f["status"].startswith("fail")]
        assert "assessment_enhanced.csv" in manifest["artifacts"]

    def test_anomalies_drop_per_subset(self, corrupted_run):
        summary = pd.read_csv(os.path.join(corrupted_run.out, "assessment_summary.csv"))
        table = summary.set_index(["stage", "subset"])
        for subset in ("H-A", "H-H"):
            raw, enhanced = table.loc[("raw", subset)], table.loc[("enhanced", subset)]
            assert enhanced["n_frames"] > 0
            assert enhanced["frac_jsi"] < raw["frac_jsi"] / 2
            assert enhanced["frac_jerk"] < raw["frac_jerk"]
            assert enhanced["frac_acc"] <= 0.001
