import os

import pytest

from cfdata import cli


def run(capsys, *argv, **environ):
    status = cli.main(list(argv), environ=environ)
    captured = capsys.readouterr()
    return status, captured.out, captured.err


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    directory = str(tmp_path_factory.mktemp("synth"))
    assert cli.main(["synth", "--out", directory, "--pairs", "4", "--seed", "5"], environ={}) == 0
    return directory


def test_synth_single_pair(capsys, tmp_path):
    out = str(tmp_path)
    status, stdout, _ = run(capsys, "synth", "--out", out)
    assert status == 0
    assert stdout == "1 pair written to %s\n" % out
    assert os.path.exists(os.path.join(out, "scene.csv"))
    assert os.path.exists(os.path.join(out, "truth", "scene.csv"))


def test_synth_scenario_file(capsys, tmp_path):
    scenario = tmp_path / "scenario.ini"
    scenario.write_text("[scenario]\nleader_type = AV\nscene_prefix = demo\n")
    status, _, _ = run(capsys, "synth", "--scenario", str(scenario), "--out", str(tmp_path / "out"))
    assert status == 0
    assert os.path.exists(str(tmp_path / "out" / "demo.csv"))

    scenario.write_text("[scenario]\nv_init = -4\n")
    status, _, err = run(capsys, "synth", "--scenario", str(scenario), "--out", str(tmp_path / "out"))
    assert status == 1
    assert "v_init" in err


def test_synth_corpus(corpus):
    names = sorted(os.listdir(corpus))
    assert names == ["p000.csv", "p001.csv", "p002.csv", "p003.csv", "truth"]
    assert len(os.listdir(os.path.join(corpus, "truth"))) == 4


def test_validate(capsys, corpus):
    path = os.path.join(corpus, "p000.csv")
    status, stdout, _ = run(capsys, "validate", path)
    assert status == 0
    assert stdout == "%s: 802 records, 2 scenes, 0 rejected\n" % path


def test_validate_bad_header(capsys, tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,c\n1,2,3\n")
    status, _, err = run(capsys, "validate", str(path))
    assert status == 2
    assert err.startswith("cfdata: error: ")


def test_run_then_summarize(capsys, corpus, tmp_path):
    out = str(tmp_path / "run")
    status, stdout, _ = run(capsys, "run", "--input", corpus, "--out", out, "--workers", "2")
    assert status == 0
    assert stdout == "4 pairs (H-A 2, H-H 2) written to %s\n" % out

    status, stdout, _ = run(capsys, "summarize", out)
    assert status == 0
    assert stdout.startswith("Pairs\n  H-A       2 pairs")
    assert "Anomalies (human followers)" in stdout
    # no fleet threshold without tau_star on four pairs
    assert "Regime time proportions\n  not computed" in stdout

    with open(os.path.join(out, "pairs.csv"), "a") as f:
        f.write("tampered\n")
    status, _, err = run(capsys, "summarize", out)
    assert status == 2
    assert "pairs.csv was modified" in err


def test_run_with_config_file(capsys, corpus, tmp_path):
    config = tmp_path / "run.ini"
    config.write_text("[output]\ndirectory = %s\n[stages]\nregime = false\n" % (tmp_path / "out"))
    status, _, _ = run(capsys, "run", "--config", str(config), "--input", corpus)
    assert status == 0
    assert not os.path.exists(str(tmp_path / "out" / "thresholds.csv"))

    status, stdout, _ = run(capsys, "summarize", str(tmp_path / "out"))
    assert status == 0
    assert "Regime time proportions\n  not computed" in stdout
    assert "ADF groups\n  not computed" in stdout


def test_run_environment_override(capsys, corpus, tmp_path):
    out = str(tmp_path / "out")
    status, _, _ = run(capsys, "run", "--input", corpus, "--out", out, CFDATA_STAGES__REGIME="false")
    assert status == 0
    assert not os.path.exists(os.path.join(out, "newell_fits.csv"))


def test_empty_input(capsys, tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    status, _, err = run(capsys, "run", "--input", str(empty), "--out", str(tmp_path / "out"))
    assert status == 2
    assert "no scene files" in err


def test_summarize_without_manifest(capsys, tmp_path):
    status, _, err = run(capsys, "summarize", str(tmp_path))
    assert status == 2
    assert "no manifest.json" in err


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["launch"],
        ["run", "--workers", "many"],
        ["run", "--workers", "0"],
        ["synth"],
        ["synth", "--out", "x", "--pairs", "0"],
    ],
)
def test_usage_errors(capsys, argv):
    status, _, err = run(capsys, *argv)
    assert status == 1
    assert err.startswith("cfdata: error: ")


def test_bad_config_value(capsys, corpus, tmp_path):
    status, _, err = run(capsys, "run", "--input", corpus, "--out", str(tmp_path), CFDATA_SELECTION__MIN_DURATION="-1")
    assert status == 1
    assert "min_duration" in err
