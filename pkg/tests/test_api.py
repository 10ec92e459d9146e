import os

import pytest

from cfdata import api


def write(path, text):
    with open(path, "w") as f:
        f.write(text)


def test_defaults():
    cfg = api.load_config(environ={})
    assert cfg.selection.long_dist_max == 85.0
    assert cfg.selection.min_duration == 16.0
    assert cfg.limits.a_min == -8.0 and cfg.limits.j_max == 15.0
    assert cfg.kalman.q2 == (0.2, 0.4, 1.5)
    assert cfg.wavelet.family == "db6"
    assert cfg.regime.tau_star is None


def test_config_holds_only_sections():
    assert "__doc__" not in api.config
    assert sorted(api.config) == sorted(
        ["input", "output", "selection", "stitch", "limits", "enhance", "kalman", "wavelet", "size", "regime", "stages", "run"]
    )
    assert all(isinstance(section, dict) for section in api.config.values())
    assert "configuration object" in api.config.__doc__
    cfg = api.load_config(environ={})
    assert sorted(cfg) == sorted(api.config)
    assert len(api.config_hash(cfg)) == 40


def test_load_config_does_not_touch_defaults():
    cfg = api.load_config(environ={"CFDATA_RUN__WORKERS": "4"})
    assert cfg.run.workers == 4
    assert api.config.run.workers == 1


def test_file_then_environment(tmp_path):
    path = os.path.join(str(tmp_path), "run.ini")
    write(
        path,
        "[selection]\nlong_dist_max = 70\n\n[stages]\nregime = no\n\n[kalman]\nr2 = 0.5, 1.0, 12\n\n[regime]\ntau_star = 2.5\n",
    )
    cfg = api.load_config(path, environ={"CFDATA_SELECTION__LONG_DIST_MAX": "60"})
    assert cfg.selection.long_dist_max == 60.0
    assert cfg.stages.regime is False
    assert cfg.kalman.r2 == (0.5, 1.0, 12.0)
    assert cfg.regime.tau_star == 2.5


@pytest.mark.parametrize(
    "environ",
    [
        {"CFDATA_NOPE__X": "1"},
        {"CFDATA_SELECTION__NOPE": "1"},
        {"CFDATA_SELECTION__LONG_DIST_MAX": "far"},
        {"CFDATA_SELECTION__LONG_DIST_MAX": "-1"},
        {"CFDATA_SELECTION__SCREEN_STRIDE": "10"},
        {"CFDATA_LIMITS__J_MIN": "-10"},
        {"CFDATA_KALMAN__Q2": "0.2, 0.4"},
        {"CFDATA_STAGES__ASSESS": "maybe"},
        {"CFDATA_RUN__WORKERS": "0"},
    ],
)
def test_invalid_config(environ):
    with pytest.raises(api.ConfigError):
        api.load_config(environ=environ)


def test_unreadable_config(tmp_path):
    with pytest.raises(api.ConfigError):
        api.load_config(os.path.join(str(tmp_path), "missing.ini"), environ={})
    path = os.path.join(str(tmp_path), "bad.ini")
    write(path, "long_dist_max = 70\n")
    with pytest.raises(api.ConfigError):
        api.load_config(path, environ={})


def test_config_hash():
    a = api.load_config(environ={})
    b = api.load_config(environ={})
    c = api.load_config(environ={"CFDATA_RUN__SEED": "7"})
    assert api.config_hash(a) == api.config_hash(b)
    assert api.config_hash(a) != api.config_hash(c)


def test_error_status():
    assert api.UsageError().status == 1
    assert api.ConfigError("x").status == 1
    assert issubclass(api.ConfigError, api.UsageError)
    for cls in (api.DataError, api.FormatError, api.IntegrityError, api.InsufficientData):
        assert cls("x").status == 2
    assert api.InternalError().status == 3
    assert api.FormatError("bad header").message == "bad header"
