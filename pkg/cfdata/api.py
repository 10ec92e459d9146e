"""
Pipeline API (configuration, errors, debug output)
(from cfdata)
"""

import configparser
import copy
import hashlib
import json
import os
import pprint
import sys

from .utils import storage

__all__ = [
    "config",
    "ctx",
    "debug",
    "load_config",
    "validate_config",
    "config_hash",
    "PipelineError",
    # exit status 1
    "UsageError",
    "ConfigError",
    # exit status 2
    "DataError",
    "FormatError",
    "IntegrityError",
    "InsufficientData",
    # exit status 3
    "InternalError",
    "InvalidInput",
    "NumericalError",
    "SynthError",
]

ENV_PREFIX = "CFDATA_"

config = storage()
# an attribute, not a section key
object.__setattr__(
    config,
    "__doc__",
    """
A configuration object for every stage of the pipeline. One `storage` per
section. The defaults hold the standard selection rules, kinematic limits
and filter settings.

`run.debug`
   : when True, every (stage, pair) outcome is logged to stderr, not only failures.
""",
)

config.setdefault(
    "input",
    storage({"paths": ""}),
)
config.setdefault(
    "output",
    storage({"directory": "out", "float_format": "%.6f"}),
)
config.setdefault(
    "selection",
    storage(
        {
            "prob_car_min": 0.95,
            "long_dist_max": 85.0,
            "lat_dist_max": 1.75,
            "min_duration": 16.0,
            "yaw_dev_max": 0.035,
            "yaw_to_lane_max": 0.087,
            "dt_max": 0.42,
            "step_dist_max": 5.0,
            "mean_speed_min": 1.0,
            "screen_stride": 1.0,
            "stride_tolerance": 0.21,
        }
    ),
)
config.setdefault(
    "stitch",
    storage({"dt_max": 0.5, "dist_max": 2.0, "prob_car_min": 0.5}),
)
config.setdefault(
    "limits",
    storage(
        {
            "a_min": -8.0,
            "a_max": 5.0,
            "j_min": -15.0,
            "j_max": 15.0,
            "jsi_window": 1.0,
            "jsi_max_inversions": 1,
            "jsi_zero_tol": 1e-9,
        }
    ),
)
config.setdefault(
    "enhance",
    storage(
        {
            "dt": 0.1,
            "zero_speed_before": 0.5,
            "zero_speed_after": 1.5,
            "artifact_cluster_gap": 0.5,
        }
    ),
)
config.setdefault(
    "kalman",
    storage(
        {
            # standard deviations; the covariances are their squares
            "q1": (0.2, 0.8),
            "r1": (0.5, 1.1),
            "q2": (0.2, 0.4, 1.5),
            "r2": (0.5, 1.0, 10.0),
        }
    ),
)
config.setdefault(
    "wavelet",
    storage({"family": "db6", "threshold_mode": "soft", "max_levels": 4}),
)
config.setdefault(
    "size",
    storage(
        {
            "av_length": 4.87,
            "av_width": 1.85,
            "var_max": 0.3,
            "length_min": 3.5,
            "length_max": 6.5,
            "width_min": 1.5,
            "width_max": 2.5,
            "percentile": 95.0,
        }
    ),
)
config.setdefault(
    "regime",
    storage(
        {
            "tau_min": 0.1,
            "tau_max": 5.0,
            "tau_step": 0.05,
            "v_stop": 0.1,
            "min_stop_duration": 0.5,
            "a_th": 0.1,
            "min_section_duration": 1.0,
            "threshold_k": 2.0,
            "tau_star": None,
            "min_fits": 30,
            "hist_bin": 0.1,
            "newell_rmse_max": 0.5,
        }
    ),
)
config.setdefault(
    "stages",
    storage({"select": True, "assess": True, "enhance": True, "regime": True}),
)
config.setdefault(
    "run",
    storage({"workers": 1, "seed": 0, "debug": False}),
)

# context of the stage currently being processed (per process)
ctx = storage()


class PipelineError(Exception):
    """Base of every error that ends a run; `status` is the process exit code."""

    status = 3

    def __init__(self, message=""):
        self.message = message
        Exception.__init__(self, message)


def _status_error(status, classname, docstring, base=PipelineError):
    # trick to create class dynamically with dynamic docstring.
    return type(classname, (base,), {"__doc__": docstring, "status": status})


UsageError = _status_error(1, "UsageError", "bad command line or arguments (exit 1)")
ConfigError = _status_error(1, "ConfigError", "invalid configuration (exit 1)", UsageError)
DataError = _status_error(2, "DataError", "input data cannot be used (exit 2)")
FormatError = _status_error(2, "FormatError", "file does not follow the canonical format", DataError)
IntegrityError = _status_error(2, "IntegrityError", "run artifact missing or modified", DataError)
InsufficientData = _status_error(2, "InsufficientData", "not enough data for the requested statistic", DataError)
InternalError = _status_error(3, "InternalError", "unexpected failure (exit 3)")


class InvalidInput(ValueError):
    """raised when a numeric routine is called outside its preconditions"""

    pass


class NumericalError(ArithmeticError):
    """raised for singular systems and loss of positive-definiteness"""

    pass


class SynthError(ValueError):
    """raised for scenarios that cannot be simulated (e.g. a collision)"""

    pass


def debug(*args):
    """
    Prints a prettyprinted version of `args` to stderr.
    """
    for arg in args:
        print(pprint.pformat(arg), file=sys.stderr)
    return ""


def _debugwrite(x):
    sys.stderr.write(x)


debug.write = _debugwrite


def _coerce(section, key, default, text):
    text = text.strip()
    try:
        if isinstance(default, bool):
            state = configparser.ConfigParser.BOOLEAN_STATES.get(text.lower())
            if state is None:
                raise ValueError(text)
            return state
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float) or default is None:
            if default is None and text.lower() in ("", "none"):
                return None
            return float(text)
        if isinstance(default, tuple):
            return tuple(float(v) for v in text.split(","))
        return text
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot read {text!r}")


def load_config(path=None, environ=None):
    """
    Returns a resolved copy of `config`: defaults, overlaid by the
    `[section]` key/value file at `path`, overlaid by environment
    variables named `CFDATA_<SECTION>__<KEY>`.

        >>> cfg = load_config(environ={"CFDATA_SELECTION__LONG_DIST_MAX": "80"})
        >>> cfg.selection.long_dist_max
        80.0
        >>> load_config(environ={"CFDATA_SELECTION__NOPE": "1"})
        Traceback (most recent call last):
            ...
        cfdata.api.ConfigError: unknown key [selection] nope
    """
    cfg = storage((name, storage(copy.deepcopy(dict(section)))) for name, section in config.items())

    def assign(section, key, text):
        if section not in cfg:
            raise ConfigError(f"unknown section [{section}]")
        if key not in cfg[section]:
            raise ConfigError(f"unknown key [{section}] {key}")
        cfg[section][key] = _coerce(section, key, cfg[section][key], text)

    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as f:
                parser.read_file(f)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e.strerror}")
        except configparser.Error as e:
            raise ConfigError(f"cannot parse config {path}: {e}")
        for section in parser.sections():
            for key, text in parser.items(section):
                assign(section.lower(), key.lower(), text)

    environ = os.environ if environ is None else environ
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX) or "__" not in name:
            continue
        section, key = name[len(ENV_PREFIX) :].split("__", 1)
        assign(section.lower(), key.lower(), environ[name])

    validate_config(cfg)
    return cfg


def validate_config(cfg):
    """Raises `ConfigError` if any section breaks its invariants."""

    def check(ok, message):
        if not ok:
            raise ConfigError(message)

    sel = cfg.selection
    for key, value in sel.items():
        check(value > 0, f"[selection] {key} must be > 0")
    check(1.0 <= sel.screen_stride <= 5.0, "[selection] screen_stride must be within [1, 5] s")

    lim = cfg.limits
    check(lim.a_min < 0 < lim.a_max, "[limits] need a_min < 0 < a_max")
    check(lim.j_min == -lim.j_max, "[limits] need j_min = -j_max")
    check(lim.jsi_window > 0, "[limits] jsi_window must be > 0")

    kal = cfg.kalman
    check(len(kal.q1) == 2 and len(kal.r1) == 2, "[kalman] q1/r1 need 2 entries")
    check(len(kal.q2) == 3 and len(kal.r2) == 3, "[kalman] q2/r2 need 3 entries")
    for key in ("q1", "r1", "q2", "r2"):
        check(all(v > 0 for v in kal[key]), f"[kalman] {key} entries must be > 0")

    check(cfg.wavelet.max_levels >= 1, "[wavelet] max_levels must be >= 1")
    check(cfg.wavelet.threshold_mode in ("soft", "hard"), "[wavelet] threshold_mode is soft or hard")

    reg = cfg.regime
    for key, value in reg.items():
        if key != "tau_star" or value is not None:
            check(value > 0, f"[regime] {key} must be > 0")
    check(reg.tau_min <= reg.tau_max, "[regime] empty tau grid")

    check(cfg.enhance.dt > 0, "[enhance] dt must be > 0")
    check(cfg.run.workers >= 1, "[run] workers must be >= 1")


def config_hash(cfg):
    """sha1 of the canonical JSON form of a resolved config."""
    text = json.dumps(cfg, sort_keys=True, default=list)
    return hashlib.sha1(text.encode("utf-8")).hexdigest()
