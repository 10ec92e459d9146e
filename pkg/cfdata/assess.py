"""
Kinematic anomaly assessment
(part of cfdata)

A frame is anomalous when its acceleration or jerk leaves the plausible
range, or when jerk changes sign more than once within a second (JSI).
"""

import numpy as np

from . import api
from .api import InvalidInput
from .trajkit import TimeSeries, finite_diff, rmse

__all__ = [
    "AnomalyReport",
    "kinematic_anomalies",
    "jsi_flags",
    "speed_consistency",
    "missing_data",
    "combine_reports",
]

SOURCES = ("x-based", "v-based", "a-based")

# given speed counts as an artificial zero below this
ZERO_SPEED = 1e-6
# ... while the position-derived speed is above this
MOVING_SPEED = 1.0


class AnomalyReport:
    """Fractions of frames violating the acceleration, jerk and JSI constraints."""

    __slots__ = ["n_frames", "frac_acc_anomaly", "frac_jerk_anomaly", "frac_jsi_anomaly", "source"]

    def __init__(self, n_frames, frac_acc_anomaly, frac_jerk_anomaly, frac_jsi_anomaly, source):
        self.n_frames = n_frames
        self.frac_acc_anomaly = frac_acc_anomaly
        self.frac_jerk_anomaly = frac_jerk_anomaly
        self.frac_jsi_anomaly = frac_jsi_anomaly
        self.source = source

    def as_row(self):
        return {
            "source": self.source,
            "frac_acc": self.frac_acc_anomaly,
            "frac_jerk": self.frac_jerk_anomaly,
            "frac_jsi": self.frac_jsi_anomaly,
            "n_frames": self.n_frames,
        }

    def __repr__(self):
        return "<AnomalyReport %s n=%d acc=%.4f jerk=%.4f jsi=%.4f>" % (
            self.source,
            self.n_frames,
            self.frac_acc_anomaly,
            self.frac_jerk_anomaly,
            self.frac_jsi_anomaly,
        )


def _source(source):
    source = source if source.endswith("-based") else source + "-based"
    if source not in SOURCES:
        raise InvalidInput("unknown source %r" % source)
    return source


def kinematic_anomalies(traj, source="v", limits=None):
    """
    Assesses a position (`x`), speed (`v`) or acceleration (`a`) series.
    Acceleration and jerk come from chained finite differences.

        >>> r = kinematic_anomalies(TimeSeries([0, 1, 2, 3, 4], [5, 5, 5, 5, 5]), "v")
        >>> r.frac_acc_anomaly, r.frac_jerk_anomaly, r.frac_jsi_anomaly
        (0.0, 0.0, 0.0)
    """
    limits = limits or api.config.limits
    source = _source(source)
    if len(traj) < 4:
        raise InvalidInput("assessment needs at least 4 samples")
    if source == "x-based":
        acc = finite_diff(finite_diff(traj))
    elif source == "v-based":
        acc = finite_diff(traj)
    else:
        acc = traj
    jerk = finite_diff(acc)

    a, j = acc.values, jerk.values
    n = len(a)
    acc_bad = (a < limits.a_min) | (a > limits.a_max)
    jerk_bad = (j < limits.j_min) | (j > limits.j_max)
    jsi = jsi_flags(jerk, limits.jsi_window, limits)
    return AnomalyReport(
        n,
        float(acc_bad.sum()) / n,
        float(jerk_bad.sum()) / n,
        float(jsi.sum()) / n,
        source,
    )


def jsi_flags(jerk, window=1.0, limits=None):
    """
    Flags frame i when the centered window [t_i - w/2, t_i + w/2] holds more
    sign inversions of jerk than allowed. An inversion is a change between
    strictly positive and strictly negative values; zeros keep the previous
    sign, so both ends of an inversion must lie inside the window.

        >>> jsi_flags(TimeSeries([0, .1, .2, .3], [1, 1, 1, 1])).tolist()
        [False, False, False, False]
    """
    limits = limits or api.config.limits
    t, j = jerk.t, jerk.values
    sign = np.where(j > limits.jsi_zero_tol, 1, np.where(j < -limits.jsi_zero_tol, -1, 0))
    nz = np.flatnonzero(sign)
    flips = np.flatnonzero(sign[nz][1:] != sign[nz][:-1])
    # each inversion spans [t of previous non-zero sample, t of the flipping sample]
    start = t[nz[flips]]
    stop = t[nz[flips + 1]]

    half = window / 2.0
    lo = t - half - 1e-9
    hi = t + half + 1e-9
    flags = np.zeros(len(t), dtype=bool)
    if len(start) == 0:
        return flags
    for i in range(len(t)):
        inside = np.count_nonzero((start >= lo[i]) & (stop <= hi[i]))
        flags[i] = inside > limits.jsi_max_inversions
    return flags


def speed_consistency(x, v):
    """
    Compares given speed with position-derived speed.

    Returns `(rmse, artifacts)` where artifacts are the timestamps at which
    the given speed is zero while the position-derived speed exceeds 1 m/s.
    """
    if v is None:
        raise InvalidInput("speed_consistency needs a given speed series")
    derived = finite_diff(x)
    error = rmse(v, derived)
    artifacts = v.t[(np.abs(v.values) < ZERO_SPEED) & (derived.values > MOVING_SPEED)]
    return error, artifacts


def missing_data(t, nominal_dt=0.1):
    """
    Gaps longer than 1.5 nominal steps: returns `(count, total seconds missing)`.

        >>> missing_data([0, .1, .2, .8, .9])
        (1, 0.5)
    """
    steps = np.diff(np.asarray(t, dtype=float))
    gaps = steps[steps > 1.5 * nominal_dt]
    return int(gaps.size), round(float(np.sum(gaps - nominal_dt)), 9)


def combine_reports(reports, source=None):
    """Frame-weighted aggregate of several reports."""
    reports = list(reports)
    n = sum(r.n_frames for r in reports)
    if n == 0:
        raise InvalidInput("no frames to combine")

    def weighted(name):
        return sum(getattr(r, name) * r.n_frames for r in reports) / n

    return AnomalyReport(
        n,
        weighted("frac_acc_anomaly"),
        weighted("frac_jerk_anomaly"),
        weighted("frac_jsi_anomaly"),
        source or reports[0].source,
    )
