"""
Newell time-gap calibration and car-following regime labelling
(part of cfdata)

Regimes of the follower:

    Fa  free acceleration          A  following acceleration
    Fd  free deceleration          D  following deceleration
    C   cruising                   F  constant-speed following
    S   standstill
"""

import numpy as np
import pandas as pd

from . import api
from .api import InsufficientData, InvalidInput
from .utils import Counter, runs, storage

__all__ = [
    "REGIMES",
    "NewellFit",
    "tau_grid",
    "calibrate_newell",
    "fleet_gap_threshold",
    "fleet_gap_thresholds",
    "segment_speed_profile",
    "label_regimes",
    "RegimeSequence",
    "regime_time_proportions",
    "classify_adf",
    "adf_group_counts",
    "tau_histogram",
]

REGIMES = ["Fa", "Fd", "C", "A", "D", "F", "S"]
SUBSETS = ["H-A", "H-H"]

STOP, ACCEL, DECEL, CONST = "stop", "accel", "decel", "const"

_LABELS = {
    (True, ACCEL): "Fa",
    (True, DECEL): "Fd",
    (True, CONST): "C",
    (False, ACCEL): "A",
    (False, DECEL): "D",
    (False, CONST): "F",
}


class NewellFit:
    """
    Time shift `tau` (s), space shift `delta` (m) and fit error (m) of one
    pair. `flagged` marks a fit that should not be trusted: tau pinned at
    either end of the grid, or an rmse above `regime.newell_rmse_max`.
    """

    __slots__ = ["tau", "delta", "rmse_fit", "pair_id", "subset", "flagged"]

    def __init__(self, tau, delta, rmse_fit, pair_id=None, subset=None, flagged=False):
        self.tau = tau
        self.delta = delta
        self.rmse_fit = rmse_fit
        self.pair_id = pair_id
        self.subset = subset
        self.flagged = flagged

    def as_row(self):
        return {
            "pair_id": self.pair_id,
            "subset": self.subset,
            "tau": self.tau,
            "delta": self.delta,
            "rmse": self.rmse_fit,
            "flagged": self.flagged,
        }

    def __repr__(self):
        return "<NewellFit tau=%.2f delta=%.2f rmse=%.3f%s>" % (self.tau, self.delta, self.rmse_fit, " flagged" if self.flagged else "")


def tau_grid(config=None):
    """
        >>> tau_grid(storage(tau_min=0.1, tau_max=0.3, tau_step=0.1)).tolist()
        [0.1, 0.2, 0.3]
    """
    cfg = config or api.config.regime
    n = int(np.floor((cfg.tau_max - cfg.tau_min) / cfg.tau_step + 1e-9)) + 1
    return np.round(cfg.tau_min + cfg.tau_step * np.arange(n), 10)


def calibrate_newell(pair, config=None):
    """
    Grid search over the time shift; for each tau the space shift has the
    closed form delta = mean(x_lead(t - tau) - x_fol(t)). The tau with the
    smallest rmse wins, smaller tau on ties. The fit is flagged when tau
    lands on a grid bound or the rmse exceeds `newell_rmse_max`.
    """
    cfg = config or api.config.regime
    grid = tau_grid(cfg)
    t = pair.t
    if t[-1] - t[0] <= grid[-1] + 1.0:
        raise InvalidInput("pair of %.1fs too short for tau up to %.2fs" % (t[-1] - t[0], grid[-1]))
    x_lead, x_fol = np.asarray(pair.lead.x), np.asarray(pair.fol.x)

    errors = np.empty(len(grid))
    deltas = np.empty(len(grid))
    for i, tau in enumerate(grid):
        valid = t - tau >= t[0] - 1e-9
        d = np.interp(t[valid] - tau, t, x_lead) - x_fol[valid]
        deltas[i] = np.mean(d)
        errors[i] = np.sqrt(np.mean((d - deltas[i]) ** 2))
    best = int(np.flatnonzero(errors <= errors.min() + 1e-9 * (1.0 + errors.min()))[0])
    flagged = best in (0, len(grid) - 1) or errors[best] > cfg.newell_rmse_max
    return NewellFit(float(grid[best]), float(deltas[best]), float(errors[best]), pair.pair_id, pair.subset, bool(flagged))


def fleet_gap_threshold(fits, k=None, config=None):
    """
    Free-flow threshold tau* = mean(tau) + k * std(tau).

        >>> fits = [NewellFit(1.5, 8.0, 0.1)] * 30
        >>> fleet_gap_threshold(fits, 2)
        1.5
    """
    cfg = config or api.config.regime
    k = cfg.threshold_k if k is None else k
    taus = np.array([f.tau for f in fits], dtype=float)
    if taus.size < cfg.min_fits:
        raise InsufficientData("%d fits, need at least %d for a gap threshold" % (taus.size, cfg.min_fits))
    return round(float(np.mean(taus) + k * np.std(taus)), 12)


def fleet_gap_thresholds(fits, config=None):
    """
    Threshold per subset. A subset with too few fits falls back to the
    configured `tau_star`, or None when that is unset.
    """
    cfg = config or api.config.regime
    fits = sorted(fits, key=lambda f: f.pair_id or "")
    out = {}
    for subset in SUBSETS:
        mine = [f for f in fits if f.subset == subset]
        try:
            out[subset] = fleet_gap_threshold(mine, config=cfg)
        except InsufficientData:
            out[subset] = cfg.tau_star
    return out


class Section:
    __slots__ = ["kind", "start", "stop"]

    def __init__(self, kind, start, stop):
        self.kind = kind
        self.start = start
        self.stop = stop

    def __len__(self):
        return self.stop - self.start

    def __repr__(self):
        return "<Section %s [%d, %d)>" % (self.kind, self.start, self.stop)


def _merge_same(sections):
    merged = []
    for s in sections:
        if merged and merged[-1].kind == s.kind:
            merged[-1] = Section(s.kind, merged[-1].start, s.stop)
        else:
            merged.append(s)
    return merged


def segment_speed_profile(v, a, config=None):
    """
    Splits a follower's profile into stop, accel, decel and const sections
    (half-open frame index ranges). Frames slower than `v_stop` for at least
    `min_stop_duration` are stops; others are classified by acceleration.
    Sections shorter than `min_section_duration` merge into their longer
    moving neighbour; stops are never absorbed.
    """
    cfg = config or api.config.regime
    if not np.array_equal(v.t, a.t):
        raise InvalidInput("v and a must share timestamps")
    n = len(v)
    if n == 0:
        return []
    dt = float(np.median(np.diff(v.t))) if n > 1 else api.config.enhance.dt

    kind = np.where(a.values > cfg.a_th, ACCEL, np.where(a.values < -cfg.a_th, DECEL, CONST)).astype(object)
    for lo, hi in runs(v.values < cfg.v_stop):
        if (hi - lo) * dt >= cfg.min_stop_duration - 1e-9:
            kind[lo:hi] = STOP

    sections = []
    for lo, hi in _kind_runs(kind):
        sections.append(Section(kind[lo], lo, hi))

    while True:
        short = [
            i
            for i, s in enumerate(sections)
            if s.kind != STOP and len(s) * dt < cfg.min_section_duration - 1e-9 and _target(sections, i) is not None
        ]
        if not short:
            break
        i = min(short, key=lambda i: (len(sections[i]), i))
        j = _target(sections, i)
        s, other = sections[i], sections[j]
        sections[j] = Section(other.kind, min(s.start, other.start), max(s.stop, other.stop))
        del sections[i]
        sections = _merge_same(sections)
    return sections


def _kind_runs(kind):
    change = np.flatnonzero(kind[1:] != kind[:-1]) + 1
    edges = [0] + list(change) + [len(kind)]
    return list(zip(edges[:-1], edges[1:]))


def _target(sections, i):
    """Longer moving neighbour of section i (earlier on ties), or None."""
    options = [j for j in (i - 1, i + 1) if 0 <= j < len(sections) and sections[j].kind != STOP]
    if not options:
        return None
    return max(options, key=lambda j: (len(sections[j]), -j))


class RegimeSequence:
    """
    One label per frame; frame i stands for [t_i, t_i + dt), so the regime
    durations add up to n_frames * dt.
    """

    def __init__(self, pair_id, subset, t, labels, dt, fit=None, tau_star=None):
        self.pair_id = pair_id
        self.subset = subset
        self.t = t
        self.labels = labels
        self.dt = dt
        self.fit = fit
        self.tau_star = tau_star

    @property
    def sections(self):
        return [(self.labels[lo], float(self.t[lo]), float(self.t[hi - 1])) for lo, hi in _kind_runs(self.labels)]

    @property
    def durations(self):
        counts = Counter()
        for label in self.labels:
            counts.add(label)
        return {r: counts.get(r, 0) * self.dt for r in REGIMES}

    @property
    def present(self):
        return set(self.labels)

    @property
    def duration(self):
        return len(self.labels) * self.dt

    def to_frame(self):
        return pd.DataFrame({"t": self.t, "label": self.labels}, columns=["t", "label"])

    def __repr__(self):
        return "<RegimeSequence %s %s>" % (self.pair_id, classify_adf(self))


def label_regimes(sections, pair, fit, tau_star, config=None):
    """
    Labels every frame. A moving section is free when its mean time gap
    (bumper-to-bumper distance over follower speed, frames below `v_stop`
    left out) exceeds tau*; sections without a usable frame count as
    following.
    """
    cfg = config or api.config.regime
    t = pair.t
    v = np.asarray(pair.fol.v)
    distance = np.asarray(pair.lead.x) - pair.lead.length - np.asarray(pair.fol.x)
    labels = np.empty(len(t), dtype=object)
    for s in sections:
        if s.kind == STOP:
            labels[s.start : s.stop] = "S"
            continue
        moving = v[s.start : s.stop] >= cfg.v_stop
        free = False
        if moving.any():
            gaps = distance[s.start : s.stop][moving] / v[s.start : s.stop][moving]
            free = bool(np.mean(gaps) > tau_star)
        labels[s.start : s.stop] = _LABELS[(free, s.kind)]
    if any(label is None for label in labels):
        raise InvalidInput("sections do not cover the pair")
    dt = float(np.median(np.diff(t))) if len(t) > 1 else api.config.enhance.dt
    return RegimeSequence(pair.pair_id, pair.subset, t, labels, dt, fit, tau_star)


def regime_time_proportions(seqs):
    """
    Share of the total time spent in each regime.

        >>> s = RegimeSequence("p", "H-H", np.arange(4.0), np.array(["F", "F", "S", "S"], dtype=object), 1.0)
        >>> regime_time_proportions([s])["F"]
        0.5
    """
    seqs = list(seqs)
    total = sum(s.duration for s in seqs)
    if not seqs or total <= 0:
        raise InsufficientData("no regime sequences")
    out = dict.fromkeys(REGIMES, 0.0)
    for s in sorted(seqs, key=lambda s: s.pair_id):
        for regime, duration in s.durations.items():
            out[regime] += duration
    return {r: d / total for r, d in out.items()}


def classify_adf(seq):
    """
    `ADF+n` when A, D and F all occur (n extra regimes), else `others`.

        >>> classify_adf({"A", "D", "F", "S", "C"})
        'ADF+2'
        >>> classify_adf(["A", "F", "S"])
        'others'
    """
    present = seq.present if isinstance(seq, RegimeSequence) else set(seq)
    if {"A", "D", "F"} <= present:
        return "ADF+%d" % (len(present) - 3)
    return "others"


def adf_group_counts(seqs):
    """Table of `subset, group, count, fraction` over ADF+0 ... ADF+4 and others."""
    groups = ["ADF+%d" % n for n in range(len(REGIMES) - 2)] + ["others"]
    rows = []
    for subset in SUBSETS:
        counts = Counter()
        for s in seqs:
            if s.subset == subset:
                counts.add(classify_adf(s))
        total = sum(counts.values())
        for g in groups:
            rows.append(
                {
                    "subset": subset,
                    "group": g,
                    "count": counts.get(g, 0),
                    "fraction": counts.get(g, 0) / total if total else 0.0,
                }
            )
    return pd.DataFrame(rows, columns=["subset", "group", "count", "fraction"])


def tau_histogram(fits, bin_width=None, config=None):
    """Counts of fitted tau per subset in bins of `bin_width` seconds from 0 to tau_max."""
    cfg = config or api.config.regime
    bin_width = bin_width or cfg.hist_bin
    n_bins = int(np.ceil(cfg.tau_max / bin_width - 1e-9))
    edges = np.round(bin_width * np.arange(n_bins + 1), 10)
    rows = []
    for subset in SUBSETS:
        taus = [f.tau for f in fits if f.subset == subset]
        counts, _ = np.histogram(taus, bins=edges)
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            rows.append({"subset": subset, "bin_start": lo, "bin_end": hi, "count": int(c)})
    return pd.DataFrame(rows, columns=["subset", "bin_start", "bin_end", "count"])
