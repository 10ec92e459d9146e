"""
Car-following pair selection: stride screening, frame-to-frame verification
(part of cfdata)

Rule ids follow the two groups of the selection table:

    1.1 both cars (class probability)    2.1 yaw dispersion
    1.2 longitudinal distance            2.2 yaw to lane direction
    1.3 lateral distance                 2.3 timestamp gaps
    1.4 nobody in between                2.4 position steps
    1.5 same signal approach             2.5 mean speed
    1.6 straight road
    1.7 long enough
"""

import numpy as np
import pandas as pd

from . import api
from .trajkit import uniform_grid
from .utils import Counter, parallel_map, runs, storage

__all__ = [
    "CFPair",
    "screen_candidates",
    "verify_candidate",
    "extract_pairs",
    "GROUP1",
    "GROUP2",
]

GROUP1 = ["1.1", "1.2", "1.3", "1.4", "1.5", "1.6", "1.7"]
GROUP2 = ["2.1", "2.2", "2.3", "2.4", "2.5"]

_SNAPSHOT_COLUMNS = ["class_prob_car", "is_av", "lane_id", "lane_s", "lane_d", "lane_is_straight", "signal_segment_id"]


class CFPair:
    """
    A leader-follower episode in road-aligned longitudinal coordinates.
    The leader's first position is the origin; `v_lead` / `v_fol` are None
    where the source carried no speed (the ego vehicle).
    """

    follower_type = "HV"

    def __init__(self, pair_id, leader_type, leader_id, follower_id, t, lead, fol, rejection_log=()):
        self.pair_id = pair_id
        self.leader_type = leader_type
        self.leader_id = leader_id
        self.follower_id = follower_id
        self.t = t
        self.lead = lead
        self.fol = fol
        self.rejection_log = list(rejection_log)

    @property
    def x_lead(self):
        return self.lead.x

    @property
    def x_fol(self):
        return self.fol.x

    @property
    def v_lead(self):
        return self.lead.v

    @property
    def v_fol(self):
        return self.fol.v

    @property
    def duration(self):
        return float(self.t[-1] - self.t[0])

    @property
    def subset(self):
        return "H-A" if self.leader_type == "AV" else "H-H"

    def __repr__(self):
        return "<CFPair %s %s %.1fs>" % (self.pair_id, self.subset, self.duration)


def _snapshots(tracks, cfg):
    """One row per (stride point, track) holding the frame nearest to the stride point."""
    if not tracks:
        return np.empty(0), pd.DataFrame()
    t_min = min(tr.t[0] for tr in tracks)
    t_max = max(tr.t[-1] for tr in tracks)
    grid = uniform_grid(t_min, t_max, cfg.screen_stride)

    parts = []
    for index, tr in enumerate(tracks):
        t = tr.t
        lo, hi = np.searchsorted(grid, [t[0] - cfg.stride_tolerance, t[-1] + cfg.stride_tolerance])
        if lo >= hi:
            continue
        g = grid[lo:hi]
        pos = np.clip(np.searchsorted(t, g), 1, max(len(t) - 1, 1))
        before = pos - 1
        after = np.minimum(pos, len(t) - 1)
        nearest = np.where(np.abs(t[after] - g) < np.abs(g - t[before]), after, before)
        ok = np.abs(t[nearest] - g) <= cfg.stride_tolerance
        if not ok.any():
            continue
        rows = tr.frames.iloc[nearest[ok]][_SNAPSHOT_COLUMNS].reset_index(drop=True)
        rows["k"] = np.arange(lo, hi)[ok]
        rows["track"] = index
        parts.append(rows)
    if not parts:
        return grid, pd.DataFrame()
    snap = pd.concat(parts, ignore_index=True)
    snap.loc[snap["is_av"], "class_prob_car"] = 1.0
    return grid, snap


def _first_failure(lead, fol, others, cfg):
    """Rule id of the first failing Group-1 check at one stride point, else None."""
    if lead.class_prob_car <= cfg.prob_car_min or fol.class_prob_car <= cfg.prob_car_min:
        return "1.1"
    gap = lead.lane_s - fol.lane_s
    if not 0 < gap <= cfg.long_dist_max:
        return "1.2"
    if abs(lead.lane_d - fol.lane_d) >= cfg.lat_dist_max:
        return "1.3"
    d_lo = min(lead.lane_d, fol.lane_d) - cfg.lat_dist_max
    d_hi = max(lead.lane_d, fol.lane_d) + cfg.lat_dist_max
    between = (others.lane_s > fol.lane_s) & (others.lane_s < lead.lane_s)
    beside = (others.lane_d > d_lo) & (others.lane_d < d_hi)
    if (between & beside).any():
        return "1.4"
    if not lead.signal_segment_id or lead.signal_segment_id != fol.signal_segment_id:
        return "1.5"
    if not (lead.lane_is_straight and fol.lane_is_straight):
        return "1.6"
    return None


def _screen(tracks, cfg):
    grid, snap = _snapshots(tracks, cfg)
    outcomes = {}  # (leader, follower) -> {k: failed rule or None}
    if len(snap):
        snap = snap[snap["lane_id"] != ""]
        for (k, _), lane in snap.groupby(["k", "lane_id"], sort=True):
            if len(lane) < 2:
                continue
            lane = lane.sort_values(["lane_s", "track"], ascending=[False, True], kind="mergesort")
            rows = list(lane.itertuples(index=False))
            for i, lead in enumerate(rows):
                for j in range(i + 1, len(rows)):
                    fol = rows[j]
                    others = lane[(lane["track"] != lead.track) & (lane["track"] != fol.track)]
                    rule = _first_failure(lead, fol, others, cfg)
                    outcomes.setdefault((lead.track, fol.track), {})[int(k)] = rule
    return grid, outcomes


def screen_candidates(tracks, config=None, rejections=None):
    """
    Scans stride points for same-lane vehicle pairs passing Rules 1.1-1.6
    and returns maximal runs longer than `min_duration` (Rule 1.7) as
    `storage(leader, follower, t_start, t_end)`.

    Pairs that never produce a candidate are appended to `rejections`
    (when given) citing their most frequent failing rule, or 1.7.
    """
    cfg = config or api.config.selection
    grid, outcomes = _screen(tracks, cfg)
    candidates = []
    for (li, fi) in sorted(outcomes, key=lambda key: (tracks[key[0]].agent_id, tracks[key[1]].agent_id)):
        points = outcomes[(li, fi)]
        ks = np.array(sorted(points))
        passing = np.array([points[k] is None for k in ks])
        found = 0
        for a, b in runs(passing):
            # consecutive stride points only
            for seg in np.split(np.arange(a, b), np.flatnonzero(np.diff(ks[a:b]) != 1) + 1):
                t_start, t_end = grid[ks[seg[0]]], grid[ks[seg[-1]]]
                if t_end - t_start > cfg.min_duration:
                    candidates.append(
                        storage(
                            leader=tracks[li].agent_id,
                            follower=tracks[fi].agent_id,
                            t_start=float(t_start),
                            t_end=float(t_end),
                        )
                    )
                    found += 1
        if not found and rejections is not None:
            failures = Counter()
            first = {}
            for k in ks:
                rule = points[k]
                if rule is not None:
                    failures.add(rule)
                    first.setdefault(rule, grid[k])
            rule = failures.sorted_keys()[0] if failures else "1.7"
            t = first.get(rule, grid[ks[0]])
            rejections.append(storage(leader=tracks[li].agent_id, follower=tracks[fi].agent_id, rule=rule, t=float(t)))
    candidates.sort(key=lambda c: (c.t_start, c.leader, c.follower))
    return candidates


def _wrap(angle):
    return (angle + np.pi) % (2 * np.pi) - np.pi


def _lane_heading(frames):
    """Direction of increasing lane_s in the world frame, fitted over all given frames."""
    s = frames["lane_s"].to_numpy()
    d = frames["lane_d"].to_numpy()
    design = np.column_stack([np.ones_like(s), s, d])
    coef_x = np.linalg.lstsq(design, frames["x"].to_numpy(), rcond=None)[0]
    coef_y = np.linalg.lstsq(design, frames["y"].to_numpy(), rcond=None)[0]
    return float(np.arctan2(coef_y[1], coef_x[1]))


def _window(frames, t_start, t_end):
    t = frames["timestamp"].to_numpy()
    return frames[(t >= t_start - 1e-9) & (t <= t_end + 1e-9)].reset_index(drop=True)


def _local_violations(frames, heading, cfg):
    """Frame-local violations: (rule, time, excluded time or None, gap (a, b) or None)."""
    t = frames["timestamp"].to_numpy()
    xy = frames[["x", "y"]].to_numpy()
    found = []
    off = np.abs(_wrap(frames["yaw"].to_numpy() - heading))
    for i in np.flatnonzero(off >= cfg.yaw_to_lane_max):
        found.append(("2.2", t[i], t[i], None))
    for i in np.flatnonzero(np.diff(t) >= cfg.dt_max):
        found.append(("2.3", t[i], None, (t[i], t[i + 1])))
    steps = np.hypot(*np.diff(xy, axis=0).T) if len(t) > 1 else np.empty(0)
    for i in np.flatnonzero(steps >= cfg.step_dist_max):
        found.append(("2.4", t[i], None, (t[i], t[i + 1])))
    return found


def _longest_clean_span(times, violations):
    """Longest stretch of `times` that contains no excluded time and crosses no gap."""
    excluded = {v[2] for v in violations if v[2] is not None}
    gaps = [v[3] for v in violations if v[3] is not None]
    keep = np.array([t not in excluded for t in times])
    split = np.zeros(len(times), dtype=bool)  # split after index k
    for a, b in gaps:
        split[:-1] |= (times[:-1] >= a) & (times[1:] <= b)
    best = None
    for lo, hi in runs(keep):
        cuts = np.flatnonzero(split[lo : hi - 1]) + lo
        edges = [lo] + list(cuts + 1) + [hi]
        for a, b in zip(edges[:-1], edges[1:]):
            span = (times[a], times[b - 1])
            if best is None or span[1] - span[0] > best[1] - best[0]:
                best = span
    return best


def _mean_speed(frames):
    speed = frames["speed"].to_numpy()
    if len(speed) and not np.isnan(speed).any():
        return float(np.mean(speed))
    t = frames["timestamp"].to_numpy()
    if len(t) < 2:
        return 0.0
    xy = frames[["x", "y"]].to_numpy()
    return float(np.hypot(*np.diff(xy, axis=0).T).sum() / (t[-1] - t[0]))


def _vehicle_series(frames, t, origin):
    ft = frames["timestamp"].to_numpy()

    def at(col):
        values = frames[col].to_numpy(dtype=float)
        return np.interp(t, ft, values)

    speed = frames["speed"].to_numpy(dtype=float)
    return storage(
        x=at("lane_s") - origin,
        v=None if np.isnan(speed).any() else at("speed"),
        yaw=np.interp(t, ft, np.unwrap(frames["yaw"].to_numpy())),
        length=at("length"),
        width=at("width"),
        is_av=bool(frames["is_av"].iloc[0]),
    )


def _pair_id(leader_type, leader, follower, t_start):
    raw = "%s-%s-%s-%.1f" % (leader_type, leader, follower, t_start)
    return "".join(c if c.isalnum() or c in "-." else "_" for c in raw)


def verify_candidate(candidate, tracks, config=None):
    """
    Frame-to-frame check of a screened candidate (Rules 2.1-2.5).

    Returns `storage(pair, rule, t, log)`: `pair` is a CFPair when the
    candidate (possibly trimmed) passes, otherwise None and `rule`/`t`
    name the first violation. `log` lists every `(rule, t)` violation seen.
    """
    cfg = config or api.config.selection
    if not isinstance(tracks, dict):
        tracks = {tr.agent_id: tr for tr in tracks}
    lead = _window(tracks[candidate.leader].frames, candidate.t_start, candidate.t_end)
    fol = _window(tracks[candidate.follower].frames, candidate.t_start, candidate.t_end)

    def rejected(rule, t, log):
        return storage(pair=None, rule=rule, t=float(t), log=log)

    both = pd.concat([lead, fol], ignore_index=True)
    heading = _lane_heading(both)
    violations = sorted(_local_violations(lead, heading, cfg) + _local_violations(fol, heading, cfg), key=lambda v: (v[1], v[0]))
    log = [(rule, float(t)) for rule, t, _, _ in violations]

    if violations:
        times = np.unique(both["timestamp"].to_numpy())
        span = _longest_clean_span(times, violations)
        if span is None or span[1] - span[0] <= cfg.min_duration:
            return rejected(violations[0][0], violations[0][1], log)
        lead = _window(lead, *span)
        fol = _window(fol, *span)

    t_start = max(lead["timestamp"].iloc[0], fol["timestamp"].iloc[0])
    for frames in (lead, fol):
        if np.std(np.unwrap(frames["yaw"].to_numpy())) >= cfg.yaw_dev_max:
            return rejected("2.1", t_start, log + [("2.1", float(t_start))])
    for frames in (lead, fol):
        if _mean_speed(frames) <= cfg.mean_speed_min:
            return rejected("2.5", t_start, log + [("2.5", float(t_start))])

    ft = fol["timestamp"].to_numpy()
    lt = lead["timestamp"].to_numpy()
    t = ft[(ft >= lt[0] - 1e-9) & (ft <= lt[-1] + 1e-9)]
    if len(t) < 2 or t[-1] - t[0] <= cfg.min_duration:
        return rejected("1.7", t_start, log)

    origin = float(np.interp(t[0], lt, lead["lane_s"].to_numpy()))
    lead_series = _vehicle_series(lead, t, origin)
    fol_series = _vehicle_series(fol, t, origin)
    behind = lead_series.x <= fol_series.x
    if behind.any():
        return rejected("1.2", t[np.argmax(behind)], log)

    leader_type = "AV" if lead_series.is_av else "HV"
    pair = CFPair(
        _pair_id(leader_type, candidate.leader, candidate.follower, t[0]),
        leader_type,
        candidate.leader,
        candidate.follower,
        t.copy(),
        lead_series,
        fol_series,
        log,
    )
    pair.lane_id = str(fol["lane_id"].iloc[0])
    pair.heading = heading
    return storage(pair=pair, rule=None, t=None, log=log)


def _verify_job(job):
    candidate, lead, fol, cfg = job
    return verify_candidate(candidate, {candidate.leader: lead, candidate.follower: fol}, cfg)


def extract_pairs(tracks, config=None, workers=1):
    """
    Screening plus verification over all tracks.

    Returns `storage(ha, hh, rejections)`: H-A pairs have an AV leader and a
    human follower, H-H pairs have neither as AV; pairs with an AV follower
    are dropped (and recorded with rule `av-follower`).
    """
    cfg = config or api.config.selection
    tracks = sorted(tracks, key=lambda tr: (tr.t[0], tr.agent_id))
    by_id = {tr.agent_id: tr for tr in tracks}
    rejections = []
    candidates = screen_candidates(tracks, cfg, rejections)

    jobs = []
    for c in candidates:
        if by_id[c.follower].is_av:
            rejections.append(storage(leader=c.leader, follower=c.follower, rule="av-follower", t=c.t_start))
            continue
        jobs.append((c, by_id[c.leader], by_id[c.follower], cfg))

    ha, hh = [], []
    for (c, _, _, _), result in zip(jobs, parallel_map(_verify_job, jobs, workers)):
        if result.pair is None:
            rejections.append(storage(leader=c.leader, follower=c.follower, rule=result.rule, t=result.t))
        elif result.pair.leader_type == "AV":
            ha.append(result.pair)
        else:
            hh.append(result.pair)
    ha.sort(key=lambda p: p.pair_id)
    hh.sort(key=lambda p: p.pair_id)
    return storage(ha=ha, hh=hh, rejections=rejections)
