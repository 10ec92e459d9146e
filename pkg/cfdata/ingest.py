"""
Scene files: reading, validation and cross-scene track stitching
(part of cfdata)
"""

import glob
import io
import os

import numpy as np
import pandas as pd

from . import api
from .api import DataError, FormatError
from .utils import parallel_map, safewrite, storage

__all__ = [
    "COLUMNS",
    "Track",
    "expand_paths",
    "read_frames",
    "read_scenes",
    "validate_file",
    "write_frames",
    "stitch_tracks",
]

COLUMNS = [
    "scene_id",
    "timestamp",
    "agent_id",
    "is_av",
    "class_prob_car",
    "x",
    "y",
    "yaw",
    "speed",
    "length",
    "width",
    "lane_id",
    "lane_s",
    "lane_d",
    "lane_is_straight",
    "signal_segment_id",
]

_REQUIRED_FLOATS = ["timestamp", "class_prob_car", "x", "y", "yaw", "lane_s", "lane_d"]
_OPTIONAL_FLOATS = ["speed", "length", "width"]
_BOOLS = ["is_av", "lane_is_straight"]
_REQUIRED_STRINGS = ["scene_id", "agent_id"]

# more malformed lines than this share of the file means the wrong file was given
MALFORMED_SHARE = 0.01


class Track:
    """
    Frames of one agent across one or more scenes, in time order.
    `provenance` lists `(scene_id, start, stop)` row ranges of `frames`.
    """

    def __init__(self, agent_id, is_av, frames, provenance):
        self.agent_id = agent_id
        self.is_av = is_av
        self.frames = frames
        self.provenance = provenance

    @property
    def t(self):
        return self.frames["timestamp"].to_numpy()

    def __len__(self):
        return len(self.frames)

    def __repr__(self):
        return "<Track %s av=%s frames=%d scenes=%d>" % (self.agent_id, self.is_av, len(self), len(self.provenance))


def expand_paths(patterns):
    """Expands a comma/newline separated list of files, globs and directories."""
    if isinstance(patterns, str):
        patterns = [p.strip() for p in patterns.replace("\n", ",").split(",")]
    paths = []
    for pattern in patterns:
        if not pattern:
            continue
        if os.path.isdir(pattern):
            pattern = os.path.join(pattern, "*.csv")
        paths.extend(glob.glob(pattern))
    return sorted(set(paths))


def _reject_reasons(raw):
    """First failing rule per row ("" for valid rows) and the typed table."""
    reason = pd.Series("", index=raw.index, dtype=object)

    def mark(mask, text):
        reason[(reason == "") & mask] = text

    for col in _REQUIRED_STRINGS:
        mark(raw[col].str.strip() == "", f"missing {col}")

    typed = pd.DataFrame(index=raw.index)
    for col in COLUMNS:
        if col in _REQUIRED_FLOATS or col in _OPTIONAL_FLOATS:
            empty = raw[col].str.strip() == ""
            typed[col] = pd.to_numeric(raw[col].where(~empty), errors="coerce")
            if col in _REQUIRED_FLOATS:
                mark(empty, f"missing {col}")
            mark(~empty & ~np.isfinite(typed[col]), f"unparsable {col}")
        elif col in _BOOLS:
            mark(~raw[col].isin(["0", "1"]), f"bad boolean {col}")
            typed[col] = raw[col] == "1"
        else:
            typed[col] = raw[col].str.strip()

    prob = typed["class_prob_car"]
    mark((prob < 0) | (prob > 1), "probability out of range")
    yaw = typed["yaw"]
    mark((yaw <= -np.pi) | (yaw > np.pi), "yaw out of range")

    dup = typed.duplicated(["scene_id", "agent_id", "timestamp"], keep="first")
    mark(dup, "duplicate timestamp")
    return reason, typed


def read_frames(path):
    """
    Reads one canonical scene file.

    Returns a storage with `scenes` (scene_id -> time-sorted frame table),
    `rejects` (table of `file, record, reason`) and `n_records`.
    """
    try:
        with open(path, encoding="utf-8") as f:
            header = f.readline().rstrip("\r\n")
            text = header + "\n" + f.read()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e.strerror}")
    except UnicodeDecodeError:
        raise FormatError(f"{path}: not UTF-8 text")

    if header.split(",") != COLUMNS:
        raise FormatError(f"{path}: header does not name the canonical columns")

    bad = []

    def on_bad_line(fields):
        bad.append(",".join(fields))
        return None

    raw = pd.read_csv(
        io.StringIO(text),
        dtype=str,
        keep_default_na=False,
        na_filter=False,
        engine="python",
        on_bad_lines=on_bad_line,
    )
    # short lines come back padded with NaN
    raw = raw.fillna("")
    reason, typed = _reject_reasons(raw)

    rejected = (reason != "").to_numpy()
    records = [",".join(row) for row, r in zip(raw[COLUMNS].itertuples(index=False), rejected) if r]
    rejects = pd.DataFrame(
        {
            "file": path,
            "record": records + bad,
            "reason": list(reason[rejected]) + ["wrong field count"] * len(bad),
        },
        columns=["file", "record", "reason"],
    )

    n_records = len(raw) + len(bad)
    if len(rejects) > max(1, MALFORMED_SHARE * n_records):
        raise FormatError(f"{path}: {len(rejects)} of {n_records} records malformed")

    frames = typed[~rejected].reset_index(drop=True)
    scenes = {}
    for scene_id, scene in frames.groupby("scene_id", sort=True):
        scenes[scene_id] = _sort_frames(scene)
    return storage(scenes=scenes, rejects=rejects, n_records=n_records)


def _sort_frames(frames):
    return frames.sort_values(["timestamp", "agent_id"], kind="mergesort").reset_index(drop=True)


def validate_file(path):
    """Format check only: counts records and scenes, raises `FormatError` on a bad file."""
    result = read_frames(path)
    return storage(
        n_records=result.n_records,
        n_scenes=len(result.scenes),
        rejects=result.rejects,
    )


def read_scenes(paths, workers=1):
    """
    Reads several files (in parallel) and merges frames of scenes split across files.
    The result does not depend on the order of `paths`.
    """
    paths = sorted(paths)
    parts = parallel_map(read_frames, paths, workers)
    pieces = {}
    for part in parts:
        for scene_id, frames in part.scenes.items():
            pieces.setdefault(scene_id, []).append(frames)
    scenes = {}
    for scene_id in sorted(pieces):
        frames = pd.concat(pieces[scene_id], ignore_index=True)
        frames = frames.sort_values(COLUMNS, kind="mergesort")
        frames = frames.drop_duplicates(["agent_id", "timestamp"], keep="first")
        scenes[scene_id] = _sort_frames(frames)
    rejects = pd.concat([p.rejects for p in parts], ignore_index=True) if parts else pd.DataFrame(columns=["file", "record", "reason"])
    return storage(scenes=scenes, rejects=rejects, n_records=sum(p.n_records for p in parts))


def write_frames(frames, path):
    """Writes a frame table in the canonical format (floats at full precision)."""
    out = frames[COLUMNS].copy()
    for col in _BOOLS:
        out[col] = out[col].astype(bool).astype(int)
    safewrite(path, out.to_csv(index=False, na_rep="", lineterminator="\n"))


def _segments(scene_id, frames):
    segs = []
    for agent_id, f in frames.groupby("agent_id", sort=True):
        f = f.reset_index(drop=True)
        xy = f[["x", "y"]].to_numpy()
        t = f["timestamp"].to_numpy()
        if len(f) >= 2:
            v1 = (xy[-1] - xy[-2]) / (t[-1] - t[-2])
        else:
            speed = f["speed"].iloc[-1]
            speed = 0.0 if np.isnan(speed) else speed
            yaw = f["yaw"].iloc[-1]
            v1 = speed * np.array([np.cos(yaw), np.sin(yaw)])
        segs.append(
            storage(
                scene_id=scene_id,
                agent_id=agent_id,
                frames=f,
                is_av=bool(f["is_av"].iloc[0]),
                t0=t[0],
                t1=t[-1],
                p0=xy[0],
                p1=xy[-1],
                v1=v1,
                prob_first=1.0 if f["is_av"].iloc[0] else f["class_prob_car"].iloc[0],
                prob_last=1.0 if f["is_av"].iloc[-1] else f["class_prob_car"].iloc[-1],
            )
        )
    return segs


def _predecessors(bounds, dt_max):
    """Maps each scene to the scene it continues (gap in (0, dt_max)), one successor per scene."""
    order = sorted(bounds, key=lambda s: (bounds[s][0], s))
    claimed = set()
    pred = {}
    for b in order:
        start = bounds[b][0]
        options = []
        for a in order:
            gap = start - bounds[a][1]
            if a != b and a not in claimed and 0 < gap < dt_max:
                options.append((gap, a))
        if options:
            a = min(options)[1]
            claimed.add(a)
            pred[b] = a
    return order, pred


def stitch_tracks(scenes, cfg=None):
    """
    Joins per-scene agent tracks into continuous tracks.

    A track ending in one scene continues into the next scene of the same
    sequence when the time gap is under `dt_max`, the constant-velocity
    extrapolation misses the new start by less than `dist_max` and both ends
    are cars with probability above `prob_car_min`. The ego vehicle joins on
    scene adjacency alone. Each track takes at most one successor: the
    nearest extrapolation wins, then the smaller time gap, then agent ids.
    """
    cfg = cfg or api.config.stitch
    bounds = {s: (f["timestamp"].iloc[0], f["timestamp"].iloc[-1]) for s, f in scenes.items() if len(f)}
    order, pred = _predecessors(bounds, cfg.dt_max)

    chains = []
    tail = {}  # scene_id -> chains whose last segment lies in that scene
    for scene_id in order:
        segs = _segments(scene_id, scenes[scene_id])
        open_chains = tail.get(pred.get(scene_id), [])
        edges = []
        for ci, chain in enumerate(open_chains):
            s1 = chain[-1]
            for si, s2 in enumerate(segs):
                dt = s2.t0 - s1.t1
                if s1.is_av or s2.is_av:
                    if s1.is_av and s2.is_av:
                        edges.append((0.0, dt, s1.agent_id, s2.agent_id, ci, si))
                    continue
                if not 0 < dt < cfg.dt_max:
                    continue
                if s1.prob_last <= cfg.prob_car_min or s2.prob_first <= cfg.prob_car_min:
                    continue
                err = float(np.hypot(*(s2.p0 - (s1.p1 + s1.v1 * dt))))
                if err < cfg.dist_max:
                    edges.append((err, dt, s1.agent_id, s2.agent_id, ci, si))

        used_c, used_s = set(), set()
        tail[scene_id] = []
        for err, dt, _, _, ci, si in sorted(edges):
            if ci in used_c or si in used_s:
                continue
            used_c.add(ci)
            used_s.add(si)
            open_chains[ci].append(segs[si])
            tail[scene_id].append(open_chains[ci])
        for si, seg in enumerate(segs):
            if si not in used_s:
                chain = [seg]
                chains.append(chain)
                tail[scene_id].append(chain)

    tracks = []
    for chain in chains:
        provenance = []
        start = 0
        for seg in chain:
            provenance.append((seg.scene_id, start, start + len(seg.frames)))
            start += len(seg.frames)
        frames = pd.concat([seg.frames for seg in chain], ignore_index=True)
        agent_id = "%s:%s" % (chain[0].scene_id, chain[0].agent_id)
        tracks.append(Track(agent_id, chain[0].is_av, frames, provenance))
    tracks.sort(key=lambda tr: (tr.t[0], tr.agent_id))
    return tracks
