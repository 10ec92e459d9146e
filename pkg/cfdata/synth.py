"""
Synthetic leader-follower episodes with known truth, and their corruption
into raw-style scene tables
(part of cfdata)
"""

import configparser

import numpy as np
import pandas as pd

from . import api
from .api import ConfigError, SynthError
from .ingest import COLUMNS
from .select import CFPair
from .utils import Storage, safewrite, storage

__all__ = [
    "SynthScenario",
    "load_scenario",
    "scenario_values",
    "parse_script",
    "simulate_pair",
    "corrupt",
    "simulate_corpus",
    "write_truth",
]

TRUTH_COLUMNS = ["t", "x_lead", "v_lead", "a_lead", "x_fol", "v_fol", "a_fol"]

_DEFAULTS = {
    "leader_type": "HV",
    "v_init": 10.0,
    # kind:duration[:accel], kinds cruise, accel, decel, stop
    "script": "cruise:6,decel:6:1.5,stop:6,accel:10:1.2,cruise:12",
    "jerk_limit": 2.0,
    "follower_model": "idm",
    "v_desired": 20.0,
    "time_headway": 1.5,
    "a_max": 1.0,
    "b_comf": 2.0,
    "jam_distance": 2.0,
    "initial_gap": None,
    "newell_tau": 1.2,
    "newell_delta": 8.0,
    "lead_length": 4.5,
    "fol_length": 4.7,
    "lead_width": 1.9,
    "fol_width": 1.8,
    "dt": 0.1,
    "pos_sigma": 0.0,
    "speed_sigma": 0.0,
    "length_sigma": 0.0,
    "length_outlier_frac": 0.0,
    "length_outlier": 8.0,
    "scene_length": 25.0,
    "zero_speed": False,
    "hole_count": 0,
    "hole_duration": 1.0,
    "t_offset": 0.0,
    "lane_s0": 20.0,
    "heading": 0.3,
    "origin_x": 100.0,
    "origin_y": 50.0,
    "lane_id": "L1",
    "signal_segment_id": "S1",
    "scene_prefix": "scene",
    "seed": 0,
}


class SynthScenario(Storage):
    """
    Parameters of one synthetic episode; unknown keys are rejected.

        >>> SynthScenario(v_init=12.0).v_init
        12.0
        >>> SynthScenario(v_init=-1.0)
        Traceback (most recent call last):
            ...
        cfdata.api.SynthError: v_init must be >= 0
    """

    def __init__(self, **overrides):
        Storage.__init__(self, _DEFAULTS)
        for key, value in overrides.items():
            if key not in _DEFAULTS:
                raise SynthError("unknown scenario key %r" % key)
            self[key] = value
        self.validate()

    def validate(self):
        if self.leader_type not in ("AV", "HV"):
            raise SynthError("leader_type is AV or HV")
        if self.follower_model not in ("idm", "newell"):
            raise SynthError("follower_model is idm or newell")
        if self.v_init < 0:
            raise SynthError("v_init must be >= 0")
        positive = [
            "jerk_limit", "v_desired", "time_headway", "a_max", "b_comf", "jam_distance",
            "lead_length", "fol_length", "lead_width", "fol_width", "dt", "scene_length",
        ]
        for key in positive:
            if not self[key] > 0:
                raise SynthError("%s must be > 0" % key)
        for key in ("pos_sigma", "speed_sigma", "length_sigma", "length_outlier_frac", "hole_count"):
            if self[key] < 0:
                raise SynthError("%s must be >= 0" % key)
        parse_script(self.script)


def load_scenario(path, **overrides):
    """Reads the `[scenario]` section of an INI file over the defaults."""
    values = scenario_values(path)
    values.update(overrides)
    try:
        return SynthScenario(**values)
    except SynthError as e:
        raise ConfigError("invalid scenario %s: %s" % (path, e))


def scenario_values(path):
    """Only the keys an INI file sets, coerced to the types of their defaults."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as f:
            parser.read_file(f)
    except OSError as e:
        raise ConfigError("cannot read scenario %s: %s" % (path, e.strerror))
    except configparser.Error as e:
        raise ConfigError("cannot parse scenario %s: %s" % (path, e))
    values = {}
    if parser.has_section("scenario"):
        for key, text in parser.items("scenario"):
            if key not in _DEFAULTS:
                raise ConfigError("unknown key [scenario] %s" % key)
            values[key] = api._coerce("scenario", key, _DEFAULTS[key], text)
    return values


def parse_script(script):
    """
        >>> parse_script("cruise:5,decel:4:2")
        [('cruise', 5.0, 0.0), ('decel', 4.0, 2.0)]
    """
    segments = []
    for part in script.split(","):
        fields = part.strip().split(":")
        if len(fields) not in (2, 3) or fields[0] not in ("cruise", "accel", "decel", "stop"):
            raise SynthError("bad script segment %r" % part)
        try:
            duration = float(fields[1])
            accel = float(fields[2]) if len(fields) == 3 else (1.0 if fields[0] in ("accel", "decel") else 0.0)
        except ValueError:
            raise SynthError("bad script segment %r" % part)
        if duration <= 0 or accel < 0:
            raise SynthError("bad script segment %r" % part)
        segments.append((fields[0], duration, accel))
    return segments


def _leader(sc, n_warmup=0):
    """Jerk-limited integration of the speed script; `n_warmup` cruise steps come first."""
    dt = sc.dt
    commands = [0.0] * n_warmup
    kinds = ["cruise"] * n_warmup
    for kind, duration, accel in parse_script(sc.script):
        steps = int(round(duration / dt))
        commands += [{"accel": accel, "decel": -accel}.get(kind, 0.0)] * steps
        kinds += [kind] * steps

    n = len(commands) + 1
    x, v, a = np.zeros(n), np.zeros(n), np.zeros(n)
    v[0] = sc.v_init
    acc = 0.0
    for k in range(n - 1):
        cmd = commands[k]
        if kinds[k] in ("decel", "stop"):
            # soft stop: never brake harder than needed to stop in one second
            cmd = max(cmd, -v[k]) if kinds[k] == "decel" else -v[k]
        acc += float(np.clip(cmd - acc, -sc.jerk_limit * dt, sc.jerk_limit * dt))
        v_next = v[k] + acc * dt
        if v_next < 0.05 and acc <= 0:
            v_next = 0.0
            acc = 0.0
        v[k + 1] = v_next
        x[k + 1] = x[k] + (v[k] + v_next) / 2 * dt
        a[k] = (v_next - v[k]) / dt
    a[-1] = a[-2] if n > 1 else 0.0
    return x, v, a


def _idm(sc, x_l, v_l):
    n = len(x_l)
    x, v, a = np.zeros(n), np.zeros(n), np.zeros(n)
    v[0] = v_l[0]
    if sc.initial_gap is None:
        ratio = 1 - (v[0] / sc.v_desired) ** 4
        if ratio <= 0:
            raise SynthError("initial speed not below the desired speed")
        gap = (sc.jam_distance + v[0] * sc.time_headway) / np.sqrt(ratio)
    else:
        gap = sc.initial_gap
    x[0] = x_l[0] - sc.lead_length - gap
    root = 2 * np.sqrt(sc.a_max * sc.b_comf)
    for k in range(n - 1):
        s = x_l[k] - sc.lead_length - x[k]
        if s <= 0:
            raise SynthError("collision at step %d" % k)
        s_star = sc.jam_distance + max(0.0, v[k] * sc.time_headway + v[k] * (v[k] - v_l[k]) / root)
        acc = sc.a_max * (1 - (v[k] / sc.v_desired) ** 4 - (s_star / s) ** 2)
        v_next = max(0.0, v[k] + acc * sc.dt)
        v[k + 1] = v_next
        x[k + 1] = x[k] + (v[k] + v_next) / 2 * sc.dt
        a[k] = (v_next - v[k]) / sc.dt
    a[-1] = a[-2] if n > 1 else 0.0
    if np.any(x_l - sc.lead_length - x <= 0):
        raise SynthError("collision")
    return x, v, a


def simulate_pair(scenario):
    """
    Integrates the leader's script at `dt` and the follower (IDM, or the
    leader shifted by `newell_tau`, `newell_delta`).

    Returns `storage(pair, truth)`: a CFPair with the true series (leader at
    the origin) and the truth table `t, x_lead, v_lead, a_lead, x_fol, v_fol, a_fol`.
    """
    sc = scenario if isinstance(scenario, SynthScenario) else SynthScenario(**scenario)
    if sc.follower_model == "newell":
        warm = int(np.ceil(sc.newell_tau / sc.dt - 1e-9)) + 1
        x_w, v_w, a_w = _leader(sc, warm)
        t_w = (np.arange(len(x_w)) - warm) * sc.dt
        x_w = x_w - x_w[warm]
        t = t_w[warm:]
        x_l, v_l, a_l = x_w[warm:], v_w[warm:], a_w[warm:]
        x_f = np.interp(t - sc.newell_tau, t_w, x_w) - sc.newell_delta
        v_f = np.interp(t - sc.newell_tau, t_w, v_w)
        a_f = np.interp(t - sc.newell_tau, t_w, a_w)
        if np.any(x_l - sc.lead_length - x_f <= 0):
            raise SynthError("newell shift puts the follower into the leader")
    else:
        x_l, v_l, a_l = _leader(sc)
        t = np.arange(len(x_l)) * sc.dt
        x_f, v_f, a_f = _idm(sc, x_l, v_l)

    def vehicle(x, v, length, width, is_av):
        n = len(x)
        return storage(
            x=x,
            v=None if is_av else v,
            yaw=np.full(n, sc.heading),
            length=np.full(n, np.nan if is_av else length),
            width=np.full(n, np.nan if is_av else width),
            is_av=is_av,
        )

    is_av = sc.leader_type == "AV"
    pair = CFPair(
        "truth",
        sc.leader_type,
        "lead",
        "fol",
        t + sc.t_offset,
        vehicle(x_l, v_l, sc.lead_length, sc.lead_width, is_av),
        vehicle(x_f, v_f, sc.fol_length, sc.fol_width, False),
    )
    truth = pd.DataFrame(
        {"t": t + sc.t_offset, "x_lead": x_l, "v_lead": v_l, "a_lead": a_l, "x_fol": x_f, "v_fol": v_f, "a_fol": a_f},
        columns=TRUTH_COLUMNS,
    )
    return storage(pair=pair, truth=truth, scenario=sc)


def _perceived(rng, n, true, sigma, outlier_frac, outlier):
    """Occlusion only shortens a vehicle; a fixed share of frames is an outlier."""
    values = true - np.abs(rng.normal(0.0, sigma, n)) if sigma > 0 else np.full(n, float(true))
    n_out = int(np.floor(outlier_frac * n))
    if n_out:
        values[rng.choice(n, n_out, replace=False)] = outlier
    return values


def corrupt(sim, scenario=None, rng=None):
    """
    Turns a simulated episode into a canonical frame table: position and
    speed noise, 25 s scenes with renumbered agent ids, zero speeds at the
    first and last human frame of every scene, perceived length jitter,
    optional holes in the follower track, and no speed or size for the AV.
    """
    sc = scenario or sim.scenario
    rng = rng if rng is not None else np.random.default_rng(sc.seed)
    truth = sim.truth
    t_rel = truth["t"].to_numpy() - sc.t_offset
    n = len(t_rel)
    scene_of = np.floor(t_rel / sc.scene_length + 1e-9).astype(int)
    cos_h, sin_h = np.cos(sc.heading), np.sin(sc.heading)

    tables = []
    vehicles = [
        ("lead", sc.leader_type == "AV", sc.lead_length, sc.lead_width),
        ("fol", False, sc.fol_length, sc.fol_width),
    ]
    for role, is_av, length, width in vehicles:
        lane_s = sc.lane_s0 + truth["x_" + role].to_numpy()
        lane_d = np.zeros(n)
        if sc.pos_sigma > 0:
            lane_s = lane_s + rng.normal(0.0, sc.pos_sigma, n)
            lane_d = lane_d + rng.normal(0.0, sc.pos_sigma, n)
        speed = truth["v_" + role].to_numpy().copy()
        if sc.speed_sigma > 0:
            speed = np.maximum(0.0, speed + rng.normal(0.0, sc.speed_sigma, n))
        frame = pd.DataFrame(
            {
                "timestamp": truth["t"].to_numpy(),
                "is_av": is_av,
                "class_prob_car": 1.0,
                "x": sc.origin_x + lane_s * cos_h - lane_d * sin_h,
                "y": sc.origin_y + lane_s * sin_h + lane_d * cos_h,
                "yaw": sc.heading,
                "speed": np.nan if is_av else speed,
                "length": np.nan if is_av else _perceived(rng, n, length, sc.length_sigma, sc.length_outlier_frac, sc.length_outlier),
                "width": np.nan if is_av else _perceived(rng, n, width, sc.length_sigma / 4, 0.0, width),
                "lane_id": sc.lane_id,
                "lane_s": lane_s,
                "lane_d": lane_d,
                "lane_is_straight": True,
                "signal_segment_id": sc.signal_segment_id,
            }
        )
        frame["scene"] = scene_of
        frame["role"] = role
        keep = np.ones(n, dtype=bool)
        if role == "fol":
            for _ in range(int(sc.hole_count)):
                span = t_rel[-1] - 10.0 - sc.hole_duration
                start = 5.0 + rng.uniform(0.0, max(span, 0.0))
                keep &= ~((t_rel > start) & (t_rel < start + sc.hole_duration))
        frame = frame[keep].copy()
        if sc.zero_speed and not is_av:
            first = frame.groupby("scene")["timestamp"].transform("min")
            last = frame.groupby("scene")["timestamp"].transform("max")
            boundary = (frame["timestamp"] == first) | (frame["timestamp"] == last)
            frame.loc[boundary, "speed"] = 0.0
        tables.append(frame)

    frames = pd.concat(tables, ignore_index=True)
    ids = {}
    for scene in sorted(frames["scene"].unique()):
        order = rng.permutation(2) + 1
        for role, number in zip(("lead", "fol"), order):
            ids[(scene, role)] = str(number)
    frames["agent_id"] = [
        "ego" if av else ids[(scene, role)] for scene, role, av in zip(frames["scene"], frames["role"], frames["is_av"])
    ]
    frames["scene_id"] = ["%s-%04d" % (sc.scene_prefix, s) for s in frames["scene"]]
    frames = frames.sort_values(["scene_id", "timestamp", "agent_id"], kind="mergesort").reset_index(drop=True)
    return frames[COLUMNS]


def simulate_corpus(n_pairs, seed=0, base_scenario=None, spacing=1000.0):
    """
    `n_pairs` independent episodes, H-A and H-H alternating, each on its own
    time window and with its own random stream.

    Returns a list of `storage(sim, frames)` in pair order.
    """
    base = dict(base_scenario or {})
    streams = np.random.SeedSequence(seed).spawn(n_pairs)
    corpus = []
    for i, stream in enumerate(streams):
        rng = np.random.default_rng(stream)
        params = dict(base)
        params.update(
            leader_type="AV" if i % 2 == 0 else "HV",
            t_offset=float(base.get("t_offset", 0.0)) + i * spacing,
            scene_prefix="p%03d" % i,
            seed=int(stream.generate_state(1)[0]),
        )
        if params.get("follower_model", "idm") == "idm":
            params.setdefault("time_headway", float(rng.uniform(1.0, 2.0)))
        params.setdefault("v_init", float(rng.uniform(8.0, 14.0)))
        sim = simulate_pair(SynthScenario(**params))
        corpus.append(storage(sim=sim, frames=corrupt(sim, rng=rng)))
    return corpus


def write_truth(sim, path, float_format=None):
    """Writes the truth sidecar CSV."""
    float_format = float_format or api.config.output.float_format
    safewrite(path, sim.truth.to_csv(index=False, float_format=float_format, lineterminator="\n"))
