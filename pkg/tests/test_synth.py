import os

import numpy as np
import pytest

from cfdata import api, ingest, synth


def test_defaults_and_overrides():
    sc = synth.SynthScenario(leader_type="AV", v_init=12.0)
    assert sc.leader_type == "AV" and sc.v_init == 12.0
    assert sc.dt == 0.1
    with pytest.raises(api.SynthError):
        synth.SynthScenario(warp=9)
    with pytest.raises(api.SynthError):
        synth.SynthScenario(script="cruise:5,fly:2")
    with pytest.raises(api.SynthError):
        synth.SynthScenario(follower_model="gipps")


def test_parse_script():
    assert synth.parse_script("accel:4,stop:2") == [("accel", 4.0, 1.0), ("stop", 2.0, 0.0)]
    for bad in ("cruise", "cruise:-1", "decel:3:x", "decel:3:-1"):
        with pytest.raises(api.SynthError):
            synth.parse_script(bad)


def test_load_scenario(tmp_path):
    path = os.path.join(str(tmp_path), "sc.ini")
    with open(path, "w") as f:
        f.write("[scenario]\nleader_type = AV\nv_init = 9\nzero_speed = yes\nhole_count = 2\n")
    sc = synth.load_scenario(path, seed=4)
    assert (sc.leader_type, sc.v_init, sc.zero_speed, sc.hole_count, sc.seed) == ("AV", 9.0, True, 2, 4)
    assert synth.scenario_values(path) == {"leader_type": "AV", "v_init": 9.0, "zero_speed": True, "hole_count": 2}

    with open(path, "w") as f:
        f.write("[scenario]\nv_init = -3\n")
    with pytest.raises(api.ConfigError):
        synth.load_scenario(path)
    with open(path, "w") as f:
        f.write("[scenario]\nwarp = 9\n")
    with pytest.raises(api.ConfigError):
        synth.load_scenario(path)


class TestSimulate:
    def test_leader_follows_script(self):
        sim = synth.simulate_pair(synth.SynthScenario())
        truth = sim.truth
        assert list(truth.columns) == synth.TRUTH_COLUMNS
        assert len(truth) == 401
        v = truth["v_lead"].to_numpy()
        a = truth["a_lead"].to_numpy()
        assert v[0] == 10.0
        assert v.min() == 0.0
        # jerk limit holds until the final creep to standstill
        assert np.max(np.abs(np.diff(a[:100]))) <= 2.0 * 0.1 + 1e-9
        stopped = (truth["t"] > 16.0) & (truth["t"] < 18.0)
        assert np.all(v[stopped.to_numpy()] == 0.0)

    def test_idm_follower_stops_behind(self):
        sc = synth.SynthScenario(script="cruise:5,decel:8:1.5,stop:15")
        sim = synth.simulate_pair(sc)
        truth = sim.truth
        gap = truth["x_lead"] - sc.lead_length - truth["x_fol"]
        assert truth["v_fol"].iloc[-1] < 0.05
        assert gap.min() > 0.9 * sc.jam_distance
        assert truth["v_fol"].min() >= 0.0

    def test_newell_follower_is_shifted_leader(self):
        sc = synth.SynthScenario(follower_model="newell", newell_tau=1.0, newell_delta=9.0)
        truth = synth.simulate_pair(sc).truth
        x_l, x_f = truth["x_lead"].to_numpy(), truth["x_fol"].to_numpy()
        assert np.allclose(x_f[10:], x_l[:-10] - 9.0)
        assert x_l[0] == 0.0

    def test_newell_overlap_is_an_error(self):
        with pytest.raises(api.SynthError):
            synth.simulate_pair(synth.SynthScenario(follower_model="newell", newell_delta=2.0))

    def test_av_leader_has_no_speed_or_size(self):
        sim = synth.simulate_pair(synth.SynthScenario(leader_type="AV"))
        assert sim.pair.v_lead is None
        assert np.isnan(sim.pair.lead.length).all()
        assert sim.pair.subset == "H-A"


class TestCorrupt:
    def test_scenes_and_ids(self):
        sim = synth.simulate_pair(synth.SynthScenario(leader_type="AV", zero_speed=True, script="cruise:40"))
        frames = synth.corrupt(sim)
        assert list(frames.columns) == ingest.COLUMNS
        assert sorted(frames["scene_id"].unique()) == ["scene-0000", "scene-0001"]
        ego = frames[frames["is_av"]]
        assert set(ego["agent_id"]) == {"ego"}
        assert ego["speed"].isna().all() and ego["length"].isna().all()
        human = frames[~frames["is_av"]]
        assert set(human["agent_id"]) <= {"1", "2"}
        zeros = human[human["speed"] == 0.0]
        for scene_id, scene in human.groupby("scene_id"):
            t = scene["timestamp"]
            assert set(zeros[zeros["scene_id"] == scene_id]["timestamp"]) == {t.min(), t.max()}

    def test_world_coordinates_follow_heading(self):
        sc = synth.SynthScenario(heading=0.5)
        frames = synth.corrupt(synth.simulate_pair(sc))
        s = frames["lane_s"].to_numpy()
        assert np.allclose(frames["x"], sc.origin_x + s * np.cos(0.5))
        assert np.allclose(frames["y"], sc.origin_y + s * np.sin(0.5))

    def test_holes_and_length_outliers(self):
        sc = synth.SynthScenario(hole_count=1, hole_duration=2.0, length_sigma=0.3, length_outlier_frac=0.05)
        frames = synth.corrupt(synth.simulate_pair(sc))
        assert len(frames) < 2 * 401
        assert len(frames) >= 2 * 401 - 20
        assert 20 <= (frames["length"] == 8.0).sum() <= 40
        assert (frames["length"] <= 4.7).sum() + (frames["length"] == 8.0).sum() == len(frames)

    def test_noise_is_seeded(self):
        sc = synth.SynthScenario(pos_sigma=0.1, speed_sigma=0.2, seed=7)
        sim = synth.simulate_pair(sc)
        assert synth.corrupt(sim).equals(synth.corrupt(sim))
        other = synth.corrupt(sim, synth.SynthScenario(pos_sigma=0.1, speed_sigma=0.2, seed=8))
        assert not synth.corrupt(sim).equals(other)
        assert (synth.corrupt(sim)["speed"].dropna() >= 0).all()


class TestCorpus:
    def test_alternating_and_deterministic(self):
        a = synth.simulate_corpus(4, seed=3)
        b = synth.simulate_corpus(4, seed=3)
        assert [item.sim.scenario.leader_type for item in a] == ["AV", "HV", "AV", "HV"]
        for x, y in zip(a, b):
            assert x.frames.equals(y.frames)
        starts = [item.frames["timestamp"].min() for item in a]
        assert starts == [0.0, 1000.0, 2000.0, 3000.0]
        assert a[0].frames["scene_id"].iloc[0].startswith("p000-")

    def test_streams_are_independent(self):
        base = {"pos_sigma": 0.1}
        a = synth.simulate_corpus(2, seed=1, base_scenario=base)
        b = synth.simulate_corpus(2, seed=2, base_scenario=base)
        assert a[0].sim.scenario.seed != a[1].sim.scenario.seed
        assert not np.allclose(a[0].frames["lane_d"], b[0].frames["lane_d"])


def test_write_truth(tmp_path):
    sim = synth.simulate_pair(synth.SynthScenario())
    path = os.path.join(str(tmp_path), "truth.csv")
    synth.write_truth(sim, path)
    with open(path) as f:
        assert f.readline().strip() == ",".join(synth.TRUTH_COLUMNS)
        assert len(f.readlines()) == 401
