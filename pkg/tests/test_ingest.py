import os

import numpy as np
import pytest

from cfdata import api, ingest, synth


def scene_frames(**params):
    params.setdefault("leader_type", "HV")
    sim = synth.simulate_pair(synth.SynthScenario(**params))
    return sim, synth.corrupt(sim)


def write_lines(path, lines):
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


@pytest.fixture
def scene_file(tmp_path):
    _, frames = scene_frames()
    path = os.path.join(str(tmp_path), "scene.csv")
    ingest.write_frames(frames, path)
    return path


class TestReadFrames:
    def test_round_trip_of_canonical_file(self, scene_file):
        result = ingest.read_frames(scene_file)
        assert sorted(result.scenes) == ["scene-0000", "scene-0001"]
        assert result.n_records == 2 * 401
        assert len(result.rejects) == 0
        scene = result.scenes["scene-0000"]
        assert scene["is_av"].dtype == bool
        assert np.all(np.diff(scene["timestamp"].to_numpy()) >= 0)

    def test_bad_header(self, tmp_path):
        path = os.path.join(str(tmp_path), "bad.csv")
        write_lines(path, ["scene_id,timestamp,agent_id"])
        with pytest.raises(api.FormatError):
            ingest.read_frames(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(api.DataError):
            ingest.read_frames(os.path.join(str(tmp_path), "nope.csv"))

    def test_single_malformed_record_is_rejected(self, scene_file):
        with open(scene_file) as f:
            lines = f.read().splitlines()
        fields = lines[5].split(",")
        fields[4] = "1.7"  # class_prob_car
        lines[5] = ",".join(fields)
        write_lines(scene_file, lines)
        result = ingest.read_frames(scene_file)
        assert list(result.rejects["reason"]) == ["probability out of range"]
        assert sum(len(s) for s in result.scenes.values()) == 2 * 401 - 1

    @pytest.mark.parametrize(
        "column, value, reason",
        [
            (0, "", "missing scene_id"),
            (1, "", "missing timestamp"),
            (1, "soon", "unparsable timestamp"),
            (3, "yes", "bad boolean is_av"),
            (6, "nan", "unparsable y"),
            (7, "4.0", "yaw out of range"),
        ],
    )
    def test_reasons(self, scene_file, column, value, reason):
        with open(scene_file) as f:
            lines = f.read().splitlines()
        fields = lines[1].split(",")
        fields[column] = value
        lines[1] = ",".join(fields)
        write_lines(scene_file, lines)
        assert list(ingest.read_frames(scene_file).rejects["reason"]) == [reason]

    def test_duplicates_and_field_count(self, scene_file):
        with open(scene_file) as f:
            lines = f.read().splitlines()
        lines.append(lines[1])
        lines.append(lines[2] + ",extra")
        write_lines(scene_file, lines)
        reasons = sorted(ingest.read_frames(scene_file).rejects["reason"])
        assert reasons == ["duplicate timestamp", "wrong field count"]

    def test_too_many_malformed_records(self, scene_file):
        with open(scene_file) as f:
            lines = f.read().splitlines()
        for i in range(1, 30):
            lines[i] = lines[i].replace(",L1,", ",L1,x,", 1)
        write_lines(scene_file, lines)
        with pytest.raises(api.FormatError):
            ingest.read_frames(scene_file)


def test_read_scenes_merges_split_files(tmp_path):
    _, frames = scene_frames()
    first = os.path.join(str(tmp_path), "a.csv")
    second = os.path.join(str(tmp_path), "b.csv")
    ingest.write_frames(frames.iloc[::2], first)
    ingest.write_frames(frames.iloc[1::2], second)
    whole = os.path.join(str(tmp_path), "whole", "all.csv")
    ingest.write_frames(frames, whole)

    merged = ingest.read_scenes([second, first])
    single = ingest.read_scenes([whole])
    assert sorted(merged.scenes) == sorted(single.scenes)
    for scene_id in merged.scenes:
        assert merged.scenes[scene_id].equals(single.scenes[scene_id])


def test_expand_paths(tmp_path):
    _, frames = scene_frames()
    for name in ("b.csv", "a.csv"):
        ingest.write_frames(frames, os.path.join(str(tmp_path), name))
    directory = str(tmp_path)
    assert [os.path.basename(p) for p in ingest.expand_paths(directory)] == ["a.csv", "b.csv"]
    assert len(ingest.expand_paths(os.path.join(directory, "a.csv") + ", " + directory)) == 2
    assert ingest.expand_paths("") == []


class TestStitch:
    def test_tracks_continue_across_scenes(self):
        sim, frames = scene_frames()
        scenes = {s: ingest._sort_frames(f) for s, f in frames.groupby("scene_id")}
        tracks = ingest.stitch_tracks(scenes, api.config.stitch)
        assert len(tracks) == 2
        for tr in tracks:
            assert len(tr) == 401
            assert [p[0] for p in tr.provenance] == ["scene-0000", "scene-0001"]
            assert np.all(np.diff(tr.frames["lane_s"].to_numpy()) >= -1e-9)
        lead = max(tracks, key=lambda tr: tr.frames["lane_s"].iloc[0])
        assert np.allclose(lead.frames["lane_s"].to_numpy() - 20.0, sim.truth["x_lead"].to_numpy())

    def test_ego_joins_on_adjacency(self):
        _, frames = scene_frames(leader_type="AV")
        scenes = {s: ingest._sort_frames(f) for s, f in frames.groupby("scene_id")}
        tracks = ingest.stitch_tracks(scenes)
        ego = [tr for tr in tracks if tr.is_av]
        assert len(ego) == 1 and len(ego[0]) == 401

    def test_no_join_across_long_gap(self):
        _, frames = scene_frames()
        later = frames["scene_id"] == "scene-0001"
        frames.loc[later, "timestamp"] += 1.0
        scenes = {s: ingest._sort_frames(f) for s, f in frames.groupby("scene_id")}
        assert len(ingest.stitch_tracks(scenes)) == 4
