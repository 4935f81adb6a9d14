import csv
import math

import pytest
from hypothesis import given, settings, strategies as st

from lanemerge.dataset import labels as L
from lanemerge.dataset.merges import (
    FrameIndex,
    LaneChangeEvent,
    MergeInstance,
    RejectReason,
    Rejection,
    WINDOW,
    detect_lane_merges,
    extract_merge_instance,
)
from lanemerge.dataset.ngsim import ColumnMapping, FormatError, natural_key, parse_trajectory_csv
from lanemerge.dataset.split import split_counts, split_dataset, split_instance_ids

from conftest import LANE_WIDTH, car, straight_instance

HEADER = ["Vehicle_ID", "Frame_ID", "Local_X", "Local_Y", "v_Vel", "v_Acc", "v_Length", "v_Width", "Lane_ID"]


def write_csv(path, rows, header=HEADER):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


METRES = ColumnMapping(length_scale=1.0)


class TestParse:
    def test_malformed_row_skipped(self, tmp_path):
        p = write_csv(tmp_path / "a.csv", [
            [1, 1, 0, 0, 10, 0, 4, 2, 1],
            [1, 2, 0, "oops", 10, 0, 4, 2, 1],
            [1, 3, 0, 2, 10, 0, 4, 2, 1],
        ])
        res = parse_trajectory_csv(p, METRES)
        assert len(res) == 2 and res.skipped == 1

    def test_header_only(self, tmp_path):
        res = parse_trajectory_csv(write_csv(tmp_path / "e.csv", []), METRES)
        assert len(res) == 0 and res.skipped == 0

    def test_missing_required_column(self, tmp_path):
        p = write_csv(tmp_path / "m.csv", [[1, 1, 0, 0, 10, 0, 4, 2]], HEADER[:-1])
        with pytest.raises(FormatError):
            parse_trajectory_csv(p, METRES)

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(OSError):
            parse_trajectory_csv(tmp_path / "nope.csv")

    def test_700_rows_span_70_seconds(self, tmp_path):
        rows = [[7, k + 1, 1.0, 0.1 * k, 1.0, 0.0, 14.0, 6.0, 2] for k in range(700)]
        p = write_csv(tmp_path / "v.csv", rows)
        # line-count oracle: data lines in the file minus the header
        with open(p) as fh:
            expected = sum(1 for _ in fh) - 1
        res = parse_trajectory_csv(p)
        assert len(res) == expected == 700
        ts = [f.timestamp for f in res]
        assert ts[-1] - ts[0] == 69_900  # 700 samples at 10 Hz cover 70 s
        assert res.frames[0].length == pytest.approx(14.0 * 0.3048)

    def test_sorted_by_natural_id_then_time(self, tmp_path):
        rows = [[10, 2, 0, 1, 1, 0, 4, 2, 1], [9, 1, 0, 0, 1, 0, 4, 2, 1], [10, 1, 0, 0, 1, 0, 4, 2, 1]]
        res = parse_trajectory_csv(write_csv(tmp_path / "s.csv", rows), METRES)
        assert [(f.vehicle_id, f.timestamp) for f in res] == [("9", 100), ("10", 100), ("10", 200)]

    def test_duplicate_rows_skipped(self, tmp_path):
        rows = [[1, 1, 0, 0, 1, 0, 4, 2, 1], [1, 1, 0, 0, 1, 0, 4, 2, 1]]
        res = parse_trajectory_csv(write_csv(tmp_path / "d.csv", rows), METRES)
        assert len(res) == 1 and res.skipped == 1

    def test_mapping_round_trip(self, tmp_path):
        m = ColumnMapping(length_scale=1.0, lane_axis=(1.0, 0.0))
        path = tmp_path / "map.json"
        import json

        path.write_text(json.dumps(m.to_json()))
        assert ColumnMapping.load(path) == m

    def test_natural_key(self):
        assert sorted(["10", "9", "b", "a"], key=natural_key) == ["9", "10", "a", "b"]


def lane_track(lanes):
    return [car("v", 0.0, t=100 * i, lane=ln) for i, ln in enumerate(lanes)]


class TestDetect:
    def test_single_change(self):
        ev = detect_lane_merges(lane_track([3, 3, 3, 2, 2]))
        assert ev == [LaneChangeEvent("v", 300, 3, 2)]

    def test_constant_lane(self):
        assert detect_lane_merges(lane_track([3] * 5)) == []
        assert detect_lane_merges([]) == []

    def test_out_and_back(self):
        ev = detect_lane_merges(lane_track([3, 2, 3]))
        assert [(e.merge_timestamp, e.from_lane, e.to_lane) for e in ev] == [(100, 3, 2), (200, 2, 3)]

    @given(st.lists(st.integers(1, 4), max_size=40))
    def test_matches_exhaustive_scan(self, lanes):
        expected = [(100 * i, lanes[i - 1], lanes[i]) for i in range(1, len(lanes)) if lanes[i] != lanes[i - 1]]
        got = [(e.merge_timestamp, e.from_lane, e.to_lane) for e in detect_lane_merges(lane_track(lanes))]
        assert got == expected


def scene(n_frames=80, change=40, with_p=True, with_f=True):
    m = [car("1", 10.0 * 0.1 * i, x=LANE_WIDTH, t=100 * i, lane=2 if i < change else 1) for i in range(n_frames)]
    tracks = {"1": m}
    if with_p:
        tracks["2"] = [car("2", 20.0 + i, t=100 * i) for i in range(n_frames)]
        tracks["5"] = [car("5", 60.0 + i, t=100 * i) for i in range(n_frames)]
    if with_f:
        tracks["3"] = [car("3", -20.0 + i, t=100 * i) for i in range(n_frames)]
    return tracks, LaneChangeEvent("1", 100 * change, 2, 1)


class TestExtract:
    def test_window_fits(self):
        tracks, ev = scene()
        inst = extract_merge_instance(ev, FrameIndex(tracks))
        assert isinstance(inst, MergeInstance)
        assert inst.triple.merge_frame_index == 40
        assert (inst.triple.preceding, inst.triple.following) == ("2", "3")
        assert len(inst.frames) == WINDOW
        assert all(b[0].timestamp - a[0].timestamp == 100 for a, b in zip(inst.frames, inst.frames[1:]))
        assert inst.frames[40][0].lane_id == 1 and inst.frames[39][0].lane_id == 2

    def test_truncated(self):
        tracks, _ = scene(change=10)
        out = extract_merge_instance(LaneChangeEvent("1", 1000, 2, 1), FrameIndex(tracks))
        assert isinstance(out, Rejection) and out.reason is RejectReason.TRUNCATED_WINDOW

    def test_no_preceding(self):
        tracks, ev = scene(with_p=False)
        assert extract_merge_instance(ev, FrameIndex(tracks)).reason is RejectReason.NO_PRECEDING

    def test_no_following(self):
        tracks, ev = scene(with_f=False)
        assert extract_merge_instance(ev, FrameIndex(tracks)).reason is RejectReason.NO_FOLLOWING

    def test_equal_distance_tie_goes_to_lower_id(self):
        tracks, ev = scene()
        tracks["12"] = [car("12", 20.0 + i, x=0.5, t=100 * i) for i in range(80)]
        tracks["11"] = [car("11", 20.0 + i, x=-0.5, t=100 * i) for i in range(80)]
        del tracks["2"]
        inst = extract_merge_instance(ev, FrameIndex(tracks))
        assert inst.triple.preceding == "11"

    def test_partner_missing_mid_window(self):
        tracks, ev = scene()
        tracks["2"] = [s for s in tracks["2"] if s.timestamp != 6000]
        assert extract_merge_instance(ev, FrameIndex(tracks)).reason is RejectReason.TRUNCATED_WINDOW


class TestFeasibility:
    def test_behind_follower_is_false(self):
        inst = straight_instance(m_y=-40.0)
        assert not L.label_feasibility(inst, 0)

    def test_wide_slot_is_true(self):
        assert L.label_feasibility(straight_instance(), 40)

    def test_zero_gap_is_false(self):
        inst = straight_instance(m_y=2.0, p_y=4.0, f_y=0.0)
        assert not any(L.feasibility_labels(inst))

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-60, 60), st.floats(-20, 60), st.floats(-60, 20), st.floats(0, 20), st.floats(0, 20))
    def test_false_whenever_m_trails_f(self, m_y, p_y, f_y, vm, vf):
        inst = straight_instance(m_y, p_y, f_y, speeds=(vm, 10.0, vf))
        for i, ok in enumerate(L.feasibility_labels(inst)):
            if inst.m(i).y <= inst.f(i).y:
                assert not ok


class TestAcceleration:
    def test_bins(self):
        assert L.accel_class(0.0) == 9
        assert L.accel_class(4 / 3) == 11  # scalar oracle: [1.0, 1.5) is bin 11
        assert L.accel_class(-99) == 0 and L.accel_class(99) == 18
        assert L.accel_class(4.5) == 18

    def test_zero_acceleration_rule_two(self):
        inst = straight_instance()
        labels = L.feasibility_labels(inst)
        assert L.acceleration_rule(inst, 10, labels) == 2
        assert L.derive_target_acceleration(inst, 10) == 0.0

    def test_mean_of_recorded_rule_two(self):
        acc = [0.0] * WINDOW
        acc[38:41] = [1.0, 1.0, 2.0]
        inst = straight_instance(m_acc=acc)
        a = L.derive_target_acceleration(inst, 38)
        assert a == pytest.approx(4 / 3)
        assert L.accel_class(a) == 11

    def test_rule_three_after_merge(self):
        acc = [0.0] * WINDOW
        acc[40:42] = [0.5, 0.5]
        inst = straight_instance(m_acc=acc)
        assert L.acceleration_rule(inst, 41, L.feasibility_labels(inst)) == 3
        assert L.derive_target_acceleration(inst, 41) == pytest.approx(0.5)

    def test_rule_one_average_speed(self):
        # M trails F at first and catches up at 15 m/s against 10 m/s traffic
        speeds = (15.0, 10.0, 10.0)
        m_speeds = [15.0 - 0.05 * i for i in range(WINDOW)]
        inst = straight_instance(m_y=-45.0, speeds=speeds, m_speeds=m_speeds)
        labels = L.feasibility_labels(inst)
        t_star = labels.index(True)
        assert t_star > 0
        # oracle: mean speed over [0, t*] minus current speed, over the elapsed time
        vbar = sum(m_speeds[: t_star + 1]) / (t_star + 1)
        expected = (vbar - m_speeds[0]) / (0.1 * t_star)
        assert L.acceleration_rule(inst, 0, labels) == 1
        assert L.derive_target_acceleration(inst, 0) == pytest.approx(expected)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-60, 40), st.floats(0, 20))
    def test_rules_partition_frames(self, m_y, vm):
        inst = straight_instance(m_y, speeds=(vm, 10.0, 10.0))
        labels = L.feasibility_labels(inst)
        for i in range(WINDOW):
            rule = L.acceleration_rule(inst, i, labels)
            assert rule in (1, 2, 3)
            if rule == 1:
                assert not labels[i]
            elif rule == 2:
                assert i < inst.triple.merge_frame_index
            else:
                assert i >= inst.triple.merge_frame_index
            assert 0 <= L.accel_class(L.derive_target_acceleration(inst, i, labels=labels)) <= 18


class TestHeading:
    def test_collinear(self):
        assert L.relative_bearing((0.0, 0.0), (0.0, 25.0), (0.0, 1.0)) == 0.0
        assert L.heading_class(0.0) == 6

    def test_ahead_and_left(self):
        h = L.relative_bearing((0.0, 0.0), (-1.0, 10.0), (0.0, 1.0))
        assert h == pytest.approx(-5.710593137499642, abs=1e-12)
        assert L.heading_class(h) == 4

    def test_coincident_target(self):
        assert L.relative_bearing((3.0, 4.0), (3.0, 4.0), (0.0, 1.0)) == 0.0

    def test_clipped(self):
        assert L.heading_class(-90) == 0 and L.heading_class(90) == 12

    @given(st.floats(-100, 100), st.floats(0.1, 100), st.floats(0, 2 * math.pi))
    def test_rotation_invariant(self, lateral, ahead, ang):
        # rotating the scene together with the lane axis leaves the relative bearing unchanged
        c, s = math.cos(ang), math.sin(ang)
        rot = lambda x, y: (c * x + s * y, -s * x + c * y)  # noqa: E731
        base = L.relative_bearing((0.0, 0.0), (lateral, ahead), (0.0, 1.0))
        turned = L.relative_bearing((0.0, 0.0), rot(lateral, ahead), rot(0.0, 1.0))
        assert turned == pytest.approx(base, abs=1e-9)


class TestFeatures:
    def test_hand_assembled(self):
        acc = [0.25] * WINDOW
        inst = straight_instance(m_y=-2.0, p_y=25.0, f_y=-20.0, speeds=(12.0, 10.0, 9.0), m_acc=acc)
        i = 10
        m, p, f = inst.frames[i]
        merge_y = inst.triple.merge_point[1]
        centre = 0.0  # P and F both sit at x = 0; left of north is -x
        expected = (
            m.y - merge_y, -(m.x) - centre, 12.0, 0.25,
            p.y - merge_y, 0.0, 10.0, 0.0,
            f.y - merge_y, 0.0, 9.0, 0.0,
            (p.y - m.y) - 4.0, (m.y - f.y) - 4.0, 10.0 - 12.0, 12.0 - 9.0,
            (merge_y - m.y) / 12.0,
        )
        got = L.build_feature_vector(inst, i)
        assert len(got) == L.N_FEATURES == 17
        assert got == pytest.approx(expected)
        assert got[5] == 0.0 and got[1] == pytest.approx(-LANE_WIDTH)

    def test_symmetric_slot(self):
        inst = straight_instance(m_y=0.0, p_y=20.0, f_y=-20.0)
        v = L.build_feature_vector(inst, 0)
        assert v[12] == v[13]

    def test_degenerate_all_at_merge_point(self):
        inst = straight_instance(m_y=0.0, p_y=0.0, f_y=0.0, speeds=(0.0, 0.0, 0.0))
        v = L.build_feature_vector(inst, 40)
        assert v[0] == v[4] == v[8] == 0.0
        assert v[12] == v[13] == -4.0
        assert v[16] == 0.0

    def test_sample_validation(self):
        with pytest.raises(ValueError):
            L.LabeledSample("a", 0, (0.0,) * 16, True, 0, 0)
        with pytest.raises(ValueError):
            L.LabeledSample("a", 0, (0.0,) * 17, True, 19, 0)
        s = L.LabeledSample("a", 3, tuple(float(i) for i in range(17)), False, 4, 12)
        assert L.LabeledSample.from_json(s.to_json()) == s


class TestSplit:
    @pytest.mark.parametrize("n,expected", [(100, (70, 20, 10)), (10, (7, 2, 1)), (11, (8, 2, 1)), (15, (11, 3, 1))])
    def test_counts(self, n, expected):
        assert split_counts(n) == expected

    def test_too_few(self):
        with pytest.raises(ValueError):
            split_instance_ids([str(i) for i in range(9)], 0)

    def test_deterministic(self):
        ids = [f"v{i}" for i in range(40)]
        assert split_instance_ids(ids, 3) == split_instance_ids(list(reversed(ids)), 3)
        assert split_instance_ids(ids, 3) != split_instance_ids(ids, 4)

    @given(st.integers(10, 300), st.integers(0, 2**32 - 1))
    def test_partition_properties(self, n, seed):
        ids = [f"i{k}" for k in range(n)]
        tr, te, va = split_instance_ids(ids, seed)
        assert sorted(tr + te + va) == sorted(ids)
        assert not (set(tr) & set(te) or set(tr) & set(va) or set(te) & set(va))
        for got, frac in zip((len(tr), len(te), len(va)), (0.7, 0.2, 0.1)):
            assert abs(got - frac * n) <= 1

    def test_instance_atomic(self):
        samples = [(f"inst{k % 13}", k) for k in range(130)]
        parts = split_dataset(samples, 0, key=lambda s: s[0])
        owners = [{s[0] for s in part} for part in parts]
        assert not (owners[0] & owners[1] or owners[0] & owners[2] or owners[1] & owners[2])
        assert sum(len(p) for p in parts) == 130
