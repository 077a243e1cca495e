"""Tests for rally statistics, chart payloads, hit detection and speed estimates."""

from collections import Counter

import numpy as np
import pytest

from src.court_geometry import Homography
from src.detection_decoder import BallDetection
from src.errors import SpecificationError
from src.rally_analytics import (
    BALL_TYPES,
    BallType,
    Rally,
    Stroke,
    Trajectory,
    ball_type_chart,
    ball_type_distribution,
    detect_hit_times,
    estimate_court_speed,
    estimate_speed,
    loss_reason_chart,
    loss_reason_distribution,
    losing_streaks,
    radar_chart,
    rally_radar_data,
    rally_series,
    stroke_count_per_rally,
)


def rally(rally_id="r1", strokes=(), winner="top", reason="net", start=0, end=1000) -> Rally:
    built = []
    for i, spec in enumerate(strokes):
        player, ball_type = spec
        built.append(Stroke(hit_frame=start + 10 * (i + 1), player=player, ball_type=BallType.parse(ball_type)))
    return Rally(rally_id, start, end, tuple(built), winner, reason)


def trajectory(points, fps=30.0, missing=()) -> Trajectory:
    detections = [
        BallDetection.absent(f) if f in missing else BallDetection.at(f, x, y) for f, (x, y) in enumerate(points)
    ]
    return Trajectory.from_detections(detections, fps)


def triangle_wave(n_frames: int, period: int, amplitude: float = 5.0):
    """Vertical zig-zag; returns points and the frames where the direction flips."""
    points, y = [], 200.0
    for f in range(n_frames):
        points.append((100.0 + 3.0 * f, y))
        going_down = (f // period) % 2 == 0
        y += amplitude if going_down else -amplitude
    flips = list(range(period, n_frames - 1, period))
    return points, flips


class TestBallType:
    def test_canonical_order(self):
        assert [b.value for b in BALL_TYPES] == ["cut", "drive", "lob", "long", "netplay", "rush", "smash"]

    def test_parse_is_case_insensitive(self):
        assert BallType.parse(" Smash ") is BallType.SMASH

    def test_unknown_type(self):
        with pytest.raises(SpecificationError):
            BallType.parse("clear")


class TestRallyInvariants:
    def test_valid(self):
        assert rally(strokes=[("top", "lob"), ("bottom", "smash")]).problems() == []

    def test_same_player_twice(self):
        assert rally(strokes=[("top", "lob"), ("top", "smash")]).problems()

    def test_hit_outside_range(self):
        r = Rally("r", 0, 5, (Stroke(9, "top", BallType.LOB),), "top", "net")
        assert any("outside" in p for p in r.problems())


class TestRallyStatistics:
    def test_empty_match(self):
        assert stroke_count_per_rally([]) == []
        assert loss_reason_distribution([]) == {}
        assert rally_series([]) == []

    def test_seven_strokes(self):
        r = rally("r7", [("top", "lob"), ("bottom", "drive")] * 3 + [("top", "smash")], winner="top")
        [count] = stroke_count_per_rally([r])
        assert (count.rally_id, count.stroke_count, count.winner) == ("r7", 7, "top")

    def test_empty_distribution_is_flagged(self):
        hist = ball_type_distribution([rally()])
        assert hist.is_empty
        assert hist.fractions is None
        assert hist.as_list() == [0] * 7

    def test_smash_only(self):
        r = rally(strokes=[("top", "smash"), ("bottom", "smash")] * 5)
        assert ball_type_distribution([r]).fractions[BallType.SMASH] == 1.0

    def test_net_losses(self):
        match = [rally(f"r{i}", winner="top", reason="net") for i in range(3)]
        assert loss_reason_distribution(match) == {("bottom", "net"): 3}

    def test_radar(self):
        r = rally(strokes=[("top", "smash"), ("bottom", "lob"), ("top", "smash"), ("bottom", "lob"), ("top", "drive")])
        radar = rally_radar_data(r)
        assert radar.top == [0, 1, 0, 0, 0, 0, 2]
        assert radar.bottom == [0, 0, 2, 0, 0, 0, 0]
        assert rally_radar_data(rally()).top == [0] * 7

    def test_against_brute_force_tallies(self, match_factory):
        for _ in range(50):
            match = match_factory(8)
            assert [(c.rally_id, c.stroke_count, c.winner) for c in stroke_count_per_rally(match)] == [
                (r.rally_id, len(r.strokes), r.winner) for r in match
            ]
            for player in (None, "top", "bottom"):
                tally = Counter()
                for r in match:
                    for s in r.strokes:
                        if player is None or s.player == player:
                            tally[s.ball_type] += 1
                assert ball_type_distribution(match, player).as_list() == [tally[b] for b in BALL_TYPES]
            losses = Counter()
            for r in match:
                losses[("bottom" if r.winner == "top" else "top", r.loss_reason)] += 1
            assert loss_reason_distribution(match) == dict(losses)
            for r in match:
                radar = rally_radar_data(r)
                total = ball_type_distribution([r]).as_list()
                assert [a + b for a, b in zip(radar.top, radar.bottom)] == total
            radars = [rally_radar_data(r) for r in match]
            assert [sum(col) for col in zip(*(r.top for r in radars))] == ball_type_distribution(match, "top").as_list()
            assert [sum(col) for col in zip(*(r.bottom for r in radars))] == ball_type_distribution(
                match, "bottom"
            ).as_list()

    def test_fractions_sum_to_one(self, match_factory):
        match = match_factory(10)
        fractions = ball_type_distribution(match).fractions
        assert sum(fractions.values()) == pytest.approx(1.0)


class TestLosingStreaks:
    def test_streak_with_reasons(self):
        winners = ["top", "top", "top", "bottom", "bottom"]
        reasons = ["net", "out", "net", "fault", "net"]
        match = [rally(f"r{i}", winner=w, reason=r) for i, (w, r) in enumerate(zip(winners, reasons))]
        [streak] = losing_streaks(match, min_length=3)
        assert (streak.player, streak.first_rally, streak.last_rally, streak.length) == ("bottom", "r0", "r2", 3)
        assert streak.reasons == {"net": 2, "out": 1}

    def test_streak_at_end_of_match(self):
        match = [rally(f"r{i}", winner="bottom") for i in range(4)]
        assert [s.length for s in losing_streaks(match, 2)] == [4]


class TestCharts:
    def test_ball_type_chart(self):
        r = rally(strokes=[("top", "smash"), ("bottom", "cut")])
        chart = ball_type_chart([r])
        assert chart["labels"][0] == "cut"
        assert chart["series"] == {"top": [0, 0, 0, 0, 0, 0, 1], "bottom": [1, 0, 0, 0, 0, 0, 0]}

    def test_loss_reason_chart(self):
        match = [rally("a", winner="top", reason="out"), rally("b", winner="bottom", reason="net")]
        chart = loss_reason_chart(match, ["net", "out"])
        assert chart == {"labels": ["net", "out"], "series": {"top": [1, 0], "bottom": [0, 1]}}

    def test_radar_and_series(self):
        r = rally("x", [("top", "lob")], winner="bottom")
        assert radar_chart(r)["axes"] == [b.value for b in BALL_TYPES]
        assert rally_series([r]) == [{"rally_id": "x", "count": 1, "winner": "bottom"}]


class TestHitDetection:
    def test_straight_line_has_no_hits(self):
        points = [(10.0 + 4 * f, 50.0 + 2 * f) for f in range(60)]
        assert detect_hit_times(trajectory(points)) == []

    def test_triangle_wave(self):
        points, flips = triangle_wave(100, 20)
        hits = detect_hit_times(trajectory(points))
        assert len(hits) == len(flips)
        for hit, flip in zip(hits, flips):
            assert abs(hit - flip) <= 1

    def test_gap_across_reversal(self):
        points, flips = triangle_wave(60, 20)
        hits = detect_hit_times(trajectory(points, missing={20, 21}))
        assert len(hits) == len(flips)
        for hit, flip in zip(hits, flips):
            assert abs(hit - flip) <= 1

    def test_triangle_wave_family(self, rng):
        for _ in range(20):
            period = int(rng.integers(8, 25))
            points, flips = triangle_wave(5 * period + 1, period, float(rng.uniform(3, 9)))
            missing = set()
            if rng.random() < 0.5:
                gap_start = flips[int(rng.integers(len(flips)))] - 1
                missing = {gap_start, gap_start + 1}
            hits = detect_hit_times(trajectory(points, missing=missing))
            assert len(hits) == len(flips)
            assert all(abs(h - f) <= 1 for h, f in zip(hits, flips))

    def test_too_few_detections(self, caplog):
        assert detect_hit_times(trajectory([(1.0, 1.0), (2.0, 2.0)])) == []
        assert "at least 3" in caplog.text


class TestSpeed:
    def test_static_ball(self):
        assert all(s == 0 for _, s in estimate_speed(trajectory([(5.0, 5.0)] * 10)))

    def test_constant_velocity(self):
        speeds = estimate_speed(trajectory([(10.0 * f, 0.0) for f in range(10)], fps=30.0))
        assert [f for f, _ in speeds] == list(range(10))
        assert all(s == pytest.approx(300.0) for _, s in speeds)

    def test_matches_finite_differences(self, rng):
        points = np.cumsum(rng.normal(0, 4, size=(40, 2)), axis=0)
        speeds = dict(estimate_speed(trajectory([tuple(p) for p in points], fps=25.0)))
        for f in range(1, 39):
            expected = np.hypot(*(points[f + 1] - points[f - 1])) / 2 * 25.0
            assert speeds[f] == pytest.approx(expected, rel=1e-9)
        assert speeds[0] == pytest.approx(np.hypot(*(points[1] - points[0])) * 25.0, rel=1e-9)

    def test_long_gap_breaks_samples(self):
        detections = [BallDetection.at(0, 0, 0), BallDetection.at(10, 50, 0)]
        assert estimate_speed(Trajectory.from_detections(detections, 30.0)) == []

    def test_court_speed(self, caplog):
        h = Homography(np.diag([0.01, 0.01, 1.0]))
        speeds = estimate_court_speed(trajectory([(100.0 * f, 0.0) for f in range(5)], fps=10.0), h)
        assert all(s == pytest.approx(10.0) for _, s in speeds)
        assert "approximate" in caplog.text

    def test_trajectory_needs_increasing_frames(self):
        with pytest.raises(SpecificationError):
            Trajectory((BallDetection.absent(3), BallDetection.absent(3)), 30.0)
