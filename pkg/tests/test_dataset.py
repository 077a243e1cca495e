"""Tests for dataset loading, validation and saving."""

import json

import pytest

from src.dataset import MatchDataset, load_dataset, save_dataset, validate_dataset
from src.errors import DatasetValidationError
from src.heatmap_codec import rescale_point


def snapshot(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def write_meta(root, **extra):
    root.mkdir(parents=True, exist_ok=True)
    meta = {"schema_version": 1, "original_resolution": [1280, 720], "working_resolution": [640, 480], "fps": 30}
    meta.update(extra)
    (root / "meta.json").write_text(json.dumps(meta), encoding="utf-8")


def replace_line(path, index, text):
    lines = path.read_text(encoding="utf-8").splitlines()
    lines[index] = text
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


class TestLoad:
    def test_example_is_valid(self, example_dataset):
        assert validate_dataset(example_dataset) == []

    def test_meta_only_dataset(self, tmp_path):
        write_meta(tmp_path / "m")
        dataset = load_dataset(tmp_path / "m")
        assert dataset.frames == {} and dataset.rallies == []
        assert dataset.fps == 30.0

    def test_missing_meta(self, tmp_path):
        (tmp_path / "m").mkdir()
        [violation] = validate_dataset(tmp_path / "m")
        assert violation.file == "meta.json"

    def test_coordinates_rescaled_to_working_grid(self, example_dataset):
        dataset = load_dataset(example_dataset)
        slot, box = dataset.frames[0].boxes[0]
        assert slot == "bottom"
        assert (box.x, box.y, box.w, box.h) == pytest.approx((280.0, 60.0, 40.0, 80.0))
        assert dataset.frames[0].ball.position == pytest.approx((100.0, 180.0))

    def test_rescaling_follows_meta_resolutions(self, tmp_path):
        root = tmp_path / "m"
        write_meta(root, original_resolution=[1920, 1080])
        (root / "boxes.csv").write_text("frame,player_slot,x,y,w,h,score\n0,top,960,540,96,108,0.9\n", encoding="utf-8")
        dataset = load_dataset(root)
        _, box = dataset.frames[0].boxes[0]
        assert (box.x, box.y) == rescale_point((960, 540), (1920, 1080), (640, 480)) == (320.0, 240.0)
        assert (box.w, box.h) == pytest.approx((32.0, 48.0))
        assert dataset.to_original((box.x, box.y)) == pytest.approx((960.0, 540.0))

    def test_invisible_ball_is_absent(self, example_dataset):
        detections = {d.frame: d for d in load_dataset(example_dataset).ball_detections()}
        assert not detections[7].found
        assert detections[8].found

    def test_rallies_and_heatmaps(self, example_dataset):
        dataset = load_dataset(example_dataset)
        assert [r.rally_id for r in dataset.rallies] == ["r001", "r002"]
        assert [s.hit_frame for s in dataset.rallies[1].strokes] == [21, 30]
        assert sorted(dataset.heatmaps) == [0, 1, 2, 3, 4]

    def test_configured_vocabulary_used_without_meta_list(self, tmp_path):
        root = tmp_path / "m"
        write_meta(root)
        (root / "rallies.csv").write_text("rally_id,start_frame,end_frame,winner,loss_reason\nr1,0,9,top,let\n")
        assert validate_dataset(root)
        assert validate_dataset(root, loss_reasons=["let"]) == []


class TestViolations:
    def test_stroke_outside_rally(self, example_dataset):
        with open(example_dataset / "strokes.csv", "a", encoding="utf-8") as f:
            f.write("r001,18,top,lob\n")
        [violation] = validate_dataset(example_dataset)
        assert violation.file == "strokes.csv"
        assert violation.line == 6
        assert "r001" in violation.message and "18" in violation.message

    def test_line_and_column_reported(self, example_dataset):
        replace_line(example_dataset / "ball.csv", 2, "1,2,212.00,270.00")
        [violation] = validate_dataset(example_dataset)
        assert (violation.file, violation.line, violation.column) == ("ball.csv", 3, "visible")

    def test_every_violation_collected(self, example_dataset):
        replace_line(example_dataset / "ball.csv", 2, "1,2,212.00,270.00")
        replace_line(example_dataset / "boxes.csv", 1, "0,middle,560.00,90.00,80.00,120.00,1")
        violations = validate_dataset(example_dataset)
        assert {v.file for v in violations} == {"ball.csv", "boxes.csv"}
        with pytest.raises(DatasetValidationError) as e:
            load_dataset(example_dataset)
        assert len(e.value.violations) == len(violations)

    def test_overlapping_rallies(self, example_dataset):
        replace_line(example_dataset / "rallies.csv", 2, "r002,10,39,top,out")
        assert any(v.column == "start_frame" for v in validate_dataset(example_dataset))

    def test_unknown_loss_reason(self, example_dataset):
        replace_line(example_dataset / "rallies.csv", 1, "r001,0,15,top,shuttle")
        assert any(v.column == "loss_reason" for v in validate_dataset(example_dataset))

    def test_same_player_twice(self, example_dataset):
        replace_line(example_dataset / "strokes.csv", 2, "r001,9,bottom,smash")
        assert any("r001" in v.message for v in validate_dataset(example_dataset))

    def test_wrong_keypoint_count(self, example_dataset):
        path = example_dataset / "skeletons.jsonl"
        lines = path.read_text(encoding="utf-8").splitlines()
        record = json.loads(lines[0])
        record["keypoints"] = record["keypoints"][:3]
        lines[0] = json.dumps(record)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        [violation] = validate_dataset(example_dataset)
        assert (violation.file, violation.line) == ("skeletons.jsonl", 1)

    def test_bad_header(self, example_dataset):
        replace_line(example_dataset / "boxes.csv", 0, "frame,slot,x,y,w,h,score")
        [violation] = validate_dataset(example_dataset)
        assert violation.line == 1

    def test_heatmap_name(self, example_dataset):
        (example_dataset / "heatmaps" / "first.pgm").write_bytes(b"")
        assert [v.file for v in validate_dataset(example_dataset)] == ["heatmaps/first.pgm"]

    def test_validation_only_reads(self, example_dataset):
        replace_line(example_dataset / "ball.csv", 2, "1,2,212.00,270.00")
        before = snapshot(example_dataset)
        validate_dataset(example_dataset)
        assert snapshot(example_dataset) == before


class TestSave:
    def test_round_trip_is_byte_identical(self, example_dataset, tmp_path):
        copy = save_dataset(load_dataset(example_dataset), tmp_path / "copy")
        assert snapshot(copy) == snapshot(example_dataset)

    def test_resave_is_stable(self, example_dataset, tmp_path):
        first = save_dataset(load_dataset(example_dataset), tmp_path / "a")
        second = save_dataset(load_dataset(first), tmp_path / "b")
        assert snapshot(first) == snapshot(second)

    def test_empty_dataset_writes_meta_only(self, tmp_path):
        root = save_dataset(MatchDataset(), tmp_path / "empty")
        assert list(snapshot(root)) == ["meta.json"]
        assert validate_dataset(root) == []
