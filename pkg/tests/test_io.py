#!/usr/bin/env python3
"""
Test script for PFM / PPM / .xyz files, CSV and JSON-lines logs and result bundles
"""

import json

import numpy as np
import pytest

from helpers.io_helper import (
    ResultBundle,
    append_jsonl,
    read_csv,
    read_depth,
    read_pfm,
    read_ppm,
    read_xyz,
    round_rows,
    verify_bundle,
    write_csv,
    write_depth,
    write_pfm,
    write_ppm,
    write_trajectory,
    write_xyz,
)
from helpers.models import (
    DepthMap,
    FileFormatError,
    ImageBuffer,
    ImageFormatError,
    PFMFormatError,
    PointCloud,
    PointCloudFormatError,
    Pose,
    RoundRecord,
    ViewScore,
)


def test_pfm_keeps_values_and_invalid_pixels(tmp_path):
    values = np.arange(12, dtype=np.float64).reshape(3, 4) + 0.5
    valid = np.ones((3, 4), dtype=bool)
    valid[0, 1] = valid[2, 3] = False
    path = tmp_path / "depth.pfm"
    write_depth(path, DepthMap(values, valid))
    loaded = read_depth(path)
    assert np.array_equal(loaded.valid, valid)
    assert np.array_equal(loaded.values[valid], values[valid])
    raw, _ = read_pfm(path)
    assert np.isneginf(raw[~valid]).all()
    assert not np.isnan(raw).any()


def test_pfm_stores_rows_bottom_up(tmp_path):
    path = tmp_path / "rows.pfm"
    write_pfm(path, np.array([[1.0, 2.0], [3.0, 4.0]]))
    raw = path.read_bytes()
    assert raw.startswith(b"Pf\n2 2\n-1.0\n")
    payload = np.frombuffer(raw[len(b"Pf\n2 2\n-1.0\n"):], dtype="<f4")
    assert payload.tolist() == [3.0, 4.0, 1.0, 2.0]


def test_pfm_reads_big_endian_color(tmp_path):
    path = tmp_path / "color.pfm"
    data = np.array([[[0.0, 0.5, 1.0]]], dtype=">f4")
    path.write_bytes(b"PF\n1 1\n1.0\n" + data.tobytes())
    values, valid = read_pfm(path)
    assert values.shape == (1, 1, 3)
    assert values[0, 0].tolist() == [0.0, 0.5, 1.0]
    assert valid.all()


@pytest.mark.parametrize("content", [
    b"P5\n2 2\n-1.0\n",
    b"Pf\n2 x\n-1.0\n",
    b"Pf\n2 2\nscale\n",
    b"Pf\n2 2\n0\n" + bytes(16),
    b"Pf\n2 2\n-1.0\n" + bytes(8),
    b"Pf\n2",
])
def test_malformed_pfm_is_rejected(tmp_path, content):
    path = tmp_path / "bad.pfm"
    path.write_bytes(content)
    with pytest.raises(PFMFormatError):
        read_pfm(path)


def test_pfm_rejects_unsupported_shapes(tmp_path):
    with pytest.raises(PFMFormatError):
        write_pfm(tmp_path / "bad.pfm", np.zeros((2, 2, 2)))


def test_ppm_quantizes_to_eight_bits(tmp_path):
    values = np.zeros((2, 3, 3))
    values[0, 0] = (1.0, 0.5, 0.0)
    values[1, 2] = (0.2, 0.4, 0.6)
    path = tmp_path / "image.ppm"
    write_ppm(path, ImageBuffer(values, np.ones((2, 3), dtype=bool)))
    assert path.read_bytes().startswith(b"P6\n3 2\n255\n")
    loaded = read_ppm(path)
    assert loaded.shape == (2, 3)
    np.testing.assert_allclose(loaded.values, values, atol=1.0 / 255)


def test_ppm_header_comments_are_skipped(tmp_path):
    path = tmp_path / "comment.ppm"
    path.write_bytes(b"P6\n# made by hand\n1 1\n255\n" + bytes([255, 0, 255]))
    assert read_ppm(path).values[0, 0].tolist() == [1.0, 0.0, 1.0]


@pytest.mark.parametrize("content", [
    b"P6\nab 2\n255\n" + bytes(12),
    b"P6\n-1 1\n255\n",
    b"P3\n1 1\n255\n0 0 0",
    b"P6\n1 1\n65535\n" + bytes(6),
    b"P6\n2 2\n255\n" + bytes(3),
])
def test_unsupported_ppm_is_rejected(tmp_path, content):
    path = tmp_path / "bad.ppm"
    path.write_bytes(content)
    with pytest.raises(ImageFormatError):
        read_ppm(path)


def test_xyz_files(tmp_path):
    points = np.array([[0.0, 1.0, 2.0], [0.125, -3.5, 1e-3]])
    path = tmp_path / "cloud.xyz"
    write_xyz(path, PointCloud(points))
    np.testing.assert_allclose(read_xyz(path).points, points)
    empty = tmp_path / "empty.xyz"
    empty.write_text("")
    assert len(read_xyz(empty)) == 0


@pytest.mark.parametrize("content", ["0 0 0\n1 two 3\n", "0 0\n1 1\n2 2\n", "0 0 nan\n", "0 0 0\n1 1\n"])
def test_malformed_xyz_is_rejected(tmp_path, content):
    path = tmp_path / "bad.xyz"
    path.write_text(content)
    with pytest.raises(PointCloudFormatError):
        read_xyz(path)


def test_csv_has_a_schema_line_and_blank_missing_values(tmp_path):
    path = tmp_path / "table.csv"
    write_csv(path, ("view_id", "score"), [("a", 1.5), ("b", None)])
    assert path.read_text(encoding="utf-8") == "# schema=1\nview_id,score\na,1.5\nb,\n"
    columns, rows = read_csv(path)
    assert columns == ["view_id", "score"]
    assert rows == [["a", "1.5"], ["b", ""]]
    path.write_text("view_id,score\n", encoding="utf-8")
    with pytest.raises(FileFormatError):
        read_csv(path)


def test_jsonl_appends_sorted_records(tmp_path):
    path = tmp_path / "log.jsonl"
    append_jsonl(path, {"b": 2, "a": 1})
    append_jsonl(path, {"a": 3})
    assert path.read_text(encoding="utf-8").splitlines() == ['{"a": 1, "b": 2}', '{"a": 3}']


def sample_records():
    pose = Pose.look_at((1.0, 2.0, 3.0), (0.0, 0.0, 0.0))
    return [
        RoundRecord(1, "v1", [ViewScore("v1", 2.0, 0.9), ViewScore("v2", 1.0, 0.5)], {"psnr": 30.0}, pose),
        RoundRecord(2, "v2", [ViewScore("v2", 0.5, 0.7)], {"psnr": 31.0}),
    ]


def test_round_rows_and_trajectory(tmp_path):
    rows = round_rows(sample_records(), ["psnr", "ssim"])
    assert rows == [[1, "v1", 2.0, 0.9, 30.0, None], [2, "v2", 0.5, 0.7, 31.0, None]]
    path = tmp_path / "trajectory.json"
    write_trajectory(path, sample_records())
    poses = json.loads(path.read_text(encoding="utf-8"))["poses"]
    assert [p["view_id"] for p in poses] == ["v1"]
    np.testing.assert_allclose(poses[0]["translation"], [1.0, 2.0, 3.0])


def test_round_record_serializes_sorted_metrics():
    data = sample_records()[0].to_dict()
    assert list(data) == ["round", "selected_view", "scores", "metrics_after_fit", "selected_pose"]
    assert data["scores"][1] == {"view_id": "v2", "score": 1.0, "covered_fraction": 0.5}


def test_result_bundle_summary_and_verification(tmp_path):
    bundle = ResultBundle(tmp_path, '{"seed": 0}', "render")
    bundle.path("renders/a.txt").write_text("alpha")
    bundle.path("b.txt").write_text("beta")
    bundle.path("never_written.txt")
    summary_path = bundle.finalize(1.25, {"views": 1})
    summary = json.loads(summary_path.read_text(encoding="utf-8"))
    assert summary["command"] == "render"
    assert summary["views"] == 1
    assert summary["wall_time_seconds"] == 1.25
    assert [entry["path"] for entry in summary["files"]] == ["b.txt", "renders/a.txt"]
    assert summary["files"][0]["bytes"] == 4
    assert len(summary["config_sha256"]) == 64
    assert verify_bundle(tmp_path) == []
    (tmp_path / "b.txt").write_text("tampered")
    assert verify_bundle(tmp_path) == ["b.txt"]


def test_fresh_removes_stale_logs(tmp_path):
    (tmp_path / "rounds.jsonl").write_text("old\n")
    bundle = ResultBundle(tmp_path, "{}", "active-loop")
    assert not bundle.fresh("rounds.jsonl").exists()
