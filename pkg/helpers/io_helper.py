"""
File formats: PFM maps, binary PPM images, .xyz point clouds, versioned CSV,
JSON-lines round logs and the result bundle summary.
"""

import csv
import hashlib
import json
import os
import re
import subprocess
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from rich.console import Console

from helpers import __version__
from helpers.models import (
    DepthMap,
    FileFormatError,
    ImageBuffer,
    ImageFormatError,
    PFMFormatError,
    PointCloud,
    PointCloudFormatError,
    RoundRecord,
    UncertaintyMap,
)

console = Console(stderr=True)

CSV_SCHEMA = 1
_PPM_TOKEN = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)")
SCORE_COLUMNS = ("view_id", "score", "covered_fraction")
ROUND_COLUMNS = ("round", "selected_view", "score", "covered_fraction")


# PFM: little-endian float32, rows stored bottom-up; invalid pixels are -inf


def write_pfm(path, values: np.ndarray, valid: Optional[np.ndarray] = None) -> None:
    values = np.asarray(values, dtype=np.float32)
    if values.ndim == 2:
        magic = b"Pf"
    elif values.ndim == 3 and values.shape[2] == 3:
        magic = b"PF"
    else:
        raise PFMFormatError(f"PFM holds H×W or H×W×3 maps, got shape {values.shape}")
    if valid is not None:
        mask = np.asarray(valid, dtype=bool)
        values = np.where(mask[..., None] if values.ndim == 3 else mask, values, np.float32(-np.inf))
    height, width = values.shape[:2]
    with open(path, "wb") as f:
        f.write(magic + b"\n")
        f.write(f"{width} {height}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(values[::-1]).astype("<f4").tobytes())


def _header_token(stream) -> bytes:
    line = stream.readline()
    if not line.endswith(b"\n"):
        raise PFMFormatError("truncated PFM header")
    return line.strip()


def read_pfm(path) -> Tuple[np.ndarray, np.ndarray]:
    """Returns (values, valid); invalid entries are the -inf pixels."""
    with open(path, "rb") as f:
        magic = _header_token(f)
        if magic not in (b"Pf", b"PF"):
            raise PFMFormatError(f"{path}: bad PFM magic {magic[:8]!r}")
        size = _header_token(f).split()
        if len(size) != 2 or not all(re.fullmatch(rb"\d+", token) for token in size):
            raise PFMFormatError(f"{path}: bad PFM size line")
        width, height = int(size[0]), int(size[1])
        try:
            scale = float(_header_token(f))
        except ValueError as e:
            raise PFMFormatError(f"{path}: bad PFM scale") from e
        if scale == 0:
            raise PFMFormatError(f"{path}: PFM scale must be non-zero")
        channels = 3 if magic == b"PF" else 1
        count = width * height * channels
        payload = f.read()
    if len(payload) < 4 * count:
        raise PFMFormatError(f"{path}: truncated PFM payload ({len(payload)} of {4 * count} bytes)")
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(payload[:4 * count], dtype=dtype).astype(np.float32)
    shape = (height, width, 3) if channels == 3 else (height, width)
    values = data.reshape(shape)[::-1].copy()
    invalid = np.isneginf(values)
    valid = ~invalid.any(axis=-1) if channels == 3 else ~invalid
    return values, valid


def write_depth(path, depth: DepthMap) -> None:
    write_pfm(path, depth.values, depth.valid)


def read_depth(path) -> DepthMap:
    values, valid = read_pfm(path)
    if values.ndim != 2:
        raise PFMFormatError(f"{path}: depth maps are single-channel")
    return DepthMap(np.where(valid, values, 0.0), valid)


def write_uncertainty(path, umap: UncertaintyMap) -> None:
    write_pfm(path, umap.values, umap.valid)


# PPM: binary P6, 8 bits per channel


def write_ppm(path, image: ImageBuffer) -> None:
    height, width = image.shape
    pixels = np.where(image.valid[..., None], image.values, 0.0)
    raster = np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        f.write(raster.tobytes())


def read_ppm(path) -> ImageBuffer:
    with open(path, "rb") as f:
        data = f.read()
    # header: magic, width, height, maxval separated by whitespace; comments start with '#'
    tokens: List[bytes] = []
    position = 0
    while len(tokens) < 4:
        match = _PPM_TOKEN.match(data, position)
        if match is None:
            raise ImageFormatError(f"{path}: truncated PPM header")
        tokens.append(match.group(2))
        position = match.end()
    if tokens[0] != b"P6":
        raise ImageFormatError(f"{path}: only binary P6 images are supported")
    if not all(re.fullmatch(rb"\d+", token) for token in tokens[1:]):
        header = b" ".join(tokens[1:])[:32]
        raise ImageFormatError(f"{path}: bad PPM header {header!r}")
    width, height, maxval = (int(token) for token in tokens[1:])
    if width == 0 or height == 0:
        raise ImageFormatError(f"{path}: empty PPM image")
    if maxval != 255:
        raise ImageFormatError(f"{path}: only 8-bit PPM is supported")
    raster = data[position + 1:position + 1 + width * height * 3]
    if len(raster) < width * height * 3:
        raise ImageFormatError(f"{path}: truncated PPM raster")
    values = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3) / 255.0
    return ImageBuffer(values, np.ones((height, width), dtype=bool))


# Point clouds


def write_xyz(path, cloud: PointCloud) -> None:
    np.savetxt(path, cloud.points, fmt="%.9g")


def read_xyz(path) -> PointCloud:
    """Whitespace-separated x y z rows; extra columns (normals, colors) are ignored."""
    try:
        points = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except ValueError as e:
        raise PointCloudFormatError(f"{path}: {e}") from e
    if points.size == 0:
        return PointCloud(np.zeros((0, 3)))
    if points.shape[1] < 3:
        raise PointCloudFormatError(f"{path}: rows need x y z, got {points.shape[1]} columns")
    if not np.all(np.isfinite(points[:, :3])):
        raise PointCloudFormatError(f"{path}: non-finite coordinates")
    return PointCloud(points[:, :3])


# Tables and logs


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# schema={CSV_SCHEMA}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow(["" if value is None else value for value in row])


def read_csv(path) -> Tuple[List[str], List[List[str]]]:
    with open(path, newline="", encoding="utf-8") as f:
        first = f.readline()
        if not first.startswith("# schema="):
            raise FileFormatError(f"{path}: missing schema line")
        reader = csv.reader(f)
        columns = next(reader)
        return columns, [row for row in reader]


def append_jsonl(path, record: Dict) -> None:
    with open(path, "a", encoding="utf-8") as f:
        f.write(json.dumps(record, sort_keys=True) + "\n")


def round_rows(records: Sequence[RoundRecord], metric_names: Sequence[str]) -> List[List]:
    rows = []
    for record in records:
        chosen = next((s for s in record.scores if s.view_id == record.selected_view), None)
        rows.append([record.round, record.selected_view,
                     chosen.score if chosen else None, chosen.covered_fraction if chosen else None]
                    + [record.metrics_after_fit.get(name) for name in metric_names])
    return rows


def write_trajectory(path, records: Sequence[RoundRecord]) -> None:
    poses = [
        {
            "round": record.round,
            "view_id": record.selected_view,
            "rotation": record.selected_pose.rotation.tolist(),
            "translation": record.selected_pose.translation.tolist(),
        }
        for record in records if record.selected_pose is not None
    ]
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"poses": poses}, f, indent=2, sort_keys=True)
        f.write("\n")


# Result bundle


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def describe_version() -> str:
    """`git describe` when run from a checkout, the package version otherwise."""
    try:
        result = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"],
                                cwd=os.path.dirname(os.path.abspath(__file__)),
                                capture_output=True, text=True, timeout=5)
    except (OSError, subprocess.SubprocessError):
        result = None
    if result is not None and result.returncode == 0 and result.stdout.strip():
        return result.stdout.strip()
    return f"v{__version__}"


class ResultBundle:
    """Tracks every file an experiment writes and seals them into summary.json."""

    SUMMARY = "summary.json"

    def __init__(self, out_dir, config_text: str, command: str):
        self.out_dir = Path(out_dir)
        self.config_hash = hashlib.sha256(config_text.encode("utf-8")).hexdigest()
        self.command = command
        self.files: List[Path] = []

    def path(self, name: str) -> Path:
        target = self.out_dir / name
        target.parent.mkdir(parents=True, exist_ok=True)
        if target not in self.files:
            self.files.append(target)
        return target

    def fresh(self, name: str) -> Path:
        """Like `path`, but removes a stale file left by a previous run (for append-only logs)."""
        target = self.path(name)
        if target.exists():
            target.unlink()
        return target

    def finalize(self, wall_time: float, extra: Optional[Dict] = None) -> Path:
        entries = [
            {"path": f.relative_to(self.out_dir).as_posix(), "sha256": sha256_file(f), "bytes": f.stat().st_size}
            for f in self.files if f.exists()
        ]
        summary = {
            "command": self.command,
            "config_sha256": self.config_hash,
            "version": describe_version(),
            "wall_time_seconds": wall_time,
            "files": sorted(entries, key=lambda entry: entry["path"]),
        }
        if extra:
            summary.update(extra)
        target = self.out_dir / self.SUMMARY
        with open(target, "w", encoding="utf-8") as f:
            json.dump(summary, f, indent=2, sort_keys=True)
            f.write("\n")
        console.print(f"[green]✓ Results saved to: {self.out_dir} ({len(entries)} files)[/green]")
        return target


def verify_bundle(out_dir) -> List[str]:
    """Files listed in summary.json that are missing or no longer match their checksum."""
    out_dir = Path(out_dir)
    with open(out_dir / ResultBundle.SUMMARY, encoding="utf-8") as f:
        summary = json.load(f)
    problems = []
    for entry in summary["files"]:
        target = out_dir / entry["path"]
        if not target.exists() or sha256_file(target) != entry["sha256"]:
            problems.append(entry["path"])
    return problems
