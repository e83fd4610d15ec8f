#!/usr/bin/env python3
"""
Test script for config loading, validation and output directory resolution
"""

import json

import pytest

from helpers.config_helper import (
    DEFAULTS,
    OUTPUT_DIR_ENV,
    ExperimentConfig,
    ensure_output_directory,
    load_config,
    parse_config,
    resolve_output_directory,
    save_config,
    serialize_config,
)
from helpers.models import ConfigError


def sample_config():
    return {
        "camera": {"width": 32, "height": 24, "fx": 30.0, "fy": 30.0},
        "scene": {"primitives": [{"kind": "sphere", "radius": 0.5}, {"kind": "plane", "offset": -0.5}]},
        "backend": {"kind": "degraded", "degradation": {"depth_bias": 0.1, "deleted_primitives": [1]}},
        "loop": {"rounds": 3, "refine": {"enabled": True, "k": 2}},
        "policy": {"kind": "random", "seed": 9},
    }


def test_defaults():
    config = ExperimentConfig()
    assert config.output_dir == DEFAULTS["output_dir"]
    assert config.seed == 0 and config.threads == 1
    assert config.candidates.kind == "sphere"
    assert config.policy_seed == 0


def test_parse_sample_config():
    config = parse_config(json.dumps(sample_config()))
    assert config.camera.width == 32 and config.camera.cx is None
    assert config.scene.primitives[1].kind == "plane"
    assert config.backend.degradation.deleted_primitives == (1,)
    assert config.loop.refine.enabled and config.loop.refine.k == 2
    assert config.policy_seed == 9


def test_integers_are_accepted_for_floats():
    config = parse_config('{"camera": {"fx": 40, "fy": 40}}')
    assert isinstance(config.camera.fx, float)


@pytest.mark.parametrize("text, field", [
    ('{"loop": {"roundz": 2}}', "loop.roundz"),
    ('{"camera": {"width": "wide"}}', "camera.width"),
    ('{"camera": {"width": 3.5}}', "camera.width"),
    ('{"loop": {"warm_start": 1}}', "loop.warm_start"),
    ('{"loop": {"rounds": 0}}', "loop.rounds"),
    ('{"eval": {"look_at": [0, 0]}}', "eval.look_at"),
    ('{"scene": {"primitives": [{"kind": "cone"}]}}', "scene.primitives[0].kind"),
    ('{"policy": {"kind": "greedy"}}', "policy.kind"),
    ('{"threads": 0}', "threads"),
    ('{"loop": {"num_initial": 0}}', "loop.num_initial"),
    ('{"loop": {"refine": {"enabled": true, "iters": 0}}}', "loop.refine.iters"),
    ('{"candidates": {"kind": "ring", "count": 0}}', "candidates.count"),
    ('{"metrics": {"num_bins": 1}}', "metrics.num_bins"),
    ('{"backend": {"voxel": {"ray_batch": 0}}}', "backend.voxel.ray_batch"),
    ('{"backend": {"cache_size": -1}}', "backend.cache_size"),
    ('{"candidates": {"kind": "explicit", "poses": [{"id": "a", "rotation": [[1, 0, 0], [0, 2, 0], [0, 0, 1]], '
     '"translation": [0, 0, 3]}]}}', "candidates.poses[0].rotation"),
    ('{"initial": {"kind": "explicit", "poses": [{"id": "a", "rotation": [[1, 0, 0], [0, 1, 0], [0, 0, -1]], '
     '"translation": [0, 0, 3]}]}}', "initial.poses[0].rotation"),
])
def test_errors_name_the_offending_field(text, field):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.field == field
    assert field in str(info.value)


def test_syntax_errors_carry_a_position():
    with pytest.raises(ConfigError) as info:
        parse_config('{\n  "seed": 1,\n  oops\n}')
    assert info.value.line == 3
    assert info.value.column is not None


def test_explicit_rotation_is_accepted():
    config = parse_config('{"candidates": {"kind": "explicit", "poses": [{"id": "a", '
                          '"rotation": [[0, -1, 0], [1, 0, 0], [0, 0, 1]], "translation": [0, 0, 3]}]}}')
    assert config.candidates.poses[0].rotation[0] == (0.0, -1.0, 0.0)


def test_cross_field_checks():
    data = sample_config()
    data["backend"]["degradation"]["deleted_primitives"] = [5]
    with pytest.raises(ConfigError, match="no primitive at index 5"):
        parse_config(json.dumps(data))
    with pytest.raises(ConfigError, match="scene.checkpoint"):
        parse_config('{"ground_truth": {"kind": "voxel"}}')


def test_serialized_config_parses_back(tmp_path):
    config = parse_config(json.dumps(sample_config()))
    path = tmp_path / "config.json"
    save_config(config, path)
    assert path.read_text(encoding="utf-8") == serialize_config(config)
    assert load_config(path) == config


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(tmp_path / "absent.json")


def test_checkpoint_is_resolved_next_to_the_config(tmp_path):
    (tmp_path / "field.vox").write_bytes(b"placeholder")
    path = tmp_path / "config.json"
    path.write_text('{"scene": {"checkpoint": "field.vox"}}', encoding="utf-8")
    assert load_config(path).scene.checkpoint == str(tmp_path / "field.vox")
    path.write_text('{"scene": {"checkpoint": "gone.vox"}}', encoding="utf-8")
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.field == "scene.checkpoint"


def test_output_directory_precedence(tmp_path, monkeypatch):
    config = ExperimentConfig(output_dir=str(tmp_path / "from_config"))
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)
    assert resolve_output_directory(config) == tmp_path / "from_config"
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "from_env"))
    assert resolve_output_directory(config) == tmp_path / "from_env"
    assert resolve_output_directory(config, str(tmp_path / "from_flag")) == tmp_path / "from_flag"


def test_ensure_output_directory_creates_it(tmp_path, monkeypatch):
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)
    target = tmp_path / "nested" / "out"
    assert ensure_output_directory(ExperimentConfig(), str(target)) == str(target)
    assert target.is_dir()
