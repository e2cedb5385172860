"""Tests for pipeline configuration loading."""

from pathlib import Path

import pytest
import yaml

from pgrules.config import (
    DEFAULT_LAYERS,
    LAYER_CAWAL,
    PipelineConfig,
    config_from_dict,
    default_bindings,
    dump_config,
    load_config,
)
from pgrules.errors import ConfigError


def write_yaml(tmp_path, text, name="config.yaml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestDefaults:
    def test_published_setup(self):
        cfg = PipelineConfig()
        assert cfg.layers == DEFAULT_LAYERS
        assert (cfg.rf, cfg.cawal_threshold, cfg.hwad_alpha, cfg.hwad_gamma) == (
            0.6,
            0.3,
            0.5,
            0.1,
        )
        assert [b.name for b in cfg.cawal_bindings] == ["water", "land"]
        assert cfg.class_groups["water"] == ("boat",)

    def test_default_bindings_threshold(self):
        assert all(b.threshold == 0.5 for b in default_bindings(0.5))


class TestValidation:
    def test_unknown_layer(self):
        with pytest.raises(ConfigError, match="Unknown layer"):
            PipelineConfig(layers=("redundancy-containment", "blur"))

    def test_repeated_layer(self):
        with pytest.raises(ConfigError):
            PipelineConfig(layers=(LAYER_CAWAL, LAYER_CAWAL))

    @pytest.mark.parametrize("field", ["rf", "cawal_threshold", "hwad_alpha", "score_floor"])
    def test_unit_interval(self, field):
        with pytest.raises(ConfigError, match=field):
            PipelineConfig(**{field: 1.5})

    def test_class_groups_must_partition_vocabulary(self):
        with pytest.raises(ConfigError, match="partition"):
            PipelineConfig(class_groups={"land": ("car",)})

    def test_binding_with_unknown_class(self):
        land = ("car", "bus", "truck", "bicycle", "motorcycle")
        # the default water binding still boosts boats
        with pytest.raises(ConfigError, match="unknown class"):
            PipelineConfig(vocabulary=land, class_groups={"land": land})

    def test_unknown_path_key(self):
        with pytest.raises(ConfigError):
            PipelineConfig(paths={"images": Path("x")})


class TestConfigFromDict:
    def test_sections(self):
        cfg = config_from_dict(
            {
                "layers": ["redundancy-overlap"],
                "redundancy": {"rf": 0.4},
                "hwad": {"alpha": 0.2, "cycles": 3},
                "score_floor": 0.1,
            }
        )
        assert cfg.layers == ("redundancy-overlap",)
        assert (cfg.rf, cfg.hwad_alpha, cfg.hwad_cycles, cfg.score_floor) == (0.4, 0.2, 3, 0.1)

    def test_empty_document_gives_defaults(self):
        assert config_from_dict(None) == PipelineConfig()

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="Unknown configuration"):
            config_from_dict({"nms": {}})

    def test_unknown_section_key(self):
        with pytest.raises(ConfigError, match="redundancy"):
            config_from_dict({"redundancy": {"rf": 0.5, "iou": 0.5}})

    def test_non_numeric_value(self):
        with pytest.raises(ConfigError, match="rf"):
            config_from_dict({"redundancy": {"rf": "high"}})

    def test_cawal_threshold_reaches_default_bindings(self):
        cfg = config_from_dict({"cawal": {"threshold": 0.45}})
        assert all(b.threshold == 0.45 for b in cfg.cawal_bindings)

    def test_explicit_bindings(self):
        cfg = config_from_dict(
            {
                "cawal": {
                    "threshold": 0.2,
                    "bindings": [{"name": "water", "context": ["water"], "boost": ["boat"]}],
                }
            }
        )
        (binding,) = cfg.cawal_bindings
        assert binding.threshold == 0.2
        assert binding.adjust_percent == 10.0

    def test_binding_with_unknown_key(self):
        with pytest.raises(ConfigError, match="bindings"):
            config_from_dict(
                {"cawal": {"bindings": [{"context": ["water"], "boost": ["boat"], "gain": 2}]}}
            )

    def test_binding_without_boosted_classes(self):
        with pytest.raises(ConfigError):
            config_from_dict({"cawal": {"bindings": [{"context": ["water"]}]}})


class TestLoadConfig:
    def test_relative_paths_resolve_against_config_dir(self, tmp_path):
        (tmp_path / "run").mkdir()
        path = write_yaml(
            tmp_path / "run",
            "paths:\n  detections: dets.json\n  out: /abs/out\n",
        )
        cfg = load_config(path)
        assert cfg.path("detections") == tmp_path / "run" / "dets.json"
        assert cfg.path("out") == Path("/abs/out")
        assert cfg.path("scenes") is None

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_config(tmp_path / "absent.yaml")

    def test_invalid_yaml(self, tmp_path):
        with pytest.raises(ConfigError, match="Could not parse"):
            load_config(write_yaml(tmp_path, "layers: [cawal\n"))

    def test_json_is_accepted(self, tmp_path):
        cfg = load_config(write_yaml(tmp_path, '{"layers": ["hwad"]}', "config.json"))
        assert cfg.layers == ("hwad",)

    def test_dump_and_reload(self):
        cfg = PipelineConfig(
            layers=("redundancy-containment", "cawal"),
            cawal_attenuate=True,
            hwad_cycles=2,
            paths={"detections": Path("/data/dets.json")},
            seed=5,
        )
        assert config_from_dict(yaml.safe_load(dump_config(cfg))) == cfg

    def test_with_paths_ignores_none(self):
        cfg = PipelineConfig(paths={"detections": Path("a.json")})
        updated = cfg.with_paths(detections=None, out="out")
        assert updated.path("detections") == Path("a.json")
        assert updated.path("out") == Path("out")
        assert cfg.path("out") is None
