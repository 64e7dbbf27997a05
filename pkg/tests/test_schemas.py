import json

import click
import numpy as np
import pytest

from app.cli.common import parse_sweep
from app.cli.schemas import BUILTIN_SCENES, SceneDocument, load_run_config, load_scene_document, read_document
from app.exceptions import ConfigError, DataError
from app.models.config import RunConfig
from app.models.geometry import apply_similarity


class TestSceneDocuments:
    @pytest.mark.parametrize("name", sorted(BUILTIN_SCENES))
    def test_builtin_scenes_validate(self, name):
        document = load_scene_document(name)
        assert document.name == name
        assert len(document.ground_truth_objects()) == len(BUILTIN_SCENES[name]["objects"])

    def test_two_spheres_placement(self):
        left, right = load_scene_document("two-spheres").ground_truth_objects()
        assert left.object_id == "left"
        assert left.transform.translation == pytest.approx([-0.6, 0.0, 0.0])
        assert right.transform.scale == pytest.approx(0.5)

    def test_unknown_scene(self):
        with pytest.raises(ConfigError):
            load_scene_document("teapot")

    def test_scene_from_yaml_file(self, tmp_path):
        path = tmp_path / "scene.yaml"
        path.write_text(
            "name: donut\n"
            "background: [0, 0, 0]\n"
            "objects:\n"
            "  - id: ring\n"
            "    primitive: {kind: torus, major_radius: 0.5, minor_radius: 0.2}\n"
            "    placement: {axis: x, degrees: 90}\n"
        )
        document = load_scene_document(str(path))
        assert document.objects[0].primitive.kind == "torus"
        assert document.background == (0.0, 0.0, 0.0)

    @pytest.mark.parametrize("objects", [
        [],
        [{"id": "a", "primitive": {"kind": "sphere"}}],
        [{"id": "a", "primitive": {"kind": "union"}}],
        [{"id": "a", "primitive": {"kind": "box", "half_extents": [1, 0, 1]}}],
        [{"id": "a", "primitive": {"kind": "sphere", "radius": 1}, "colour": "red"}],
        [{"id": "a", "primitive": {"kind": "sphere", "radius": 1}},
         {"id": "a", "primitive": {"kind": "sphere", "radius": 2}}],
    ])
    def test_invalid_documents(self, tmp_path, objects):
        path = tmp_path / "scene.json"
        path.write_text(json.dumps({"objects": objects}))
        with pytest.raises(DataError):
            load_scene_document(str(path))

    def test_analytic_scene(self):
        scene = load_scene_document("two-spheres").analytic_scene()
        assert scene.object_ids == ("left", "right")
        center = np.array([[-0.6, 0.0, 0.0]])
        left = scene.get("left")
        canonical = apply_similarity(left.transform, center, inverse=True)
        assert left.field.sdf(canonical) == pytest.approx([-0.8], abs=1e-12)

    def test_union_takes_members(self):
        document = SceneDocument.model_validate({"objects": [{"id": "pair", "primitive": {
            "kind": "union",
            "members": [{"kind": "sphere", "radius": 0.3, "center": [-0.4, 0, 0]},
                        {"kind": "sphere", "radius": 0.3, "center": [0.4, 0, 0]}],
        }}]})
        field = document.analytic_scene().get("pair").field
        assert field.sdf(np.array([[0.4, 0.0, 0.0], [0.0, 0.0, 0.0]])) == pytest.approx([-0.3, 0.1])


class TestRunConfig:
    def test_defaults(self):
        assert load_run_config() == RunConfig()

    def test_overrides(self):
        config = load_run_config(overrides=["train.epochs=12", "seed=3", "render.background=[0, 0, 0]"])
        assert config.train.epochs == 12
        assert config.seed == 3

    @pytest.mark.parametrize("override", ["train.nope=1", "nope=1", "train.epochs.deeper=1", "train.epochs"])
    def test_bad_overrides(self, override):
        with pytest.raises(ConfigError):
            load_run_config(overrides=[override])

    def test_invalid_value(self):
        with pytest.raises(ConfigError):
            load_run_config(overrides=["train.epochs=-5"])

    def test_yaml_file_then_overrides(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("seed: 11\ntrain:\n  epochs: 20\n")
        config = load_run_config(str(path), ["train.epochs=30"])
        assert config.seed == 11
        assert config.train.epochs == 30

    def test_file_must_hold_mapping(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError):
            load_run_config(str(path))

    def test_unknown_file_key(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text('{"trian": {"epochs": 2}}')
        with pytest.raises(ConfigError):
            load_run_config(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            read_document(str(tmp_path / "none.yaml"))


class TestSweep:
    def test_inclusive_range(self):
        assert parse_sweep("-40:40:20") == [-40.0, -20.0, 0.0, 20.0, 40.0]

    def test_single_value(self):
        assert parse_sweep("10:10:5") == [10.0]

    @pytest.mark.parametrize("text", ["1:2", "a:b:c", "0:10:0", "10:0:5"])
    def test_rejected(self, text):
        with pytest.raises(click.BadParameter):
            parse_sweep(text)
