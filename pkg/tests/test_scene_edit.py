import numpy as np
import pytest

from app.exceptions import DataError
from app.models.geometry import Camera, SimilarityTransform
from app.models.scene import SceneGraph, SceneInstance
from app.models.sdf import sphere
from app.services.field_model import AnalyticField
from app.services.scene_edit import (
    Duplicate, EditScript, Import, Remove, Rotate, Translate, apply_edit, apply_edits, load_edit_script,
    parse_edit_script,
)
from app.services.volrender import render_view


@pytest.fixture
def scene() -> SceneGraph:
    field = AnalyticField(sphere(0.5, color=(0.2, 0.6, 0.9)), beta=0.01, object_id="ball")
    return SceneGraph((
        SceneInstance("ball", field, SimilarityTransform(translation=(0.5, 0.0, 0.0))),
        SceneInstance("crate", AnalyticField(sphere(0.3)), SimilarityTransform(translation=(-1.0, 0.0, 0.0))),
    ))


class TestParse:
    def test_every_command(self):
        script = parse_edit_script(
            "# layout\n"
            "translate ball 0.5 0 0\n"
            "\n"
            "rotate crate Z 30  # spin\n"
            "duplicate ball ball2 1 0 0\n"
            "duplicate ball ball3\n"
            "remove crate\n"
            "import lamp from other.ssr --transform 1 0 0 --rotate y 90 --scale 0.5 --as lamp2\n"
        )
        assert script.commands == (
            Translate("ball", (0.5, 0.0, 0.0)),
            Rotate("crate", "z", 30.0),
            Duplicate("ball", "ball2", (1.0, 0.0, 0.0)),
            Duplicate("ball", "ball3", (0.0, 0.0, 0.0)),
            Remove("crate"),
            Import("lamp", "other.ssr", (1.0, 0.0, 0.0), "y", 90.0, 0.5, "lamp2"),
        )

    def test_quoted_hash_is_not_a_comment(self):
        script = parse_edit_script(
            "import lamp from \"dir#1/lamp.ssr\" --as 'lamp #2'  # second lamp\n"
            "remove \"#old\"\n"
        )
        assert script.commands == (Import("lamp", "dir#1/lamp.ssr", new_id="lamp #2"), Remove("#old"))

    @pytest.mark.parametrize("text, line", [
        ("translate ball 1 2\n", 1),
        ("remove ball\nrotate ball w 10\n", 2),
        ("\n\nwobble ball\n", 3),
        ("translate ball a b c\n", 1),
        ("import lamp other.ssr\n", 1),
        ("import lamp from other.ssr --scale -1\n", 1),
        ("import lamp from other.ssr --mirror\n", 1),
        ("remove \"ball\n", 1),
    ])
    def test_errors_name_the_line(self, text, line):
        with pytest.raises(DataError, match=f"Line {line}"):
            parse_edit_script(text)

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "edits.txt"
        path.write_text("remove crate\n")
        script = load_edit_script(str(path))
        assert script.commands == (Remove("crate"),)
        assert script.base_dir == str(tmp_path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_edit_script(str(tmp_path / "nope.txt"))


class TestApply:
    def test_empty_script_is_identity(self, scene):
        assert apply_edits(scene, EditScript()) is scene

    def test_input_scene_untouched(self, scene):
        edited = apply_edits(scene, parse_edit_script("translate ball 1 0 0"))
        assert scene.get("ball").transform.translation == pytest.approx([0.5, 0.0, 0.0])
        assert edited.get("ball").transform.translation == pytest.approx([1.5, 0.0, 0.0])

    def test_rotation_keeps_bbox_center(self, scene):
        before = scene.get("ball").world_bbox.center
        edited = apply_edit(scene, Rotate("ball", "y", 45.0))
        assert edited.get("ball").world_bbox.center == pytest.approx(before)
        assert not np.allclose(edited.get("ball").transform.rotation, np.eye(3))

    def test_full_turn_restores_transform(self, scene):
        edited = apply_edits(scene, parse_edit_script("rotate ball y 180\nrotate ball y 180"))
        before, after = scene.get("ball").transform, edited.get("ball").transform
        assert np.allclose(after.rotation, before.rotation, atol=1e-9)
        assert np.allclose(after.translation, before.translation, atol=1e-9)

    def test_scripts_concatenate(self, scene):
        first = parse_edit_script("translate ball 0 1 0\nrotate crate x 30")
        second = parse_edit_script("duplicate ball ball2 1 0 0\nremove crate")
        stepwise = apply_edits(apply_edits(scene, first), second)
        combined = apply_edits(scene, first + second)
        assert stepwise.object_ids == combined.object_ids
        for object_id in combined.object_ids:
            expected = combined.get(object_id).transform.to_matrix()
            assert np.allclose(stepwise.get(object_id).transform.to_matrix(), expected)

    def test_duplicate_shares_field(self, scene):
        edited = apply_edit(scene, Duplicate("ball", "ball2", (0.0, 2.0, 0.0)))
        assert edited.object_ids == ("ball", "crate", "ball2")
        assert edited.get("ball2").field is edited.get("ball").field
        assert edited.get("ball2").transform.translation == pytest.approx([0.5, 2.0, 0.0])

    def test_duplicate_renders_like_shifted_original(self, scene):
        delta = np.array([0.0, 2.0, 0.0])
        edited = apply_edit(scene, Duplicate("ball", "ball2", tuple(delta)))
        original, copy = edited.get("ball"), edited.get("ball2")
        camera = Camera.from_fov(6, 6, 40.0, position=(0.5, 0.0, -3.0))
        moved = camera.with_pose(camera.rotation, camera.position + delta)
        a = render_view(original.field, original.transform, camera, 16)
        b = render_view(copy.field, copy.transform, moved, 16)
        assert np.max(np.abs(a.color - b.color)) < 1e-9
        assert np.max(np.abs(a.depth - b.depth)) < 1e-9

    def test_duplicate_onto_existing_id(self, scene):
        with pytest.raises(DataError):
            apply_edit(scene, Duplicate("ball", "crate"))

    def test_remove(self, scene):
        assert apply_edit(scene, Remove("crate")).object_ids == ("ball",)

    def test_unknown_id(self, scene):
        with pytest.raises(DataError):
            apply_edit(scene, Translate("lamp", (1.0, 0.0, 0.0)))


class TestImport:
    @pytest.fixture
    def lamp(self):
        return SceneInstance("lamp", AnalyticField(sphere(0.2)), SimilarityTransform(translation=(0.0, 3.0, 0.0)))

    def test_keeps_stored_placement(self, scene, lamp, tmp_path):
        calls = []

        def loader(path, object_id):
            calls.append((path, object_id))
            return lamp

        script = EditScript((Import("lamp", "lamp.ssr"),), base_dir=str(tmp_path))
        edited = apply_edits(scene, script, loader)
        assert calls == [(str(tmp_path / "lamp.ssr"), "lamp")]
        assert edited.get("lamp").transform.translation == pytest.approx([0.0, 3.0, 0.0])

    def test_flags_replace_placement(self, scene, lamp):
        command = Import("lamp", "lamp.ssr", translation=(1.0, 0.0, 0.0), scale=0.5, new_id="lamp2")
        edited = apply_edit(scene, command, lambda path, object_id: lamp)
        placed = edited.get("lamp2")
        assert placed.transform.translation == pytest.approx([1.0, 0.0, 0.0])
        assert placed.transform.scale == 0.5
        assert placed.field is lamp.field

    def test_needs_loader(self, scene):
        with pytest.raises(DataError):
            apply_edit(scene, Import("lamp", "lamp.ssr"))

    def test_clashing_id(self, scene, lamp):
        with pytest.raises(DataError):
            apply_edit(scene, Import("lamp", "lamp.ssr", new_id="ball"), lambda path, object_id: lamp)
