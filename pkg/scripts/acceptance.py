"""
Desk-scale acceptance runs for ShapeSeeker

Runs the numbered checks below and writes a summary CSV. Checks 4, 5 and 10
share the sphere fit; check 6 parses the loss histories written by check 7.

    python scripts/acceptance.py --out acceptance_runs
    python scripts/acceptance.py --only 1,2,3,9 --quick
"""

import logging
import math
import os
import sys
import tempfile
import time
from typing import Callable, Dict, List, Tuple

import click
import numpy as np
import pandas as pd

# Add app directory to Python path
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from app.cli.schemas import load_scene_document
from app.models.config import RunConfig
from app.models.geometry import Aabb, SimilarityTransform, orbit_camera, orbit_cameras, rotation_about_axis
from app.models.sdf import evaluate_analytic_sdf, sphere, union
from app.services import autodiff as ad
from app.services.field_model import AnalyticField
from app.services.ground_truth import generate_views, sphere_trace_gt
from app.services.marching_cubes import marching_cubes
from app.services.mesh_ops import concatenate_meshes, sample_surface_points, transform_mesh
from app.services.metrics import chamfer_distance, evaluate_meshes, f_score, icp_align, normal_consistency
from app.services.trainer import Trainer, heldout_image_l1, heldout_sdf_error
from app.services.volrender import (
    RaySamples, composite_ray, composite_scene_rays, render_rays, render_view, sdf_to_density,
)
from app.storage.checkpoint import save_field
from app.utils.logging import setup_logging

logger = logging.getLogger("acceptance")

CheckResult = Tuple[bool, str]


def desk_config(epochs: int, seed: int = 0, two_d: bool = False) -> RunConfig:
    """Hidden 64, 2 000 near-surface plus 2 000 uniform points"""
    return RunConfig.model_validate({
        "seed": seed,
        "model": {"implicit": {"layers": 4, "hidden": 64}},
        "train": {"epochs": epochs, "near_points": 2000, "uniform_points": 2000},
        "loss": {"use_rgb": two_d, "use_depth": two_d, "use_normal": two_d},
    })


def analytic_reference(obj, resolution: int = 128):
    return marching_cubes(lambda p: evaluate_analytic_sdf(obj.sdf, p), obj.bbox, resolution)


def ray_sphere_depth(origin: np.ndarray, direction: np.ndarray, radius: float) -> float:
    b = float(origin @ direction)
    c = float(origin @ origin) - radius ** 2
    disc = b * b - c
    return -b - math.sqrt(disc) if disc >= 0 else math.nan


class AcceptanceRun:
    """Holds the state shared between checks"""

    def __init__(self, out_dir: str, quick: bool):
        self.out_dir = out_dir
        self.quick = quick
        self.sphere_fit = None
        os.makedirs(out_dir, exist_ok=True)

    # --- 1 ---------------------------------------------------------------------
    def density_law(self) -> CheckResult:
        tiny = np.nextafter(0.0, 1.0)
        for beta in (0.05, 0.1, 0.5):
            jump = abs(sdf_to_density(beta, -tiny) - sdf_to_density(beta, tiny))
            if jump >= 1e-9:
                return False, f"discontinuous at s=0 for beta={beta} ({jump:.2e})"
            grid = sdf_to_density(beta, np.linspace(-1.0, 1.0, 10_000))
            if np.any(np.diff(grid) > 0):
                return False, f"not monotone for beta={beta}"
            expected = [(0.0, 1 / (2 * beta)), (2 * beta, math.exp(-2) / (2 * beta)), (-10.0, 1 / beta)]
            for s, value in expected:
                if abs(sdf_to_density(beta, s) - value) > 1e-6:
                    return False, f"sigma({beta}, {s}) = {sdf_to_density(beta, s)} != {value}"
        return True, "continuity, monotonicity and closed-form values hold"

    # --- 2 ---------------------------------------------------------------------
    def compositing_oracle(self) -> CheckResult:
        rng = np.random.default_rng(1)
        worst = 0.0
        for _ in range(1000):
            m = int(rng.integers(1, 65))
            t = np.cumsum(rng.uniform(0.01, 0.1, m))
            delta = rng.uniform(0.01, 0.1, m)
            sigma = rng.exponential(5.0, m)
            color = rng.uniform(0, 1, (m, 3))
            out = composite_ray(RaySamples(t=t, delta=delta, sigma=sigma, color=color, normal=np.zeros((m, 3))))
            if not 0.0 <= out.acc <= 1.0:
                return False, f"acc {out.acc} outside [0, 1]"
            survive, ref_color, ref_depth, ref_acc = 1.0, np.zeros(3), 0.0, 0.0
            for i in range(m):
                alpha = 1.0 - math.exp(-sigma[i] * delta[i])
                weight = survive * alpha
                ref_color += weight * color[i]
                ref_depth += weight * t[i]
                ref_acc += weight
                survive *= 1.0 - alpha
            worst = max(worst, float(np.max(np.abs(out.color - ref_color))),
                        abs(out.depth - ref_depth), abs(out.acc - ref_acc))
        return worst < 1e-12, f"max deviation {worst:.2e}"

    # --- 3 ---------------------------------------------------------------------
    def gradient_suite(self) -> CheckResult:
        rng = np.random.default_rng(2)
        worst = 0.0
        for _ in range(100):
            width = int(rng.integers(2, 6))
            point = {
                "x": rng.normal(size=(4, 3)), "w1": rng.normal(size=(width, 3)), "b1": rng.normal(size=width),
                "w2": rng.normal(size=(1, width)), "b2": rng.normal(size=1),
            }

            def net(p):
                hidden = ad.softplus(ad.linear(p["x"], p["w1"], p["b1"]))
                return ad.reduce_mean(ad.square(ad.linear(hidden, p["w2"], p["b2"])))

            worst = max(worst, ad.gradient_check(net, point))
        return worst < 1e-4, f"max relative error {worst:.2e} over 100 micro-nets"

    # --- 4 ---------------------------------------------------------------------
    def sphere_fit_check(self) -> CheckResult:
        document = load_scene_document("sphere")
        target = document.ground_truth_objects()[0]
        config = desk_config(20 if self.quick else 200)
        views = generate_views([target], config.data, document.background)
        result = Trainer(config, target, views).train()
        self.sphere_fit = (config, target, views, result)
        save_field(os.path.join(self.out_dir, "sphere.ssr"), result.field, config, result.epochs)

        error = heldout_sdf_error(result.field, target)
        mesh = marching_cubes(result.field.sdf, result.field.bbox, 64)
        report = evaluate_meshes(mesh, analytic_reference(target), config.metrics.model_copy(update={"tau": 0.02}))
        passed = error < 0.02 and report.cd < 1.0 and report.fscore > 95 and report.nc > 0.99
        return passed, f"sdf_err={error:.4f} cd={report.cd:.3f} fscore={report.fscore:.1f} nc={report.nc:.4f}"

    # --- 5 ---------------------------------------------------------------------
    def rendered_depth(self) -> CheckResult:
        if self.sphere_fit is None:
            self.sphere_fit_check()
        _, target, _, result = self.sphere_fit
        field = result.field.with_beta(min(result.field.beta, 0.01))
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(20):
            camera = orbit_camera((0, 0, 0), 3.0, rng.uniform(0, 360), rng.uniform(-60, 60), 33, 33, 40.0)
            origin, direction = camera.position, camera.rotation[:, 2]
            out = render_rays(field, target.transform, origin[None], direction[None], 128)
            worst = max(worst, abs(float(out.depth[0]) - ray_sphere_depth(origin, direction, 0.5)))
        return worst < 0.05, f"max center-pixel depth error {worst:.4f}"

    # --- 7 ---------------------------------------------------------------------
    def curriculum_trend(self) -> CheckResult:
        document = load_scene_document("two-primitive")
        objects = document.ground_truth_objects()
        epochs = 20 if self.quick else 200
        base = desk_config(epochs)
        views = generate_views(objects, base.data.model_copy(update={"views": 8}), document.background)
        held_out = [
            sphere_trace_gt(objects, camera, base.data.shading, base.data.light, base.data.ambient, document.background)
            for camera in orbit_cameras(4, (0, 0, 0), base.data.radius, base.data.elevation,
                                        base.data.width, base.data.height, base.data.fov, start_yaw_deg=22.5)
        ]
        rows = []
        for seed in range(3):
            for variant, two_d in (("3d_only", False), ("full", True)):
                config = desk_config(epochs, seed, two_d)
                image_l1, cd = [], []
                for target in objects:
                    result = Trainer(config, target, views).train()
                    history_path = os.path.join(self.out_dir, f"history_{variant}_{seed}_{target.object_id}.csv")
                    result.history.to_csv(history_path, index=False, float_format="%.9g")
                    image_l1.append(heldout_image_l1(result.field, target, held_out, background=document.background))
                    mesh = marching_cubes(result.field.sdf, result.field.bbox, 64)
                    cd.append(evaluate_meshes(mesh, analytic_reference(target), config.metrics).cd)
                rows.append({"seed": seed, "variant": variant, "image_l1": np.mean(image_l1), "cd": np.mean(cd)})
        frame = pd.DataFrame(rows)
        frame.to_csv(os.path.join(self.out_dir, "curriculum_trend.csv"), index=False)
        medians = frame.groupby("variant")[["image_l1", "cd"]].median()
        passed = bool((medians.loc["full"] < medians.loc["3d_only"]).all())
        return passed, medians.to_string().replace("\n", " | ")

    # --- 6 ---------------------------------------------------------------------
    def curriculum_contract(self) -> CheckResult:
        paths = [os.path.join(self.out_dir, name) for name in sorted(os.listdir(self.out_dir))
                 if name.startswith("history_full_")]
        if not paths:
            self.curriculum_trend()
            return self.curriculum_contract()
        config = desk_config(20 if self.quick else 200, two_d=True)
        start = round(config.curriculum.start_fraction * config.train.epochs)
        slope = 2.0 * config.curriculum.cap_rgb / max(config.train.epochs - start, 1)
        caps = {"weight_rgb": config.curriculum.cap_rgb, "weight_depth": config.curriculum.cap_depth,
                "weight_normal": config.curriculum.cap_normal}
        for path in paths:
            history = pd.read_csv(path)
            for column, cap in caps.items():
                expected = np.where(history["epoch"] <= start, 0.0,
                                    np.minimum(cap, slope * (history["epoch"] - start)))
                if not np.allclose(history[column], expected, rtol=1e-6, atol=1e-9):
                    return False, f"{os.path.basename(path)}: {column} does not follow the ramp"
        return True, f"{len(paths)} histories follow the ramp"

    # --- 8 ---------------------------------------------------------------------
    def composition_oracle(self) -> CheckResult:
        document = load_scene_document("two-spheres")
        composed = document.analytic_scene(beta=0.01)
        members = []
        for obj in document.objects:
            center = obj.placement.translation
            radius = obj.primitive.radius * obj.placement.scale
            members.append(sphere(radius, center, obj.primitive.albedo.color))
        single = AnalyticField(union(*members), Aabb(np.array([-1.1, -0.5, -0.5]), np.array([1.1, 0.5, 0.5])), 0.01)

        rng = np.random.default_rng(8)
        origins = rng.normal(size=(64, 3))
        origins = 3.0 * origins / np.linalg.norm(origins, axis=1, keepdims=True)
        aims = rng.uniform([-1.0, -0.4, -0.4], [1.0, 0.4, 0.4], size=(64, 3))
        directions = (aims - origins) / np.linalg.norm(aims - origins, axis=1, keepdims=True)
        scene_out = composite_scene_rays(composed, origins, directions, 256)
        single_out = render_rays(single, SimilarityTransform.identity(), origins, directions, 512)
        color_error = float(np.max(np.abs(scene_out.color - single_out.color)))

        along_x = composite_scene_rays(composed, np.array([[-3.0, 0, 0], [3.0, 0, 0]]),
                                       np.array([[1.0, 0, 0], [-1.0, 0, 0]]), 256)
        ordered = bool(np.all(along_x.acc > 0.95) and np.all(np.abs(along_x.depth - 2.0) < 0.05))
        return color_error < 1e-2 and ordered, f"max channel error {color_error:.4f}, occlusion ordered={ordered}"

    # --- 9 ---------------------------------------------------------------------
    def metrics_consistency(self) -> CheckResult:
        document = load_scene_document("two-primitive")
        mesh = concatenate_meshes([transform_mesh(analytic_reference(obj, 64), obj.transform)
                                   for obj in document.ground_truth_objects()])
        rng = np.random.default_rng(9)
        cloud = sample_surface_points(mesh, 2000, rng)
        cd, fs, nc = chamfer_distance(cloud, cloud), f_score(cloud, cloud, 0.02), normal_consistency(cloud, cloud)
        if cd != 0.0 or fs != 100.0 or nc < 0.999:
            return False, f"identical clouds gave cd={cd} fscore={fs} nc={nc}"

        recovered = 0
        for _ in range(100):
            axis = rng.normal(size=3)
            rotation = rotation_about_axis(axis / np.linalg.norm(axis), rng.uniform(0, 20))
            shift = rng.normal(size=3)
            shift *= rng.uniform(0, 0.3) / np.linalg.norm(shift)
            moved = cloud.transformed(rotation, shift)
            result = icp_align(moved, cloud)
            residual = result.rotation @ rotation
            angle = math.degrees(math.acos(np.clip((np.trace(residual) - 1) / 2, -1, 1)))
            recovered += angle < 0.5
        return recovered >= 95, f"ICP recovered {recovered}/100 perturbations"

    # --- 10 --------------------------------------------------------------------
    def determinism(self) -> CheckResult:
        document = load_scene_document("sphere")
        target = document.ground_truth_objects()[0]
        config = desk_config(3)
        views = generate_views([target], config.data, document.background)
        payloads, images = [], []
        with tempfile.TemporaryDirectory() as tmp:
            for run in range(2):
                result = Trainer(config, target, views).train()
                path = os.path.join(tmp, f"run{run}.ssr")
                save_field(path, result.field, config, result.epochs)
                with open(path, "rb") as handle:
                    payloads.append(handle.read())
                images.append(render_view(result.field, target.transform, views[0].camera, 32,
                                          workers=1 + 3 * run).color)
        same = payloads[0] == payloads[1] and np.array_equal(images[0], images[1])
        return same, "checkpoints and renders identical" if same else "runs differ"


CHECKS: Dict[int, Tuple[str, Callable[[AcceptanceRun], CheckResult]]] = {
    1: ("density law", AcceptanceRun.density_law),
    2: ("compositing oracle", AcceptanceRun.compositing_oracle),
    3: ("gradient suite", AcceptanceRun.gradient_suite),
    4: ("sphere fit", AcceptanceRun.sphere_fit_check),
    5: ("rendered depth", AcceptanceRun.rendered_depth),
    7: ("curriculum trend", AcceptanceRun.curriculum_trend),
    6: ("curriculum contract", AcceptanceRun.curriculum_contract),
    8: ("composition oracle", AcceptanceRun.composition_oracle),
    9: ("metrics consistency", AcceptanceRun.metrics_consistency),
    10: ("determinism", AcceptanceRun.determinism),
}


@click.command()
@click.option("--out", "out_dir", default="acceptance_runs", show_default=True, type=click.Path(file_okay=False))
@click.option("--only", help="Comma-separated check numbers")
@click.option("--quick", is_flag=True, help="Shorter training budgets (numbers will not meet the targets)")
def main(out_dir: str, only: str, quick: bool) -> None:
    """Run the acceptance checks and write a summary"""
    setup_logging()
    selected = [int(n) for n in only.split(",")] if only else list(CHECKS)
    run = AcceptanceRun(out_dir, quick)
    rows: List[dict] = []
    print("=== ShapeSeeker acceptance ===\n")
    for number, (name, check) in CHECKS.items():
        if number not in selected:
            continue
        started = time.time()
        try:
            passed, detail = check(run)
        except Exception as e:
            logger.exception(f"Check {number} failed with an error")
            passed, detail = False, f"{type(e).__name__}: {e}"
        seconds = time.time() - started
        print(f"{'✅' if passed else '❌'} {number:>2}. {name}: {detail} ({seconds:.1f}s)")
        rows.append({"check": number, "name": name, "passed": passed, "seconds": round(seconds, 2), "detail": detail})

    summary = pd.DataFrame(rows)
    summary.to_csv(os.path.join(out_dir, "summary.csv"), index=False)
    print(f"\n📊 {int(summary['passed'].sum())}/{len(summary)} checks passed")
    sys.exit(0 if summary["passed"].all() else 1)


if __name__ == "__main__":
    main()
