"""End-to-end runs: simulate, invert, cloud, train, mesh, validate.

Every stage writes its artifacts into the run directory; with ``resume=True`` a
stage whose artifacts already exist is loaded instead of recomputed.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import shutil
from pathlib import Path

import numpy as np

from .config import PipelineConfig, save_config
from .errors import ArtifactError, ConfigError, SartomoError, StageError
from .fields import field_for_surface
from .grid import auto_grid
from .inversion import FusedImage, SubApertureImage, fuse_noncoherent, invert_all
from .io import (load_phase_history, load_volume, read_ply, save_phase_history, save_volume,
                 write_ply_points)
from .isopoints import SamplerParams
from .mesh import TriangleMesh, chamfer, extract_mesh
from .network import init_network, load_network
from .pointcloud import OrientedPointCloud, build_cloud
from .scenes import sample_scene, surface_from_dict
from .simulate import make_geometry, simulate_phase_history
from .training import extract_iso_points, train, validate, write_history_csv

log = logging.getLogger(__name__)

ARTIFACTS = {
    "simulate": ["phase_history.ph"],
    "invert": ["subapertures.vox", "fused.vox"],
    "cloud": ["cloud.ply"],
    "train": ["model.sdfnet", "model_best.sdfnet", "history.csv"],
    "mesh": ["mesh.ply", "mesh.obj"],
    "validate": ["iso_points.ply", "metrics.json"],
}
STAGES = tuple(ARTIFACTS)


def env_threads(default=1):
    """Thread count, with ``SARTOMO_THREADS`` taking precedence."""
    value = os.environ.get("SARTOMO_THREADS")
    if value is None:
        return default
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"SARTOMO_THREADS must be an integer, got {value!r}") from None
    if n < 1:
        raise ConfigError("SARTOMO_THREADS must be >= 1")
    return n


def stage_seed(seed, stage):
    return [int(seed), STAGES.index(stage)]


def save_images(path, images):
    stack = np.stack([img.values for img in images])
    save_volume(path, stack, images[0].grid,
                theta_mean=[img.theta_mean for img in images],
                phi_mean=[img.phi_mean for img in images],
                lam=[img.lam for img in images],
                residual=[img.residual for img in images])


def load_images(path):
    stack, grid, header = load_volume(path)
    return [
        SubApertureImage(m, stack[m], grid, header["theta_mean"][m], header["phi_mean"][m],
                         header["lam"][m], [], header["residual"][m])
        for m in range(stack.shape[0])
    ]


def build_scene(config, geometry):
    sc = config.scene
    return sample_scene(surface_from_dict(sc.surface), sc.n_scatterers, sc.coeff_model,
                        geometry=geometry, seed=stage_seed(config.seed, "simulate"), pad=sc.pad)


def roi_bounds(scene):
    """Imaged region of interest; also the training, meshing and validation box."""
    lo, hi = scene.bbox
    return np.asarray(lo, float), np.asarray(hi, float)


def sampler_params(config, bounds):
    sc = config.sampler
    return SamplerParams.for_bounds(bounds, config.train.iso_target or 1000,
                                    alpha_step=sc.alpha_step, edge_aware=sc.edge_aware,
                                    literal_edge_sign=sc.literal_edge_sign,
                                    max_newton=sc.max_newton)


class Run:
    """Artifacts and stage drivers for one pipeline configuration."""

    def __init__(self, config: PipelineConfig, out_dir, threads=1, resume=False, reuse=()):
        self.config = config
        self.out = Path(out_dir)
        self.threads = threads
        self.resume = resume
        self.reuse = set(reuse)
        self.geometry = make_geometry(config.geometry)
        self.scene = build_scene(config, self.geometry)

    def path(self, name):
        return self.out / name

    def done(self, stage):
        return (self.resume or stage in self.reuse) and all(self.path(a).exists() for a in ARTIFACTS[stage])

    def prepare(self):
        self.out.mkdir(parents=True, exist_ok=True)
        cfg_path = self.path("config.json")
        if self.resume and cfg_path.exists():
            with open(cfg_path) as fh:
                old = json.load(fh)
            if old != json.loads(json.dumps(self.config.to_dict())):
                raise ConfigError(f"{cfg_path} differs from the requested config; cannot resume")
        save_config(cfg_path, self.config)

    # stages -----------------------------------------------------------------
    def simulate(self):
        if self.done("simulate"):
            return load_phase_history(self.path("phase_history.ph"))
        ph = simulate_phase_history(self.scene, self.geometry, self.config.scene.noise_sigma,
                                    seed=int(self.config.seed))
        save_phase_history(self.path("phase_history.ph"), ph)
        return ph

    def invert(self, ph=None):
        if self.done("invert"):
            images = load_images(self.path("subapertures.vox"))
            values, grid, _ = load_volume(self.path("fused.vox"))
            return images, FusedImage(values, grid)
        ph = ph if ph is not None else load_phase_history(self.path("phase_history.ph"))
        inv = self.config.inversion
        grid = auto_grid(self.scene.bbox, ph.geometry.bandwidth, spacing=inv.spacing,
                         max_dim=inv.max_dim)
        images = invert_all(ph, grid, threads=self.threads, **inv.solver_kwargs())
        fused = fuse_noncoherent(images)
        save_images(self.path("subapertures.vox"), images)
        save_volume(self.path("fused.vox"), fused.values, grid)
        return images, fused

    def cloud(self, images=None, fused=None):
        if self.done("cloud"):
            return OrientedPointCloud.load(self.path("cloud.ply"))
        if images is None:
            images, fused = self.invert()
        cc = self.config.cloud
        cloud = build_cloud(fused, images, tau=cc.tau, quantile=cc.quantile, radius=cc.radius)
        cloud.save(self.path("cloud.ply"))
        return cloud

    def train(self, cloud=None):
        if self.done("train"):
            return load_network(self.path("model.sdfnet"))[0]
        cloud = cloud if cloud is not None else OrientedPointCloud.load(self.path("cloud.ply"))
        bounds = roi_bounds(self.scene)
        net = init_network(self.config.network, seed=int(self.config.seed), bounds=bounds)
        tc = self.config.train
        result = train(net, cloud.points, cloud.normals, tc, self.config.loss,
                       sampler_params(self.config, bounds), bounds=bounds, out_dir=self.out)
        write_history_csv(self.path("history.csv"), result.history)
        return result.net

    def mesh(self, net=None):
        if self.done("mesh"):
            return None
        net = net if net is not None else load_network(self.path("model.sdfnet"))[0]
        mesh = extract_mesh(net, roi_bounds(self.scene), self.config.mesh.resolution)
        mesh.save(self.path("mesh.ply"))
        mesh.save(self.path("mesh.obj"))
        return mesh

    def validate(self, net=None, mesh=None, cloud=None):
        if self.done("validate"):
            with open(self.path("metrics.json")) as fh:
                return json.load(fh)
        net = net if net is not None else load_network(self.path("model.sdfnet"))[0]
        cloud = cloud if cloud is not None else OrientedPointCloud.load(self.path("cloud.ply"))
        seed = int(self.config.seed)
        bounds = roi_bounds(self.scene)
        n = self.config.validate.n_samples
        metrics = validate(net, self.scene.surface, bounds, n, seed=seed)
        gt, _ = self.scene.surface.sample_surface(10 * n, np.random.default_rng(stage_seed(seed, "validate")))
        if mesh is None and self.path("mesh.ply").exists():
            mesh = load_mesh(self.path("mesh.ply"))
        if mesh is not None:
            mesh_pts = mesh.sample(10 * n, np.random.default_rng(stage_seed(seed, "mesh")))
            metrics["mesh_chamfer"] = chamfer(mesh_pts, gt)
            metrics["mesh_faces"] = int(mesh.n_faces)
            metrics["mesh_watertight"] = bool(mesh.is_watertight())
        metrics["cloud_chamfer"] = chamfer(cloud.points, gt)
        metrics["n_cloud_points"] = int(len(cloud))
        grid_header = load_volume(self.path("fused.vox"))[2] if self.path("fused.vox").exists() else None
        if grid_header is not None:
            metrics["voxel_spacing"] = float(max(grid_header["spacing"]))
        gt_field = field_for_surface(self.scene.surface)
        if gt_field is not None:
            f, _ = gt_field.value_and_jacobian(cloud.points)
            metrics["cloud_surface_rms"] = float(np.sqrt(np.mean(f**2)))
        iso = extract_iso_points(net, bounds, n, seed)
        write_ply_points(self.path("iso_points.ply"), [iso.points, iso.normals],
                         ("x", "y", "z", "nx", "ny", "nz"))
        metrics = {"name": self.config.name, "seed": seed, **metrics}
        write_metrics(self.path("metrics.json"), metrics)
        return metrics


def load_mesh(path):
    cols, faces = read_ply(path)
    if faces is None:
        raise ArtifactError(f"{path} holds no faces")
    verts = np.column_stack([cols["x"], cols["y"], cols["z"]])
    return TriangleMesh(verts, np.asarray(faces, np.int64))


def write_metrics(path, metrics):
    with open(path, "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_pipeline(config, out_dir, threads=1, resume=False, stop_after=None, reuse=()):
    """Run (or resume) every stage; returns the metrics dict.

    Stages named in ``reuse`` load artifacts already present in ``out_dir``
    even without ``resume``. A failing stage raises :class:`StageError` naming
    the stage; artifacts of earlier stages stay on disk.
    """
    threads = env_threads(threads)
    run = Run(config, out_dir, threads, resume, reuse)
    run.prepare()
    state = {}

    def stage(name, fn):
        try:
            log.info("%s: %s", config.name, name)
            return fn()
        except SartomoError as exc:
            raise StageError(name, exc) from exc
        except (ValueError, FloatingPointError, OSError) as exc:
            raise StageError(name, exc) from exc

    state["ph"] = stage("simulate", run.simulate)
    if stop_after == "simulate":
        return None
    state["images"], state["fused"] = stage("invert", lambda: run.invert(state["ph"]))
    if stop_after == "invert":
        return None
    state["cloud"] = stage("cloud", lambda: run.cloud(state["images"], state["fused"]))
    if stop_after == "cloud":
        return None
    state["net"] = stage("train", lambda: run.train(state["cloud"]))
    if stop_after == "train":
        return None
    state["mesh"] = stage("mesh", lambda: run.mesh(state["net"]))
    if stop_after == "mesh":
        return None
    return stage("validate", lambda: run.validate(state["net"], state["mesh"], state["cloud"]))


REPORT_METRICS = ("chamfer", "mesh_chamfer", "on_surface_rms", "eikonal_mean",
                  "normal_angle_rms_deg")


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def ablation_report(run_dirs, out_prefix=None):
    """Metrics of each run side by side, with config keys that differ between runs.

    Deltas are taken against the first run. Writes ``<out_prefix>.csv`` and
    ``<out_prefix>.json`` when ``out_prefix`` is given.
    """
    run_dirs = [Path(d) for d in run_dirs]
    if len(run_dirs) < 2:
        raise ConfigError("a report needs at least two runs")
    rows, configs = [], []
    for d in run_dirs:
        for name in ("metrics.json", "config.json"):
            if not (d / name).exists():
                raise ArtifactError(f"missing file: {d / name}")
        with open(d / "metrics.json") as fh:
            metrics = json.load(fh)
        with open(d / "config.json") as fh:
            configs.append(_flatten(json.load(fh)))
        rows.append({"run": str(d), "name": metrics.get("name", d.name),
                     **{m: metrics.get(m) for m in REPORT_METRICS}})
    keys = sorted(set().union(*configs))
    differing = [k for k in keys if k != "name" and len({json.dumps(c.get(k)) for c in configs}) > 1]
    base = rows[0]
    for row, cfg in zip(rows, configs):
        row["config_delta"] = {k: cfg.get(k) for k in differing}
        for m in REPORT_METRICS:
            a, b = row[m], base[m]
            row[f"delta_{m}"] = None if a is None or b is None else a - b
    report = {"runs": rows, "differing_keys": differing}
    if out_prefix is not None:
        write_metrics(f"{out_prefix}.json", report)
        cols = ["run", "name", *REPORT_METRICS, *(f"delta_{m}" for m in REPORT_METRICS), *differing]
        with open(f"{out_prefix}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in rows:
                w.writerow([row.get(c, row["config_delta"].get(c)) for c in cols])
    return report


UPSTREAM = ("simulate", "invert", "cloud")


def _upstream_key(cfg):
    d = cfg.to_dict()
    return json.dumps({k: d[k] for k in ("seed", "scene", "geometry", "inversion", "cloud")},
                      sort_keys=True)


def run_grid(configs, out_root, threads=1, resume=False):
    """Runs in ``out_root/<config.name>``; returns their directories.

    Configs that agree on everything up to the point cloud share those
    artifacts: they are copied from the first such run instead of recomputed,
    which gives the same bytes since every stage is seeded from the config.
    """
    dirs, first = [], {}
    for cfg in configs:
        d = Path(out_root) / cfg.name
        key = _upstream_key(cfg)
        reuse = ()
        if key in first:
            d.mkdir(parents=True, exist_ok=True)
            for stage in UPSTREAM:
                for name in ARTIFACTS[stage]:
                    shutil.copyfile(first[key] / name, d / name)
            reuse = UPSTREAM
        run_pipeline(cfg, d, threads, resume, reuse=reuse)
        first.setdefault(key, d)
        dirs.append(d)
    return dirs
