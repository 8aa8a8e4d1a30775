"""``sartomo`` command line.

Every subcommand exits 0 on success. On failure it prints one line
``error: <CODE>: <message>`` to stderr and exits 2 (usage errors) or 1.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .config import PRESETS, fourier_iso_grid, load_config, preset, save_config
from .errors import ConfigError, SartomoError
from .grid import VoxelGrid, auto_grid
from .inversion import FusedImage, fuse_noncoherent, invert_all
from .io import load_phase_history, load_volume, save_phase_history, save_volume, write_ply_points
from .isopoints import SamplerParams, refresh
from .mesh import extract_mesh
from .network import init_network, load_network, save_network
from .pointcloud import OrientedPointCloud, build_cloud
from .scenes import surface_from_dict
from .simulate import make_geometry, simulate_phase_history
from .training import train, validate, write_history_csv


class UsageError(SartomoError):
    code = "E_USAGE"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p):
    p.add_argument("--config", help="pipeline config JSON (or preset:<name>)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="output file or directory")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads (SARTOMO_THREADS takes precedence)")
    p.add_argument("--resume", action="store_true", help="reuse existing stage artifacts")


def get_config(args):
    if args.config is None:
        cfg = preset("sphere-small")
    elif args.config.startswith("preset:"):
        cfg = preset(args.config.split(":", 1)[1])
    else:
        cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    return cfg


def _need(args, *names):
    for n in names:
        if getattr(args, n, None) is None:
            raise UsageError(f"--{n.replace('_', '-')} is required")


def cmd_simulate(args):
    _need(args, "out")
    cfg = get_config(args)
    geom = make_geometry(cfg.geometry)
    scene = pl.build_scene(cfg, geom)
    ph = simulate_phase_history(scene, geom, cfg.scene.noise_sigma, seed=cfg.seed)
    save_phase_history(args.out, ph)
    return {"samples": list(ph.samples.shape), "subapertures": geom.n_subapertures}


def _grid_for(args, cfg, ph):
    if args.grid is not None:
        with open(args.grid) as fh:
            return VoxelGrid.from_dict(json.load(fh))
    geom = make_geometry(cfg.geometry)
    scene = pl.build_scene(cfg, geom)
    inv = cfg.inversion
    return auto_grid(scene.bbox, ph.geometry.bandwidth, spacing=inv.spacing, max_dim=inv.max_dim)


def cmd_invert(args):
    _need(args, "ph", "out")
    cfg = get_config(args)
    ph = load_phase_history(args.ph)
    grid = _grid_for(args, cfg, ph)
    kw = cfg.inversion.solver_kwargs()
    if args.lam is not None:
        kw.update(lam=None, sigma2=None, lam_rel=args.lam)
    images = invert_all(ph, grid, threads=pl.env_threads(args.threads), **kw)
    fused = fuse_noncoherent(images)
    out = Path(args.out)
    save_volume(out, fused.values, grid)
    pl.save_images(out.with_name(out.stem + "_subapertures.vox"), images)
    return {"grid": list(grid.dims), "subapertures": len(images)}


def cmd_cloud(args):
    _need(args, "vox", "out")
    cfg = get_config(args)
    vox = Path(args.vox)
    values, grid, _ = load_volume(vox)
    sub = Path(args.subapertures) if args.subapertures else vox.with_name(vox.stem + "_subapertures.vox")
    images = pl.load_images(sub)
    quantile = args.quantile if args.quantile is not None else cfg.cloud.quantile
    tau = args.tau if args.tau is not None else (None if args.quantile is not None else cfg.cloud.tau)
    cloud = build_cloud(FusedImage(values, grid), images, tau=tau, quantile=None if tau else quantile,
                        radius=cfg.cloud.radius)
    cloud.save(args.out)
    return {"points": len(cloud)}


def cmd_train(args):
    _need(args, "cloud", "out")
    cfg = get_config(args)
    cloud = OrientedPointCloud.load(args.cloud)
    scene = pl.build_scene(cfg, make_geometry(cfg.geometry))
    bounds = pl.roi_bounds(scene)
    net = init_network(cfg.network, seed=cfg.seed, bounds=bounds)
    tc = cfg.train
    tc.threads = pl.env_threads(args.threads)
    result = train(net, cloud.points, cloud.normals, tc, cfg.loss, pl.sampler_params(cfg, bounds),
                   bounds=bounds)
    save_network(args.out, result.net)
    out = Path(args.out)
    write_history_csv(out.with_name(out.stem + "_history.csv"), result.history)
    return {"final_loss": result.history[-1]["total"] if result.history else None}


def cmd_isopoints(args):
    _need(args, "model", "out")
    net, _ = load_network(args.model)
    lo, hi = net.center - net.scale, net.center + net.scale
    params = SamplerParams.for_bounds((lo, hi), args.count)
    rng = np.random.default_rng(args.seed or 0)
    seeds = rng.uniform(lo, hi, (args.count, 3))
    iso = refresh(net, seeds, params, args.count, seed=args.seed or 0)
    write_ply_points(args.out, [iso.points, iso.normals], ("x", "y", "z", "nx", "ny", "nz"))
    return {"points": len(iso)}


def cmd_mesh(args):
    _need(args, "model", "out")
    net, _ = load_network(args.model)
    lo, hi = net.center - net.scale, net.center + net.scale
    mesh = extract_mesh(net, (lo, hi), args.res)
    mesh.save(args.out)
    return {"vertices": mesh.n_vertices, "faces": mesh.n_faces}


def cmd_validate(args):
    _need(args, "model")
    cfg = get_config(args)
    net, _ = load_network(args.model)
    surface = surface_from_dict(cfg.scene.surface)
    scene = pl.build_scene(cfg, make_geometry(cfg.geometry))
    metrics = validate(net, surface, pl.roi_bounds(scene), cfg.validate.n_samples, seed=cfg.seed)
    if args.out:
        pl.write_metrics(args.out, metrics)
    return metrics


def cmd_run(args):
    _need(args, "out")
    cfg = get_config(args)
    if args.grid_nf:
        dirs = pl.run_grid(fourier_iso_grid(cfg), args.out, args.threads, args.resume)
        pl.ablation_report(dirs, str(Path(args.out) / "report"))
        return {"runs": [str(d) for d in dirs]}
    return pl.run_pipeline(cfg, args.out, args.threads, args.resume)


def cmd_report(args):
    _need(args, "out")
    report = pl.ablation_report(args.runs, args.out)
    return {"runs": len(report["runs"]), "differing_keys": report["differing_keys"]}


def cmd_config(args):
    cfg = get_config(args)
    if args.out:
        save_config(args.out, cfg)
        return {"written": args.out}
    return cfg.to_dict()


def build_parser():
    parser = _Parser(prog="sartomo", description="SAR tomography to neural SDF surfaces")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate a phase history for the config scene")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("invert", help="sparse per-sub-aperture imaging and fusion")
    _common(p)
    p.add_argument("--ph", help="phase history (.ph)")
    p.add_argument("--grid", help="voxel grid JSON (origin, spacing, dims)")
    p.add_argument("--lambda", dest="lam", type=float,
                   help="regularization weight relative to max |A^H y|")
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("cloud", help="threshold a fused volume into an oriented point cloud")
    _common(p)
    p.add_argument("--vox", help="fused volume (.vox)")
    p.add_argument("--subapertures", help="sub-aperture image stack (.vox)")
    p.add_argument("--tau", type=float)
    p.add_argument("--quantile", type=float)
    p.set_defaults(func=cmd_cloud)

    p = sub.add_parser("train", help="fit an SDF network to a point cloud")
    _common(p)
    p.add_argument("--cloud", help="oriented point cloud (.ply)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("isopoints", help="sample the zero-level set of a network")
    _common(p)
    p.add_argument("--model", help="network checkpoint (.sdfnet)")
    p.add_argument("--count", type=int, default=2000)
    p.set_defaults(func=cmd_isopoints)

    p = sub.add_parser("mesh", help="marching cubes on a network")
    _common(p)
    p.add_argument("--model")
    p.add_argument("--res", type=int, default=128)
    p.set_defaults(func=cmd_mesh)

    p = sub.add_parser("validate", help="metrics against the config's ground-truth surface")
    _common(p)
    p.add_argument("--model")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="full pipeline into a run directory")
    _common(p)
    p.add_argument("--grid-nf", action="store_true",
                   help="run the N_f in {6, 9} x iso on/off matrix and a report")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="compare finished runs")
    _common(p)
    p.add_argument("runs", nargs="+", help="run directories")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("config", help="print or write a resolved config")
    _common(p)
    p.set_defaults(func=cmd_config)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError(f"missing subcommand; presets: {', '.join(sorted(PRESETS))}")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        result = args.func(args)
    except SartomoError as exc:
        print(f"error: {exc.code}: {_one_line(exc)}", file=sys.stderr)
        return 2 if isinstance(exc, (UsageError, ConfigError)) else 1
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"error: E_{type(exc).__name__.upper()}: {_one_line(exc)}", file=sys.stderr)
        return 1
    if result is not None:
        print(json.dumps(result, sort_keys=True, default=str))
    return 0


def _one_line(exc):
    return " ".join(str(exc).split())


if __name__ == "__main__":
    sys.exit(main())
