"""Six-term SDF objective, optimizer loop with periodic iso-point refresh, metrics."""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ConfigError, IsoSurfaceNotFoundError, LossError, TrainingDivergedError
from .isopoints import SamplerParams, make_iso_set, refresh, resample_uniform, upsample, IsoPointSet
from .mesh import chamfer
from .network import backward, forward_train, save_network
from .pointcloud import estimate_normals

log = logging.getLogger(__name__)

TERMS = ("iso_sdf", "iso_normal", "eikonal", "on_sdf", "normal", "off_sdf")


def _from_dict(cls, d, what):
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    return cls(**d)


@dataclass
class LossWeights:
    iso_sdf: float = 1.0
    iso_normal: float = 0.1
    eikonal: float = 0.1
    on_sdf: float = 1.0
    normal: float = 0.1
    off_sdf: float = 0.1
    alpha_off: float = 100.0

    def __post_init__(self):
        lams = [getattr(self, t) for t in TERMS]
        if min(lams) < 0 or max(lams) <= 0:
            raise ConfigError("loss weights must be >= 0 with at least one positive")
        if self.alpha_off <= 0:
            raise ConfigError("alpha_off must be positive")

    @classmethod
    def from_dict(cls, d):
        return _from_dict(cls, d, "loss weight")


@dataclass
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 4096
    lr: float = 1e-4
    lr_decay: float = 0.5
    decay_every: float = 1.0 / 3.0
    iso_enabled: bool = True
    iso_refresh: int = 200
    iso_start: int | None = None
    iso_target: int | None = None
    seed: int = 0
    n_shards: int = 1
    threads: int = 1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.iso_refresh < 1 or self.n_shards < 1:
            raise ConfigError("training counts must be positive")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")

    @classmethod
    def from_dict(cls, d):
        return _from_dict(cls, d, "train")


def cosine_similarity(a, b):
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    return np.einsum("ij,ij->i", a, b) / np.maximum(na * nb, 1e-300)


def _term_grads(f, J, sets, weights):
    """Loss terms and upstream ``(dL/df, dL/dJ)`` for rows laid out as ``sets``.

    ``sets`` maps "P", "iso", "b" to ``(slice, normals or None)``.
    """
    n = f.shape[0]
    f_bar = np.zeros(n)
    J_bar = np.zeros((n, 3))
    terms = dict.fromkeys(TERMS, 0.0)
    jn = np.linalg.norm(J, axis=1)

    def need(name, key):
        lam = getattr(weights, name)
        if lam > 0 and sets[key][0].stop == sets[key][0].start:
            raise ValueError(f"empty batch for loss term {name!r}")
        return lam > 0

    def l1_zero(name, key):
        sl = sets[key][0]
        fs = f[sl]
        terms[name] = float(np.mean(np.abs(fs)))
        f_bar[sl] += getattr(weights, name) * np.sign(fs) / fs.size

    def normal_term(name, key):
        sl, normals = sets[key]
        Js = J[sl]
        sc = cosine_similarity(Js, normals)
        terms[name] = float(np.mean(1.0 - np.abs(sc)))
        jn_s = np.maximum(jn[sl], 1e-300)
        nn = normals / np.linalg.norm(normals, axis=1, keepdims=True)
        dsc = nn / jn_s[:, None] - sc[:, None] * Js / (jn_s**2)[:, None]
        J_bar[sl] -= getattr(weights, name) * np.sign(sc)[:, None] * dsc / Js.shape[0]

    if need("on_sdf", "P"):
        l1_zero("on_sdf", "P")
    if need("iso_sdf", "iso"):
        l1_zero("iso_sdf", "iso")
    if need("off_sdf", "b"):
        sl = sets["b"][0]
        fs = f[sl]
        e = np.exp(-weights.alpha_off * np.abs(fs))
        terms["off_sdf"] = float(np.mean(e))
        f_bar[sl] += weights.off_sdf * (-weights.alpha_off) * np.sign(fs) * e / fs.size
    if weights.eikonal > 0:
        rows = np.r_[sets["iso"][0], sets["b"][0]]
        if rows.size == 0:
            raise ValueError("empty batch for loss term 'eikonal'")
        r = 1.0 - jn[rows]
        terms["eikonal"] = float(np.mean(np.abs(r)))
        J_bar[rows] -= weights.eikonal * (np.sign(r) / np.maximum(jn[rows], 1e-300))[:, None] \
            * J[rows] / rows.size
    if need("normal", "P"):
        normal_term("normal", "P")
    if need("iso_normal", "iso"):
        normal_term("iso_normal", "iso")

    for name, val in terms.items():
        if not math.isfinite(val):
            raise LossError(f"non-finite loss term {name}")
    total = sum(getattr(weights, t) * terms[t] for t in TERMS)
    return terms, total, f_bar, J_bar


def _layout(P, iso, Qb):
    sizes = [len(P), len(iso), len(Qb)]
    edges = np.cumsum([0] + sizes)
    return {k: slice(int(edges[i]), int(edges[i + 1])) for i, k in enumerate(("P", "iso", "b"))}


def _empty():
    return np.zeros((0, 3))


def loss_and_grad(net, points, normals, iso_points, iso_normals, background, weights, n_shards=1,
                  pool=None):
    """Terms, weighted total and parameter gradients of the objective."""
    iso_points = _empty() if iso_points is None else iso_points
    iso_normals = _empty() if iso_normals is None else iso_normals
    background = _empty() if background is None else background
    lay = _layout(points, iso_points, background)
    sets = {"P": (lay["P"], normals), "iso": (lay["iso"], iso_normals), "b": (lay["b"], None)}
    allp = np.vstack([points, iso_points, background])
    bounds = np.linspace(0, len(allp), n_shards + 1).astype(int)
    shards = [slice(bounds[k], bounds[k + 1]) for k in range(n_shards) if bounds[k + 1] > bounds[k]]
    mapper = pool.map if pool is not None else map
    outs = list(mapper(lambda sl: forward_train(net, allp[sl]), shards))
    f = np.concatenate([o[0] for o in outs])
    J = np.vstack([o[1] for o in outs])
    terms, total, f_bar, J_bar = _term_grads(f, J, sets, weights)

    def shard_grad(args):
        sl, (_, _, cache) = args
        return backward(net, cache, f_bar[sl], J_bar[sl])

    parts = list(mapper(shard_grad, zip(shards, outs)))
    grads = parts[0]
    for g in parts[1:]:
        for a, b in zip(grads, g):
            a += b
    return terms, total, grads


def loss_terms(net, points, normals, iso_points=None, iso_normals=None, background=None,
               weights=None):
    """Named loss terms plus ``"total"`` (no gradients)."""
    weights = weights or LossWeights()
    iso_points = _empty() if iso_points is None else iso_points
    iso_normals = _empty() if iso_normals is None else iso_normals
    background = _empty() if background is None else background
    lay = _layout(points, iso_points, background)
    sets = {"P": (lay["P"], normals), "iso": (lay["iso"], iso_normals), "b": (lay["b"], None)}
    f, J = net.value_and_jacobian(np.vstack([points, iso_points, background]))
    terms, total, _, _ = _term_grads(np.atleast_1d(f), np.atleast_2d(J), sets, weights)
    return {**terms, "total": total}


class Adam:
    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.betas, self.eps = lr, betas, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1**self.t, 1 - b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def iso_normals_pca(iso, radius):
    """PCA normals over the iso-point set; fall back to the normalized Jacobian."""
    return estimate_normals(iso.points, iso.normals, radius)


def inflate(bounds, frac=0.1):
    lo, hi = (np.asarray(b, float) for b in bounds)
    pad = frac * (hi - lo) / 2
    return lo - pad, hi + pad


@dataclass
class TrainResult:
    net: object
    history: list
    best_net: object
    best_loss: float
    iso: object = None


def train(net, points, normals, config=None, weights=None, sampler=None, bounds=None,
          out_dir=None):
    """Fit ``net`` in place to an oriented point cloud with Adam.

    ``bounds`` is the region of interest (defaults to the network's
    normalization box); background samples are drawn uniformly from it after
    inflating by 10%. Iso-points are refreshed every ``iso_refresh`` steps once
    ``iso_start`` (default: one refresh period) is reached.
    """
    config = config or TrainConfig()
    weights = weights or LossWeights()
    points = np.asarray(points, float)
    normals = np.asarray(normals, float)
    if len(points) == 0:
        raise ValueError("empty point cloud")
    if bounds is None:
        bounds = (net.center - net.scale, net.center + net.scale)
    q_lo, q_hi = inflate(bounds, 0.1)
    iso_target = config.iso_target or min(4096, max(500, 2 * len(points)))
    if sampler is None:
        sampler = SamplerParams.for_bounds(bounds, iso_target)
    iso_start = config.iso_refresh if config.iso_start is None else config.iso_start

    rng = np.random.default_rng([config.seed, 3])
    opt = Adam(net.params, lr=config.lr)
    bs_p = min(config.batch_size, len(points))
    steps_per_epoch = math.ceil(len(points) / bs_p)
    total_steps = config.epochs * steps_per_epoch
    decay_period = max(1, int(round(config.decay_every * total_steps)))

    iso = None
    iso_nrm = None
    no_iso = weights
    if weights.iso_sdf or weights.iso_normal:
        no_iso = LossWeights(**{**asdict(weights), "iso_sdf": 0.0, "iso_normal": 0.0})
    history = []
    best_loss, best_params = math.inf, [p.copy() for p in net.params]
    last_good = [p.copy() for p in net.params]
    pool = ThreadPoolExecutor(config.threads) if config.threads > 1 and config.n_shards > 1 else None
    try:
        for step in range(total_steps):
            opt.lr = config.lr * config.lr_decay ** (step // decay_period)
            if config.iso_enabled and step >= iso_start and (step - iso_start) % config.iso_refresh == 0:
                try:
                    iso = refresh(net, points, sampler, iso_target, seed=config.seed * 100003 + step)
                    iso_nrm = iso_normals_pca(iso, sampler.eps)
                except IsoSurfaceNotFoundError:
                    log.info("step %d: iso refresh found no surface", step)
            pick = rng.permutation(len(points))[:bs_p] if bs_p < len(points) else np.arange(len(points))
            P, N = points[pick], normals[pick]
            w = weights
            if iso is not None and len(iso):
                bs_i = min(config.batch_size, len(iso))
                ipick = rng.permutation(len(iso))[:bs_i] if bs_i < len(iso) else np.arange(len(iso))
                Qi, Ni = iso.points[ipick], iso_nrm[ipick]
            else:
                Qi, Ni = _empty(), _empty()
                w = no_iso
            Qb = rng.uniform(q_lo, q_hi, (min(config.batch_size, max(bs_p, 256)), 3))
            try:
                terms, total, grads = loss_and_grad(net, P, N, Qi, Ni, Qb, w, config.n_shards, pool)
            except LossError:
                total = float("nan")
            if not math.isfinite(total):
                for p, g in zip(net.params, last_good):
                    p[...] = g
                if out_dir is not None:
                    save_network(f"{out_dir}/model_last_good.sdfnet", net)
                raise TrainingDivergedError(f"loss diverged at step {step}", last_good=net.copy())
            if total < best_loss:
                best_loss = total
                for b, p in zip(best_params, net.params):
                    b[...] = p
            for g, p in zip(last_good, net.params):
                g[...] = p
            opt.step(net.params, grads)
            if (step + 1) % steps_per_epoch == 0:
                history.append({"step": step + 1, **terms, "total": total, "lr": opt.lr})
    finally:
        if pool is not None:
            pool.shutdown()
    best = net.copy()
    for b, p in zip(best.params, best_params):
        b[...] = p
    if out_dir is not None:
        save_network(f"{out_dir}/model.sdfnet", net)
        save_network(f"{out_dir}/model_best.sdfnet", best, best_loss=best_loss)
    return TrainResult(net, history, best, best_loss, iso)


def write_history_csv(path, history):
    cols = ["step", *TERMS, "total", "lr"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for row in history:
            w.writerow({k: row[k] for k in cols})


def fit_field(net, target, bounds, steps=2000, batch=2048, lr=1e-3, seed=0, grad_weight=0.1,
              surface_samples=None, near_scale=0.05):
    """Regress ``net`` onto an analytic field (value L2 plus gradient matching).

    Used to build reference networks with a known zero-level set. With
    ``surface_samples`` every batch also holds as many points jittered around
    the surface by ``near_scale`` times the box size.
    """
    rng = np.random.default_rng([seed, 4])
    lo, hi = (np.asarray(b, float) for b in bounds)
    opt = Adam(net.params, lr=lr)
    for step in range(steps):
        opt.lr = lr * 0.5 ** (step // max(1, steps // 3))
        p = rng.uniform(lo, hi, (batch, 3))
        if surface_samples is not None:
            near = surface_samples[rng.integers(0, len(surface_samples), batch)]
            p = np.vstack([p, near + rng.normal(scale=near_scale * float(np.max(hi - lo)), size=near.shape)])
        tf, tJ = target.value_and_jacobian(p)
        f, J, cache = forward_train(net, p)
        n = len(p)
        grads = backward(net, cache, 2 * (f - tf) / n, grad_weight * 2 * (J - tJ) / n)
        opt.step(net.params, grads)
    return net


def extract_iso_points(field, bounds, n_points, seed=0):
    """Roughly uniform points on the zero-level set, seeded from the whole box."""
    rng = np.random.default_rng([seed, 5])
    lo, hi = (np.asarray(b, float) for b in bounds)
    params = SamplerParams.for_bounds((lo, hi), n_points)
    iso = make_iso_set(field, rng.uniform(lo, hi, (4 * n_points, 3)), params)
    if len(iso) == 0:
        return iso
    iso = resample_uniform(iso, field, params)
    if len(iso) > n_points:
        keep = np.sort(rng.choice(len(iso), n_points, replace=False))
        iso = IsoPointSet(iso.points[keep], iso.normals[keep], iso.residuals[keep])
    elif len(iso) >= 2:
        iso = upsample(iso, field, params, n_points)
    return iso


def validate(field, surface, bounds, n_samples=2000, seed=0):
    """Chamfer, on-surface residual, Eikonal residual and normal error vs. ground truth."""
    rng = np.random.default_rng([seed, 6])
    gt_pts, gt_nrm = surface.sample_surface(10 * n_samples, rng)
    f, J = field.value_and_jacobian(gt_pts)
    f, J = np.atleast_1d(f), np.atleast_2d(J)
    jn = np.linalg.norm(J, axis=1)
    # the objective cannot tell f from -f, so normals are compared as lines
    cos = np.clip(np.abs(cosine_similarity(J, gt_nrm)), 0.0, 1.0)
    iso = extract_iso_points(field, bounds, n_samples, seed)
    cd = chamfer(iso.points, gt_pts) if len(iso) else math.inf
    return {
        "chamfer": float(cd),
        "on_surface_rms": float(np.sqrt(np.mean(f**2))),
        "eikonal_mean": float(np.mean(np.abs(1.0 - jn))),
        "normal_angle_rms_deg": float(np.sqrt(np.mean(np.degrees(np.arccos(cos)) ** 2))),
        "n_iso_points": int(len(iso)),
    }
