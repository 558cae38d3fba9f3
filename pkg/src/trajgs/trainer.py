"""Staged optimization: static warm-up, joint motion training, densification.

One :class:`Trainer` owns every piece of mutable state (Gaussians, network,
bases, Adam moments, RNG, frame sampler, neighbour index) and can be dumped to
and restored from a :class:`Checkpoint` without losing a bit, so resumed runs
continue exactly as uninterrupted ones would.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckio
from .basis import MotionBasis
from .gaussians import (ARRAY_FIELDS, MOTION_NAMES, PARAM_NAMES, DensifyConfig,
                        GaussianSet, bounding_radius, densify_and_prune,
                        motion_coefficients, snapshot_at)
from .io import Dataset
from .losses import (KnnIndex, LossWeights, arap_loss, build_knn, entropy_loss,
                     mask_loss, photometric, spatial_smoothness, total_loss)
from .metrics import image_metrics
from .motion import CoefficientNet
from .optim import ExpDecay, ParamGroup, StepDecay, adam_step
from .raster import Camera, accumulate_grad_stats, render

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
# rows of these groups follow the Gaussians through densification
PER_GAUSSIAN = dict(zip(PARAM_NAMES, ("x_star", "log_scale", "rotation", "opacity_logit",
                                      "color", "dyn_logit")))


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    total_iters: int = 2000
    warmup_frac: float = 0.1
    densify_until_frac: float = 0.5
    densify_every: int = 100         # 0 turns densification off
    late_stage_frac: float = 0.5
    eval_every: int = 200
    k: int = 40
    l: int = 10  # noqa: E741
    m: int = 10
    n_freqs: int = 12
    hidden: int = 128
    depth: int = 3
    lr_net: float = 1e-3
    lr_basis: float = 5e-4
    motion_decay: float = 0.5
    motion_decay_frac: float = 0.3
    lr_position: float = 1.6e-4
    lr_position_final: float = 1.6e-6
    lr_opacity: float = 0.05
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lr_color: float = 2.5e-3
    lr_dyn: float = 0.05
    weights: LossWeights = field(default_factory=LossWeights)
    densify: DensifyConfig = field(default_factory=DensifyConfig)
    seed: int = 0
    mode: str = "auto"
    sh_degree: int = 0
    n_random_init: int = 20000
    init_opacity: float = 0.1
    init_p: float = 0.5
    warmup_train_p: bool = True      # False holds dynamic probabilities at init_p until motion starts
    tile: int | None = 16

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if isinstance(self.densify, dict):
            self.densify = DensifyConfig(**self.densify)
        if self.total_iters < 0:
            raise ConfigError("total_iters must be non-negative")
        if not 0 <= self.warmup_frac <= self.densify_until_frac <= 1:
            raise ConfigError("need 0 <= warmup_frac <= densify_until_frac <= 1")
        if not 0 <= self.late_stage_frac <= 1:
            raise ConfigError("late_stage_frac must lie in [0, 1]")
        for f in fields(self):
            if f.name.startswith("lr_") and not getattr(self, f.name) > 0:
                raise ConfigError(f"{f.name} must be positive")
        if min(self.k, self.l, self.m) < 1:
            raise ConfigError("basis sizes must be positive")
        if self.mode not in ("auto", "masked", "maskless"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.densify_every < 0 or self.eval_every < 1:
            raise ConfigError("densify_every must be >= 0 and eval_every positive")

    @property
    def warmup_iters(self) -> int:
        return int(round(self.warmup_frac * self.total_iters))

    @property
    def densify_until(self) -> int:
        return int(round(self.densify_until_frac * self.total_iters))

    @property
    def late_stage(self) -> int:
        return int(round(self.late_stage_frac * self.total_iters))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


class FrameSampler:
    """Uniform sampling without replacement within each epoch."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n = n
        self.rng = rng
        self.perm = np.zeros(0, dtype=np.int64)
        self.pos = 0

    def next(self) -> int:
        if self.pos >= self.perm.size:
            self.perm = self.rng.permutation(self.n)
            self.pos = 0
        i = int(self.perm[self.pos])
        self.pos += 1
        return i


@dataclass
class Checkpoint:
    config: TrainConfig
    gaussians: GaussianSet
    net: CoefficientNet
    basis: MotionBasis
    groups: dict
    iteration: int
    rng_state: dict
    sampler: dict
    knn: KnnIndex | None
    meta: dict

    def save(self, path) -> None:
        js = {"version": {"format": CHECKPOINT_VERSION},
              "config": self.config.to_dict(),
              "state": {"iteration": self.iteration, "rng": self.rng_state,
                        "sampler_pos": self.sampler["pos"],
                        "scene_extent": self.gaussians.scene_extent,
                        "net": self.net.config(),
                        "steps": {n: g.step for n, g in self.groups.items()},
                        "schedules": {n: g.lr_schedule.to_dict() for n, g in self.groups.items()},
                        "has_knn": self.knn is not None},
              "meta": self.meta}
        arrays = {f"gs.{f}": getattr(self.gaussians, f) for f in ARRAY_FIELDS}
        arrays["net.params"] = self.net.params
        arrays.update({"basis.theta": self.basis.theta, "basis.lam": self.basis.lam,
                       "basis.eta": self.basis.eta, "sampler.perm": self.sampler["perm"]})
        for n in sorted(self.groups):
            g = self.groups[n]
            arrays[f"adam.{n}.m"] = g.m
            arrays[f"adam.{n}.v"] = g.v
        if self.knn is not None:
            arrays.update({"knn.members": self.knn.members, "knn.neighbors": self.knn.neighbors,
                           "knn.weights": self.knn.weights})
        ckio.save(path, js, arrays)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        from .optim import schedule_from_dict

        js, arr = ckio.load(path)
        if js.get("version", {}).get("format") != CHECKPOINT_VERSION:
            raise ckio.CheckpointError("unsupported trainer checkpoint version")
        st = js["state"]
        cfg = TrainConfig.from_dict(js["config"])
        gs = GaussianSet(**{f: arr[f"gs.{f}"] for f in ARRAY_FIELDS},
                         scene_extent=st["scene_extent"])
        net = CoefficientNet(**st["net"], params=arr["net.params"])
        basis = MotionBasis(arr["basis.theta"], arr["basis.lam"], arr["basis.eta"])
        values = _values(gs, net, basis)
        groups = {n: ParamGroup(n, values[n], schedule_from_dict(st["schedules"][n]),
                                arr[f"adam.{n}.m"], arr[f"adam.{n}.v"], st["steps"][n])
                  for n in values if n in st["steps"]}
        knn = None
        if st["has_knn"]:
            knn = KnnIndex(arr["knn.members"], arr["knn.neighbors"], arr["knn.weights"])
        return cls(cfg, gs, net, basis, groups, st["iteration"], st["rng"],
                   {"perm": arr["sampler.perm"], "pos": st["sampler_pos"]}, knn, js["meta"])


def _values(gs, net, basis) -> dict:
    vals = {n: getattr(gs, f) for n, f in PER_GAUSSIAN.items()}
    vals.update(net=net.params, theta=basis.theta, lam=basis.lam, eta=basis.eta)
    return vals


def _json_safe(obj):
    """RNG states hold unbounded ints; JSON keeps them exact."""
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def initial_gaussians(dataset: Dataset, cfg: TrainConfig, rng: np.random.Generator) -> GaussianSet:
    if dataset.init_points is not None and len(dataset.init_points):
        pts, cols = dataset.init_points, dataset.init_colors
    else:
        # no point cloud: uniform in the cube of half-size scene_extent about the origin
        half = dataset.scene_extent or 1.0
        pts = rng.uniform(-half, half, size=(cfg.n_random_init, 3))
        cols = rng.uniform(0, 1, size=(cfg.n_random_init, 3))
    extent = dataset.scene_extent if dataset.scene_extent else bounding_radius(pts)
    return GaussianSet.from_points(pts, cols, cfg.sh_degree, cfg.init_opacity, cfg.init_p,
                                   scene_extent=extent)


class Trainer:
    """Training state plus the per-iteration step."""

    def __init__(self, dataset: Dataset, config: TrainConfig | None = None,
                 checkpoint: Checkpoint | None = None):
        dataset.validate()
        self.dataset = dataset
        self.train_frames = dataset.split("train")
        if not self.train_frames:
            raise ValueError("dataset has no training frames")
        self.n_frames = dataset.n_frames
        if self.n_frames < 2:
            raise ValueError("training needs at least two timestamps")
        for f in self.train_frames:
            if f.camera.width <= 0 or f.camera.height <= 0:
                raise ValueError(f"frame at t={f.time}: bad image size")
        self.images = [f.image() for f in self.train_frames]
        for f, img in zip(self.train_frames, self.images):
            if img.shape[:2] != (f.camera.height, f.camera.width):
                raise ValueError(f"{f.image_path.name}: image is {img.shape[1]}x{img.shape[0]}, "
                                 f"camera says {f.camera.width}x{f.camera.height}")
        self.background = np.asarray(dataset.background, dtype=np.float64)

        if checkpoint is not None:
            self._restore(checkpoint)
        else:
            if config is None:
                config = TrainConfig()
            self._fresh(config)
        cfg = self.config
        mode = dataset.mode if cfg.mode == "auto" else cfg.mode
        if mode == "masked" and dataset.mode != "masked":
            raise ValueError("masked mode requested but training frames lack masks")
        self.masked = mode == "masked"
        self.masks = [f.mask() for f in self.train_frames] if self.masked else None
        self.history: list[dict] = []

    # -- state ---------------------------------------------------------------

    def _fresh(self, cfg: TrainConfig):
        self.config = cfg
        self.rng = np.random.default_rng(cfg.seed)
        gs = initial_gaussians(self.dataset, cfg, self.rng)
        k, l, m = (min(n, self.n_frames) for n in (cfg.k, cfg.l, cfg.m))
        c, r = _bounding_sphere(gs.x_star)
        self.net = CoefficientNet.initialized(self.rng, k=k, l=l, m=m, n_freqs=cfg.n_freqs,
                                              hidden=cfg.hidden, depth=cfg.depth,
                                              center=c, extent=r)
        self.basis = MotionBasis.dct(self.n_frames, k, l, m)
        self.gs = gs
        self.groups = {n: ParamGroup(n, v, self._schedule(n))
                       for n, v in _values(gs, self.net, self.basis).items()}
        self.iteration = 0
        self.sampler = FrameSampler(len(self.train_frames), self.rng)
        self.knn: KnnIndex | None = None

    def _restore(self, ck: Checkpoint):
        self.config = ck.config
        self.gs, self.net, self.basis = ck.gaussians, ck.net, ck.basis
        if self.basis.n_frames != self.n_frames:
            raise ValueError(f"checkpoint has {self.basis.n_frames} frames, "
                             f"dataset has {self.n_frames}")
        self.groups = ck.groups
        self.iteration = ck.iteration
        self.rng = np.random.default_rng()
        self.rng.bit_generator.state = ck.rng_state
        self.sampler = FrameSampler(len(self.train_frames), self.rng)
        self.sampler.perm = np.asarray(ck.sampler["perm"], dtype=np.int64)
        self.sampler.pos = int(ck.sampler["pos"])
        self.knn = ck.knn
        self._sync()

    def _schedule(self, name: str):
        cfg = self.config
        every = max(1, int(round(cfg.motion_decay_frac * cfg.total_iters)))
        ext = self.gs.scene_extent
        table = {
            "xyz": ExpDecay(cfg.lr_position * ext, cfg.lr_position_final * ext,
                            max(cfg.total_iters, 1)),
            "log_scale": StepDecay(cfg.lr_scale),
            "rotation": StepDecay(cfg.lr_rotation),
            "opacity": StepDecay(cfg.lr_opacity),
            "color": StepDecay(cfg.lr_color),
            "dyn": StepDecay(cfg.lr_dyn),
            "net": StepDecay(cfg.lr_net, cfg.motion_decay, every),
        }
        for b in ("theta", "lam", "eta"):
            table[b] = StepDecay(cfg.lr_basis, cfg.motion_decay, every)
        return table[name]

    def _sync(self):
        """Copy optimizer-owned values back into the model objects."""
        for n, f in PER_GAUSSIAN.items():
            setattr(self.gs, f, self.groups[n].values)
        self.net.params = self.groups["net"].values
        self.basis.theta = self.groups["theta"].values
        self.basis.lam = self.groups["lam"].values
        self.basis.eta = self.groups["eta"].values

    def checkpoint(self) -> Checkpoint:
        self._sync()
        meta = {"n_frames": self.n_frames, "background": self.background.tolist(),
                "masked": self.masked}
        return Checkpoint(self.config, self.gs.copy(), CoefficientNet(**self.net.config(),
                          params=self.net.params.copy()),
                          MotionBasis(self.basis.theta.copy(), self.basis.lam.copy(),
                                      self.basis.eta.copy()),
                          {n: ParamGroup(n, g.values.copy(), g.lr_schedule, g.m.copy(),
                                         g.v.copy(), g.step) for n, g in self.groups.items()},
                          self.iteration, _json_safe(self.rng.bit_generator.state),
                          {"perm": self.sampler.perm.copy(), "pos": self.sampler.pos},
                          self.knn, meta)

    # -- schedule ------------------------------------------------------------

    def in_warmup(self, it: int | None = None) -> bool:
        return (self.iteration if it is None else it) < self.config.warmup_iters

    def should_densify(self, it: int) -> bool:
        cfg = self.config
        return cfg.densify_every > 0 and 0 < it < cfg.densify_until and it % cfg.densify_every == 0

    def _neighbours(self, dyn_idx: np.ndarray) -> KnnIndex:
        w = self.config.weights
        if self.knn is None or not np.array_equal(self.knn.members, dyn_idx):
            self.knn = build_knn(self.gs.x_star, dyn_idx, w.knn_k, w.rho_w)
        return self.knn

    # -- one iteration -------------------------------------------------------

    def step(self) -> dict:
        cfg, w = self.config, self.config.weights
        it = self.iteration
        fi = self.sampler.next()
        frame = self.train_frames[fi]
        t = frame.time
        cam = frame.camera
        warm = self.in_warmup(it)

        tape = ad.Tape()
        v = {n: tape.param(n, g.values) for n, g in self.groups.items()}
        dynamic = self.gs.dynamic(cfg.densify.static_threshold)
        dyn_idx = np.flatnonzero(dynamic)
        net = None if warm else self.net
        coeffs = None
        if net is not None and dyn_idx.size:
            coeffs = motion_coefficients(net, v["xyz"], dyn_idx, v["net"])
        snap = snapshot_at(self.gs, net, self.basis, t, v, dynamic, coeffs)
        img, info = render(snap, cam, "color", self.background, cfg.tile, with_info=True)

        comps = {"pho": photometric(img, self.images[fi], w.dssim_mix)}
        if self.masked:
            mimg = render(snap, cam, "mask", tile=cfg.tile)
            comps["mask"] = mask_loss(mimg, self.masks[fi])
            if it >= cfg.late_stage:
                comps["entropy"] = entropy_loss(snap.p)
        if coeffs is not None:
            if t > 0 and w.lambda_a > 0:
                index = self._neighbours(dyn_idx)
                prev = snapshot_at(self.gs, net, self.basis, t - 1, v, dynamic, coeffs)
                sample = None
                if len(index) > w.arap_samples:
                    sample = np.sort(self.rng.choice(len(index), w.arap_samples, replace=False))
                comps["arap"] = arap_loss(prev, snap, index, sample)
            if w.lambda_s > 0:
                eps = 1e-3 * self.gs.scene_extent
                comps["sp"] = spatial_smoothness(self.net, self.gs.x_star[dyn_idx], eps,
                                                 w.w_beta, w.w_gamma, self.rng, v["net"])
        for name, c in comps.items():
            val = float(ad.value(c))
            if not math.isfinite(val):
                raise FloatingPointError(f"non-finite {name} loss ({val}) at iteration {it}")
        total = total_loss(comps, w, it, cfg.late_stage, self.masked)
        if not isinstance(total, ad.Var):
            total = ad.sum(v["opacity"]) * 0.0 + total
        grads = tape.backward(total)
        accumulate_grad_stats(self.gs, info, tape, cam.width, cam.height)

        frozen = ()
        if warm:
            frozen = MOTION_NAMES if cfg.warmup_train_p else MOTION_NAMES + ("dyn",)
        for n, g in self.groups.items():
            if n not in frozen:
                adam_step(g, grads[n], it=it)
        self._sync()
        self.last_grads = grads

        rec = {"iter": it, "frame": fi, "t": t, "loss": float(ad.value(total)),
               **{k: float(ad.value(c)) for k, c in comps.items()},
               "n_gaussians": len(self.gs), "n_dynamic": int(dyn_idx.size)}
        self.iteration += 1
        if self.should_densify(self.iteration):
            self.densify()
        return rec

    def densify(self):
        res = densify_and_prune(self.gs, self.config.densify, self.rng)
        new = res.gaussians
        for n, f in PER_GAUSSIAN.items():
            g = self.groups[n]
            g.values = getattr(new, f)
            for mom in ("m", "v"):
                arr = getattr(g, mom)[res.source]
                arr[res.fresh] = 0.0
                setattr(g, mom, arr)
        self.gs = new
        self.knn = None
        self._sync()
        log.info("iter %d: densify +%d clone +%d split -%d prune -> %d Gaussians",
                 self.iteration, res.n_cloned, res.n_split, res.n_pruned, len(new))

    # -- loop ----------------------------------------------------------------

    def eval_psnr(self) -> float:
        frames = self.dataset.split("test") or self.train_frames
        ck = self.checkpoint()
        return evaluate(ck, self.dataset, "test" if self.dataset.split("test") else "train",
                        frames=frames)["psnr"]

    def run(self, stop_at: int | None = None, log_path=None, eval_every: int | None = None):
        """Iterate until ``stop_at`` (default ``total_iters``); returns the loss log."""
        stop = self.config.total_iters if stop_at is None else min(stop_at, self.config.total_iters)
        every = eval_every or self.config.eval_every
        fh = open(log_path, "a") if log_path else None
        try:
            while self.iteration < stop:
                rec = self.step()
                if self.iteration % every == 0 or self.iteration == self.config.total_iters:
                    rec["psnr"] = self.eval_psnr()
                    log.info("iter %d loss %.5f psnr %.2f", rec["iter"], rec["loss"], rec["psnr"])
                self.history.append(rec)
                if fh:
                    fh.write(json.dumps(rec) + "\n")
        finally:
            if fh:
                fh.close()
        return self.history


def _bounding_sphere(pts):
    c = (pts.max(axis=0) + pts.min(axis=0)) / 2
    r = float(np.linalg.norm(pts - c, axis=1).max())
    return c, max(r, 1e-6)


def train(dataset: Dataset, config: TrainConfig | None = None, checkpoint: Checkpoint | None = None,
          stop_at: int | None = None, log_path=None) -> Checkpoint:
    tr = Trainer(dataset, config, checkpoint)
    tr.run(stop_at, log_path)
    return tr.checkpoint()


def _as_checkpoint(ck) -> Checkpoint:
    return ck if isinstance(ck, Checkpoint) else Checkpoint.load(ck)


def render_view(ck, cam: Camera, t: float, channel: str = "color", background=None):
    ck = _as_checkpoint(ck)
    n = ck.basis.n_frames
    if not 0 <= t <= n - 1:
        raise ValueError(f"time {t} outside [0, {n - 1}]")
    snap = snapshot_at(ck.gaussians, ck.net, ck.basis, t,
                       static_threshold=ck.config.densify.static_threshold)
    if background is None:
        background = np.asarray(ck.meta.get("background", [0, 0, 0]), dtype=np.float64)
    return np.clip(render(snap, cam, channel, background if channel == "color" else None,
                          ck.config.tile), 0.0, 1.0)


def evaluate(ck, dataset: Dataset, split: str = "test", frames=None) -> dict:
    """Mean and per-frame PSNR / SSIM of renders against the frames of ``split``."""
    ck = _as_checkpoint(ck)
    frames = dataset.split(split) if frames is None else frames
    if not frames:
        raise ValueError(f"split {split!r} is empty")
    rows = []
    for f in frames:
        img = render_view(ck, f.camera, f.time, background=dataset.background)
        m = image_metrics(img, f.image())
        rows.append({"image": f.image_path.name, "time": f.time, **m})
    return {"split": split, "psnr": float(np.mean([r["psnr"] for r in rows])),
            "ssim": float(np.mean([r["ssim"] for r in rows])), "frames": rows}


def export_trajectories(ck, times, subset: str = "dynamic") -> list[tuple]:
    """``(gaussian_id, t, x, y, z, p)`` rows; ``subset`` is ``"dynamic"`` or ``"all"``."""
    ck = _as_checkpoint(ck)
    if subset not in ("dynamic", "all"):
        raise ValueError(f"subset must be 'dynamic' or 'all', not {subset!r}")
    n = ck.basis.n_frames
    gs = ck.gaussians
    thr = ck.config.densify.static_threshold
    dyn = gs.dynamic(thr)
    ids = np.flatnonzero(dyn) if subset == "dynamic" else np.arange(len(gs))
    p = gs.p
    rows = []
    for t in times:
        if not 0 <= t <= n - 1:
            raise ValueError(f"time {t} outside [0, {n - 1}]")
        mean = ad.value(snapshot_at(gs, ck.net, ck.basis, t, dynamic=dyn).mean)
        for i in ids:
            rows.append((int(i), t, mean[i, 0], mean[i, 1], mean[i, 2], p[i]))
    return rows
