"""Synthetic dynamic scenes with known trajectories, for end-to-end checks.

Static Gaussians sit still; dynamic ones follow closed-form trajectories. The
images are rendered with this package's own rasterizer, masks by compositing
the ground-truth dynamic labels and thresholding at 0.5.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .basis import dct_basis
from .gaussians import GaussianSet, Snapshot, covariance, rgb_to_sh
from .io import write_dataset, write_json, write_trajectory_csv
from .raster import Camera, render


@dataclass
class SyntheticSpec:
    n_static: int = 50
    n_dynamic: int = 20
    family: str = "sinusoid"
    n_frames: int = 30
    n_cameras: int = 12
    width: int = 64
    height: int = 64
    focal: float = 80.0
    orbit_radius: float = 3.5
    elevation_deg: float = 20.0
    scene_extent: float = 1.0
    amplitude: tuple = (0.05, 0.15)    # fraction of scene_extent
    frequency: tuple = (0.5, 1.5)      # cycles over the whole sequence
    scale: tuple = (0.06, 0.12)        # Gaussian std-dev, fraction of scene_extent
    opacity: tuple = (0.7, 0.95)
    views_per_frame: int = 1           # training cameras per timestamp, spread over the orbit
    test_every: int = 5
    init_noise: float = 0.01           # fraction of scene_extent
    background: tuple = (0.0, 0.0, 0.0)
    seed: int = 0

    def __post_init__(self):
        self.amplitude = tuple(self.amplitude)
        self.frequency = tuple(self.frequency)
        self.scale = tuple(self.scale)
        self.opacity = tuple(self.opacity)
        self.background = tuple(self.background)
        if self.family not in ("sinusoid", "low-rank-dct"):
            raise ValueError(f"unknown trajectory family {self.family!r}")
        if self.n_static < 0 or self.n_dynamic < 0 or self.n_static + self.n_dynamic < 1:
            raise ValueError("need at least one Gaussian")
        if self.n_frames < 2 or self.n_cameras < 1:
            raise ValueError("need at least two frames and one camera")
        if not 1 <= self.views_per_frame <= self.n_cameras:
            raise ValueError("views_per_frame must lie in [1, n_cameras]")
        if not 0 <= self.amplitude[0] <= self.amplitude[1] <= 0.3:
            raise ValueError("amplitudes must lie within 0.3 of the scene extent")
        # DCT mode j completes j/2 cycles, so 10 modes reach 5 cycles
        if not 0 < self.frequency[0] <= self.frequency[1] <= 4.5:
            raise ValueError("frequencies must stay within the first 10 DCT modes")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown synthetic spec keys: {', '.join(sorted(unknown))}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SyntheticScene:
    spec: SyntheticSpec
    centers: np.ndarray      # (P, 3) rest positions
    amplitude: np.ndarray    # (P, 3) sinusoid amplitudes, zero for static rows
    frequency: np.ndarray    # (P,)
    phase: np.ndarray        # (P,)
    dct_coeffs: np.ndarray   # (P, 10, 3) low-rank-dct coefficients
    log_scale: np.ndarray
    rotation: np.ndarray
    opacity: np.ndarray
    rgb: np.ndarray
    dynamic: np.ndarray      # (P,) bool labels

    def positions(self, t) -> np.ndarray:
        """Closed-form positions ``(P, 3)`` at time ``t``."""
        sp = self.spec
        if sp.family == "sinusoid":
            ang = 2 * np.pi * self.frequency * t / sp.n_frames + self.phase
            return self.centers + self.amplitude * np.sin(ang)[:, None]
        B = dct_basis(sp.n_frames, self.dct_coeffs.shape[1])
        return self.centers + np.einsum("pjc,j->pc", self.dct_coeffs, B[int(t)])

    def trajectories(self) -> np.ndarray:
        """``(P, N, 3)``."""
        return np.stack([self.positions(t) for t in range(self.spec.n_frames)], axis=1)

    def snapshot(self, t) -> Snapshot:
        P = len(self.centers)
        features = rgb_to_sh(self.rgb)[:, None, :]
        return Snapshot(mean=self.positions(t), log_scale=self.log_scale,
                        rotation=self.rotation,
                        cov=covariance(np.exp(self.log_scale), self.rotation),
                        opacity=self.opacity, features=features,
                        p=self.dynamic.astype(np.float64), dynamic=np.zeros(P, dtype=bool))

    def gaussians(self) -> GaussianSet:
        """Ground truth as a Gaussian set at ``t = 0`` (for comparisons)."""
        gs = GaussianSet.from_points(self.positions(0), self.rgb,
                                     scene_extent=self.spec.scene_extent)
        gs.log_scale = self.log_scale.copy()
        gs.rotation = self.rotation.copy()
        gs.opacity_logit = np.log(self.opacity / (1 - self.opacity))
        gs.dyn_logit = np.where(self.dynamic, 20.0, -20.0)
        return gs


def orbit_camera(spec: SyntheticSpec, azimuth: float) -> Camera:
    el = np.deg2rad(spec.elevation_deg)
    r = spec.orbit_radius * spec.scene_extent
    eye = r * np.array([np.cos(el) * np.cos(azimuth), np.cos(el) * np.sin(azimuth), np.sin(el)])
    return Camera.look_at(eye, np.zeros(3), np.array([0.0, 0.0, 1.0]), spec.focal, spec.focal,
                          spec.width, spec.height)


def _random_rotations(rng, n):
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return q * np.sign(q[:, :1] + 1e-300)


def make_scene(spec: SyntheticSpec) -> SyntheticScene:
    rng = np.random.default_rng(spec.seed)
    ext = spec.scene_extent
    ns, nd = spec.n_static, spec.n_dynamic
    P = ns + nd

    def in_ball(n, radius):
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return d * radius * rng.uniform(0, 1, size=(n, 1)) ** (1 / 3)

    centers = np.concatenate([in_ball(ns, 0.9 * ext), in_ball(nd, 0.6 * ext)])
    dynamic = np.arange(P) >= ns
    dirs = rng.normal(size=(P, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    amp = dirs * rng.uniform(*spec.amplitude, size=(P, 1)) * ext
    amp[~dynamic] = 0.0
    freq = np.where(dynamic, rng.uniform(*spec.frequency, size=P), 0.0)
    phase = np.where(dynamic, rng.uniform(0, 2 * np.pi, size=P), 0.0)
    n_modes = min(10, spec.n_frames)
    dct = rng.normal(size=(P, n_modes, 3)) / np.arange(1, n_modes + 1)[None, :, None]
    dct[:, 0] = 0.0
    # scale so the largest excursion matches the amplitude range
    dct *= (rng.uniform(*spec.amplitude, size=(P, 1, 1)) * ext
            / np.maximum(np.abs(dct).sum(axis=1, keepdims=True).max(axis=2, keepdims=True), 1e-12))
    dct[~dynamic] = 0.0
    log_scale = np.log(rng.uniform(*spec.scale, size=(P, 3)) * ext)
    return SyntheticScene(spec, centers, amp, freq, phase, dct, log_scale,
                          _random_rotations(rng, P), rng.uniform(*spec.opacity, size=P),
                          rng.uniform(0.1, 0.9, size=(P, 3)), dynamic)


def frame_plan(spec: SyntheticSpec):
    """``(time, azimuth, split)`` per image.

    Time ``t`` is seen by orbit camera ``t mod n_cameras`` and, with several
    views per frame, by cameras spread evenly from there. Held-out views sit
    halfway between orbit cameras.
    """
    plan = []
    step = 2 * np.pi / spec.n_cameras
    for t in range(spec.n_frames):
        for j in range(spec.views_per_frame):
            cam = (t + j * spec.n_cameras // spec.views_per_frame) % spec.n_cameras
            plan.append((t, step * cam, "train"))
    if spec.test_every:
        for t in range(spec.test_every // 2, spec.n_frames, spec.test_every):
            plan.append((t, step * (t % spec.n_cameras + 0.5), "test"))
    return plan


def generate_synthetic(spec: SyntheticSpec, out_dir) -> SyntheticScene:
    """Write a dataset directory plus ``gt/`` ground truth; returns the scene."""
    out = Path(out_dir)
    scene = make_scene(spec)
    rng = np.random.default_rng([spec.seed, 1])
    bg = np.asarray(spec.background, dtype=np.float64)
    cams, times, splits, images, masks = [], [], [], [], []
    for t, az, split in frame_plan(spec):
        cam = orbit_camera(spec, az)
        snap = scene.snapshot(t)
        images.append(render(snap, cam, "color", bg, tile=16))
        masks.append((render(snap, cam, "mask", tile=16) >= 0.5).astype(np.float64))
        cams.append(cam)
        times.append(t)
        splits.append(split)
    noise = rng.normal(scale=spec.init_noise * spec.scene_extent, size=scene.centers.shape)
    init = scene.positions(0) + noise
    init_rgb = np.clip(scene.rgb + rng.normal(scale=0.05, size=scene.rgb.shape), 0, 1)
    write_dataset(out, cams, times, splits, images, masks, init, init_rgb,
                  background=bg, scene_extent=spec.scene_extent)

    gt = out / "gt"
    gt.mkdir(exist_ok=True)
    traj = scene.trajectories()
    rows = [(i, t, *traj[i, t], float(scene.dynamic[i]))
            for t in range(spec.n_frames) for i in range(len(traj))]
    write_trajectory_csv(gt / "trajectories.csv", rows)
    write_json(gt / "labels.json", ["dynamic" if d else "static" for d in scene.dynamic])
    write_json(gt / "spec.json", spec.to_dict())
    return scene


def load_ground_truth(root) -> tuple[np.ndarray, np.ndarray]:
    """Trajectories ``(P, N, 3)`` and dynamic labels ``(P,)`` from a synthetic dataset."""
    from .io import read_trajectory_csv

    root = Path(root)
    tab = read_trajectory_csv(root / "gt" / "trajectories.csv")
    labels = np.array([s == "dynamic" for s in json.loads((root / "gt" / "labels.json").read_text())])
    P = labels.size
    N = int(tab["t"].max()) + 1
    traj = np.empty((P, N, 3))
    traj[tab["gaussian_id"], tab["t"].astype(int)] = np.stack([tab["x"], tab["y"], tab["z"]], axis=1)
    return traj, labels
