"""Finite-difference suites comparing tape gradients with central differences.

Every loss builder here takes a dict of parameters that may hold tape
variables or plain arrays, so the same function drives both the analytic and
the numeric side. Inputs the model deliberately detaches (the network's view
of ``x*``, mask-render geometry) are fed from frozen copies so the numeric
side sees the same stop-gradients.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from .basis import MotionBasis
from .gaussians import GaussianSet, model_values, motion_coefficients, snapshot_at
from .losses import (LossWeights, arap_loss, build_knn, entropy_loss, mask_loss, photometric,
                     random_directions, spatial_smoothness, total_loss)
from .motion import CoefficientNet
from .optim import GradReport, ParamGroup, StepDecay, fd_gradient
from .raster import Camera, render

MODULES = ("autodiff", "raster", "motion", "losses", "full")


def check(name: str, build: Callable[[dict], object], params: dict, h: float = 1e-6,
          max_probes: int = 60, rng: np.random.Generator | None = None) -> list[GradReport]:
    """One report per parameter; large arrays are probed at a random subset."""
    rng = rng if rng is not None else np.random.default_rng(0)
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    tape = ad.Tape()
    v = {k: tape.param(k, a) for k, a in params.items()}
    grads = tape.backward(build(v))
    out = []
    for k in params:
        group = ParamGroup(k, params[k], StepDecay(1.0))
        plain = dict(params)
        plain[k] = group.values

        def loss_fn():
            return ad.value(build(plain))

        n = group.values.size
        idx = np.arange(n) if n <= max_probes else np.sort(rng.choice(n, max_probes, replace=False))
        num = fd_gradient(loss_fn, group, h, idx).ravel()[idx]
        out.append(GradReport(f"{name}/{k}", grads[k].ravel()[idx], num))
    return out


# -- fixtures ----------------------------------------------------------------

def small_camera(size: int = 8, eye=(0.0, -3.0, 0.4)) -> Camera:
    return Camera.look_at(np.array(eye), np.zeros(3), np.array([0.0, 0.0, 1.0]),
                          1.2 * size, 1.2 * size, size, size)


def small_scene(rng: np.random.Generator, n: int = 12, sh_degree: int = 0) -> GaussianSet:
    xyz = rng.uniform(-0.6, 0.6, size=(n, 3))
    gs = GaussianSet.from_points(xyz, rng.uniform(0.2, 0.8, size=(n, 3)), sh_degree,
                                 opacity=0.6, scene_extent=1.0)
    # anisotropic, rotated Gaussians so every parameter has a visible effect
    gs.log_scale = np.log(rng.uniform(0.12, 0.35, size=(n, 3)))
    q = rng.normal(size=(n, 4))
    gs.rotation = q / np.linalg.norm(q, axis=1, keepdims=True)
    gs.opacity_logit = rng.uniform(-0.5, 1.5, size=n)
    gs.dyn_logit = rng.uniform(-1, 1, size=n)
    if sh_degree:
        gs.color[:, 1:] = rng.normal(scale=0.1, size=gs.color[:, 1:].shape)
    return gs


def small_motion(rng: np.random.Generator, gs: GaussianSet, n_frames: int = 4):
    k, l, m = min(4, n_frames), min(3, n_frames), min(3, n_frames)  # noqa: E741
    net = CoefficientNet.initialized(rng, k=k, l=l, m=m, n_freqs=3, hidden=12, depth=2,
                                     center=gs.x_star.mean(axis=0), extent=1.0)
    net.params = net.params + rng.normal(scale=0.05, size=net.params.shape)
    basis = MotionBasis.dct(n_frames, k, l, m)
    basis.theta = basis.theta + rng.normal(scale=0.05, size=basis.theta.shape)
    return net, basis


# -- suites --------------------------------------------------------------------

def suite_autodiff(rng) -> list[GradReport]:
    a0 = rng.normal(size=(4, 3))
    b0 = rng.normal(size=(3, 5))
    q0 = rng.normal(size=(6, 4))

    def f(v):
        a, b, q = v["a"], v["b"], v["q"]
        x = ad.matmul(ad.sin(a) * ad.exp(a * 0.3), b)
        y = ad.sum(ad.sqrt(x * x + 1.0)) + ad.sum(ad.sigmoid(b) * ad.log(ad.abs(b) + 1.0))
        R = ad.quat_to_rotmat(ad.normalize(q))
        return y + ad.sum(ad.einsum("nij,jk->nik", R, ad.transpose(a[:3, :3]))) \
            + ad.sum(ad.norm(ad.concat([a, ad.transpose(b)[:, :3]], axis=0), axis=1))

    return check("autodiff", f, {"a": a0, "b": b0, "q": q0}, rng=rng)


def suite_raster(rng) -> list[GradReport]:
    gs = small_scene(rng, 10, sh_degree=1)
    cam = small_camera()
    target = rng.uniform(size=(cam.height, cam.width, 3))
    bg = np.array([0.1, 0.2, 0.3])
    base = model_values(gs)

    def f(v):
        snap = snapshot_at(gs, None, None, 0, v)
        frozen = snapshot_at(gs, None, None, 0, {**base, "dyn": v["dyn"]})
        return ad.sum(render(snap, cam, "color", bg) * target) \
            + ad.sum(render(frozen, cam, "mask") * target[..., :1])

    return check("raster", f, base, rng=rng)


def suite_motion(rng) -> list[GradReport]:
    gs = small_scene(rng, 8)
    net, basis = small_motion(rng, gs)
    dyn = np.arange(len(gs)) % 2 == 0
    gs.dyn_logit = np.where(dyn, 3.0, -3.0)
    w = rng.normal(size=(len(gs), 3))
    idx = np.flatnonzero(dyn)

    def f(v):
        coeffs = motion_coefficients(net, gs.x_star, idx, v["net"])
        snap = snapshot_at(gs, net, basis, 1.5, v, dyn, coeffs)
        return ad.sum(snap.mean * w) + ad.sum(ad.exp(snap.log_scale)) + ad.sum(snap.cov * 3.0) \
            + ad.sum(snap.rotation * snap.rotation[:, ::-1])

    return check("motion", f, model_values(gs, net, basis), rng=rng)


def suite_losses(rng) -> list[GradReport]:
    reports = []
    H = W = 8
    target = rng.uniform(size=(H, W, 3))
    reports += check("L_pho", lambda v: photometric(v["img"], target),
                     {"img": rng.uniform(size=(H, W, 3))}, rng=rng)
    pm = (rng.uniform(size=(H, W, 1)) > 0.5).astype(float)
    reports += check("L_m", lambda v: mask_loss(v["m"], pm), {"m": rng.uniform(size=(H, W, 1))},
                     rng=rng)
    reports += check("L_3mr", lambda v: entropy_loss(ad.sigmoid(v["logit"])),
                     {"logit": rng.normal(size=20)}, rng=rng)

    gs = small_scene(rng, 16)
    net, basis = small_motion(rng, gs)
    dyn = np.ones(len(gs), dtype=bool)
    index = build_knn(gs.x_star, np.arange(len(gs)), k=5, rho_w=2.0)

    def arap(v):
        coeffs = motion_coefficients(net, gs.x_star, np.flatnonzero(dyn), v["net"])
        prev = snapshot_at(gs, net, basis, 1, v, dyn, coeffs)
        cur = snapshot_at(gs, net, basis, 2, v, dyn, coeffs)
        return arap_loss(prev, cur, index)

    reports += check("L_arap", arap, model_values(gs, net, basis), rng=rng)

    dirs = random_directions(rng, len(gs))
    reports += check("L_sp", lambda v: spatial_smoothness(net, gs.x_star, 0.05, 0.5, 0.5,
                                                          params=v["net"], directions=dirs),
                     {"net": net.params}, rng=rng)
    return reports


def suite_full(rng, n_gaussians: int = 24, n_frames: int = 4) -> list[GradReport]:
    """Render + every loss term through ``total_loss`` on a tiny dynamic scene."""
    gs = small_scene(rng, n_gaussians)
    net, basis = small_motion(rng, gs, n_frames)
    dyn = gs.dynamic()
    cam = small_camera()
    target = rng.uniform(size=(cam.height, cam.width, 3))
    pmask = (rng.uniform(size=(cam.height, cam.width, 1)) > 0.5).astype(float)
    weights = LossWeights(rho_w=2.0, knn_k=5)
    idx = np.flatnonzero(dyn)
    index = build_knn(gs.x_star, idx, weights.knn_k, weights.rho_w)
    dirs = random_directions(rng, idx.size)
    base = model_values(gs, net, basis)
    base_coeffs = motion_coefficients(net, gs.x_star, idx)

    def f(v):
        coeffs = motion_coefficients(net, gs.x_star, idx, v["net"])
        total = 0.0
        for t in range(1, n_frames):
            snap = snapshot_at(gs, net, basis, t, v, dyn, coeffs)
            prev = snapshot_at(gs, net, basis, t - 1, v, dyn, coeffs)
            frozen = snapshot_at(gs, net, basis, t, {**base, "dyn": v["dyn"]}, dyn, base_coeffs)
            comps = {"pho": photometric(render(snap, cam, "color"), target),
                     "mask": mask_loss(render(frozen, cam, "mask"), pmask),
                     "entropy": entropy_loss(snap.p),
                     "arap": arap_loss(prev, snap, index),
                     "sp": spatial_smoothness(net, gs.x_star[idx], 0.05, params=v["net"],
                                              directions=dirs)}
            total = total + total_loss(comps, weights, it=10, late_stage=0, masked=True)
        return total

    return check("full", f, base, rng=rng)


SUITES = {"autodiff": suite_autodiff, "raster": suite_raster, "motion": suite_motion,
          "losses": suite_losses, "full": suite_full}


def run(modules=None, seed: int = 0) -> list[GradReport]:
    modules = MODULES if modules is None else modules
    out = []
    for name in modules:
        if name not in SUITES:
            raise ValueError(f"unknown gradcheck module {name!r}; choose from {', '.join(MODULES)}")
        out += SUITES[name](np.random.default_rng(seed))
    return out
