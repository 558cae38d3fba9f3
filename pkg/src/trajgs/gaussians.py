"""Global Gaussian primitives, per-time snapshots and adaptive density control."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from . import autodiff as ad
from .basis import MotionBasis
from .motion import CoefficientNet, residuals

log = logging.getLogger(__name__)

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
         -0.4570457994644658, 1.445305721320277, -0.5900435899266435)


def inverse_sigmoid(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p / (1 - p))


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def rgb_to_sh(rgb):
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0


class State(Enum):
    STATIC = "static"
    DYNAMIC = "dynamic"


def classify(p: float, static_threshold: float = 0.8) -> State:
    """Static only when confidently so: ``1 - p >= static_threshold``."""
    return State.STATIC if (1.0 - p) >= static_threshold else State.DYNAMIC


def dynamic_mask(p, static_threshold: float = 0.8) -> np.ndarray:
    """Vectorized :func:`classify`; True marks dynamic Gaussians."""
    return (1.0 - np.asarray(p)) < static_threshold


@dataclass
class GaussianSet:
    x_star: np.ndarray            # (P, 3)
    log_scale: np.ndarray         # (P, 3)
    rotation: np.ndarray          # (P, 4) unit quaternions, (w, x, y, z)
    opacity_logit: np.ndarray     # (P,)
    color: np.ndarray             # (P, (deg+1)^2, 3) SH coefficients
    dyn_logit: np.ndarray         # (P,)
    scene_extent: float = 1.0
    grad_accum: np.ndarray = None
    grad_count: np.ndarray = None

    def __post_init__(self):
        P = self.x_star.shape[0]
        if P < 1:
            raise ValueError("a Gaussian set needs at least one primitive")
        for name in ("log_scale", "rotation", "opacity_logit", "color", "dyn_logit"):
            if getattr(self, name).shape[0] != P:
                raise ValueError(f"{name} has {getattr(self, name).shape[0]} rows, expected {P}")
        if self.grad_accum is None:
            self.grad_accum = np.zeros(P)
        if self.grad_count is None:
            self.grad_count = np.zeros(P)

    def __len__(self):
        return self.x_star.shape[0]

    @property
    def sh_degree(self) -> int:
        return int(round(np.sqrt(self.color.shape[1]))) - 1

    @property
    def opacity(self) -> np.ndarray:
        return sigmoid(self.opacity_logit)

    @property
    def p(self) -> np.ndarray:
        return sigmoid(self.dyn_logit)

    def dynamic(self, static_threshold: float = 0.8) -> np.ndarray:
        return dynamic_mask(self.p, static_threshold)

    @classmethod
    def from_points(cls, xyz, rgb=None, sh_degree: int = 0, opacity: float = 0.1,
                    p: float = 0.5, scene_extent: float | None = None) -> "GaussianSet":
        """Initialize from a point cloud the way 3DGS does.

        Isotropic scale from the mean squared distance to the 3 nearest
        neighbours, identity rotation, low uniform opacity.
        """
        from scipy.spatial import cKDTree

        xyz = np.asarray(xyz, dtype=np.float64)
        P = len(xyz)
        if rgb is None:
            rgb = np.full((P, 3), 0.5)
        if P > 1:
            kk = min(4, P)
            d, _ = cKDTree(xyz).query(xyz, k=kk)
            d2 = np.maximum((d[:, 1:] ** 2).mean(axis=1), 1e-7)
        else:
            d2 = np.array([1e-2])
        color = np.zeros((P, (sh_degree + 1) ** 2, 3))
        color[:, 0] = rgb_to_sh(rgb)
        rot = np.zeros((P, 4))
        rot[:, 0] = 1.0
        if scene_extent is None:
            scene_extent = bounding_radius(xyz)
        return cls(
            x_star=xyz.copy(),
            log_scale=np.repeat(np.log(np.sqrt(d2))[:, None], 3, axis=1),
            rotation=rot,
            opacity_logit=np.full(P, inverse_sigmoid(opacity)),
            color=color,
            dyn_logit=np.full(P, inverse_sigmoid(p)),
            scene_extent=float(scene_extent),
        )

    def copy(self) -> "GaussianSet":
        return replace(self, **{f: np.array(getattr(self, f)) for f in ARRAY_FIELDS})


ARRAY_FIELDS = ("x_star", "log_scale", "rotation", "opacity_logit", "color",
                "dyn_logit", "grad_accum", "grad_count")


def bounding_radius(xyz) -> float:
    xyz = np.asarray(xyz, dtype=np.float64)
    center = 0.5 * (xyz.min(axis=0) + xyz.max(axis=0))
    r = float(np.linalg.norm(xyz - center, axis=1).max())
    return r if r > 0 else 1.0


def covariance(scale, rotation):
    """``R diag(s)^2 R^T`` for activated scales ``(P, 3)`` and unit quaternions ``(P, 4)``."""
    qn = np.linalg.norm(ad.value(rotation), axis=-1)
    if np.any(np.abs(qn - 1.0) > 1e-6):
        raise ValueError("covariance needs unit quaternions")
    R = ad.quat_to_rotmat(rotation)
    s2 = scale * scale
    return ad.einsum("pij,pj,pkj->pik", R, s2, R)


def eval_sh(features, dirs, degree: int):
    """Colour from SH ``features (P, n, 3)`` along unit view directions ``(P, 3)``."""
    out = features[:, 0] * SH_C0
    if degree < 1:
        return out
    x, y, z = dirs[:, 0:1], dirs[:, 1:2], dirs[:, 2:3]
    out = (out - features[:, 1] * (SH_C1 * y) + features[:, 2] * (SH_C1 * z)
           - features[:, 3] * (SH_C1 * x))
    if degree < 2:
        return out
    xx, yy, zz, xy, yz, xz = x * x, y * y, z * z, x * y, y * z, x * z
    out = (out + features[:, 4] * (SH_C2[0] * xy) + features[:, 5] * (SH_C2[1] * yz)
           + features[:, 6] * (SH_C2[2] * (2.0 * zz - xx - yy))
           + features[:, 7] * (SH_C2[3] * xz) + features[:, 8] * (SH_C2[4] * (xx - yy)))
    if degree < 3:
        return out
    return (out + features[:, 9] * (SH_C3[0] * y * (3.0 * xx - yy))
            + features[:, 10] * (SH_C3[1] * xy * z)
            + features[:, 11] * (SH_C3[2] * y * (4.0 * zz - xx - yy))
            + features[:, 12] * (SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy))
            + features[:, 13] * (SH_C3[4] * x * (4.0 * zz - xx - yy))
            + features[:, 14] * (SH_C3[5] * z * (xx - yy))
            + features[:, 15] * (SH_C3[6] * x * (xx - 3.0 * yy)))


@dataclass
class Snapshot:
    """Gaussians at one time, ready for projection. Fields may be tape variables."""

    mean: object
    log_scale: object
    rotation: object
    cov: object
    opacity: object
    features: object
    p: object
    dynamic: np.ndarray
    sh_degree: int = 0
    depth: np.ndarray | None = None

    def __len__(self):
        return ad.value(self.mean).shape[0]

    def colors(self, cam_center):
        """RGB per Gaussian for a camera at ``cam_center``, clamped to [0, 1]."""
        if self.sh_degree == 0:
            rgb = self.features[:, 0] * SH_C0
        else:
            dirs = ad.normalize(self.mean - np.asarray(cam_center), what="view direction")
            rgb = eval_sh(self.features, dirs, self.sh_degree)
        return ad.clip(rgb + 0.5, 0.0, 1.0)


PARAM_NAMES = ("xyz", "log_scale", "rotation", "opacity", "color", "dyn")
MOTION_NAMES = ("net", "theta", "lam", "eta")


def model_values(gs: GaussianSet, net: CoefficientNet | None = None,
                 basis: MotionBasis | None = None) -> dict:
    """Plain-array view of every learnable quantity, keyed like the optimizer groups."""
    vals = {"xyz": gs.x_star, "log_scale": gs.log_scale, "rotation": gs.rotation,
            "opacity": gs.opacity_logit, "color": gs.color, "dyn": gs.dyn_logit}
    if net is not None:
        vals["net"] = net.params
    if basis is not None:
        vals.update(theta=basis.theta, lam=basis.lam, eta=basis.eta)
    return vals


def motion_coefficients(net: CoefficientNet, x_star, dyn_idx, params=None):
    return net.coefficients(ad.detach(x_star)[dyn_idx], params)


def snapshot_at(gs: GaussianSet, net: CoefficientNet | None, basis: MotionBasis | None,
                t: float, v: dict | None = None, dynamic: np.ndarray | None = None,
                coeffs=None, static_threshold: float = 0.8) -> Snapshot:
    """Assemble the scene at time ``t``.

    ``v`` maps parameter names to tape variables (training) and defaults to the
    stored arrays. Dynamic Gaussians are moved by the motion field; static ones
    keep their global primitives. Passing ``net=None`` disables motion.
    """
    if v is None:
        v = model_values(gs, net, basis)
    if dynamic is None:
        dynamic = gs.dynamic(static_threshold)
    if basis is not None and not (0 <= t <= basis.n_frames - 1):
        raise ValueError(f"time {t} outside [0, {basis.n_frames - 1}]")
    P = len(gs)
    x_star, s_star, r_star = v["xyz"], v["log_scale"], v["rotation"]
    dyn_idx = np.flatnonzero(dynamic)
    if net is None or basis is None or dyn_idx.size == 0:
        mean, log_scale = x_star, s_star
        rot = ad.normalize(r_star, what="rotation quaternion")
    else:
        if coeffs is None:
            coeffs = motion_coefficients(net, x_star, dyn_idx, v.get("net"))
        bases = (v.get("theta", basis.theta), v.get("lam", basis.lam), v.get("eta", basis.eta))
        dpos, dscale, drot = residuals(coeffs, bases, t)
        mean = x_star + ad.scatter(dpos, dyn_idx, (P, 3))
        log_scale = s_star + ad.scatter(dscale, dyn_idx, (P, 3))
        rot = ad.normalize(r_star + ad.scatter(drot, dyn_idx, (P, 4)), what="rotation quaternion")
    cov = covariance(ad.exp(log_scale), rot)
    return Snapshot(mean=mean, log_scale=log_scale, rotation=rot, cov=cov,
                    opacity=ad.sigmoid(v["opacity"]), features=v["color"],
                    p=ad.sigmoid(v["dyn"]), dynamic=np.asarray(dynamic, dtype=bool),
                    sh_degree=gs.sh_degree)


@dataclass
class DensifyConfig:
    grad_threshold_static: float = 4e-4
    grad_threshold_dynamic: float = 8e-4
    percent_dense: float = 0.01
    split_factor: float = 1.6
    n_split: int = 2
    opacity_floor: float = 0.005
    static_threshold: float = 0.8
    max_gaussians: int | None = None


@dataclass
class DensifyResult:
    gaussians: GaussianSet
    source: np.ndarray   # row in the old set each new row came from
    fresh: np.ndarray    # True where the row is newly created (no optimizer history)
    n_cloned: int = 0
    n_split: int = 0
    n_pruned: int = 0


def densify_and_prune(gs: GaussianSet, cfg: DensifyConfig = DensifyConfig(),
                      rng: np.random.Generator | None = None) -> DensifyResult:
    """Clone small / split large high-gradient Gaussians, then prune transparent ones.

    The mean 2D positional gradient of each Gaussian is compared against the
    threshold of its class; dynamic Gaussians use the larger one.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    P = len(gs)
    mean_grad = np.where(gs.grad_count > 0, gs.grad_accum / np.maximum(gs.grad_count, 1), 0.0)
    thresh = np.where(gs.dynamic(cfg.static_threshold),
                      cfg.grad_threshold_dynamic, cfg.grad_threshold_static)
    hot = mean_grad >= thresh
    if cfg.max_gaussians is not None:
        room = max(cfg.max_gaussians - P, 0)
        if hot.sum() > room:
            order = np.argsort(-mean_grad, kind="stable")
            keep_hot = np.zeros(P, dtype=bool)
            keep_hot[order[:room]] = True
            hot &= keep_hot
    big = np.exp(gs.log_scale).max(axis=1) > cfg.percent_dense * gs.scene_extent
    clone = hot & ~big
    split = hot & big

    fields = {f: getattr(gs, f) for f in ARRAY_FIELDS[:6]}
    rows = {f: [v[~split]] for f, v in fields.items()}
    source = [np.flatnonzero(~split)]
    fresh = [np.zeros((~split).sum(), dtype=bool)]

    ci = np.flatnonzero(clone)
    for f, v in fields.items():
        rows[f].append(v[ci])
    source.append(ci)
    fresh.append(np.ones(ci.size, dtype=bool))

    si = np.flatnonzero(split)
    if si.size:
        scale = np.exp(gs.log_scale[si])
        R = ad.quat_to_rotmat(gs.rotation[si] / np.linalg.norm(gs.rotation[si], axis=1, keepdims=True))
        for _ in range(cfg.n_split):
            offs = rng.normal(size=(si.size, 3)) * scale
            rows["x_star"].append(gs.x_star[si] + np.einsum("pij,pj->pi", R, offs))
            rows["log_scale"].append(gs.log_scale[si] - np.log(cfg.split_factor))
            for f in ("rotation", "opacity_logit", "color", "dyn_logit"):
                rows[f].append(fields[f][si])
            source.append(si)
            fresh.append(np.ones(si.size, dtype=bool))

    new = {f: np.concatenate(r, axis=0) for f, r in rows.items()}
    source = np.concatenate(source)
    fresh = np.concatenate(fresh)

    keep = sigmoid(new["opacity_logit"]) >= cfg.opacity_floor
    if not keep.any():
        raise ValueError("pruning would remove every Gaussian")
    new = {f: v[keep] for f, v in new.items()}
    out = GaussianSet(**new, scene_extent=gs.scene_extent)
    res = DensifyResult(out, source[keep], fresh[keep], int(ci.size), int(si.size),
                        int((~keep).sum()))
    log.debug("densify: cloned %d split %d pruned %d -> %d", res.n_cloned, res.n_split,
              res.n_pruned, len(out))
    return res
