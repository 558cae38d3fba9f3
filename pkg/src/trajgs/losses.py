"""Training losses: photometric, mask, binary entropy, ARAP and spatial smoothness."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import autodiff as ad
from .metrics import ssim

log = logging.getLogger(__name__)


@dataclass
class LossWeights:
    lambda_a: float = 0.3
    lambda_s: float = 0.6
    w_beta: float = 0.5
    w_gamma: float = 0.5
    dssim_mix: float = 0.2
    rho_w: float = 2000.0
    arap_samples: int = 2048
    knn_k: int = 20

    def __post_init__(self):
        for name, val in asdict(self).items():
            if val < 0:
                raise ValueError(f"loss weight {name} must be non-negative")

    def to_dict(self):
        return asdict(self)


def photometric(rendered, target, dssim_mix: float = 0.2):
    """``(1 - mix) * L1 + mix * (1 - SSIM)``."""
    tv = np.asarray(target, dtype=np.float64)
    if ad.value(rendered).shape != tv.shape:
        raise ValueError(f"rendered {ad.value(rendered).shape} vs target {tv.shape}")
    l1 = ad.mean(ad.abs(rendered - tv))
    if dssim_mix == 0:
        return l1 * 1.0
    return l1 * (1.0 - dssim_mix) + (1.0 - ssim(rendered, tv)) * dssim_mix


def mask_loss(rendered_mask, pseudo_mask):
    """Mean squared error between rendered and pseudo dynamic masks."""
    mv = np.asarray(pseudo_mask, dtype=np.float64)
    rv = ad.value(rendered_mask)
    if rv.shape != mv.shape:
        if rv.size == mv.size and rv.squeeze().shape == mv.squeeze().shape:
            mv = mv.reshape(rv.shape)
        else:
            raise ValueError(f"rendered mask {rv.shape} vs pseudo mask {mv.shape}")
    diff = rendered_mask - mv
    return ad.mean(diff * diff)


def entropy_loss(p, eps: float = 1e-6):
    """Mean binary entropy; pushes each probability toward 0 or 1."""
    q = ad.clip(p, eps, 1.0 - eps)
    h = q * ad.log(q) + (1.0 - q) * ad.log(1.0 - q)
    return -ad.mean(h)


@dataclass
class KnnIndex:
    members: np.ndarray     # (n,) global Gaussian indices
    neighbors: np.ndarray   # (n, k) global indices, nearest first, no self
    weights: np.ndarray     # (n, k) exp(-rho_w * d^2) at build time

    @property
    def k(self) -> int:
        return self.neighbors.shape[1]

    def __len__(self):
        return self.members.size


def build_knn(x_star, members, k: int = 20, rho_w: float = 2000.0) -> KnnIndex:
    """Neighbour lists among ``members`` at their reference positions."""
    members = np.asarray(members, dtype=np.int64)
    n = members.size
    k = min(k, n - 1)
    if k < 1:
        return KnnIndex(members, np.zeros((n, 0), dtype=np.int64), np.zeros((n, 0)))
    pts = np.asarray(x_star, dtype=np.float64)[members]
    d, j = cKDTree(pts).query(pts, k=k + 1)
    nbr = np.empty((n, k), dtype=np.int64)
    dist = np.empty((n, k))
    for r in range(n):
        keep = j[r] != r
        if keep.all():
            keep[-1] = False
        nbr[r] = j[r][keep][:k]
        dist[r] = d[r][keep][:k]
    return KnnIndex(members, members[nbr], np.exp(-rho_w * dist * dist))


def arap_loss(snap_prev, snap_cur, index: KnnIndex, sample=None):
    """As-rigid-as-possible residual between consecutive snapshots.

    ``sample`` selects rows of ``index`` (default: all). Each neighbour offset
    at ``t-1`` is compared with the offset at ``t`` carried back through the
    centre Gaussian's relative rotation ``R_prev R_cur^T``.
    """
    if len(index) == 0 or index.k == 0:
        log.debug("arap: no dynamic neighbourhoods, loss is 0")
        return 0.0
    rows = np.arange(len(index)) if sample is None else np.asarray(sample)
    ci = index.members[rows]
    nj = index.neighbors[rows]
    w = index.weights[rows]

    def offsets(snap):
        return ad.getitem(snap.mean, nj) - ad.reshape(ad.getitem(snap.mean, ci), (ci.size, 1, 3))

    Rp = ad.quat_to_rotmat(ad.getitem(snap_prev.rotation, ci))
    Rc = ad.quat_to_rotmat(ad.getitem(snap_cur.rotation, ci))
    rel = ad.einsum("sij,skj->sik", Rp, Rc)
    carried = ad.einsum("sik,snk->sni", rel, offsets(snap_cur))
    res = ad.norm(offsets(snap_prev) - carried, axis=-1)
    return ad.sum(res * w) * (1.0 / (index.k * rows.size))


def random_directions(rng: np.random.Generator, n: int) -> np.ndarray:
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def spatial_smoothness(net, points, eps: float, w_beta: float = 0.5, w_gamma: float = 0.5,
                       rng: np.random.Generator | None = None, params=None, directions=None):
    """Coefficient change under a small random perturbation of reference points."""
    pts = ad.detach(points)
    n = pts.shape[0]
    if n == 0:
        return 0.0
    if directions is None:
        directions = random_directions(rng if rng is not None else np.random.default_rng(), n)
    both = np.concatenate([pts, pts + eps * directions], axis=0)
    sigma, beta, gamma = net.coefficients(both, params)

    def term(c):
        diff = c[:n] - c[n:]
        return ad.mean(ad.norm(diff, axis=-1))

    return term(sigma) + term(beta) * w_beta + term(gamma) * w_gamma


def total_loss(components: dict, weights: LossWeights, it: int, late_stage: int,
               masked: bool = True):
    """Weighted sum. Missing components count as zero.

    The mask term is dropped without masks; the entropy term starts at
    ``late_stage``.
    """
    total = components.get("pho", 0.0)
    if masked:
        total = total + components.get("mask", 0.0)
        if it >= late_stage:
            total = total + components.get("entropy", 0.0)
    total = total + weights.lambda_a * components.get("arap", 0.0)
    total = total + weights.lambda_s * components.get("sp", 0.0)
    return total
