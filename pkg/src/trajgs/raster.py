"""Pinhole projection of 3D Gaussians and front-to-back alpha compositing.

Pixel centres sit at integer coordinates (OpenCV convention). Compositing is
one tape primitive with a hand-written adjoint; projection is built from
ordinary tape ops.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

ALPHA_MIN = 1.0 / 255.0
T_MIN = 1e-4
LOW_PASS = 0.3


@dataclass
class Camera:
    K: np.ndarray        # 3x3 intrinsics
    W: np.ndarray        # 4x4 world-to-camera
    width: int
    height: int
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=np.float64)
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.K.shape != (3, 3) or self.W.shape != (4, 4):
            raise ValueError("camera needs a 3x3 K and a 4x4 W")
        if self.K[0, 0] <= 0 or self.K[1, 1] <= 0:
            raise ValueError("focal lengths must be positive")
        Rw = self.W[:3, :3]
        if np.abs(Rw @ Rw.T - np.eye(3)).max() > 1e-8:
            raise ValueError("world-to-camera rotation is not orthonormal")
        if not self.near < self.far:
            raise ValueError("near plane must be in front of far plane")

    @property
    def fx(self):
        return self.K[0, 0]

    @property
    def fy(self):
        return self.K[1, 1]

    @property
    def cx(self):
        return self.K[0, 2]

    @property
    def cy(self):
        return self.K[1, 2]

    @property
    def center(self) -> np.ndarray:
        return -self.W[:3, :3].T @ self.W[:3, 3]

    @classmethod
    def from_intrinsics(cls, fx, fy, cx, cy, W, width, height, **kw):
        K = np.array([[fx, 0, cx], [0, fy, cy], [0, 0, 1.0]])
        return cls(K, W, int(width), int(height), **kw)

    @classmethod
    def look_at(cls, eye, target, up, fx, fy, width, height, cx=None, cy=None, **kw):
        """Camera at ``eye`` looking at ``target``; +x right, +y down, +z forward."""
        eye, target, up = (np.asarray(a, dtype=np.float64) for a in (eye, target, up))
        z = target - eye
        z /= np.linalg.norm(z)
        x = np.cross(z, up)
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        R = np.stack([x, y, z])
        W = np.eye(4)
        W[:3, :3] = R
        W[:3, 3] = -R @ eye
        cx = (width - 1) / 2 if cx is None else cx
        cy = (height - 1) / 2 if cy is None else cy
        return cls.from_intrinsics(fx, fy, cx, cy, W, width, height, **kw)

    def to_dict(self) -> dict:
        return {"K": [self.fx, self.fy, self.cx, self.cy], "W": self.W.tolist(),
                "width": self.width, "height": self.height,
                "near": self.near, "far": self.far}

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        fx, fy, cx, cy = d["K"]
        W = np.asarray(d["W"], dtype=np.float64).reshape(4, 4)
        extra = {k: d[k] for k in ("near", "far") if k in d}
        return cls.from_intrinsics(fx, fy, cx, cy, W, d["width"], d["height"], **extra)


@dataclass
class Projection:
    index: np.ndarray     # rows of the snapshot that survived culling
    mean2d: object        # (G, 2) pixels
    cov2d: object         # (G, 2, 2) pixels^2, low-pass included
    depth: np.ndarray     # (G,) camera-space z


def project(mean, cov, cam: Camera, low_pass: float = LOW_PASS) -> Projection:
    """Perspective-project means and covariances; cull outside (near, far)."""
    Wr, Wt = cam.W[:3, :3], cam.W[:3, 3]
    tz_all = ad.value(mean) @ Wr[2] + Wt[2]
    idx = np.flatnonzero((tz_all > cam.near) & (tz_all < cam.far))
    mean = ad.getitem(mean, idx)
    cov = ad.getitem(cov, idx)
    tc = ad.einsum("ij,pj->pi", Wr, mean) + Wt
    tx, ty, tz = tc[:, 0], tc[:, 1], tc[:, 2]
    inv_z = 1.0 / tz
    u = tx * inv_z * cam.fx + cam.cx
    v = ty * inv_z * cam.fy + cam.cy
    mean2d = ad.stack([u, v], axis=1)
    zero = np.zeros(idx.size)
    J = ad.stack([
        ad.stack([cam.fx * inv_z, zero, -cam.fx * tx * inv_z * inv_z], axis=1),
        ad.stack([zero, cam.fy * inv_z, -cam.fy * ty * inv_z * inv_z], axis=1),
    ], axis=1)
    cov_cam = ad.einsum("ij,pjk,lk->pil", Wr, cov, Wr)
    cov2d = ad.einsum("pij,pjk,plk->pil", J, cov_cam, J) + low_pass * np.eye(2)
    return Projection(idx, mean2d, cov2d, ad.value(tz).copy())


def _conic(cov2d: np.ndarray) -> np.ndarray:
    a, b, c, d = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 0], cov2d[:, 1, 1]
    det = a * d - b * c
    if np.any(~(det > 0)) or np.any(a <= 0):
        raise np.linalg.LinAlgError("projected covariance is singular or indefinite")
    inv = np.empty_like(cov2d)
    inv[:, 0, 0] = d / det
    inv[:, 0, 1] = -b / det
    inv[:, 1, 0] = -c / det
    inv[:, 1, 1] = a / det
    return inv


def _pixel_grid(x0, x1, y0, y1):
    ys, xs = np.mgrid[y0:y1, x0:x1]
    return np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)


class _Block:
    """Compositing of one pixel block against a depth-sorted Gaussian list."""

    def __init__(self, px, gidx, m, conic, o, vals, bg):
        self.px, self.gidx = px, gidx
        self.m, self.conic, self.o, self.vals = m[gidx], conic[gidx], o[gidx], vals[gidx]
        d = px[:, None, :] - self.m[None, :, :]
        self.dx, self.dy = d[..., 0], d[..., 1]
        cf = self.conic
        power = -0.5 * (cf[:, 0, 0] * self.dx * self.dx
                        + (cf[:, 0, 1] + cf[:, 1, 0]) * self.dx * self.dy
                        + cf[:, 1, 1] * self.dy * self.dy)
        alpha = self.o[None, :] * np.exp(power)
        valid = alpha >= ALPHA_MIN
        a = np.where(valid, alpha, 0.0)
        om = 1.0 - a
        T_incl = np.cumprod(om, axis=1)
        T_excl = np.ones_like(T_incl)
        T_excl[:, 1:] = T_incl[:, :-1]
        contrib = valid & (T_excl >= T_MIN)
        self.alpha, self.contrib, self.T_excl, self.T_incl = alpha, contrib, T_excl, T_incl
        self.w = np.where(contrib, a * T_excl, 0.0)
        self.T_end = np.where(contrib, om, 1.0).prod(axis=1)
        self.bg = bg
        self.out = self.w @ self.vals + self.T_end[:, None] * bg[None, :]

    def backward(self, dC):
        s = dC @ self.vals.T                              # (N, G)
        ws = self.w * s
        suffix = np.zeros_like(ws)
        suffix[:, :-1] = np.cumsum(ws[:, ::-1], axis=1)[:, ::-1][:, 1:]
        bgdot = dC @ self.bg                              # (N,)
        num = suffix + (self.T_end * bgdot)[:, None]
        Tn = self.T_incl
        pos = Tn > 0
        rdot = np.where(pos, num / np.where(pos, Tn, 1.0), bgdot[:, None])
        da = np.where(self.contrib, self.T_excl * (s - rdot), 0.0)
        dvals = self.w.T @ dC
        dpower = da * self.alpha
        do = (da * np.where(self.contrib, self.alpha, 0.0)).sum(axis=0) / self.o
        cf = self.conic
        c01 = cf[:, 0, 1] + cf[:, 1, 0]
        dmx = (dpower * (cf[:, 0, 0] * self.dx + 0.5 * c01 * self.dy)).sum(axis=0)
        dmy = (dpower * (cf[:, 1, 1] * self.dy + 0.5 * c01 * self.dx)).sum(axis=0)
        dconic = np.empty((self.gidx.size, 2, 2))
        dconic[:, 0, 0] = -0.5 * (dpower * self.dx * self.dx).sum(axis=0)
        dconic[:, 1, 1] = -0.5 * (dpower * self.dy * self.dy).sum(axis=0)
        dconic[:, 0, 1] = dconic[:, 1, 0] = -0.5 * (dpower * self.dx * self.dy).sum(axis=0)
        return np.stack([dmx, dmy], axis=1), dconic, do, dvals


def _extents(m, cov2d, o):
    """Half-widths of the box outside which alpha < 1/255 for every pixel."""
    r2 = 2.0 * np.log(np.maximum(o, 1e-300) * 255.0)
    r = np.sqrt(np.maximum(r2, 0.0))
    hx = r * np.sqrt(cov2d[:, 0, 0])
    hy = r * np.sqrt(cov2d[:, 1, 1])
    alive = r2 >= 0
    return hx, hy, alive


def rasterize(mean2d, cov2d, opacity, values, depth, width: int, height: int,
              background=None, tile: int | None = 16):
    """Composite ``values`` of 2D Gaussians front-to-back into an ``(H, W, C)`` image.

    ``tile=None`` runs the reference path (every pixel against every Gaussian);
    a tile size bins Gaussians by their alpha-support box first.
    """
    m = ad.value(mean2d)
    cv = ad.value(cov2d)
    o = ad.value(opacity)
    vals = ad.value(values)
    G = m.shape[0]
    C = vals.shape[1] if vals.ndim == 2 else 1
    vals = vals.reshape(G, C)
    bg = np.zeros(C) if background is None else np.broadcast_to(
        np.asarray(background, dtype=np.float64), (C,)).copy()
    conic = _conic(cv) if G else np.zeros((0, 2, 2))
    order = np.argsort(depth, kind="stable")
    image = np.empty((height, width, C))
    blocks = []
    if tile is None:
        regions = [(0, width, 0, height, order)]
    else:
        hx, hy, alive = _extents(m, cv, o)
        eps = 1e-6
        regions = []
        for y0 in range(0, height, tile):
            y1 = min(y0 + tile, height)
            for x0 in range(0, width, tile):
                x1 = min(x0 + tile, width)
                hit = (alive[order]
                       & (m[order, 0] + hx[order] >= x0 - eps) & (m[order, 0] - hx[order] <= x1 - 1 + eps)
                       & (m[order, 1] + hy[order] >= y0 - eps) & (m[order, 1] - hy[order] <= y1 - 1 + eps))
                regions.append((x0, x1, y0, y1, order[hit]))
    for x0, x1, y0, y1, gidx in regions:
        px = _pixel_grid(x0, x1, y0, y1)
        blk = _Block(px, gidx, m, conic, o, vals, bg)
        image[y0:y1, x0:x1] = blk.out.reshape(y1 - y0, x1 - x0, C)
        blocks.append((x0, x1, y0, y1, blk))

    cache = {}

    def grads(g):
        if cache.get("g") is not g:
            dm = np.zeros((G, 2))
            dconic = np.zeros((G, 2, 2))
            do = np.zeros(G)
            dv = np.zeros((G, C))
            for x0, x1, y0, y1, blk in blocks:
                if blk.gidx.size == 0:
                    continue
                bm, bc, bo, bv = blk.backward(g[y0:y1, x0:x1].reshape(-1, C))
                dm[blk.gidx] += bm
                dconic[blk.gidx] += bc
                do[blk.gidx] += bo
                dv[blk.gidx] += bv
            dcov = -np.einsum("pji,pjk,plk->pil", conic, dconic, conic)
            cache.update(g=g, out=(dm, dcov, do, dv))
        return cache["out"]

    return ad.primitive(
        image, (mean2d, cov2d, opacity, values),
        (lambda g: grads(g)[0], lambda g: grads(g)[1], lambda g: grads(g)[2],
         lambda g: grads(g)[3].reshape(ad.value(values).shape)))


@dataclass
class RenderInfo:
    projection: Projection
    mean2d: object

    @property
    def index(self):
        return self.projection.index


def render(snapshot, cam: Camera, channel: str = "color", background=None,
           tile: int | None = 16, with_info: bool = False):
    """Render the colour (``H, W, 3``) or dynamic-mask (``H, W, 1``) image.

    The mask composites each Gaussian's dynamic probability with position,
    covariance and opacity detached, so only the probabilities receive
    gradient.
    """
    proj = project(snapshot.mean, snapshot.cov, cam)
    idx = proj.index
    opacity = ad.getitem(snapshot.opacity, idx)
    if channel == "color":
        values = ad.getitem(snapshot.colors(cam.center), idx)
        mean2d, cov2d = proj.mean2d, proj.cov2d
        bg = np.zeros(3) if background is None else background
    elif channel == "mask":
        values = ad.reshape(ad.getitem(snapshot.p, idx), (idx.size, 1))
        mean2d, cov2d = ad.detach(proj.mean2d), ad.detach(proj.cov2d)
        opacity = ad.detach(opacity)
        bg = np.zeros(1)
    else:
        raise ValueError(f"unknown channel {channel!r}")
    img = rasterize(mean2d, cov2d, opacity, values, proj.depth, cam.width, cam.height,
                    bg, tile)
    if with_info:
        return img, RenderInfo(proj, mean2d)
    return img


def accumulate_grad_stats(gs, info: RenderInfo, tape, width: int, height: int):
    """Add this view's screen-space positional gradient norms into ``gs``.

    Norms are taken in normalized device units (pixels scaled by half the
    image size), the convention the densification thresholds assume.
    """
    if not isinstance(info.mean2d, ad.Var) or info.index.size == 0:
        return
    g = tape.grad(info.mean2d)
    g = g * np.array([0.5 * width, 0.5 * height])
    gs.grad_accum[info.index] += np.linalg.norm(g, axis=1)
    gs.grad_count[info.index] += 1
