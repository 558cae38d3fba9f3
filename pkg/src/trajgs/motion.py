"""Motion trajectory field: positional encoding, coefficient MLP and deformation.

Each Gaussian's reference point ``x*`` is mapped (detached) to time-invariant
coefficients ``sigma (k, 3)``, ``beta (l, 3)`` and ``gamma (m, 4)``; combined
with the shared per-frame bases they give the Gaussian's position, log-scale
and rotation at any time.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .basis import MotionBasis, evaluate


def encode(x, n_freqs: int = 12) -> np.ndarray:
    """Sin/cos frequency encoding of ``(..., 3)`` points, ``2^f * pi`` for f < L.

    Layout is coordinate-major, frequency-inner, sin before cos, giving
    ``6 * n_freqs`` features per point.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot encode non-finite coordinates")
    freqs = (2.0 ** np.arange(n_freqs)) * np.pi
    ang = x[..., :, None] * freqs  # (..., 3, L)
    enc = np.stack([np.sin(ang), np.cos(ang)], axis=-1)  # (..., 3, L, 2)
    return enc.reshape(x.shape[:-1] + (6 * n_freqs,))


@dataclass
class CoefficientNet:
    """ReLU MLP from encoded reference points to trajectory coefficients.

    Weights live in one flat vector (``params``) so the optimizer can treat the
    whole network as a single parameter group; ``layout`` records the slices.
    """

    k: int = 40
    l: int = 10  # noqa: E741
    m: int = 10
    n_freqs: int = 12
    hidden: int = 128
    depth: int = 3
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    extent: float = 1.0
    params: np.ndarray = None

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        if self.params is None:
            self.params = np.zeros(sum(int(np.prod(s)) for _, s in self.layout))

    @property
    def in_dim(self) -> int:
        return 6 * self.n_freqs

    @property
    def layout(self) -> list[tuple[str, tuple]]:
        dims = [self.in_dim] + [self.hidden] * self.depth
        out = []
        for i in range(self.depth):
            out += [(f"W{i}", (dims[i], dims[i + 1])), (f"b{i}", (dims[i + 1],))]
        for head, width in (("sigma", 3 * self.k), ("beta", 3 * self.l), ("gamma", 4 * self.m)):
            out += [(f"W_{head}", (self.hidden, width)), (f"b_{head}", (width,))]
        return out

    @classmethod
    def initialized(cls, rng: np.random.Generator, **kw) -> "CoefficientNet":
        """Kaiming-uniform hidden layers, zero heads (coefficients start at 0)."""
        net = cls(**kw)
        chunks = []
        for name, shape in net.layout:
            if name.startswith("W") and not name.startswith("W_"):
                bound = np.sqrt(6.0 / shape[0])
                chunks.append(rng.uniform(-bound, bound, size=shape).ravel())
            else:
                chunks.append(np.zeros(int(np.prod(shape))))
        net.params = np.concatenate(chunks)
        return net

    def unpack(self, params=None) -> dict:
        params = self.params if params is None else params
        out, at = {}, 0
        for name, shape in self.layout:
            n = int(np.prod(shape))
            out[name] = ad.reshape(params[at:at + n], shape)
            at += n
        return out

    def normalize_points(self, x) -> np.ndarray:
        return (ad.detach(x) - self.center) / self.extent

    def coefficients(self, x_star, params=None):
        """``(sigma, beta, gamma)`` for points ``(n, 3)``.

        ``x_star`` is detached here; gradients reach only ``params``.
        """
        w = self.unpack(params)
        h = encode(self.normalize_points(x_star), self.n_freqs)
        n = h.shape[0]
        for i in range(self.depth):
            h = ad.relu(ad.matmul(h, w[f"W{i}"]) + w[f"b{i}"])
        sigma = ad.reshape(ad.matmul(h, w["W_sigma"]) + w["b_sigma"], (n, self.k, 3))
        beta = ad.reshape(ad.matmul(h, w["W_beta"]) + w["b_beta"], (n, self.l, 3))
        gamma = ad.reshape(ad.matmul(h, w["W_gamma"]) + w["b_gamma"], (n, self.m, 4))
        return sigma, beta, gamma

    def config(self) -> dict:
        return {"k": self.k, "l": self.l, "m": self.m, "n_freqs": self.n_freqs,
                "hidden": self.hidden, "depth": self.depth,
                "center": self.center.tolist(), "extent": self.extent}


def displacement(sigma, theta_t):
    return ad.einsum("nkc,k->nc", sigma, theta_t)


def residuals(coeffs, bases, t: float):
    """Position, log-scale and quaternion offsets at time ``t`` from coefficients."""
    sigma, beta, gamma = coeffs
    theta, lam, eta = bases
    return (displacement(sigma, evaluate(theta, t)),
            ad.einsum("nlc,l->nc", beta, evaluate(lam, t)),
            ad.einsum("nmc,m->nc", gamma, evaluate(eta, t)))


def deform(x_star, s_star, r_star, coeffs, basis: MotionBasis, t: float, bases=None):
    """Position, log-scale and unit quaternion of each Gaussian at time ``t``.

    ``bases`` optionally overrides ``(theta, lam, eta)`` with tape variables.
    """
    if bases is None:
        bases = (basis.theta, basis.lam, basis.eta)
    dpos, dscale, drot = residuals(coeffs, bases, t)
    rot = ad.normalize(r_star + drot, what="rotation quaternion")
    return x_star + dpos, s_star + dscale, rot
