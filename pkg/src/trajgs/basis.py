"""Low-rank trajectory bases.

A set of ``P`` point trajectories over ``N`` frames is stacked frame-major into
``X`` of shape ``(N*3, P)``; row ``3*t + c`` holds coordinate ``c`` of every
point at frame ``t``. With a per-frame basis ``B`` of shape ``(N, k)`` the
factorization is ``X = Theta @ A`` where ``Theta = kron(B, I3)`` and ``A`` has
shape ``(3*k, P)`` (one coefficient per basis vector and axis, row ``3*j + c``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


def dct_basis(n_frames: int, n_bases: int) -> np.ndarray:
    """Orthonormal DCT-II basis, shape ``(n_frames, n_bases)``."""
    if n_bases < 1 or n_frames < 1:
        raise ValueError("need at least one frame and one basis vector")
    if n_bases > n_frames:
        raise ValueError(f"{n_bases} bases over {n_frames} frames would be over-complete")
    t = np.arange(n_frames)[:, None]
    j = np.arange(n_bases)[None, :]
    B = np.cos(np.pi * (2 * t + 1) * j / (2 * n_frames))
    B *= np.where(j == 0, np.sqrt(1.0 / n_frames), np.sqrt(2.0 / n_frames))
    return B


def evaluate(basis, t: float):
    """Row of ``basis`` at (possibly fractional) frame ``t``, linearly interpolated.

    Works on arrays and on tape variables.
    """
    n = ad.value(basis).shape[0]
    if not (0 <= t <= n - 1):
        raise ValueError(f"time {t} outside [0, {n - 1}]")
    i = int(np.floor(t))
    f = t - i
    if f == 0.0:
        return basis[i]
    return basis[i] * (1.0 - f) + basis[i + 1] * f


def _check(X, B):
    X = np.asarray(X, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != 3 * B.shape[0]:
        raise ValueError(f"trajectory matrix {X.shape} does not match basis over {B.shape[0]} frames")
    return X, B


def fit_coefficients(X, B) -> np.ndarray:
    """Least-squares ``A`` with ``X ~= kron(B, I3) @ A``; returns ``(3k, P)``."""
    X, B = _check(X, B)
    N, k = B.shape
    P = X.shape[1]
    per_axis = X.reshape(N, 3 * P)  # columns (c, p) in row-major order
    if np.allclose(B.T @ B, np.eye(k), atol=1e-10):
        C = B.T @ per_axis
    else:
        C, *_ = np.linalg.lstsq(B, per_axis, rcond=None)
    return C.reshape(k * 3, P)


def reconstruct(B, A) -> np.ndarray:
    """``kron(B, I3) @ A`` without forming the Kronecker product."""
    B = np.asarray(B, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    N, k = B.shape
    if A.ndim != 2 or A.shape[0] != 3 * k:
        raise ValueError(f"coefficient matrix {A.shape} does not match {k} bases")
    P = A.shape[1]
    return (B @ A.reshape(k, 3 * P)).reshape(N * 3, P)


def stack_trajectories(traj) -> np.ndarray:
    """``(P, N, 3)`` per-point trajectories to the frame-major ``(N*3, P)`` layout."""
    traj = np.asarray(traj, dtype=np.float64)
    P, N, _ = traj.shape
    return traj.transpose(1, 2, 0).reshape(N * 3, P)


def unstack_trajectories(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    N3, P = X.shape
    return X.reshape(N3 // 3, 3, P).transpose(2, 0, 1)


@dataclass
class MotionBasis:
    """Learnable per-frame bases for position, scale and rotation residuals."""

    theta: np.ndarray
    lam: np.ndarray
    eta: np.ndarray
    learnable: bool = True

    @classmethod
    def dct(cls, n_frames: int, k: int = 40, l: int = 10, m: int = 10):  # noqa: E741
        return cls(dct_basis(n_frames, k), dct_basis(n_frames, l), dct_basis(n_frames, m))

    @property
    def n_frames(self) -> int:
        return self.theta.shape[0]

    @property
    def sizes(self) -> tuple[int, int, int]:
        return self.theta.shape[1], self.lam.shape[1], self.eta.shape[1]
