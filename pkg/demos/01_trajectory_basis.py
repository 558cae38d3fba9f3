"""
Trajectory bases
================

Point trajectories over N frames are stacked into one matrix and written as a
small set of per-frame basis vectors times per-point coefficients. Here we
use the DCT basis, fit a few wobbling points, and see how the error falls as
more basis vectors are kept.
"""

import numpy as np

from trajgs.basis import (dct_basis, fit_coefficients, reconstruct, stack_trajectories,
                          unstack_trajectories)

N, P = 30, 5
rng = np.random.default_rng(0)

# the basis is orthonormal: B^T B is the identity
B = dct_basis(N, N)
print("Gram deviation:", np.abs(B.T @ B - np.eye(N)).max())

# a few sinusoidal trajectories, one to two cycles over the sequence
t = np.arange(N)
freq = rng.uniform(0.5, 1.5, size=P)
amp = rng.normal(scale=0.1, size=(P, 3))
traj = amp[:, None, :] * np.sin(2 * np.pi * freq[:, None, None] * t[None, :, None] / N)
X = stack_trajectories(traj)
print("stacked matrix:", X.shape)

for k in (2, 5, 10, 20, 30):
    Bk = dct_basis(N, k)
    A = fit_coefficients(X, Bk)
    err = np.abs(reconstruct(Bk, A) - X).max()
    print(f"k={k:2d}  coefficients {A.shape}  max error {err:.2e}")

# low frequencies dominate, so ten vectors already hold most of the motion
A10 = fit_coefficients(X, dct_basis(N, 10))
back = unstack_trajectories(reconstruct(dct_basis(N, 10), A10))
print("point 0, x over time (first 6 frames):")
print(np.c_[traj[0, :6, 0], back[0, :6, 0]])
