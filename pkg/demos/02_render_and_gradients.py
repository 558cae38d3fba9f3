"""
Rendering and its gradients
===========================

A handful of anisotropic Gaussians are projected through a pinhole camera and
composited front to back. Every step records onto a tape, so one backward pass
gives gradients for positions, scales, rotations, opacities and colours. We
compare those against central differences.
"""

import numpy as np

from trajgs import autodiff as ad
from trajgs.gaussians import model_values, snapshot_at
from trajgs.gradcheck import small_camera, small_scene
from trajgs.optim import ParamGroup, StepDecay, fd_gradient, relative_error
from trajgs.raster import render

rng = np.random.default_rng(2)
gs = small_scene(rng, n=10)
cam = small_camera(size=16)

img = render(snapshot_at(gs, None, None, 0), cam, background=np.array([0.0, 0.0, 0.0]))
print("image", img.shape, "range", img.min().round(3), img.max().round(3))

# a tiny ASCII preview of the luminance
lum = img.mean(axis=2)
for row in lum[::2]:
    print("".join(" .:-=+*#%@"[min(int(v * 10), 9)] for v in row[::1]))

target = rng.uniform(size=img.shape)
values = model_values(gs)


def loss(v):
    return ad.mean((render(snapshot_at(gs, None, None, 0, v), cam) - target) ** 2)


tape = ad.Tape()
grads = tape.backward(loss({k: tape.param(k, a) for k, a in values.items()}))

for name in ("xyz", "log_scale", "rotation", "opacity", "color"):
    group = ParamGroup(name, values[name].copy(), StepDecay(1.0))
    num = fd_gradient(lambda: ad.value(loss({**values, name: group.values})), group, 1e-6)
    print(f"{name:10s} relative error {relative_error(grads[name], num):.2e}")
