"""Dynamic 3D Gaussian splatting with learnable trajectory bases, in NumPy.

Modules, bottom up: ``autodiff`` (reverse-mode tape), ``optim`` (Adam and
schedules), ``basis`` (DCT trajectory bases), ``motion`` (coefficient MLP),
``gaussians`` (primitives, snapshots, densification), ``raster`` (projection
and tiled compositing), ``losses`` and ``metrics``, ``trainer``, ``io``,
``synthetic`` and ``cli``.
"""
from .basis import MotionBasis, dct_basis, fit_coefficients, reconstruct
from .gaussians import GaussianSet, snapshot_at
from .io import Dataset, load_dataset
from .metrics import image_metrics, psnr, ssim
from .motion import CoefficientNet
from .raster import Camera, render
from .synthetic import SyntheticSpec, generate_synthetic
from .trainer import Checkpoint, TrainConfig, Trainer, evaluate, export_trajectories, train

__version__ = "0.1.0"

__all__ = ["Camera", "Checkpoint", "CoefficientNet", "Dataset", "GaussianSet", "MotionBasis",
           "SyntheticSpec", "TrainConfig", "Trainer", "dct_basis", "evaluate",
           "export_trajectories", "fit_coefficients", "generate_synthetic", "image_metrics",
           "load_dataset", "psnr", "reconstruct", "render", "snapshot_at", "ssim", "train"]
