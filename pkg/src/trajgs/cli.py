"""Command-line entry point: ``python -m trajgs <command> ...``.

Exit codes: 0 success, 1 invalid input or usage, 2 failure while running.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise UsageError(message)


def parse_times(text: str, n_frames: int) -> list[float]:
    """``all``, ``a:b`` (inclusive integer range) or a comma list of reals."""
    text = text.strip()
    if text == "all":
        return [float(t) for t in range(n_frames)]
    if ":" in text:
        a, b = text.split(":")
        return [float(t) for t in range(int(a), int(b) + 1)]
    return [float(t) for t in text.split(",") if t]


def _camera(path, index: int):
    from .raster import Camera

    data = json.loads(Path(path).read_text())
    if isinstance(data, list):
        if not 0 <= index < len(data):
            raise ValueError(f"camera index {index} outside 0..{len(data) - 1}")
        data = data[index]
    return Camera.from_dict(data)


def cmd_train(a):
    from .io import load_dataset, write_json
    from .trainer import Checkpoint, TrainConfig, Trainer

    ds = load_dataset(a.data)
    out = Path(a.out)
    if a.resume:
        tr = Trainer(ds, checkpoint=Checkpoint.load(a.resume))
    else:
        cfg = TrainConfig.from_json(a.config) if a.config else TrainConfig()
        if a.seed is not None:
            cfg.seed = a.seed
        if a.iters is not None:
            cfg.total_iters = a.iters
            TrainConfig.from_dict(cfg.to_dict())  # re-validate
        tr = Trainer(ds, cfg)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", tr.config.to_dict())
    tr.run(stop_at=a.stop_at, log_path=out / "metrics.ndjson")
    tr.checkpoint().save(out / "checkpoint.dgtj")
    print(f"wrote {out / 'checkpoint.dgtj'} after {tr.iteration} iterations, "
          f"{len(tr.gs)} Gaussians")


def cmd_render(a):
    from .io import write_png
    from .trainer import Checkpoint, render_view

    ck = Checkpoint.load(a.ckpt)
    img = render_view(ck, _camera(a.camera, a.index), a.time, channel=a.channel)
    write_png(a.out, img)


def cmd_eval(a):
    from .io import load_dataset, write_json
    from .trainer import Checkpoint, evaluate

    res = evaluate(Checkpoint.load(a.ckpt), load_dataset(a.data), a.split)
    if a.out:
        write_json(a.out, res)
    print(f"{a.split}: PSNR {res['psnr']:.3f} dB  SSIM {res['ssim']:.4f}  ({len(res['frames'])} views)")


def cmd_export(a):
    from .io import write_trajectory_csv
    from .trainer import Checkpoint, export_trajectories

    ck = Checkpoint.load(a.ckpt)
    times = parse_times(a.times, ck.basis.n_frames)
    write_trajectory_csv(a.out, export_trajectories(ck, times, a.subset))


def cmd_synth(a):
    from .synthetic import SyntheticSpec, generate_synthetic

    spec = SyntheticSpec.from_dict(json.loads(Path(a.spec).read_text())) if a.spec else SyntheticSpec()
    if a.seed is not None:
        spec.seed = a.seed
    generate_synthetic(spec, a.out)
    print(f"wrote synthetic dataset to {a.out}")


def cmd_gradcheck(a):
    from . import gradcheck

    reports = gradcheck.run([a.module] if a.module else None, seed=a.seed or 0)
    for r in reports:
        print(r)
    worst = max(r.rel_error for r in reports)
    print(f"max relative error {worst:.3e} (tolerance {a.tol:g})")
    if worst >= a.tol:
        raise RuntimeError("gradient check failed")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="trajgs", description="Dynamic Gaussian splatting with trajectory bases.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("train", help="train on a dataset directory")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--iters", type=int, help="override total_iters")
    s.add_argument("--resume", help="continue from a checkpoint file")
    s.add_argument("--stop-at", type=int, help="stop early at this iteration")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("render", help="render one view from a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--camera", required=True, help="camera JSON object or cameras.json list")
    s.add_argument("--index", type=int, default=0, help="entry to use when --camera is a list")
    s.add_argument("--time", type=float, required=True)
    s.add_argument("--channel", choices=("color", "mask"), default="color")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("eval", help="PSNR/SSIM on a dataset split")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", default="test", choices=("train", "test"))
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("export-traj", help="write Gaussian trajectories as CSV")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--times", default="all", help="'all', 'a:b' or a comma list")
    s.add_argument("--subset", choices=("dynamic", "all"), default="dynamic")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export)

    s = sub.add_parser("synth", help="generate a synthetic dataset with ground truth")
    s.add_argument("--spec", help="JSON file of SyntheticSpec fields")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    s.add_argument("--module")
    s.add_argument("--tol", type=float, default=1e-3)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    from .checkpoint import CheckpointError

    try:
        args = build_parser().parse_args(argv)
    except UsageError:
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except np.linalg.LinAlgError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILED
    except (ValueError, KeyError, FileNotFoundError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as e:  # noqa: BLE001
        print(f"failed: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
