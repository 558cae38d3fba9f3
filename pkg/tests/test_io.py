import json

import numpy as np
import pytest

from trajgs.io import (DatasetError, load_dataset, read_ply, read_png, read_trajectory_csv,
                       write_dataset, write_ply, write_png, write_trajectory_csv)
from trajgs.raster import Camera


def _cams(n, w=8, h=6):
    out = []
    for i in range(n):
        a = 2 * np.pi * i / n
        out.append(Camera.look_at(np.array([3 * np.cos(a), 3 * np.sin(a), 1.0]), np.zeros(3),
                                  np.array([0, 0, 1.0]), 7.5, 7.25, w, h))
    return out


def _write(root, n=3, masks=True, rng=None):
    rng = rng or np.random.default_rng(0)
    imgs = [rng.uniform(size=(6, 8, 3)) for _ in range(n)]
    ms = [(rng.uniform(size=(6, 8)) > 0.5).astype(float) for _ in range(n)] if masks else None
    write_dataset(root, _cams(n), range(n), ["train"] * n, imgs, ms,
                  points=rng.normal(size=(5, 3)), colors=rng.uniform(size=(5, 3)))
    return imgs, ms


def test_maskless_roundtrip(tmp_path):
    imgs, _ = _write(tmp_path, masks=False)
    ds = load_dataset(tmp_path)
    assert ds.n_frames == 3 and ds.mode == "maskless"
    for f, img, cam in zip(ds.frames, imgs, _cams(3)):
        np.testing.assert_allclose(f.camera.K, cam.K, atol=1e-12)
        np.testing.assert_allclose(f.camera.W, cam.W, atol=1e-12)
        np.testing.assert_array_equal(f.image(), np.rint(img * 255) / 255)
    assert ds.init_points.shape == (5, 3)


def test_masked_and_missing_mask(tmp_path):
    _, ms = _write(tmp_path)
    ds = load_dataset(tmp_path)
    assert ds.mode == "masked"
    np.testing.assert_array_equal(ds.frames[1].mask()[..., 0], ms[1])
    (tmp_path / "masks" / "00001.png").unlink()
    with pytest.raises(DatasetError, match="frame 1"):
        load_dataset(tmp_path)


def test_errors(tmp_path):
    with pytest.raises(DatasetError, match="cameras.json"):
        load_dataset(tmp_path)
    _write(tmp_path, masks=False)
    (tmp_path / "images" / "00002.png").unlink()
    with pytest.raises(DatasetError, match="images"):
        load_dataset(tmp_path)


def test_non_contiguous_times(tmp_path):
    _write(tmp_path, masks=False)
    cams = json.loads((tmp_path / "cameras.json").read_text())
    cams[2]["time"] = 5
    (tmp_path / "cameras.json").write_text(json.dumps(cams))
    with pytest.raises(DatasetError, match="contiguous"):
        load_dataset(tmp_path)


def test_png_roundtrip(tmp_path):
    img = np.linspace(0, 1, 24).reshape(2, 4, 3)
    write_png(tmp_path / "a.png", img)
    np.testing.assert_allclose(read_png(tmp_path / "a.png"), img, atol=0.5 / 255)


@pytest.mark.parametrize("binary", [True, False])
def test_ply_roundtrip(tmp_path, rng, binary):
    xyz = rng.normal(size=(7, 3))
    rgb = rng.uniform(size=(7, 3))
    write_ply(tmp_path / "p.ply", xyz, rgb, binary=binary)
    x2, c2 = read_ply(tmp_path / "p.ply")
    np.testing.assert_array_equal(x2, xyz)
    np.testing.assert_allclose(c2, np.rint(rgb * 255) / 255)


def test_ply_float_without_color(tmp_path):
    (tmp_path / "f.ply").write_text("ply\nformat ascii 1.0\ncomment x\nelement vertex 2\n"
                                    "property float x\nproperty float y\nproperty float z\n"
                                    "element face 0\nproperty list uchar int vertex_indices\n"
                                    "end_header\n0 1 2\n3.5 4 5\n")
    xyz, rgb = read_ply(tmp_path / "f.ply")
    np.testing.assert_array_equal(xyz, [[0, 1, 2], [3.5, 4, 5]])
    assert rgb is None


def test_csv_roundtrip(tmp_path, rng):
    rows = [(i, float(t), *rng.normal(size=3), rng.uniform()) for i in range(3) for t in (0, 1.5)]
    write_trajectory_csv(tmp_path / "t.csv", rows)
    tab = read_trajectory_csv(tmp_path / "t.csv")
    assert tab.dtype.names == ("gaussian_id", "t", "x", "y", "z", "p")
    for r, row in zip(tab, rows):
        assert tuple(r) == row
