"""
测试评估指标：点云距离、IoU、MIP 上的 PSNR / SSIM
"""

import math

import numpy as np
import pytest

from backprojection import Volume
from errors import EmptyResultError, ShapeMismatchError
from metrics import (
    PSNR_CAP_DB,
    PointCloud,
    ProjectionImage,
    chamfer,
    evaluate,
    extract_points,
    hausdorff,
    iou,
    mip,
    psnr,
    ssim,
)


def _volume(values, voxel_size=1.0):
    values = np.asarray(values, dtype=np.float64)
    return Volume([0.0, 0.0, 0.0], voxel_size, values.shape, values)


def _brute_chamfer(a, b):
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    return 0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean())


def test_chamfer_and_hausdorff():
    """测试1: 手算的点云距离"""
    origin = PointCloud([[0.0, 0.0, 0.0]])
    assert chamfer(origin, PointCloud([[1.0, 0.0, 0.0]])) == 1.0
    assert hausdorff(PointCloud([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]), origin) == 2.0
    assert chamfer(origin, origin) == 0.0
    assert hausdorff(origin, origin) == 0.0
    with pytest.raises(EmptyResultError):
        chamfer(origin, PointCloud(np.zeros((0, 3))))


def test_chamfer_matches_brute_force():
    """测试2: KD 树实现与 O(|a||b|) 暴力实现一致，且 Hausdorff ≥ Chamfer"""
    rng = np.random.default_rng(0)
    for _ in range(10):
        a = rng.uniform(-1, 1, size=(rng.integers(1, 60), 3))
        b = rng.uniform(-1, 1, size=(rng.integers(1, 60), 3))
        value = chamfer(PointCloud(a), PointCloud(b))
        assert abs(value - _brute_chamfer(a, b)) <= 1e-12
        assert value == chamfer(PointCloud(b), PointCloud(a))
        assert hausdorff(PointCloud(a), PointCloud(b)) >= value


def test_iou():
    """测试3: 半重叠的单位厚度板 → 1/3"""
    a = _volume(np.array([1.0, 1.0, 0.0]).reshape(3, 1, 1))
    b = _volume(np.array([0.0, 1.0, 1.0]).reshape(3, 1, 1))
    assert math.isclose(iou(a, b), 1.0 / 3.0)
    assert iou(a, a) == 1.0
    assert iou(a, _volume(np.array([0.0, 0.0, 1.0]).reshape(3, 1, 1))) == 0.0
    assert iou(_volume(np.zeros((3, 1, 1))), _volume(np.zeros((3, 1, 1)))) == 1.0
    with pytest.raises(ShapeMismatchError):
        iou(a, _volume(np.ones((3, 1, 1)), voxel_size=2.0))


def test_psnr():
    """测试4: PSNR 的三个手算情形"""
    zeros = ProjectionImage(np.zeros((4, 4)))
    assert psnr(zeros, zeros) == PSNR_CAP_DB
    assert math.isclose(psnr(zeros, ProjectionImage(np.full((4, 4), 0.1))), 20.0, rel_tol=1e-9)
    assert math.isclose(psnr(zeros, ProjectionImage(np.ones((4, 4)))), 0.0, abs_tol=1e-12)
    with pytest.raises(ShapeMismatchError):
        psnr(zeros, ProjectionImage(np.zeros((4, 5))))


def test_ssim():
    """测试5: SSIM：相同图像为 1，高对比图案与其反相 < 0.2"""
    checker = (np.indices((32, 32)).sum(axis=0) // 4 % 2).astype(np.float64)
    image = ProjectionImage(checker)
    assert math.isclose(ssim(image, image), 1.0, abs_tol=1e-12)
    negated = ssim(image, ProjectionImage(1.0 - checker))
    print(f"反相 SSIM: {negated:.4f}")
    assert negated < 0.2

    flat = ProjectionImage(np.full((16, 16), 0.4))
    assert math.isclose(ssim(flat, flat), 1.0, abs_tol=1e-12)
    with pytest.raises(ShapeMismatchError):
        ssim(ProjectionImage(np.zeros((8, 8))), ProjectionImage(np.zeros((8, 8))))


def test_mip():
    """测试6: 单个非零体素 → 单个非零像素；最大值等于体的最大值"""
    values = np.zeros((4, 5, 6))
    values[1, 3, 2] = 7.0
    image = mip(_volume(values), axis=2)
    assert (image.height, image.width) == (4, 5)
    assert np.count_nonzero(image.pixels) == 1
    assert image.pixels[1, 3] == 1.0
    assert image.peak == 7.0
    assert np.all(mip(_volume(np.zeros((2, 2, 2)))).pixels == 0)


def test_extract_points():
    """测试7: 阈值与 top-fraction 两种取点方式"""
    values = np.zeros((3, 3, 3))
    values[2, 0, 1] = 1.0
    cloud = extract_points(_volume(values, voxel_size=0.5), threshold=0.5)
    assert len(cloud) == 1
    assert np.allclose(cloud.points[0], [1.25, 0.25, 0.75])

    uniform = _volume(np.ones((10, 10, 1)))
    top = extract_points(uniform, top_fraction=0.1)
    assert len(top) == 10
    # 并列时按体素索引顺序
    assert np.allclose(top.points[:, 0], 0.5)

    with pytest.raises(EmptyResultError):
        extract_points(_volume(np.zeros((2, 2, 2))))


def test_evaluate_identical():
    """测试8: 相同体 → IoU 1、Chamfer 0、Hausdorff 0、PSNR 上限、SSIM 1"""
    rng = np.random.default_rng(1)
    values = np.zeros((12, 12, 12))
    values[3:8, 4:9, 2:6] = rng.uniform(0.5, 1.0, size=(5, 5, 4))
    vol = _volume(values, voxel_size=0.01)
    report = evaluate(vol, vol)
    assert report["iou"] == 1.0
    assert report["chamfer_m"] == 0.0
    assert report["hausdorff_m"] == 0.0
    assert report["psnr_db"] == PSNR_CAP_DB
    assert math.isclose(report["ssim"], 1.0, abs_tol=1e-12)


def test_evaluate_small_volume():
    """测试9: 投影短边小于 SSIM 窗口时不计入 SSIM；全部太小时 ssim 为 None，其他指标照常"""
    rng = np.random.default_rng(2)
    tiny = _volume(rng.uniform(0.0, 1.0, size=(8, 8, 8)), voxel_size=0.01)
    report = evaluate(tiny, tiny)
    assert report["ssim"] is None
    assert report["iou"] == 1.0
    assert report["chamfer_m"] == 0.0
    assert report["psnr_db"] == PSNR_CAP_DB

    # 只有沿 z 的投影是 12×12
    flat = _volume(rng.uniform(0.0, 1.0, size=(12, 12, 4)), voxel_size=0.01)
    report = evaluate(flat, flat)
    assert math.isclose(report["ssim"], 1.0, abs_tol=1e-12)


if __name__ == "__main__":
    print("=" * 60)
    print("测试评估指标")
    print("=" * 60)
    test_chamfer_and_hausdorff()
    test_chamfer_matches_brute_force()
    test_iou()
    test_psnr()
    test_ssim()
    test_mip()
    test_extract_points()
    test_evaluate_identical()
    test_evaluate_small_volume()
    print("\n✅ 全部通过")
