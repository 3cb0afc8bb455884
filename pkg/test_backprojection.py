"""
测试相干反投影与体数据类型
"""

import numpy as np
import pytest

from aperture import CylindricalApertureSpec, SceneBounds
from backprojection import Volume, backproject
from errors import ConfigError
from phantom import PhantomSpec
from signal_model import ChirpConfig
from simulator import simulate

CFG = ChirpConfig()
APERTURE = CylindricalApertureSpec(n_z=4, n_theta=36)


def _point_dataset(bounds, positions):
    primitives = [{"type": "point", "position": list(p), "sigma": 1.0} for p in positions]
    return simulate(PhantomSpec(bounds, primitives), APERTURE, CFG)


def test_volume_validation():
    """测试1: Volume 构造时校验几何与强度"""
    vol = Volume.spanning(SceneBounds.cube([0.0, 0.0, 0.0], 0.1), 8)
    assert vol.dims == (8, 8, 8)
    assert np.allclose(vol.index_to_position([0, 0, 0]), [-0.04375] * 3)
    assert vol.same_grid(Volume.empty(vol.origin, vol.voxel_size, vol.dims))
    assert not vol.same_grid(Volume.empty(vol.origin, vol.voxel_size, (8, 8, 4)))
    with pytest.raises(ConfigError):
        Volume.empty([0.0, 0.0, 0.0], 0.0, (2, 2, 2))
    with pytest.raises(ConfigError):
        Volume([0.0, 0.0, 0.0], 1.0, (1, 1, 2), np.array([1.0, -1.0]))
    with pytest.raises(ConfigError):
        Volume.spanning(SceneBounds.cube([0.0, 0.0, 0.0], 0.1), 0)


def test_zero_measurements():
    """测试2: 测量全零 → 全零体"""
    bounds = SceneBounds.cube([0.0, 0.0, 0.0], 0.1)
    dataset = _point_dataset(bounds, [[0.0, 0.0, 0.0]])
    dataset.values[:] = 0.0
    vol = backproject(dataset, Volume.spanning(bounds, 6))
    assert np.all(vol.intensities == 0)


def test_single_scatterer_localized():
    """测试3: 单点散射体，36 角度 × 4 高度 → 强度最大处与真值相距不超过一个体素"""
    bounds = SceneBounds.cube([0.0, 0.0, 0.0], 0.1)
    grid = Volume.spanning(bounds, 8)
    truth = grid.index_to_position([5, 3, 4])
    vol = backproject(_point_dataset(bounds, [truth]), grid)
    error = np.linalg.norm(vol.argmax_position() - truth)
    print(f"定位误差: {error * 1000:.2f} mm（体素 {grid.voxel_size * 1000:.2f} mm）")
    assert error <= np.sqrt(3) * grid.voxel_size + 1e-12
    assert vol.same_grid(grid)


def test_two_scatterers():
    """测试4: 间距 > 2 倍距离分辨率的两个散射体各自形成局部极大"""
    bounds = SceneBounds.cube([0.0, 0.0, 0.0], 0.2)
    grid = Volume.spanning(bounds, 16)
    truths = [np.array([3, 8, 8]), np.array([12, 8, 8])]
    vol = backproject(_point_dataset(bounds, [grid.index_to_position(t) for t in truths]), grid)
    for t in truths:
        lo = np.maximum(t - 2, 0)
        hi = np.minimum(t + 3, grid.dims)
        patch = vol.intensities[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
        local = np.array(np.unravel_index(int(np.argmax(patch)), patch.shape)) + lo
        assert np.max(np.abs(local - t)) <= 1, (t, local)


def test_scaling_and_real_part():
    """测试5: 测量放大 2 倍 → 强度放大 2 倍；实部模式输出非负"""
    bounds = SceneBounds.cube([0.0, 0.0, 0.0], 0.1)
    dataset = _point_dataset(bounds, [[0.0125, 0.0, 0.0]])
    grid = Volume.spanning(bounds, 6)
    base = backproject(dataset, grid)
    dataset.values *= 2.0
    doubled = backproject(dataset, grid)
    assert np.allclose(doubled.intensities, 2.0 * base.intensities, rtol=1e-12, atol=1e-12)

    real = backproject(dataset, grid, coherent_real=True)
    assert np.all(real.intensities >= 0)
    assert np.all(real.intensities <= doubled.intensities + 1e-9)


def test_rotation_consistency():
    """场景绕 z 轴转 90°（孔径在该旋转下不变）→ 体数据同样转 90°"""
    bounds = SceneBounds.cube([0.0, 0.0, 0.0], 0.1)
    grid = Volume.spanning(bounds, 8)
    truth = grid.index_to_position([5, 3, 4])
    rotated = np.array([-truth[1], truth[0], truth[2]])
    base = backproject(_point_dataset(bounds, [truth]), grid)
    turned = backproject(_point_dataset(bounds, [rotated]), grid)

    expected = np.rot90(base.intensities, k=1, axes=(0, 1))
    assert np.allclose(turned.intensities, expected, rtol=1e-6, atol=1e-6 * np.max(expected))
    assert np.linalg.norm(turned.argmax_position() - rotated) <= np.sqrt(3) * grid.voxel_size + 1e-12


def test_more_angles_sharpen_peak():
    """角度数 9 → 18 → 36，峰值 / 中位数之比不下降"""
    bounds = SceneBounds.cube([0.0, 0.0, 0.0], 0.1)
    grid = Volume.spanning(bounds, 8)
    truth = grid.index_to_position([5, 3, 4])
    phantom = PhantomSpec(bounds, [{"type": "point", "position": list(truth), "sigma": 1.0}])
    ratios = []
    for n_theta in (9, 18, 36):
        dataset = simulate(phantom, CylindricalApertureSpec(n_z=4, n_theta=n_theta), CFG)
        vol = backproject(dataset, grid)
        ratios.append(float(np.max(vol.intensities) / np.median(vol.intensities)))
    print("峰值/中位数: " + ", ".join(f"{r:.2f}" for r in ratios))
    assert ratios[0] <= ratios[1] <= ratios[2]


if __name__ == "__main__":
    print("=" * 60)
    print("测试相干反投影")
    print("=" * 60)
    test_volume_validation()
    test_zero_measurements()
    test_single_scatterer_localized()
    test_two_scatterers()
    test_scaling_and_real_part()
    test_rotation_consistency()
    test_more_angles_sharpen_peak()
    print("\n✅ 全部通过")
