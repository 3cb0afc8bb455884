"""
孔径几何模块
生成圆柱逆合成孔径的传感器位姿、多站到单站转换，以及由场景边界推出的 bin 窗口。

转台旋转等价为传感器绕场景轴反向旋转，场景本身保持静止。
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from errors import BinRangeError, ConfigError
from signal_model import ChirpConfig

# 77 GHz 下约 λ/2 的阵元间距
ELEMENT_SPACING = 1.95e-3

# AWR1843 类 3 Tx × 4 Rx 切向线阵，间距均为 λ/2
DEFAULT_TX_OFFSETS = [[0.0, (i - 1) * ELEMENT_SPACING, 0.0] for i in range(3)]
DEFAULT_RX_OFFSETS = [[0.0, (i - 1.5) * ELEMENT_SPACING, 0.0] for i in range(4)]

DEFAULT_GUARD_BINS = 2


def _vec3(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64).reshape(-1)
    if arr.shape != (3,) or not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} 必须是有限的 3 维向量: {value}")
    return arr


@dataclass(frozen=True)
class SensorPose:
    """一次测量的发射 / 接收天线位置（米）"""

    tx: np.ndarray
    rx: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "tx", _vec3(self.tx, "tx"))
        object.__setattr__(self, "rx", _vec3(self.rx, "rx"))

    @property
    def is_monostatic(self) -> bool:
        return bool(np.array_equal(self.tx, self.rx))

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.tx + self.rx)


@dataclass(frozen=True)
class SceneBounds:
    """场景有界区域 𝒳"""

    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        lo = _vec3(self.min_corner, "min_corner")
        hi = _vec3(self.max_corner, "max_corner")
        if not np.all(lo < hi):
            raise ConfigError(f"min_corner 必须逐分量小于 max_corner: {lo} vs {hi}")
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min_corner + self.max_corner)

    @property
    def extent(self) -> np.ndarray:
        return self.max_corner - self.min_corner

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    def corners(self) -> np.ndarray:
        lo, hi = self.min_corner, self.max_corner
        return np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return np.all((points >= self.min_corner) & (points <= self.max_corner), axis=1)

    def to_dict(self) -> Dict:
        return {"min": self.min_corner.tolist(), "max": self.max_corner.tolist()}

    @classmethod
    def from_dict(cls, data: Dict) -> "SceneBounds":
        return cls(data["min"], data["max"])

    @classmethod
    def cube(cls, center: Sequence[float], side: float) -> "SceneBounds":
        c = np.asarray(center, dtype=np.float64)
        return cls(c - side / 2.0, c + side / 2.0)


@dataclass(frozen=True)
class BinWindow:
    """连续 bin 区间 [k_min, k_max]（含两端）"""

    k_min: int
    k_max: int
    guard: int = 0

    def __post_init__(self):
        if not 0 <= self.k_min <= self.k_max:
            raise ConfigError(f"非法 bin 窗口: [{self.k_min}, {self.k_max}]")

    @property
    def width(self) -> int:
        return self.k_max - self.k_min + 1

    @property
    def bins(self) -> np.ndarray:
        return np.arange(self.k_min, self.k_max + 1, dtype=np.int64)

    def validate(self, num_samples: int) -> None:
        if self.k_max >= num_samples:
            raise BinRangeError(f"bin 窗口上界 {self.k_max} ≥ N={num_samples}")

    def to_dict(self) -> Dict:
        return {"k_min": self.k_min, "k_max": self.k_max, "guard": self.guard}

    @classmethod
    def from_dict(cls, data: Dict) -> "BinWindow":
        return cls(int(data["k_min"]), int(data["k_max"]), int(data.get("guard", 0)))


@dataclass(frozen=True)
class CylindricalApertureSpec:
    """
    圆柱孔径：竖直导轨上 n_z 个高度 × 转台 n_theta 个角度，
    每个站点再叠加 MIMO 虚拟阵列的 Tx/Rx 偏移（站点局部坐标系）
    """

    radius: float = 0.23
    z_min: float = -0.06
    z_max: float = 0.06
    n_z: int = 4
    n_theta: int = 90
    center: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    tx_offsets: List[List[float]] = field(default_factory=lambda: [[0.0, 0.0, 0.0]])
    rx_offsets: List[List[float]] = field(default_factory=lambda: [[0.0, 0.0, 0.0]])

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigError(f"radius 必须 > 0: {self.radius}")
        if self.z_max < self.z_min:
            raise ConfigError(f"z_max 必须 ≥ z_min: {self.z_max} < {self.z_min}")
        if self.n_z < 1 or self.n_theta < 1:
            raise ConfigError(f"n_z / n_theta 必须 ≥ 1: {self.n_z}, {self.n_theta}")
        if not self.tx_offsets or not self.rx_offsets:
            raise ConfigError("tx_offsets / rx_offsets 不能为空")
        for off in list(self.tx_offsets) + list(self.rx_offsets):
            _vec3(off, "offset")
        _vec3(self.center, "center")

    @property
    def num_poses(self) -> int:
        return self.n_z * self.n_theta * len(self.tx_offsets) * len(self.rx_offsets)

    def to_dict(self) -> Dict:
        return {
            "radius": self.radius,
            "z_min": self.z_min,
            "z_max": self.z_max,
            "n_z": self.n_z,
            "n_theta": self.n_theta,
            "center": list(self.center),
            "tx_offsets": [list(o) for o in self.tx_offsets],
            "rx_offsets": [list(o) for o in self.rx_offsets],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "CylindricalApertureSpec":
        data = dict(data)
        if "center" in data:
            data["center"] = tuple(data["center"])
        if data.pop("mimo", False):
            data.setdefault("tx_offsets", DEFAULT_TX_OFFSETS)
            data.setdefault("rx_offsets", DEFAULT_RX_OFFSETS)
        return cls(**data)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "CylindricalApertureSpec":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


# ==================== 位姿生成 ====================

def generate_poses(spec: CylindricalApertureSpec) -> List[SensorPose]:
    """
    按 (z, θ) 网格生成位姿，每个站点展开全部 Tx × Rx 偏移组合

    局部坐标系：x 为法向（指向圆柱轴），y 为切向，z 竖直向上；
    偏移 [a, b, c] 表示沿法向 a、切向 b、竖直 c。

    Returns:
        list: 长度 n_z·n_theta·|tx|·|rx| 的 SensorPose 列表
    """
    center = np.asarray(spec.center, dtype=np.float64)
    zs = np.linspace(spec.z_min, spec.z_max, spec.n_z) if spec.n_z > 1 else np.array([spec.z_min])
    thetas = 2.0 * math.pi * np.arange(spec.n_theta) / spec.n_theta
    tx_offsets = np.asarray(spec.tx_offsets, dtype=np.float64)
    rx_offsets = np.asarray(spec.rx_offsets, dtype=np.float64)

    poses = []
    for z in zs:
        for theta in thetas:
            radial = np.array([math.cos(theta), math.sin(theta), 0.0])
            tangent = np.array([-math.sin(theta), math.cos(theta), 0.0])
            up = np.array([0.0, 0.0, 1.0])
            station = center + spec.radius * radial + np.array([0.0, 0.0, z])
            frame = np.stack([-radial, tangent, up])  # 行向量：局部轴在世界坐标中的方向
            tx_world = station + tx_offsets @ frame
            rx_world = station + rx_offsets @ frame
            for tx in tx_world:
                for rx in rx_world:
                    poses.append(SensorPose(tx.copy(), rx.copy()))
    return poses


def poses_to_array(poses: Sequence[SensorPose]) -> np.ndarray:
    """位姿列表 → [P, 6] 数组（tx, rx）"""
    return np.array([np.concatenate([p.tx, p.rx]) for p in poses], dtype=np.float64).reshape(-1, 6)


def poses_from_array(array: np.ndarray) -> List[SensorPose]:
    array = np.asarray(array, dtype=np.float64).reshape(-1, 6)
    return [SensorPose(row[:3], row[3:]) for row in array]


# ==================== 多站 → 单站 ====================

def mono_phase(cfg: ChirpConfig, delta_tau: float) -> float:
    """
    路径差 Δτ 在正向模型中引入的相位

    单音核的相位为 2πf0τ + θ(N-1)/2，对 τ 求导得 2π·(f0 + S·(N-1)/(2fs))·Δτ，
    即 chirp 采样中点频率下的载波相位，与 bin 无关。
    """
    center_freq = cfg.f0 + cfg.slope * (cfg.num_samples - 1) / (2.0 * cfg.sample_rate)
    return 2.0 * math.pi * center_freq * delta_tau


def mono_compensation(pose: SensorPose, cfg: ChirpConfig, reference: Sequence[float]) -> float:
    """参考点处路径差 Δpath = R_T + R_R - 2·R_mid 对应的补偿相位 Δψ（单站位姿为 0）"""
    if pose.is_monostatic:
        return 0.0
    ref = _vec3(reference, "reference")
    delta_path = (
        np.linalg.norm(pose.tx - ref) + np.linalg.norm(pose.rx - ref) - 2.0 * np.linalg.norm(pose.midpoint - ref)
    )
    return mono_phase(cfg, delta_path / cfg.c)


def mono_convert(pose: SensorPose, response, cfg: ChirpConfig, reference: Sequence[float]):
    """
    把一对分离的 Tx/Rx 测量转换为位于中点的虚拟单站测量

    在参考点 x_ref（通常为场景中心）处计算 mono_compensation，并对每个 bin 乘以 e^{-iΔψ}。
    单位相量乘法不改变各 bin 幅度，乘回 e^{iΔψ} 即还原；单站输入原样返回。

    Args:
        pose: 原始位姿
        response: SpectralResponse
        cfg: chirp 参数
        reference: 参考点（米）

    Returns:
        tuple: (虚拟单站位姿, 补偿后的 SpectralResponse)
    """
    if pose.is_monostatic:
        return pose, response
    psi = mono_compensation(pose, cfg, reference)
    values = np.asarray(response.values) * np.exp(-1j * psi)
    mid = pose.midpoint
    return SensorPose(mid, mid.copy()), response.with_values(values)


# ==================== bin 窗口 ====================

def _delay_range(bounds: SceneBounds, tx: np.ndarray, rx: np.ndarray, c: float) -> Tuple[float, float]:
    """
    位姿到场景盒的最小 / 最大往返时延

    |tx-x| + |rx-x| 是凸函数，最大值在角点上取得；
    最小值用两条腿各自到盒子的最近距离之和作为下界。
    """
    corners = bounds.corners()
    longest = np.max(np.linalg.norm(corners - tx, axis=1) + np.linalg.norm(corners - rx, axis=1))
    near_tx = np.linalg.norm(np.clip(tx, bounds.min_corner, bounds.max_corner) - tx)
    near_rx = np.linalg.norm(np.clip(rx, bounds.min_corner, bounds.max_corner) - rx)
    return (near_tx + near_rx) / c, longest / c


def bin_window(
    cfg: ChirpConfig,
    bounds: SceneBounds,
    poses: Sequence[SensorPose],
    guard: int = DEFAULT_GUARD_BINS,
) -> BinWindow:
    """
    计算覆盖场景内所有可观测往返时延的 bin 窗口

    k_min = floor(bin(τ_min)) - guard（下限 0），k_max = ceil(bin(τ_max)) + guard（上限 N-1）

    Raises:
        BinRangeError: τ_max 映射到 N-1 之外
    """
    if not poses:
        raise ConfigError("至少需要一个位姿")
    if guard < 0:
        raise ConfigError(f"guard 必须 ≥ 0: {guard}")
    tau_min, tau_max = math.inf, 0.0
    for pose in poses:
        lo, hi = _delay_range(bounds, pose.tx, pose.rx, cfg.c)
        tau_min = min(tau_min, lo)
        tau_max = max(tau_max, hi)

    scale = cfg.slope * cfg.num_samples / cfg.sample_rate
    k_lo = scale * tau_min
    k_hi = scale * tau_max
    if k_hi > cfg.num_samples - 1:
        raise BinRangeError(f"场景最远时延映射到 bin {k_hi:.2f}，超过 N-1={cfg.num_samples - 1}")
    k_min = max(int(math.floor(k_lo)) - guard, 0)
    k_max = min(int(math.ceil(k_hi)) + guard, cfg.num_samples - 1)
    return BinWindow(k_min, k_max, guard)


def point_bins(cfg: ChirpConfig, pose: SensorPose, points: np.ndarray) -> np.ndarray:
    """散射点在某位姿下的小数 bin 位置（诊断 / 测试用）"""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    tau = (np.linalg.norm(points - pose.tx, axis=1) + np.linalg.norm(points - pose.rx, axis=1)) / cfg.c
    return cfg.slope * tau * cfg.num_samples / cfg.sample_rate
