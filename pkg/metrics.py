"""
评估指标模块
重建体与真值体的比较：点云几何指标（Chamfer / Hausdorff）、体素 IoU，
以及三个轴向最大强度投影上的 PSNR / SSIM。
"""

import math
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
from scipy.spatial import cKDTree
from skimage.metrics import structural_similarity

from backprojection import Volume
from errors import ConfigError, EmptyResultError, ShapeMismatchError
from settings import get_logger

logger = get_logger(__name__)

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
DEFAULT_THRESHOLD = 0.5


@dataclass
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)


@dataclass
class ProjectionImage:
    """归一化到 [0, 1] 的投影图，peak 为归一化前的最大值"""

    pixels: np.ndarray
    peak: float = 1.0

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2:
            raise ShapeMismatchError(f"投影图必须是二维: {self.pixels.shape}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


# ==================== 体 → 点云 ====================

def extract_points(
    vol: Volume,
    threshold: Optional[float] = DEFAULT_THRESHOLD,
    top_fraction: Optional[float] = None,
) -> PointCloud:
    """
    取强度 ≥ threshold·max 的体素中心；给定 top_fraction 时改为取强度最高的那部分体素
    （并列按体素索引顺序）

    Raises:
        EmptyResultError: 没有体素入选，需要降低阈值
    """
    flat = vol.intensities.reshape(-1)
    if top_fraction is not None:
        if not 0 < top_fraction <= 1:
            raise ConfigError(f"top_fraction 必须位于 (0, 1]: {top_fraction}")
        count = int(round(top_fraction * flat.size))
        chosen = np.sort(np.argsort(-flat, kind="stable")[:count])
    else:
        peak = float(flat.max())
        chosen = np.flatnonzero(flat >= threshold * peak) if peak > 0 else np.zeros(0, dtype=int)
    if chosen.size == 0:
        raise EmptyResultError("没有体素超过阈值，请降低 threshold 或改用 top_fraction")
    return PointCloud(vol.voxel_centers()[chosen])


# ==================== 点云距离 ====================

def _nearest(a: PointCloud, b: PointCloud):
    if len(a) == 0 or len(b) == 0:
        raise EmptyResultError("点云不能为空")
    d_ab, _ = cKDTree(b.points).query(a.points)
    d_ba, _ = cKDTree(a.points).query(b.points)
    return d_ab, d_ba


def chamfer(a: PointCloud, b: PointCloud) -> float:
    """½(mean_a min_b ‖a−b‖ + mean_b min_a ‖a−b‖)，单位米"""
    d_ab, d_ba = _nearest(a, b)
    return 0.5 * (float(d_ab.mean()) + float(d_ba.mean()))


def hausdorff(a: PointCloud, b: PointCloud) -> float:
    d_ab, d_ba = _nearest(a, b)
    return max(float(d_ab.max()), float(d_ba.max()))


# ==================== 体素 / 图像指标 ====================

def occupancy(vol: Volume, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """以体自身最大值的 threshold 倍二值化；全零体为空"""
    peak = float(vol.intensities.max())
    if peak <= 0:
        return np.zeros(vol.dims, dtype=bool)
    return vol.intensities >= threshold * peak


def iou(a: Volume, b: Volume, threshold: float = DEFAULT_THRESHOLD) -> float:
    """
    Raises:
        ShapeMismatchError: 两个体的网格几何不一致
    """
    if not a.same_grid(b):
        raise ShapeMismatchError(f"网格不一致: {a.grid_dict()} vs {b.grid_dict()}")
    occ_a, occ_b = occupancy(a, threshold), occupancy(b, threshold)
    union = int(np.logical_or(occ_a, occ_b).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(occ_a, occ_b).sum()) / union


def mip(vol: Volume, axis: int = 2) -> ProjectionImage:
    """沿 axis 的最大强度投影，归一化到最大值 1"""
    if axis not in (0, 1, 2):
        raise ConfigError(f"axis 必须是 0/1/2: {axis}")
    image = vol.intensities.max(axis=axis)
    peak = float(image.max())
    return ProjectionImage(image / peak if peak > 0 else image, peak)


def _check_pair(a: ProjectionImage, b: ProjectionImage) -> None:
    if a.pixels.shape != b.pixels.shape:
        raise ShapeMismatchError(f"图像尺寸不一致: {a.pixels.shape} vs {b.pixels.shape}")


def psnr(a: ProjectionImage, b: ProjectionImage) -> float:
    """峰值为 1 的 PSNR（dB），完全相同时取上限 100 dB"""
    _check_pair(a, b)
    mse = float(np.mean((a.pixels - b.pixels) ** 2))
    if mse == 0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(1.0 / mse))


def ssim(a: ProjectionImage, b: ProjectionImage) -> float:
    """11×11 高斯窗（σ=1.5），C1=(0.01)²、C2=(0.03)²，动态范围 1"""
    _check_pair(a, b)
    if min(a.pixels.shape) < SSIM_WINDOW:
        raise ShapeMismatchError(f"图像 {a.pixels.shape} 小于 SSIM 窗口 {SSIM_WINDOW}×{SSIM_WINDOW}")
    return float(structural_similarity(
        a.pixels,
        b.pixels,
        data_range=1.0,
        gaussian_weights=True,
        sigma=1.5,
        use_sample_covariance=False,
        K1=0.01,
        K2=0.03,
    ))


def evaluate(pred: Volume, gt: Volume, threshold: float = DEFAULT_THRESHOLD) -> Dict[str, Optional[float]]:
    """
    eval 命令的报告：{iou, chamfer_m, hausdorff_m, psnr_db, ssim}

    PSNR / SSIM 为三轴 MIP 的均值；短边小于 SSIM 窗口的投影不参与 SSIM 平均，
    三个投影都太小时 ssim 为 None。
    """
    cloud_pred, cloud_gt = extract_points(pred, threshold), extract_points(gt, threshold)
    views = [(mip(pred, axis), mip(gt, axis)) for axis in range(3)]
    ssim_views = [(p, g) for p, g in views if min(p.pixels.shape) >= SSIM_WINDOW]
    if len(ssim_views) < len(views):
        logger.warning(f"{len(views) - len(ssim_views)} 个投影小于 {SSIM_WINDOW}×{SSIM_WINDOW}，不计入 SSIM")
    return {
        "iou": iou(pred, gt, threshold),
        "chamfer_m": chamfer(cloud_pred, cloud_gt),
        "hausdorff_m": hausdorff(cloud_pred, cloud_gt),
        "psnr_db": float(np.mean([psnr(p, g) for p, g in views])),
        "ssim": float(np.mean([ssim(p, g) for p, g in ssim_views])) if ssim_views else None,
    }
