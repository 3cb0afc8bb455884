"""
相干反投影基线
直接由频域测量重建稠密体素强度：对每个体素，用该体素往返时延对应的单位幅度频谱核
作匹配滤波，跨位姿、跨 bin 相干求和后取模。
"""

import math
from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import numpy as np
import torch
from tqdm import tqdm

from errors import ConfigError, EmptyResultError, ShapeMismatchError
from settings import CHUNK_ELEMENTS, get_logger
from signal_model import angular_frequency, tone_kernel

logger = get_logger(__name__)


@dataclass
class Volume:
    """稠密标量体，体素中心 origin + (i + 0.5)·voxel_size"""

    origin: np.ndarray
    voxel_size: float
    dims: Tuple[int, int, int]
    intensities: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ConfigError(f"dims 每轴必须 ≥ 1: {self.dims}")
        if not self.voxel_size > 0:
            raise ConfigError(f"voxel_size 必须 > 0: {self.voxel_size}")
        self.voxel_size = float(self.voxel_size)
        self.intensities = np.asarray(self.intensities, dtype=np.float64).reshape(self.dims)
        if not np.all(np.isfinite(self.intensities)) or np.any(self.intensities < 0):
            raise ConfigError("intensities 必须有限且非负")

    @classmethod
    def empty(cls, origin, voxel_size: float, dims: Sequence[int]) -> "Volume":
        return cls(origin, voxel_size, dims, np.zeros(tuple(int(d) for d in dims)))

    @classmethod
    def spanning(cls, bounds, resolution: int) -> "Volume":
        """覆盖场景盒的空体，最长轴 resolution 个立方体素"""
        if resolution < 1:
            raise ConfigError(f"resolution 必须 ≥ 1: {resolution}")
        voxel = float(np.max(bounds.extent)) / resolution
        dims = np.maximum(np.ceil(bounds.extent / voxel - 1e-9).astype(int), 1)
        return cls.empty(bounds.min_corner, voxel, dims)

    def voxel_centers(self) -> np.ndarray:
        idx = np.stack(np.meshgrid(*[np.arange(d) for d in self.dims], indexing="ij"), axis=-1).reshape(-1, 3)
        return self.origin + (idx + 0.5) * self.voxel_size

    def index_to_position(self, index: Sequence[int]) -> np.ndarray:
        return self.origin + (np.asarray(index, dtype=np.float64) + 0.5) * self.voxel_size

    def argmax_position(self) -> np.ndarray:
        return self.index_to_position(np.unravel_index(int(np.argmax(self.intensities)), self.dims))

    def same_grid(self, other: "Volume") -> bool:
        return (
            self.dims == other.dims
            and math.isclose(self.voxel_size, other.voxel_size, rel_tol=1e-12)
            and np.allclose(self.origin, other.origin, rtol=0.0, atol=1e-12)
        )

    def grid_dict(self) -> Dict:
        return {"origin": self.origin.tolist(), "voxel_size": self.voxel_size, "dims": list(self.dims)}


def backproject(dataset, grid: Volume, coherent_real: bool = False, show_progress: bool = False) -> Volume:
    """
    频域相干反投影

    I(v) = | Σ_poses Σ_{k∈window} Z̃_k·conj(K_k(τ_pose(v))) |，
    K_k 为单位幅度单音核（M = 1，φ = 2πf0τ）。

    Args:
        dataset: MeasurementSet（poses、values[P, K]、chirp、window）
        grid: 输出网格（只使用几何信息）
        coherent_real: True 时取相干和的实部（截断到 ≥ 0）而不是模
        show_progress: 是否显示 tqdm 进度条

    Returns:
        Volume: 与 grid 几何相同的强度体
    """
    if dataset.num_poses == 0:
        raise EmptyResultError("数据集没有任何测量")
    cfg = dataset.chirp
    values = torch.as_tensor(dataset.values, dtype=torch.complex128)
    if values.shape != (dataset.num_poses, dataset.window.width):
        raise ShapeMismatchError(f"values 形状 {tuple(values.shape)} 与位姿 / 窗口不一致")
    poses = torch.as_tensor(dataset.pose_array, dtype=torch.float64)
    tx, rx = poses[:, :3], poses[:, 3:]
    bins = torch.as_tensor(dataset.window.bins)
    centers = torch.as_tensor(grid.voxel_centers(), dtype=torch.float64)

    width = bins.shape[0]
    pose_step = max(1, min(poses.shape[0], CHUNK_ELEMENTS // (width * 256)))
    voxel_step = max(1, CHUNK_ELEMENTS // (pose_step * width))
    accum = torch.zeros(centers.shape[0], dtype=torch.complex128)
    skipped = 0

    chunks = range(0, centers.shape[0], voxel_step)
    for start in tqdm(chunks, desc="反投影", disable=not show_progress):
        vox = centers[start:start + voxel_step]
        for p0 in range(0, poses.shape[0], pose_step):
            ps = slice(p0, p0 + pose_step)
            r_t = torch.linalg.norm(vox.unsqueeze(0) - tx[ps].unsqueeze(1), dim=-1)
            r_r = torch.linalg.norm(vox.unsqueeze(0) - rx[ps].unsqueeze(1), dim=-1)
            valid = (r_t > 0) & (r_r > 0)
            skipped += int((~valid).sum())
            tau = (r_t + r_r) / cfg.c
            kern = tone_kernel(angular_frequency(cfg, tau), cfg.num_samples, bins)
            if cfg.f0 != 0.0:
                phase = 2.0 * math.pi * cfg.f0 * tau
                kern = kern * torch.complex(torch.cos(phase), torch.sin(phase)).unsqueeze(-1)
            kern = torch.where(valid.unsqueeze(-1), kern, torch.zeros_like(kern))
            accum[start:start + voxel_step] += torch.einsum("bk,bvk->v", values[ps], kern.conj())

    if skipped:
        logger.warning(f"{skipped} 个 (体素, 位姿) 组合与天线重合，已跳过")
    intensity = accum.real.clamp(min=0.0) if coherent_real else accum.abs()
    return Volume(grid.origin, grid.voxel_size, grid.dims, intensity.numpy())
