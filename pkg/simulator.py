"""
场景仿真驱动：体模 + 孔径 + chirp → 测量集
真值测量使用频域闭式模型在 bin 窗口上精确计算。
"""

import numpy as np
import torch
from tqdm import tqdm

from aperture import (
    DEFAULT_GUARD_BINS,
    CylindricalApertureSpec,
    SensorPose,
    bin_window,
    generate_poses,
    mono_convert,
    poses_to_array,
)
from dataset_io import MeasurementSet
from errors import ConfigError
from forward_model import SpectralResponse, batched_poses, spectral_forward_batch
from phantom import PhantomSpec
from settings import CHUNK_ELEMENTS, get_logger
from signal_model import ChirpConfig

logger = get_logger(__name__)


def _complex_noise(rng: np.random.Generator, std: float, shape) -> np.ndarray:
    """圆对称复高斯噪声，E|n|² = std²"""
    scale = std / np.sqrt(2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def simulate(
    phantom: PhantomSpec,
    aperture: CylindricalApertureSpec,
    cfg: ChirpConfig,
    noise: float = 0.0,
    seed: int = 0,
    mono: bool = False,
    full_spectrum: bool = False,
    guard: int = DEFAULT_GUARD_BINS,
    show_progress: bool = False,
) -> MeasurementSet:
    """
    生成仿真测量集

    Args:
        phantom: 体模（散射体 + 场景边界）
        aperture: 圆柱孔径
        cfg: chirp 参数
        noise: 每个 bin 的复高斯噪声标准差 σ_n（E|n|² = σ_n²）
        seed: 噪声随机种子
        mono: 是否把多站位姿转换为中点虚拟单站
        full_spectrum: 是否额外保存完整 N 点频谱（tf-ts 监督用）
        guard: 窗口两侧保护 bin 数
        show_progress: 是否显示进度条

    Returns:
        MeasurementSet

    Raises:
        EmptyResultError: 体模为空
        BinRangeError: 场景超出可观测距离
    """
    if noise < 0:
        raise ConfigError(f"噪声标准差必须 ≥ 0: {noise}")
    positions, sigmas = phantom.scatterers()
    poses = generate_poses(aperture)
    reference = phantom.bounds.center

    window_poses = list(poses)
    if mono:
        window_poses += [SensorPose(p.midpoint, p.midpoint) for p in poses]
    window = bin_window(cfg, phantom.bounds, window_poses, guard=guard)
    logger.info(
        f"仿真: {len(positions)} 个散射体，{len(poses)} 个位姿，窗口 bin [{window.k_min}, {window.k_max}]"
    )

    pos_t = torch.as_tensor(positions, dtype=torch.float64)
    weights = torch.ones(len(positions), dtype=torch.float64)
    sig_t = torch.as_tensor(sigmas, dtype=torch.float64)
    bins = torch.as_tensor(window.bins)
    all_bins = torch.arange(cfg.num_samples)

    tx, rx = batched_poses(poses)
    inner = len(positions) * (cfg.num_samples if full_spectrum else window.width)
    step = max(1, min(len(poses), CHUNK_ELEMENTS // max(1, inner)))

    values = np.zeros((len(poses), window.width), dtype=np.complex128)
    full = np.zeros((len(poses), cfg.num_samples), dtype=np.complex128) if full_spectrum else None
    with torch.no_grad():
        for start in tqdm(range(0, len(poses), step), desc="仿真", disable=not show_progress):
            sl = slice(start, start + step)
            if full_spectrum:
                full[sl] = spectral_forward_batch(cfg, tx[sl], rx[sl], pos_t, weights, sig_t, all_bins).numpy()
            else:
                values[sl] = spectral_forward_batch(cfg, tx[sl], rx[sl], pos_t, weights, sig_t, bins).numpy()

    if mono:
        converted = []
        for i, pose in enumerate(poses):
            if full_spectrum:
                virtual, whole = mono_convert(pose, SpectralResponse(all_bins.numpy(), full[i], cfg.num_samples), cfg, reference)
                full[i] = whole.values
            else:
                virtual, resp = mono_convert(pose, SpectralResponse(window.bins, values[i], cfg.num_samples), cfg, reference)
                values[i] = resp.values
            converted.append(virtual)
        poses = converted

    # 有完整频谱时，窗口测量取自同一次噪声实现
    rng = np.random.default_rng(seed)
    if full_spectrum:
        if noise > 0:
            full = full + _complex_noise(rng, noise, full.shape)
        values = full[:, window.k_min:window.k_max + 1].copy()
    elif noise > 0:
        values = values + _complex_noise(rng, noise, values.shape)

    flags = {"mono": bool(mono), "noise_std": float(noise), "seed": int(seed), "num_scatterers": int(len(positions))}
    return MeasurementSet(cfg, window, poses_to_array(poses), values, phantom.bounds, full, flags)
