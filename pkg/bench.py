"""
实验工具
1. 正向模型耗时基准（spectral / time+DFT / rq）
2. 频谱泄漏表（闭式 Dirichlet 核 vs 直接求和 DFT）
3. 同一数据集上各重建方法的对比（四种监督模式 + 反投影）
"""

import csv
import time
from collections import Counter
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from tqdm import tqdm

from aperture import SceneBounds, SensorPose, bin_window
from backprojection import Volume, backproject
from errors import ConfigError
from forward_model import dft, forward_cost, naive_dft, rq_forward, spectral_forward, time_forward, truncate
from metrics import evaluate
from phantom import PhantomSpec, rasterize
from reconstruction import MODES, LossConfig, OptimizerConfig, fit
from scene_field import CoordinateNetworkField, VoxelGridField, sample_volume
from settings import get_logger
from signal_model import ChirpConfig, tone_kernel

logger = get_logger(__name__)

BENCH_MODELS = ["spectral", "time", "rq"]
DEFAULT_BENCH_POSE = SensorPose([0.23, 0.0, 0.0], [0.23, 0.0, 0.0])
DEFAULT_BENCH_BOUNDS = SceneBounds.cube([0.0, 0.0, 0.0], 0.2)


# ==================== 正向模型基准 ====================

def _run_model(model: str, cfg, pose, points, sigmas, window, counter):
    if model == "spectral":
        return spectral_forward(cfg, pose, points, sigmas, window, counter)
    if model == "time":
        return truncate(dft(time_forward(cfg, pose, points, sigmas, counter)), window)
    return rq_forward(cfg, pose, points, sigmas, window, counter)


def bench_forward(
    cfg: ChirpConfig,
    pose: SensorPose = DEFAULT_BENCH_POSE,
    counts: Sequence[int] = (100, 1000, 10000),
    repetitions: int = 20,
    bounds: SceneBounds = DEFAULT_BENCH_BOUNDS,
    window=None,
    seed: int = 0,
    show_progress: bool = False,
) -> List[Dict]:
    """
    在相同的随机场景上计时三种正向模型

    Returns:
        list: 每个 (count, model) 一行 {count, model, mean_ms, std_ms, window_width, num_samples, ops, theoretical_ops}
    """
    if repetitions < 1 or not counts or min(counts) < 1:
        raise ConfigError(f"counts 与 repetitions 必须 ≥ 1: {counts}, {repetitions}")
    window = window if window is not None else bin_window(cfg, bounds, [pose])
    rng = np.random.default_rng(seed)
    rows = []
    for count in counts:
        positions = rng.uniform(bounds.min_corner, bounds.max_corner, size=(int(count), 3))
        points = (positions, np.ones(int(count)))
        sigmas = rng.uniform(0.0, 1.0, size=int(count))
        for model in BENCH_MODELS:
            counter = Counter()
            _run_model(model, cfg, pose, points, sigmas, window, counter)  # 预热
            timings = []
            for _ in tqdm(range(repetitions), desc=f"{model} ×{count}", disable=not show_progress):
                began = time.perf_counter()
                _run_model(model, cfg, pose, points, sigmas, window, None)
                timings.append((time.perf_counter() - began) * 1000.0)
            rows.append({
                "count": int(count),
                "model": model,
                "mean_ms": float(np.mean(timings)),
                "std_ms": float(np.std(timings)),
                "window_width": window.width,
                "num_samples": cfg.num_samples,
                "ops": int(sum(counter.values())),
                "theoretical_ops": forward_cost(model, int(count), window.width, cfg.num_samples),
            })
            logger.info(f"{model:>8s} count={count}: {rows[-1]['mean_ms']:.3f} ± {rows[-1]['std_ms']:.3f} ms")
    return rows


def write_csv(rows: List[Dict], path: Union[str, Path]) -> None:
    if not rows:
        raise ConfigError("没有可写入的行")
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    logger.info(f"已写入 {len(rows)} 行: {path}")


# ==================== 频谱泄漏 ====================

def leakage_table(alpha: float, num_samples: int) -> List[Dict]:
    """
    单位单音 e^{iαn} 在全部 bin 上的闭式谱与直接求和谱

    α 落在 bin 上时只有一个非零 bin；落在两个 bin 正中时呈对称的双主瓣 Dirichlet 形状。
    """
    closed = tone_kernel(alpha, num_samples, np.arange(num_samples)).numpy()
    brute = naive_dft(np.exp(1j * alpha * np.arange(num_samples)))
    return [
        {
            "bin": k,
            "real": float(closed[k].real),
            "imag": float(closed[k].imag),
            "magnitude": float(abs(closed[k])),
            "brute_magnitude": float(abs(brute[k])),
            "abs_error": float(abs(closed[k] - brute[k])),
        }
        for k in range(num_samples)
    ]


# ==================== 方法对比 ====================

def _new_field(kind: str, bounds: SceneBounds, resolution: int, seed: int):
    if kind == "grid":
        return VoxelGridField.spanning(bounds, resolution)
    return CoordinateNetworkField(bounds, seed=seed)


def compare_methods(
    dataset,
    phantom: PhantomSpec,
    resolution: int = 32,
    modes: Sequence[str] = ("spectral", "rq"),
    field_kind: str = "grid",
    epochs: int = 50,
    batch_size: int = 64,
    learning_rate: Optional[float] = None,
    seed: int = 0,
    loss_cfg: LossConfig = LossConfig(),
    show_progress: bool = False,
) -> Dict[str, Dict]:
    """
    对同一数据集运行若干监督模式的训练以及反投影，并与体模真值比较

    Returns:
        dict: 方法名 → 指标报告；训练方法额外包含 final_loss 与 grad_std_ratio（第一层梯度 std 的 max/median）
    """
    unknown = [m for m in modes if m not in MODES]
    if unknown:
        raise ConfigError(f"未知监督模式: {unknown}")
    bounds = dataset.bounds or phantom.bounds
    grid = Volume.spanning(bounds, resolution)
    positions, sigmas = phantom.scatterers()
    gt = rasterize(positions, sigmas, grid)

    report = {}
    for mode in modes:
        if mode == "tf-ts" and dataset.full_spectrum is None:
            logger.warning("数据集没有完整频谱，跳过 tf-ts")
            continue
        field_ = _new_field(field_kind, bounds, resolution, seed)
        opt = OptimizerConfig.for_field(field_kind, learning_rate, epochs=epochs, batch_size=batch_size, seed=seed)
        field_, log = fit(dataset, field_, mode, opt=opt, loss_cfg=loss_cfg, show_progress=show_progress)
        entry = evaluate(sample_volume(field_, grid, log.scale), gt)
        entry["final_loss"] = float(log.losses[-1])
        entry["grad_std_ratio"] = log.grad_std_ratio()
        report[mode] = entry
        logger.info(f"{mode}: chamfer={entry['chamfer_m']:.4f} m, grad_std_ratio={entry['grad_std_ratio']:.3g}")

    report["backprojection"] = evaluate(backproject(dataset, grid, show_progress=show_progress), gt)
    logger.info(f"backprojection: chamfer={report['backprojection']['chamfer_m']:.4f} m")
    return report
