"""
重建模块
频域损失 / 时域损失、四种监督模式的训练循环，以及逐层梯度统计。

四种模式：
    spectral  频域闭式正向模型 → spectral_loss（本项目方法）
    tf-ts     时域正向模型 → temporal_loss（与由完整频谱还原的时域测量比较）
    tf-ss     时域正向模型 → DFT → 截取窗口 → spectral_loss
    rq        距离量化正向模型 → spectral_loss
"""

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from tqdm import tqdm

from errors import ConfigError, EmptyResultError, ReconstructionError, ShapeMismatchError
from forward_model import (
    SpectralForwardFunction,
    SpectralResponse,
    dft,
    idft,
    rq_forward_batch,
    time_forward_batch,
)
from scene_field import Quadrature, SceneField, VoxelGridField, sample_quadrature
from settings import get_logger

logger = get_logger(__name__)

MODES = ["spectral", "tf-ts", "tf-ss", "rq"]
DEFAULT_LEARNING_RATES = {"grid": 1e-2, "net": 1e-3}
NET_QUADRATURE_RESOLUTION = 32


# ==================== 配置 ====================

@dataclass(frozen=True)
class LossConfig:
    """
    lambda_: 复数分量项的权重
    magnitude_epsilon: 幅度 sqrt(re² + im² + ε) 的稳定项
    normalize: 训练前是否按 measurement_scale 归一化测量
    """

    lambda_: float = 0.5
    magnitude_epsilon: float = 1e-12
    normalize: bool = True

    def __post_init__(self):
        if self.lambda_ < 0:
            raise ConfigError(f"lambda 必须 ≥ 0: {self.lambda_}")
        if not self.magnitude_epsilon > 0:
            raise ConfigError(f"magnitude_epsilon 必须 > 0: {self.magnitude_epsilon}")


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate 必须 > 0: {self.learning_rate}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError(f"beta1 / beta2 必须位于 (0, 1): {self.beta1}, {self.beta2}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon 必须 > 0: {self.epsilon}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError(f"epochs / batch_size 必须 ≥ 1: {self.epochs}, {self.batch_size}")

    @classmethod
    def for_field(cls, kind: str, learning_rate: Optional[float] = None, **kwargs) -> "OptimizerConfig":
        """按场类型选择默认学习率（网格 1e-2，网络 1e-3）"""
        lr = learning_rate if learning_rate is not None else DEFAULT_LEARNING_RATES.get(kind, 1e-3)
        return cls(learning_rate=lr, **kwargs)


# ==================== 梯度统计 ====================

class LayerStats(NamedTuple):
    mean: float
    std: float
    count: int


def _layer_stats(values: np.ndarray) -> LayerStats:
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise EmptyResultError("梯度向量为空")
    return LayerStats(float(values.mean()), float(values.std()), int(values.size))


def grad_stats(
    gradients: Union[Mapping[str, object], np.ndarray, torch.Tensor],
    partition: Optional[Mapping[str, int]] = None,
) -> Dict[str, LayerStats]:
    """
    逐层梯度的算术平均与总体标准差

    Args:
        gradients: {层名: 梯度} 或展平的梯度向量
        partition: 展平向量时的 {层名: 元素个数}（按顺序切分）；None 表示整体视为一层

    Returns:
        dict: 层名 → LayerStats(mean, std, count)
    """
    if isinstance(gradients, Mapping):
        return {name: _layer_stats(_to_numpy(g)) for name, g in gradients.items()}

    flat = _to_numpy(gradients).reshape(-1)
    if partition is None:
        return {"all": _layer_stats(flat)}
    if sum(partition.values()) != flat.size:
        raise ShapeMismatchError(f"分层大小之和 {sum(partition.values())} ≠ 梯度长度 {flat.size}")
    stats, start = {}, 0
    for name, size in partition.items():
        stats[name] = _layer_stats(flat[start:start + size])
        start += size
    return stats


def pool_stats(stats: Iterable[LayerStats]) -> LayerStats:
    """按元素个数合并多层统计（总体方差的合并公式）"""
    stats = list(stats)
    total = sum(s.count for s in stats)
    if total == 0:
        raise EmptyResultError("没有可合并的统计量")
    mean = sum(s.count * s.mean for s in stats) / total
    second = sum(s.count * (s.std ** 2 + s.mean ** 2) for s in stats) / total
    return LayerStats(mean, math.sqrt(max(second - mean * mean, 0.0)), total)


def _to_numpy(values) -> np.ndarray:
    if torch.is_tensor(values):
        return values.detach().cpu().numpy()
    return np.asarray(values, dtype=np.float64)


# ==================== 损失 ====================

def spectral_loss_tensor(pred: torch.Tensor, meas: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """L = Σ(|Z|_ε − |Z̃|_ε)² + λ·Σ|Z − Z̃|²，对 pred 可微"""
    if pred.shape != meas.shape:
        raise ShapeMismatchError(f"pred {tuple(pred.shape)} 与 meas {tuple(meas.shape)} 形状不一致")
    eps = cfg.magnitude_epsilon
    mag_pred = torch.sqrt(pred.real ** 2 + pred.imag ** 2 + eps)
    mag_meas = torch.sqrt(meas.real ** 2 + meas.imag ** 2 + eps)
    diff = pred - meas
    return ((mag_pred - mag_meas) ** 2).sum() + cfg.lambda_ * (diff.real ** 2 + diff.imag ** 2).sum()


def spectral_loss(pred: SpectralResponse, meas: SpectralResponse, cfg: LossConfig = LossConfig()) -> Tuple[float, np.ndarray]:
    """
    频域损失及其对每个预测复数值的精确梯度

    梯度约定 g_k = ∂L/∂Re(Z_k) + i·∂L/∂Im(Z_k)：
        g = 2(|Z|_ε − |Z̃|_ε)·Z/|Z|_ε + 2λ(Z − Z̃)

    Raises:
        ShapeMismatchError: 两个响应的 bin 不一致
    """
    if pred.num_samples != meas.num_samples or not np.array_equal(pred.bins, meas.bins):
        raise ShapeMismatchError("pred 与 meas 的 bin 不一致")
    z, m = pred.values, meas.values
    eps = cfg.magnitude_epsilon
    mag_z = np.sqrt(z.real ** 2 + z.imag ** 2 + eps)
    mag_m = np.sqrt(m.real ** 2 + m.imag ** 2 + eps)
    diff = z - m
    loss = float(np.sum((mag_z - mag_m) ** 2) + cfg.lambda_ * np.sum(diff.real ** 2 + diff.imag ** 2))
    grad = 2.0 * (mag_z - mag_m) * z / mag_z + 2.0 * cfg.lambda_ * diff
    return loss, grad


def temporal_loss_tensor(pred: torch.Tensor, meas: torch.Tensor) -> torch.Tensor:
    if pred.shape != meas.shape:
        raise ShapeMismatchError(f"pred {tuple(pred.shape)} 与 meas {tuple(meas.shape)} 形状不一致")
    diff = pred - meas
    return (diff.real ** 2 + diff.imag ** 2).mean()


def temporal_loss(pred: np.ndarray, meas: np.ndarray) -> Tuple[float, np.ndarray]:
    """时域 MSE：mean(|x − x̃|²)，梯度 2(x − x̃)/N"""
    x = np.asarray(pred, dtype=np.complex128).reshape(-1)
    m = np.asarray(meas, dtype=np.complex128).reshape(-1)
    if x.shape != m.shape:
        raise ShapeMismatchError(f"长度不一致: {x.shape} vs {m.shape}")
    diff = x - m
    return float(np.mean(diff.real ** 2 + diff.imag ** 2)), 2.0 * diff / len(diff)


# ==================== 训练日志 ====================

@dataclass
class StepRecord:
    step: int
    epoch: int
    loss: float
    grad_stats: Dict[str, Tuple[float, float]]
    millis: float
    nan: bool = False


@dataclass
class TrainLog:
    """每个优化步一条记录，可选地以 JSONL 流式写入文件"""

    records: List[StepRecord] = field(default_factory=list)
    path: Optional[Path] = None
    scale: float = 1.0

    def __post_init__(self):
        if self.path is not None:
            self.path = Path(self.path)
            self.path.write_text("", encoding="utf-8")

    def append(self, record: StepRecord) -> None:
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(asdict(record)) + "\n")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    def layer_std(self, layer: Optional[str] = None) -> np.ndarray:
        """某层（默认第一层）梯度标准差随步数的序列"""
        if not self.records:
            return np.zeros(0)
        layer = layer or next(iter(self.records[0].grad_stats))
        return np.array([r.grad_stats[layer][1] for r in self.records])

    def grad_std_ratio(self, layer: Optional[str] = None) -> float:
        """梯度标准差的 max / median，衡量训练过程中梯度是否爆炸"""
        std = self.layer_std(layer)
        if std.size == 0:
            raise EmptyResultError("训练日志为空")
        median = float(np.median(std))
        return float(std.max()) / median if median > 0 else math.inf

    @classmethod
    def load(cls, path: Union[str, Path]) -> "TrainLog":
        log = cls()
        with open(path, "r", encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    data = json.loads(line)
                    data["grad_stats"] = {k: tuple(v) for k, v in data["grad_stats"].items()}
                    log.records.append(StepRecord(**data))
        return log


# ==================== 训练循环 ====================

def default_quadrature(field_: SceneField, rule: str = "voxel-centers", seed: int = 0) -> Quadrature:
    """网格场使用自身体素作为求积单元，网络场使用 32³ 均匀单元"""
    resolution = field_.dims if isinstance(field_, VoxelGridField) else NET_QUADRATURE_RESOLUTION
    return sample_quadrature(field_.bounds, rule, resolution, seed).unit_cells()


def measurement_scale(dataset, reference: Sequence[float], loss_cfg: LossConfig = LossConfig()) -> float:
    """
    测量归一化系数 = 峰值幅度 × 参考点处路径因子 R_T·R_R 的中位数

    除以该系数后，测量峰值等于参考点处一个 σ = 1、恰在 bin 上的单元的响应，
    因此孤立散射体在训练后的场中约为 1。

    Args:
        dataset: MeasurementSet
        reference: 参考点，通常为场景中心
        loss_cfg: normalize=False 时返回 1

    Returns:
        float: 系数；测量全零或非有限时返回 1
    """
    if not loss_cfg.normalize or dataset.values.size == 0:
        return 1.0
    peak = float(np.max(np.abs(dataset.values)))
    if not (math.isfinite(peak) and peak > 0):
        return 1.0
    ref = np.asarray(reference, dtype=np.float64).reshape(3)
    tx, rx = dataset.pose_array[:, :3], dataset.pose_array[:, 3:]
    path = float(np.median(np.linalg.norm(tx - ref, axis=1) * np.linalg.norm(rx - ref, axis=1)))
    return peak * path if path > 0 else peak


def _step_loss(mode, dataset, batch, tensors, sigma, loss_cfg, scale) -> torch.Tensor:
    cfg, window = dataset.chirp, dataset.window
    tx, rx, positions, weights, bins = tensors
    idx = torch.as_tensor(batch)
    tx_b, rx_b = tx[idx], rx[idx]

    if mode == "tf-ts":
        meas_t = idft(torch.as_tensor(dataset.full_spectrum[batch] / scale, dtype=torch.complex128))
        pred_t = time_forward_batch(cfg, tx_b, rx_b, positions, weights, sigma)
        return temporal_loss_tensor(pred_t, meas_t)

    meas = torch.as_tensor(dataset.values[batch] / scale, dtype=torch.complex128)
    if mode == "spectral":
        pred = SpectralForwardFunction.apply(sigma, cfg, tx_b, rx_b, positions, weights, bins)
    elif mode == "tf-ss":
        pred = dft(time_forward_batch(cfg, tx_b, rx_b, positions, weights, sigma))[:, window.k_min:window.k_max + 1]
    else:
        pred, _ = rq_forward_batch(cfg, tx_b, rx_b, positions, weights, sigma, window)
    return spectral_loss_tensor(pred, meas, loss_cfg) / len(batch)


def fit(
    dataset,
    field_: SceneField,
    mode: str = "spectral",
    quadrature: Optional[Quadrature] = None,
    opt: Optional[OptimizerConfig] = None,
    loss_cfg: LossConfig = LossConfig(),
    log_path: Optional[Union[str, Path]] = None,
    show_progress: bool = False,
) -> Tuple[SceneField, TrainLog]:
    """
    端到端训练反射率场

    每个 epoch 用运行种子无放回打乱全部测量，按 batch_size 切分；每一步在求积点上查询 σ，
    经所选模式的正向模型与损失反传到场参数，再做一次 Adam 更新。

    Args:
        dataset: MeasurementSet
        field_: 待训练的场（原地更新）
        mode: spectral / tf-ts / tf-ss / rq
        quadrature: 求积规则；None 时使用 default_quadrature。stratified-random 规则每个 epoch 以 seed+epoch 重新采样
        opt: 优化器配置；None 时按场类型选择默认学习率
        loss_cfg: 损失配置
        log_path: JSONL 训练日志路径
        show_progress: 是否显示进度条

    Returns:
        tuple: (训练后的场, TrainLog)，TrainLog.scale 为测量归一化系数

    Raises:
        ConfigError: 模式未知，或 tf-ts 模式下数据集缺少完整频谱
        EmptyResultError: 数据集为空
        ReconstructionError: 损失或梯度出现 NaN / Inf
    """
    if mode not in MODES:
        raise ConfigError(f"未知监督模式: {mode}，支持 {MODES}")
    if dataset.num_poses == 0:
        raise EmptyResultError("数据集没有任何测量")
    if mode == "tf-ts" and dataset.full_spectrum is None:
        raise ConfigError("tf-ts 模式需要完整频谱，请用 simulate --full-spectrum 重新生成数据集")
    opt = opt or OptimizerConfig.for_field(field_.kind)
    quadrature = quadrature or default_quadrature(field_, seed=opt.seed)

    reference = dataset.bounds.center if dataset.bounds is not None else field_.bounds.center
    scale = measurement_scale(dataset, reference, loss_cfg)
    poses = torch.as_tensor(dataset.pose_array, dtype=torch.float64)
    bins = torch.as_tensor(dataset.window.bins)
    optimizer = torch.optim.Adam(
        field_.parameters(), lr=opt.learning_rate, betas=(opt.beta1, opt.beta2), eps=opt.epsilon
    )
    generator = torch.Generator().manual_seed(opt.seed)
    log = TrainLog(path=log_path, scale=scale)
    layers = field_.layer_parameters()

    logger.info(
        f"开始训练: mode={mode}, field={field_.kind}, {dataset.num_poses} 个测量, "
        f"{len(quadrature)} 个求积点, lr={opt.learning_rate}, epochs={opt.epochs}, batch={opt.batch_size}"
    )
    step = 0
    for epoch in tqdm(range(opt.epochs), desc=f"训练 [{mode}]", disable=not show_progress):
        if quadrature.rule == "stratified-random" and epoch > 0:
            quadrature = sample_quadrature(
                field_.bounds, quadrature.rule, quadrature.resolution, opt.seed + epoch
            ).unit_cells()
        positions = torch.as_tensor(quadrature.positions, dtype=torch.float64)
        weights = torch.as_tensor(quadrature.weights, dtype=torch.float64)
        tensors = (poses[:, :3], poses[:, 3:], positions, weights, bins)

        order = torch.randperm(dataset.num_poses, generator=generator).numpy()
        for start in range(0, dataset.num_poses, opt.batch_size):
            batch = np.sort(order[start:start + opt.batch_size])
            began = time.perf_counter()
            optimizer.zero_grad()
            sigma = field_(positions)
            loss = _step_loss(mode, dataset, batch, tensors, sigma, loss_cfg, scale)
            loss.backward()

            per_layer = grad_stats({
                name: p.grad if p.grad is not None else torch.zeros_like(p) for name, p in layers.items()
            })
            stats = {name: (s.mean, s.std) for name, s in per_layer.items()}
            value = float(loss.detach())
            if not (math.isfinite(value) and all(math.isfinite(m) and math.isfinite(s) for m, s in stats.values())):
                log.append(StepRecord(step, epoch, value, stats, (time.perf_counter() - began) * 1000.0, nan=True))
                raise ReconstructionError("损失或梯度出现非有限值，训练中止", step, stats)

            optimizer.step()
            log.append(StepRecord(step, epoch, value, stats, (time.perf_counter() - began) * 1000.0))
            step += 1
        logger.debug(f"epoch {epoch}: loss={log.records[-1].loss:.6g}")

    logger.info(f"训练完成: {step} 步，最终损失 {log.records[-1].loss:.6g}")
    return field_, log
