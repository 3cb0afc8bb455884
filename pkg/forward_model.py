"""
正向模型模块
把采样后的反射率场 + 位姿映射为合成雷达响应，三种实现：

1. spectral：频域闭式解，只计算窗口内的 bin（本项目的核心模型）
2. time：时域拍频信号叠加，再做 N 点 DFT 并截取窗口
3. rq：距离量化，每个散射体整体落入最近的 bin，不建模泄漏

三种模型对 σ 都是线性的。批量接口（*_batch）直接处理 torch 张量，供训练使用；
单位姿接口接收 numpy，返回 SpectralResponse。
"""

import math
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import torch
from torch.utils.checkpoint import checkpoint

from aperture import BinWindow, SensorPose
from errors import BinRangeError, GeometryError, ShapeMismatchError
from settings import CHUNK_ELEMENTS, get_logger
from signal_model import ChirpConfig, angular_frequency, tone_kernel

logger = get_logger(__name__)


# ==================== 数据类型 ====================

@dataclass(frozen=True)
class SpectralResponse:
    """单个位姿在若干 DFT bin 上的复响应"""

    bins: np.ndarray
    values: np.ndarray
    num_samples: int

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=np.int64).reshape(-1)
        values = np.asarray(self.values, dtype=np.complex128).reshape(-1)
        if bins.shape != values.shape:
            raise ShapeMismatchError(f"bins ({bins.shape}) 与 values ({values.shape}) 长度不一致")
        if len(bins) and (bins[0] < 0 or bins[-1] >= self.num_samples or np.any(np.diff(bins) <= 0)):
            raise BinRangeError(f"bins 必须严格递增且位于 [0, {self.num_samples}) 内")
        if not np.all(np.isfinite(values)):
            raise ShapeMismatchError("values 含有非有限值")
        object.__setattr__(self, "bins", bins)
        object.__setattr__(self, "values", values)

    def with_values(self, values: np.ndarray) -> "SpectralResponse":
        return SpectralResponse(self.bins, values, self.num_samples)

    @classmethod
    def zeros(cls, window: BinWindow, num_samples: int) -> "SpectralResponse":
        return cls(window.bins, np.zeros(window.width, dtype=np.complex128), num_samples)


@dataclass(frozen=True)
class PathGeometry:
    """Tx→点、点→Rx 的传播距离与往返时延"""

    r_t: torch.Tensor
    r_r: torch.Tensor
    tau: torch.Tensor


def path_geometry(cfg: ChirpConfig, tx: torch.Tensor, rx: torch.Tensor, positions: torch.Tensor) -> PathGeometry:
    """
    Args:
        tx, rx: [B, 3]
        positions: [P, 3]

    Returns:
        PathGeometry: 各字段形状 [B, P]

    Raises:
        GeometryError: 采样点与天线重合
    """
    r_t = torch.linalg.norm(positions.unsqueeze(0) - tx.unsqueeze(1), dim=-1)
    r_r = torch.linalg.norm(positions.unsqueeze(0) - rx.unsqueeze(1), dim=-1)
    if bool((r_t <= 0).any()) or bool((r_r <= 0).any()):
        raise GeometryError("采样点与发射 / 接收天线位置重合")
    return PathGeometry(r_t, r_r, (r_t + r_r) / cfg.c)


# ==================== 内部工具 ====================

def _unpack_points(points) -> Tuple[torch.Tensor, torch.Tensor]:
    """接受 Quadrature、QuadraturePoint 列表或 (positions, weights) 元组"""
    if hasattr(points, "positions") and hasattr(points, "weights"):
        positions, weights = points.positions, points.weights
    elif isinstance(points, tuple) and len(points) == 2:
        positions, weights = points
    else:
        positions = np.array([p.position for p in points], dtype=np.float64).reshape(-1, 3)
        weights = np.array([p.weight for p in points], dtype=np.float64)
    positions = torch.as_tensor(positions, dtype=torch.float64).reshape(-1, 3)
    weights = torch.as_tensor(weights, dtype=torch.float64).reshape(-1)
    if positions.shape[0] != weights.shape[0]:
        raise ShapeMismatchError("positions 与 weights 长度不一致")
    return positions, weights


def _pose_tensors(poses) -> Tuple[torch.Tensor, torch.Tensor]:
    if isinstance(poses, SensorPose):
        poses = [poses]
    tx = torch.as_tensor(np.array([p.tx for p in poses]), dtype=torch.float64).reshape(-1, 3)
    rx = torch.as_tensor(np.array([p.rx for p in poses]), dtype=torch.float64).reshape(-1, 3)
    return tx, rx


def _as_sigmas(sigmas, count: int) -> torch.Tensor:
    sigma = sigmas if torch.is_tensor(sigmas) else torch.as_tensor(np.asarray(sigmas, dtype=np.float64))
    sigma = sigma.to(torch.float64).reshape(-1)
    if sigma.shape[0] != count:
        raise ShapeMismatchError(f"sigmas ({sigma.shape[0]}) 与 points ({count}) 长度不一致")
    return sigma


def _chunk_size(batch: int, inner: int) -> int:
    return max(1, CHUNK_ELEMENTS // max(1, batch * inner))


def _amplitude(cfg: ChirpConfig, geom: PathGeometry, weights: torch.Tensor) -> torch.Tensor:
    """w/(R_T·R_R)·e^{i2πf0τ}，形状 [B, P]"""
    magnitude = weights.unsqueeze(0) / (geom.r_t * geom.r_r)
    if cfg.f0 == 0.0:
        return torch.complex(magnitude, torch.zeros_like(magnitude))
    phase = 2.0 * math.pi * cfg.f0 * geom.tau
    return torch.complex(magnitude * torch.cos(phase), magnitude * torch.sin(phase))


def point_kernel(
    cfg: ChirpConfig,
    tx: torch.Tensor,
    rx: torch.Tensor,
    positions: torch.Tensor,
    weights: torch.Tensor,
    bins: torch.Tensor,
) -> torch.Tensor:
    """每个点、每个 bin 的线性因子 kernel_{b,p,k}，使得 Z_{b,k} = Σ_p kernel_{b,p,k}·σ_p"""
    geom = path_geometry(cfg, tx, rx, positions)
    alpha = angular_frequency(cfg, geom.tau)
    return _amplitude(cfg, geom, weights).unsqueeze(-1) * tone_kernel(alpha, cfg.num_samples, bins)


# ==================== 频域模型 ====================

def spectral_forward_batch(
    cfg: ChirpConfig,
    tx: torch.Tensor,
    rx: torch.Tensor,
    positions: torch.Tensor,
    weights: torch.Tensor,
    sigmas: torch.Tensor,
    bins: torch.Tensor,
) -> torch.Tensor:
    """Z[B, K]，按点分块累加，不保留 [B, P, K] 中间量"""
    batch, width = tx.shape[0], bins.shape[0]
    out = torch.zeros(batch, width, dtype=torch.complex128)
    step = _chunk_size(batch, width)
    for start in range(0, positions.shape[0], step):
        sl = slice(start, start + step)
        kern = point_kernel(cfg, tx, rx, positions[sl], weights[sl], bins)
        out = out + torch.einsum("bpk,p->bk", kern, sigmas[sl].to(torch.complex128))
    return out


def spectral_backward_batch(
    cfg: ChirpConfig,
    tx: torch.Tensor,
    rx: torch.Tensor,
    positions: torch.Tensor,
    weights: torch.Tensor,
    bins: torch.Tensor,
    upstream: torch.Tensor,
) -> torch.Tensor:
    """
    dL/dσ_p = Σ_{b,k} Re(conj(kernel_{b,p,k})·g_{b,k})

    upstream 采用实内积约定 g = ∂L/∂Re Z + i·∂L/∂Im Z（与 torch 复数梯度一致）。
    """
    batch, width = tx.shape[0], bins.shape[0]
    grad = torch.zeros(positions.shape[0], dtype=torch.float64)
    step = _chunk_size(batch, width)
    for start in range(0, positions.shape[0], step):
        sl = slice(start, start + step)
        kern = point_kernel(cfg, tx, rx, positions[sl], weights[sl], bins)
        grad[sl] = torch.einsum("bpk,bk->p", kern.conj(), upstream).real
    return grad


class SpectralForwardFunction(torch.autograd.Function):
    """频域模型的 autograd 封装，反向直接调用闭式的 spectral_backward_batch"""

    @staticmethod
    def forward(ctx, sigmas, cfg, tx, rx, positions, weights, bins):
        ctx.cfg = cfg
        ctx.save_for_backward(tx, rx, positions, weights, bins)
        return spectral_forward_batch(cfg, tx, rx, positions, weights, sigmas.detach(), bins)

    @staticmethod
    def backward(ctx, grad_output):
        tx, rx, positions, weights, bins = ctx.saved_tensors
        grad = spectral_backward_batch(ctx.cfg, tx, rx, positions, weights, bins, grad_output)
        return grad, None, None, None, None, None, None


def spectral_forward(
    cfg: ChirpConfig,
    pose: SensorPose,
    points,
    sigmas,
    window: BinWindow,
    counter: Optional[Counter] = None,
) -> SpectralResponse:
    """
    频域闭式正向模型（单位姿）

    Z_k = Σ_i w_i·σ_i/(N·R_T·R_R)·e^{iφ_i}·(1 - e^{iα_i N})/(1 - e^{i(α_i - β_k)})

    Args:
        cfg: chirp 参数
        pose: 位姿
        points: Quadrature / QuadraturePoint 列表 / (positions, weights)
        sigmas: 每个点的 σ
        window: bin 窗口
        counter: 可选的操作计数器（kernel_evals）

    Returns:
        SpectralResponse
    """
    window.validate(cfg.num_samples)
    positions, weights = _unpack_points(points)
    sigma = _as_sigmas(sigmas, positions.shape[0])
    tx, rx = _pose_tensors(pose)
    bins = torch.as_tensor(window.bins)
    with torch.no_grad():
        z = spectral_forward_batch(cfg, tx, rx, positions, weights, sigma, bins)[0]
    if counter is not None:
        counter["kernel_evals"] += window.width * positions.shape[0]
    return SpectralResponse(window.bins, z.numpy(), cfg.num_samples)


def spectral_backward(cfg: ChirpConfig, pose: SensorPose, points, window: BinWindow, upstream) -> np.ndarray:
    """spectral_forward 对 σ 的梯度，upstream 为 dL/dZ_k（长度等于窗口宽度）"""
    positions, weights = _unpack_points(points)
    g = torch.as_tensor(np.asarray(upstream, dtype=np.complex128)).reshape(1, -1)
    if g.shape[1] != window.width:
        raise ShapeMismatchError(f"upstream 长度 {g.shape[1]} ≠ 窗口宽度 {window.width}")
    tx, rx = _pose_tensors(pose)
    return spectral_backward_batch(cfg, tx, rx, positions, weights, torch.as_tensor(window.bins), g).numpy()


# ==================== 时域模型 ====================

def _time_chunk(cfg: ChirpConfig, tx, rx, positions, weights, sigmas) -> torch.Tensor:
    geom = path_geometry(cfg, tx, rx, positions)
    amp = _amplitude(cfg, geom, weights) * sigmas.unsqueeze(0).to(torch.complex128)
    alpha = angular_frequency(cfg, geom.tau)
    n = torch.arange(cfg.num_samples, dtype=torch.float64)
    arg = alpha.unsqueeze(-1) * n
    tones = torch.complex(torch.cos(arg), torch.sin(arg))
    return torch.einsum("bp,bpn->bn", amp, tones)


def time_forward_batch(
    cfg: ChirpConfig,
    tx: torch.Tensor,
    rx: torch.Tensor,
    positions: torch.Tensor,
    weights: torch.Tensor,
    sigmas: torch.Tensor,
) -> torch.Tensor:
    """x[B, N] = Σ_p w·σ/(R_T·R_R)·e^{iφ}·e^{iαn}；对 σ 可微（分块 checkpoint 控制显存）"""
    batch = tx.shape[0]
    out = torch.zeros(batch, cfg.num_samples, dtype=torch.complex128)
    step = _chunk_size(batch, cfg.num_samples)
    for start in range(0, positions.shape[0], step):
        sl = slice(start, start + step)
        if sigmas.requires_grad:
            part = checkpoint(_time_chunk, cfg, tx, rx, positions[sl], weights[sl], sigmas[sl], use_reentrant=False)
        else:
            part = _time_chunk(cfg, tx, rx, positions[sl], weights[sl], sigmas[sl])
        out = out + part
    return out


def time_forward(
    cfg: ChirpConfig,
    pose: SensorPose,
    points,
    sigmas,
    counter: Optional[Counter] = None,
) -> np.ndarray:
    """时域拍频信号叠加（单位姿），返回 N 个复采样"""
    positions, weights = _unpack_points(points)
    sigma = _as_sigmas(sigmas, positions.shape[0])
    tx, rx = _pose_tensors(pose)
    with torch.no_grad():
        x = time_forward_batch(cfg, tx, rx, positions, weights, sigma)[0]
    if counter is not None:
        counter["sample_evals"] += cfg.num_samples * positions.shape[0]
    return x.numpy()


def dft(samples):
    """
    1/N 归一化 DFT（FFT 实现），沿最后一维

    numpy 输入返回 numpy；torch 输入返回 torch 且保留梯度。
    """
    if torch.is_tensor(samples):
        return torch.fft.fft(samples, dim=-1) / samples.shape[-1]
    x = np.asarray(samples, dtype=np.complex128)
    return np.fft.fft(x, axis=-1) / x.shape[-1]


def idft(spectrum):
    """dft 的逆变换：x_n = Σ_k Z_k e^{iβ_k n}"""
    if torch.is_tensor(spectrum):
        return torch.fft.ifft(spectrum, dim=-1) * spectrum.shape[-1]
    z = np.asarray(spectrum, dtype=np.complex128)
    return np.fft.ifft(z, axis=-1) * z.shape[-1]


def naive_dft(samples) -> np.ndarray:
    """O(N²) 直接求和，作为 FFT 的对照"""
    x = np.asarray(samples, dtype=np.complex128)
    n = len(x)
    idx = np.arange(n)
    basis = np.exp(-2j * np.pi * np.outer(idx, idx) / n)
    return basis @ x / n


def truncate(spectrum, window: BinWindow) -> SpectralResponse:
    """从完整 N 点频谱中截取窗口内的 bin"""
    spectrum = np.asarray(spectrum, dtype=np.complex128)
    window.validate(len(spectrum))
    return SpectralResponse(window.bins, spectrum[window.k_min:window.k_max + 1], len(spectrum))


# ==================== 距离量化模型 ====================

def rq_forward_batch(
    cfg: ChirpConfig,
    tx: torch.Tensor,
    rx: torch.Tensor,
    positions: torch.Tensor,
    weights: torch.Tensor,
    sigmas: torch.Tensor,
    window: BinWindow,
) -> Tuple[torch.Tensor, int]:
    """
    每个散射体的复贡献整体加到 round(bin) 上（0.5 向远端进位）

    贡献取闭式模型在整数 bin 上的值 w·σ·e^{iφ}/(R_T·R_R)，
    因此整数 bin 处的单个散射体与 spectral 模型完全一致。

    Returns:
        tuple: (Z[B, K], 落在窗口外被丢弃的散射体数)
    """
    batch, width = tx.shape[0], window.width
    out = torch.zeros(batch * width, dtype=torch.complex128)
    dropped = 0
    step = _chunk_size(batch, 1)
    scale = cfg.slope * cfg.num_samples / cfg.sample_rate
    for start in range(0, positions.shape[0], step):
        sl = slice(start, start + step)
        geom = path_geometry(cfg, tx, rx, positions[sl])
        contrib = _amplitude(cfg, geom, weights[sl]) * sigmas[sl].unsqueeze(0).to(torch.complex128)
        k = torch.floor(geom.tau * scale + 0.5).long() - window.k_min
        keep = (k >= 0) & (k < width)
        dropped += int((~keep).sum())
        rows = torch.arange(batch).unsqueeze(1).expand_as(k)
        flat = (rows * width + k)[keep]
        out = out.index_add(0, flat, contrib[keep])
    return out.reshape(batch, width), dropped


def rq_forward(
    cfg: ChirpConfig,
    pose: SensorPose,
    points,
    sigmas,
    window: BinWindow,
    counter: Optional[Counter] = None,
) -> SpectralResponse:
    """距离量化基线（单位姿）"""
    window.validate(cfg.num_samples)
    positions, weights = _unpack_points(points)
    sigma = _as_sigmas(sigmas, positions.shape[0])
    tx, rx = _pose_tensors(pose)
    with torch.no_grad():
        z, dropped = rq_forward_batch(cfg, tx, rx, positions, weights, sigma, window)
    if dropped:
        logger.debug(f"rq_forward: {dropped} 个散射体落在 bin 窗口外，已丢弃")
    if counter is not None:
        counter["rq_deposits"] += positions.shape[0]
        counter["rq_dropped"] += dropped
    return SpectralResponse(window.bins, z[0].numpy(), cfg.num_samples)


def forward_cost(model: str, num_points: int, window_width: int, num_samples: int) -> int:
    """每个位姿的理论计算量：spectral |窗口|·|点|，time N·|点|（另加一次 DFT），rq |点|"""
    if model == "spectral":
        return window_width * num_points
    if model == "time":
        return num_samples * num_points
    if model == "rq":
        return num_points
    raise ValueError(f"未知模型: {model}")


def batched_poses(poses: Sequence[SensorPose]) -> Tuple[torch.Tensor, torch.Tensor]:
    """位姿列表 → (tx[B,3], rx[B,3])"""
    return _pose_tensors(list(poses))
