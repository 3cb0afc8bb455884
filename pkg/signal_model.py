"""
FMCW 信号模型
负责 chirp 参数、拍频信号合成、距离 / bin 换算，以及延迟单音信号 DFT 的闭式解。

约定：
1. DFT 统一采用 1/N 归一化：Z_k = (1/N) Σ_n x_n e^{-iβ_k n}，β_k = 2πk/N
2. 拍频信号忽略 RVP 项（残余视频相位 -0.5·S·τ²），该项在近距离场景下可以忽略
3. 角频率 α 按“每采样点”表示：α = 2π·S·τ / fs
"""

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Union

import numpy as np
import torch

from errors import BinRangeError, ConfigError

SPEED_OF_LIGHT = 299_792_458.0

# |α - β_k| 低于该阈值时走 0/0 极限分支
ON_BIN_TOLERANCE = 1e-9

ArrayLike = Union[float, np.ndarray, torch.Tensor]


@dataclass(frozen=True)
class ChirpConfig:
    """FMCW 波形参数，所有正向模型共享"""

    f0: float = 0.0
    slope: float = 70.295e12
    sample_rate: float = 5e6
    num_samples: int = 256
    c: float = SPEED_OF_LIGHT

    def __post_init__(self):
        if not self.slope > 0:
            raise ConfigError(f"slope 必须 > 0: {self.slope}")
        if not self.sample_rate > 0:
            raise ConfigError(f"sample_rate 必须 > 0: {self.sample_rate}")
        if int(self.num_samples) != self.num_samples or self.num_samples < 2:
            raise ConfigError(f"num_samples 必须是 ≥ 2 的整数: {self.num_samples}")
        if not self.c > 0:
            raise ConfigError(f"c 必须 > 0: {self.c}")
        object.__setattr__(self, "num_samples", int(self.num_samples))

    @property
    def bandwidth(self) -> float:
        """B = S·N/fs"""
        return self.slope * self.num_samples / self.sample_rate

    @property
    def chirp_duration(self) -> float:
        """T_c = N/fs"""
        return self.num_samples / self.sample_rate

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "ChirpConfig":
        known = {k: data[k] for k in ("f0", "slope", "sample_rate", "num_samples", "c") if k in data}
        return cls(**known)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ChirpConfig":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def _wrap_phase(phase: float) -> float:
    """把相位折叠到 (-π, π]"""
    return math.pi - (math.pi - phase) % (2.0 * math.pi)


@dataclass(frozen=True)
class ToneParams:
    """复指数单音 M·e^{i(αn + φ)}"""

    magnitude: float
    phase: float
    angular_freq: float

    def __post_init__(self):
        if self.magnitude < 0:
            raise ConfigError(f"magnitude 必须 ≥ 0: {self.magnitude}")
        object.__setattr__(self, "phase", _wrap_phase(float(self.phase)))


# ==================== 距离 / 频率换算 ====================

def range_resolution(cfg: ChirpConfig) -> float:
    """距离分辨率 Δd = c / (2B)，只取决于带宽"""
    return cfg.c / (2.0 * cfg.bandwidth)


def max_range(cfg: ChirpConfig) -> float:
    """采样 chirp 的无模糊（单站）距离 N·Δd"""
    return cfg.num_samples * range_resolution(cfg)


def beat_frequency(cfg: ChirpConfig, distance: float) -> float:
    """单站距离 d 对应的拍频 f_b = 2·S·d / c"""
    if distance < 0:
        raise ConfigError(f"distance 必须 ≥ 0: {distance}")
    return 2.0 * cfg.slope * distance / cfg.c


def fractional_bin(cfg: ChirpConfig, round_trip_delay: float) -> float:
    """
    往返时延 τ 对应的（小数）bin 位置 S·τ·N / fs

    Raises:
        BinRangeError: 结果 ≥ N，即散射体超出无模糊距离
    """
    if round_trip_delay < 0:
        raise ConfigError(f"round_trip_delay 必须 ≥ 0: {round_trip_delay}")
    k = cfg.slope * round_trip_delay * cfg.num_samples / cfg.sample_rate
    if k >= cfg.num_samples:
        raise BinRangeError(
            f"时延 {round_trip_delay:.6e}s 映射到 bin {k:.3f} ≥ N={cfg.num_samples}"
        )
    return k


def bin_frequency(cfg: ChirpConfig, k: float) -> float:
    """bin k 的中心频率（Hz）"""
    return k * cfg.sample_rate / cfg.num_samples


def bin_to_range(cfg: ChirpConfig, k: float) -> float:
    """bin k 对应的单站距离（m），fractional_bin 的反函数"""
    return k * range_resolution(cfg)


def angular_frequency(cfg: ChirpConfig, tau: ArrayLike) -> ArrayLike:
    """时延 → 每采样点角频率 α = 2π·S·τ / fs（秒制 2πSτ 与 bin 核之间唯一的单位换算点）"""
    return 2.0 * math.pi * cfg.slope * tau / cfg.sample_rate


# ==================== 信号合成 ====================

def beat_signal(cfg: ChirpConfig, delay: float, amplitude: float = 1.0) -> np.ndarray:
    """
    合成 N 点拍频信号 b[n] = A·e^{i2πf0τ}·e^{i2πSτn/fs}

    RVP 项（-0.5·S·τ²）按惯例省略。

    Args:
        cfg: chirp 参数
        delay: 往返时延 τ（秒）
        amplitude: 幅度

    Returns:
        np.ndarray: complex128，长度 N
    """
    if delay < 0:
        raise ConfigError(f"delay 必须 ≥ 0: {delay}")
    n = np.arange(cfg.num_samples, dtype=np.float64)
    carrier = np.exp(1j * 2.0 * np.pi * cfg.f0 * delay)
    return amplitude * carrier * np.exp(1j * 2.0 * np.pi * cfg.slope * delay * n / cfg.sample_rate)


# ==================== 闭式 DFT ====================

def tone_kernel(alpha: ArrayLike, num_samples: int, bins: ArrayLike) -> torch.Tensor:
    """
    单位幅度、零相位单音在指定 bin 上的 1/N 归一化 DFT

    (1/N)·(1 - e^{iαN}) / (1 - e^{i(α-β_k)}) 与
    (1/N)·e^{iθ(N-1)/2}·sin(Nθ/2)/sin(θ/2)（θ = α - β_k）等价，后者避免了
    1 - e^{iθ} 在小 θ 时的相消误差。|θ| < ON_BIN_TOLERANCE 时取可去奇点的级数极限。

    Args:
        alpha: 角频率（rad/sample），任意形状
        num_samples: N
        bins: bin 索引，形状 [K]

    Returns:
        torch.Tensor: complex128，形状 alpha.shape + [K]
    """
    alpha = torch.as_tensor(alpha, dtype=torch.float64)
    bins = torch.as_tensor(bins, dtype=torch.float64)
    n = float(num_samples)
    theta = alpha.unsqueeze(-1) - 2.0 * math.pi * bins / n
    # 和式对 θ 以 2π 为周期，先折叠到 (-π, π]
    theta = theta - 2.0 * math.pi * torch.round(theta / (2.0 * math.pi))
    small = theta.abs() < ON_BIN_TOLERANCE
    safe = torch.where(small, torch.ones_like(theta), theta)
    ratio = torch.sin(n * safe / 2.0) / (n * torch.sin(safe / 2.0))
    ratio_limit = 1.0 - (n * n - 1.0) * theta * theta / 24.0
    ratio = torch.where(small, ratio_limit, ratio)
    phase = theta * (n - 1.0) / 2.0
    return torch.complex(ratio * torch.cos(phase), ratio * torch.sin(phase))


def tone_dft(tone: ToneParams, num_samples: int, k: int) -> complex:
    """
    复指数单音 M·e^{i(αn+φ)} 在 bin k 上的 DFT 闭式解

    Z_k = (M/N)·e^{iφ}·(1 - e^{iαN}) / (1 - e^{i(α-β_k)})
    """
    if not 0 <= k < num_samples:
        raise BinRangeError(f"bin {k} 不在 [0, {num_samples}) 内")
    kernel = tone_kernel(tone.angular_freq, num_samples, [k])[0].item()
    return tone.magnitude * complex(np.exp(1j * tone.phase)) * kernel


def dirichlet_envelope(alpha: float, num_samples: int) -> np.ndarray:
    """
    单位单音在全部 N 个 bin 上的幅度谱（Dirichlet 核），用于复现频谱泄漏曲线

    Returns:
        np.ndarray: 长度 N 的幅度
    """
    if num_samples < 2:
        raise ConfigError(f"N 必须 ≥ 2: {num_samples}")
    kernel = tone_kernel(alpha, num_samples, torch.arange(num_samples))
    return kernel.abs().numpy()
