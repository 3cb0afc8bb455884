"""
反射率场模块
σ(x) 的两种可微实现（体素网格 / 正弦坐标网络），以及正向模型积分的求积点采样。

场景有界：边界外查询返回 0，梯度也为 0。
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from aperture import SceneBounds
from backprojection import Volume
from errors import ConfigError, ShapeMismatchError

TensorLike = Union[np.ndarray, torch.Tensor, Sequence[Sequence[float]]]

GRID_INIT_VALUE = 1e-3


def softplus_inverse(value: float) -> float:
    """softplus 的反函数 log(e^v - 1)"""
    if value <= 0:
        raise ConfigError(f"softplus 反函数要求 value > 0: {value}")
    return value + math.log(-math.expm1(-value))


def _as_positions(positions: TensorLike) -> torch.Tensor:
    pos = torch.as_tensor(np.asarray(positions) if not torch.is_tensor(positions) else positions,
                          dtype=torch.float64)
    return pos.reshape(-1, 3)


# ==================== 求积点 ====================

@dataclass(frozen=True)
class QuadraturePoint:
    position: np.ndarray
    weight: float


@dataclass(frozen=True)
class Quadrature:
    """打包存储的求积规则：positions [P, 3]，weights [P]（m³）"""

    positions: np.ndarray
    weights: np.ndarray
    resolution: Tuple[int, int, int]
    rule: str = "voxel-centers"

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def cell_volume(self) -> float:
        return float(self.weights[0])

    def points(self) -> List[QuadraturePoint]:
        return [QuadraturePoint(p, float(w)) for p, w in zip(self.positions, self.weights)]

    def unit_cells(self) -> "Quadrature":
        """权重除以单元体积（每个单元权重为 1），σ 按“每单元积分反射率”解释"""
        return Quadrature(self.positions, self.weights / self.cell_volume, self.resolution, self.rule)


def sample_quadrature(
    bounds: SceneBounds,
    rule: str = "voxel-centers",
    resolution: Union[int, Sequence[int]] = 64,
    seed: int = 0,
) -> Quadrature:
    """
    把场景盒离散化为求积点

    Args:
        bounds: 场景边界
        rule: "voxel-centers"（中点法）或 "stratified-random"（每个单元均匀采一个点）
        resolution: 每轴单元数，int 表示三轴相同
        seed: stratified-random 的随机种子

    Returns:
        Quadrature: 权重均为单元体积
    """
    res = (resolution,) * 3 if isinstance(resolution, (int, np.integer)) else tuple(int(r) for r in resolution)
    if len(res) != 3 or min(res) < 1:
        raise ConfigError(f"resolution 每轴必须 ≥ 1: {resolution}")
    cell = bounds.extent / np.asarray(res, dtype=np.float64)
    idx = np.stack(np.meshgrid(*[np.arange(r) for r in res], indexing="ij"), axis=-1).reshape(-1, 3)

    if rule == "voxel-centers":
        offsets = np.full(idx.shape, 0.5)
    elif rule == "stratified-random":
        offsets = np.random.default_rng(seed).uniform(0.0, 1.0, size=idx.shape)
    else:
        raise ConfigError(f"未知求积规则: {rule}")

    positions = bounds.min_corner + (idx + offsets) * cell
    weights = np.full(len(positions), float(np.prod(cell)))
    return Quadrature(positions, weights, res, rule)


# ==================== 场基类 ====================

class SceneField(nn.Module):
    """可微反射率场 σ(x) ≥ 0"""

    kind = "base"

    def __init__(self, bounds: SceneBounds):
        super().__init__()
        self.bounds = bounds
        self.register_buffer("_lo", torch.as_tensor(bounds.min_corner, dtype=torch.float64))
        self.register_buffer("_hi", torch.as_tensor(bounds.max_corner, dtype=torch.float64))

    def inside(self, positions: torch.Tensor) -> torch.Tensor:
        return ((positions >= self._lo) & (positions <= self._hi)).all(dim=-1)

    def query(self, positions: TensorLike) -> torch.Tensor:
        return self(_as_positions(positions))

    def layer_parameters(self) -> Dict[str, nn.Parameter]:
        """用于梯度统计的分层参数"""
        return dict(self.named_parameters())

    def config(self) -> Dict:
        raise NotImplementedError


class VoxelGridField(SceneField):
    """
    稠密体素网格，体素中心 origin + (i + 0.5)·voxel_size

    存储激活前的参数 raw，查询时对体素值做激活（softplus 或 identity+clamp）后三线性插值，
    因此在体素中心处精确返回该体素的值。
    """

    kind = "grid"

    def __init__(
        self,
        origin: Sequence[float],
        voxel_size: float,
        dims: Sequence[int],
        activation: str = "softplus",
        init_value: float = GRID_INIT_VALUE,
    ):
        dims = tuple(int(d) for d in dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ConfigError(f"dims 每轴必须 ≥ 1: {dims}")
        if not voxel_size > 0:
            raise ConfigError(f"voxel_size 必须 > 0: {voxel_size}")
        if activation not in ("softplus", "identity"):
            raise ConfigError(f"未知激活函数: {activation}")
        origin = np.asarray(origin, dtype=np.float64)
        super().__init__(SceneBounds(origin, origin + voxel_size * np.asarray(dims)))
        self.origin = origin
        self.voxel_size = float(voxel_size)
        self.dims = dims
        self.activation = activation
        start = softplus_inverse(init_value) if activation == "softplus" else init_value
        self.raw = nn.Parameter(torch.full(dims, start, dtype=torch.float64))

    @classmethod
    def spanning(cls, bounds: SceneBounds, resolution: int, **kwargs) -> "VoxelGridField":
        """覆盖场景盒的立方体素网格，最长轴 resolution 个体素"""
        voxel = float(np.max(bounds.extent)) / resolution
        dims = np.maximum(np.ceil(bounds.extent / voxel - 1e-9).astype(int), 1)
        return cls(bounds.min_corner, voxel, dims, **kwargs)

    @classmethod
    def from_values(cls, origin, voxel_size, values: np.ndarray, activation: str = "softplus") -> "VoxelGridField":
        values = np.asarray(values, dtype=np.float64)
        grid = cls(origin, voxel_size, values.shape, activation=activation)
        with torch.no_grad():
            if activation == "softplus":
                safe = np.maximum(values, 1e-300)
                raw = safe + np.log(-np.expm1(-safe))
            else:
                raw = values
            grid.raw.copy_(torch.as_tensor(raw))
        return grid

    @property
    def values(self) -> torch.Tensor:
        if self.activation == "softplus":
            return F.softplus(self.raw)
        return self.raw.clamp(min=0.0)

    def forward(self, positions: torch.Tensor) -> torch.Tensor:
        dims = torch.as_tensor(self.dims, dtype=torch.float64)
        u = (positions - self._lo) / self.voxel_size - 0.5
        u = torch.minimum(u.clamp(min=0.0), dims - 1.0)
        i0 = torch.minimum(torch.floor(u), (dims - 2.0).clamp(min=0.0))
        frac = u - i0
        i0 = i0.long()
        i1 = torch.minimum(i0 + 1, torch.as_tensor(self.dims) - 1)

        flat = self.values.reshape(-1)
        ny, nz = self.dims[1], self.dims[2]
        out = torch.zeros(positions.shape[0], dtype=torch.float64)
        for cx in (0, 1):
            ix = i1[:, 0] if cx else i0[:, 0]
            wx = frac[:, 0] if cx else 1.0 - frac[:, 0]
            for cy in (0, 1):
                iy = i1[:, 1] if cy else i0[:, 1]
                wy = frac[:, 1] if cy else 1.0 - frac[:, 1]
                for cz in (0, 1):
                    iz = i1[:, 2] if cz else i0[:, 2]
                    wz = frac[:, 2] if cz else 1.0 - frac[:, 2]
                    out = out + wx * wy * wz * flat[(ix * ny + iy) * nz + iz]
        return torch.where(self.inside(positions), out, torch.zeros_like(out))

    def voxel_centers(self) -> np.ndarray:
        idx = np.stack(np.meshgrid(*[np.arange(d) for d in self.dims], indexing="ij"), axis=-1).reshape(-1, 3)
        return self.origin + (idx + 0.5) * self.voxel_size

    def to_volume(self, scale: float = 1.0) -> Volume:
        return Volume(self.origin, self.voxel_size, self.dims, self.values.detach().numpy() * scale)

    def layer_parameters(self) -> Dict[str, nn.Parameter]:
        return {"grid": self.raw}

    def config(self) -> Dict:
        return {
            "origin": self.origin.tolist(),
            "voxel_size": self.voxel_size,
            "dims": list(self.dims),
            "activation": self.activation,
        }


class CoordinateNetworkField(SceneField):
    """
    正弦激活坐标网络：输入先缩放到 [-1, 1]³，
    隐藏层 sin(ω0·(Wx + b))，输出层线性 + softplus。

    初始化：首层 U(-1/fan_in, 1/fan_in)，其余层 U(-√(6/fan_in)/ω0, √(6/fan_in)/ω0)；
    输出偏置初始化为 softplus⁻¹(1e-3)，与网格场的初值一致。
    """

    kind = "net"

    def __init__(
        self,
        bounds: SceneBounds,
        hidden: Sequence[int] = (128, 128, 128),
        omega0: float = 30.0,
        seed: int = 0,
    ):
        super().__init__(bounds)
        if not hidden or min(hidden) < 1:
            raise ConfigError(f"隐藏层宽度非法: {hidden}")
        self.hidden = tuple(int(h) for h in hidden)
        self.omega0 = float(omega0)
        self.seed = int(seed)

        widths = [3, *self.hidden, 1]
        self.layers = nn.ModuleList(
            nn.Linear(widths[i], widths[i + 1], dtype=torch.float64) for i in range(len(widths) - 1)
        )
        gen = torch.Generator().manual_seed(self.seed)
        with torch.no_grad():
            for i, layer in enumerate(self.layers):
                fan_in = layer.in_features
                bound = 1.0 / fan_in if i == 0 else math.sqrt(6.0 / fan_in) / self.omega0
                layer.weight.uniform_(-bound, bound, generator=gen)
                layer.bias.uniform_(-bound, bound, generator=gen)
            self.layers[-1].bias.fill_(softplus_inverse(GRID_INIT_VALUE))

    def forward(self, positions: torch.Tensor) -> torch.Tensor:
        h = 2.0 * (positions - self._lo) / (self._hi - self._lo) - 1.0
        for layer in self.layers[:-1]:
            h = torch.sin(self.omega0 * layer(h))
        out = F.softplus(self.layers[-1](h)).squeeze(-1)
        return torch.where(self.inside(positions), out, torch.zeros_like(out))

    def layer_parameters(self) -> Dict[str, nn.Parameter]:
        return {f"layer{i}.weight": layer.weight for i, layer in enumerate(self.layers)}

    def config(self) -> Dict:
        return {
            "bounds": self.bounds.to_dict(),
            "hidden": list(self.hidden),
            "omega0": self.omega0,
            "seed": self.seed,
        }


FIELD_TYPES = {VoxelGridField.kind: VoxelGridField, CoordinateNetworkField.kind: CoordinateNetworkField}


def build_field(kind: str, config: Dict) -> SceneField:
    """按 kind + config 重建场（用于加载 checkpoint）"""
    if kind == "grid":
        return VoxelGridField(config["origin"], config["voxel_size"], config["dims"], config.get("activation", "softplus"))
    if kind == "net":
        return CoordinateNetworkField(
            SceneBounds.from_dict(config["bounds"]), config["hidden"], config["omega0"], config["seed"]
        )
    raise ConfigError(f"未知场类型: {kind}")


# ==================== 查询 / 反传 ====================

def query(field: SceneField, positions: TensorLike) -> torch.Tensor:
    """σ(x) ≥ 0"""
    return field.query(positions)


def sample_volume(field: SceneField, grid: Volume, scale: float = 1.0, chunk: int = 65536) -> Volume:
    """在 grid 的体素中心处查询场，乘以 scale 后写成 Volume"""
    centers = grid.voxel_centers()
    out = np.empty(len(centers))
    with torch.no_grad():
        for start in range(0, len(centers), chunk):
            out[start:start + chunk] = field.query(centers[start:start + chunk]).numpy()
    return Volume(grid.origin, grid.voxel_size, grid.dims, out * scale)


def backward(field: SceneField, positions: TensorLike, upstream_grads: TensorLike) -> torch.Tensor:
    """
    Σ_i upstream_i·σ(x_i) 对全部参数的精确梯度（按 parameters() 顺序展平）

    Raises:
        ShapeMismatchError: positions 与 upstream 长度不一致
    """
    pos = _as_positions(positions)
    upstream = torch.as_tensor(np.asarray(upstream_grads) if not torch.is_tensor(upstream_grads) else upstream_grads,
                               dtype=torch.float64).reshape(-1)
    if upstream.shape[0] != pos.shape[0]:
        raise ShapeMismatchError(f"positions ({pos.shape[0]}) 与 upstream ({upstream.shape[0]}) 长度不一致")
    params = list(field.parameters())
    sigma = field(pos)
    grads = torch.autograd.grad((sigma * upstream).sum(), params, allow_unused=True)
    return torch.cat([
        (g if g is not None else torch.zeros_like(p)).reshape(-1) for g, p in zip(grads, params)
    ])


def parameter_vector(field: SceneField) -> torch.Tensor:
    return nn.utils.parameters_to_vector(field.parameters()).detach()


def load_parameter_vector(field: SceneField, vector: torch.Tensor) -> None:
    with torch.no_grad():
        nn.utils.vector_to_parameters(vector, field.parameters())
