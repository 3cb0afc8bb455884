"""
桌面尺度仿真体模
由基本图元生成离散散射体集合：点、球壳、盒壳、OBJ 顶点。
壳面上的点用带种子的 Halton 准随机序列采样，结果可复现。
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
from scipy.stats import qmc

from aperture import SceneBounds
from backprojection import Volume
from errors import ConfigError, EmptyResultError

PRIMITIVE_TYPES = ["point", "sphere_shell", "box_shell", "obj_vertices"]


def _check_file(path: Union[str, Path], suffixes: List[str]) -> Path:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"文件不存在: {path}")
    if not path.is_file():
        raise ConfigError(f"不是有效的文件: {path}")
    if path.suffix.lower() not in suffixes:
        raise ConfigError(f"不支持的文件类型: {path.suffix}")
    return path


def _sigma(primitive: Dict) -> float:
    sigma = float(primitive.get("sigma", 1.0))
    if sigma < 0:
        raise ConfigError(f"sigma 必须 ≥ 0: {primitive}")
    return sigma


def _halton(dims: int, count: int, seed: int) -> np.ndarray:
    return qmc.Halton(d=dims, scramble=True, seed=seed).random(count)


def _sphere_shell(primitive: Dict, seed: int) -> np.ndarray:
    center = np.asarray(primitive["center"], dtype=np.float64)
    radius = float(primitive["radius"])
    count = int(primitive.get("count", 256))
    if radius <= 0 or count < 1:
        raise ConfigError(f"球壳参数非法: {primitive}")
    u = _halton(2, count, seed)
    z = 1.0 - 2.0 * u[:, 0]
    phi = 2.0 * np.pi * u[:, 1]
    ring = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    return center + radius * np.stack([ring * np.cos(phi), ring * np.sin(phi), z], axis=1)


def _box_shell(primitive: Dict, seed: int) -> np.ndarray:
    lo = np.asarray(primitive["min"], dtype=np.float64)
    hi = np.asarray(primitive["max"], dtype=np.float64)
    count = int(primitive.get("count", 256))
    if not np.all(lo < hi) or count < 1:
        raise ConfigError(f"盒壳参数非法: {primitive}")
    ext = hi - lo
    # 6 个面：按面积分配采样
    faces = []
    for axis in range(3):
        others = [a for a in range(3) if a != axis]
        area = ext[others[0]] * ext[others[1]]
        faces += [(axis, lo[axis], others, area), (axis, hi[axis], others, area)]
    areas = np.array([f[3] for f in faces])
    cumulative = np.cumsum(areas) / areas.sum()

    u = _halton(3, count, seed)
    face_idx = np.minimum(np.searchsorted(cumulative, u[:, 0], side="right"), len(faces) - 1)
    points = np.empty((count, 3))
    for i, f in enumerate(face_idx):
        axis, value, others, _ = faces[f]
        points[i, axis] = value
        points[i, others[0]] = lo[others[0]] + u[i, 1] * ext[others[0]]
        points[i, others[1]] = lo[others[1]] + u[i, 2] * ext[others[1]]
    return points


def load_obj_vertices(path: Union[str, Path]) -> np.ndarray:
    """读取 OBJ 文件中的 `v x y z` 顶点"""
    path = _check_file(path, [".obj"])
    vertices = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            parts = line.split()
            if len(parts) >= 4 and parts[0] == "v":
                vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
    if not vertices:
        raise EmptyResultError(f"OBJ 文件中未找到顶点: {path}")
    return np.asarray(vertices, dtype=np.float64)


def _obj_vertices(primitive: Dict, seed: int) -> np.ndarray:
    vertices = load_obj_vertices(primitive["path"])
    scale = float(primitive.get("scale", 1.0))
    offset = np.asarray(primitive.get("offset", [0.0, 0.0, 0.0]), dtype=np.float64)
    vertices = vertices * scale + offset
    max_points = int(primitive.get("max_points", 2048))
    if len(vertices) > max_points:
        keep = np.sort(np.random.default_rng(seed).choice(len(vertices), max_points, replace=False))
        vertices = vertices[keep]
    return vertices


@dataclass
class PhantomSpec:
    """体模 = 场景边界 + 图元列表"""

    bounds: SceneBounds
    primitives: List[Dict] = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        for p in self.primitives:
            if p.get("type") not in PRIMITIVE_TYPES:
                raise ConfigError(f"未知图元类型: {p.get('type')}，支持 {PRIMITIVE_TYPES}")
            _sigma(p)

    def scatterers(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        展开为离散散射体

        Returns:
            tuple: (positions [M, 3], sigmas [M])

        Raises:
            EmptyResultError: 体模为空
            ConfigError: 有散射体落在场景边界外
        """
        positions, sigmas = [], []
        for idx, p in enumerate(self.primitives):
            seed = self.seed + idx
            kind = p["type"]
            if kind == "point":
                pts = np.asarray(p["position"], dtype=np.float64).reshape(1, 3)
            elif kind == "sphere_shell":
                pts = _sphere_shell(p, seed)
            elif kind == "box_shell":
                pts = _box_shell(p, seed)
            else:
                pts = _obj_vertices(p, seed)
            positions.append(pts)
            sigmas.append(np.full(len(pts), _sigma(p)))

        if not positions:
            raise EmptyResultError("体模不含任何图元")
        positions = np.concatenate(positions)
        sigmas = np.concatenate(sigmas)
        outside = ~self.bounds.contains(positions)
        if outside.any():
            raise ConfigError(f"{int(outside.sum())} 个散射体落在场景边界外")
        return positions, sigmas

    def to_dict(self) -> Dict:
        return {"bounds": self.bounds.to_dict(), "primitives": self.primitives, "seed": self.seed}

    @classmethod
    def from_dict(cls, data: Dict) -> "PhantomSpec":
        return cls(SceneBounds.from_dict(data["bounds"]), list(data.get("primitives", [])), int(data.get("seed", 0)))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "PhantomSpec":
        with open(_check_file(path, [".json"]), "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def three_spheres(bounds: SceneBounds, count: int = 200, sigma: float = 1.0) -> PhantomSpec:
    """三个球壳组成的标准体模"""
    c = bounds.center
    r = 0.12 * float(np.min(bounds.extent))
    offsets = np.array([[-0.22, -0.12, 0.0], [0.2, -0.1, 0.05], [0.0, 0.22, -0.05]]) * float(np.min(bounds.extent))
    primitives = [
        {"type": "sphere_shell", "center": (c + o).tolist(), "radius": r, "sigma": sigma, "count": count}
        for o in offsets
    ]
    return PhantomSpec(bounds, primitives)


def rasterize(positions: np.ndarray, sigmas: np.ndarray, grid: Volume) -> Volume:
    """散射体 → 真值体：每个散射体把 σ 写入所在体素（取最大值）"""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    idx = np.floor((positions - grid.origin) / grid.voxel_size).astype(int)
    dims = np.asarray(grid.dims)
    inside = np.all((idx >= 0) & (idx < dims), axis=1)
    out = np.zeros(grid.dims)
    np.maximum.at(out, tuple(idx[inside].T), np.asarray(sigmas, dtype=np.float64)[inside])
    return Volume(grid.origin, grid.voxel_size, grid.dims, out)
