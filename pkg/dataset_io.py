"""
数据集 / 体数据 / 检查点的持久化

二进制格式（小端）：
    magic(4s) | version(u32) | header_len(u64) | JSON header (UTF-8) | payload

测量集 payload：每个位姿 6×f64（tx, rx），随后每个位姿 K 个窗口内复数值（2×f32，
header 标志 f64_payload 时为 2×f64），可选的完整频谱块（每位姿 N 个复数，精度同上）。
体数据 payload：dims 个 f64 强度（C 顺序）。
"""

import json
import pickle
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import torch

from aperture import BinWindow, SceneBounds, SensorPose, poses_from_array
from backprojection import Volume
from errors import (
    BadMagicError,
    DatasetFormatError,
    ShapeMismatchError,
    TruncatedFileError,
    VersionMismatchError,
)
from forward_model import SpectralResponse
from scene_field import SceneField, build_field
from settings import get_logger
from signal_model import ChirpConfig

logger = get_logger(__name__)

DATASET_MAGIC = b"RFDS"
VOLUME_MAGIC = b"RFVL"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<4sIQ")


@dataclass
class MeasurementSet:
    """一组位姿及其窗口内的复测量"""

    chirp: ChirpConfig
    window: BinWindow
    pose_array: np.ndarray
    values: np.ndarray
    bounds: Optional[SceneBounds] = None
    full_spectrum: Optional[np.ndarray] = None
    flags: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.window.validate(self.chirp.num_samples)
        self.pose_array = np.asarray(self.pose_array, dtype=np.float64).reshape(-1, 6)
        self.values = np.asarray(self.values, dtype=np.complex128).reshape(len(self.pose_array), -1)
        if self.values.shape[1] != self.window.width:
            raise ShapeMismatchError(f"values 每行 {self.values.shape[1]} 个 bin，窗口宽度 {self.window.width}")
        if self.full_spectrum is not None:
            self.full_spectrum = np.asarray(self.full_spectrum, dtype=np.complex128)
            if self.full_spectrum.shape != (self.num_poses, self.chirp.num_samples):
                raise ShapeMismatchError(f"full_spectrum 形状 {self.full_spectrum.shape} 非法")

    @property
    def num_poses(self) -> int:
        return len(self.pose_array)

    def poses(self) -> List[SensorPose]:
        return poses_from_array(self.pose_array)

    def response(self, index: int) -> SpectralResponse:
        return SpectralResponse(self.window.bins, self.values[index], self.chirp.num_samples)

    def subset(self, indices: Sequence[int]) -> "MeasurementSet":
        indices = np.asarray(indices, dtype=int)
        full = self.full_spectrum[indices] if self.full_spectrum is not None else None
        return MeasurementSet(
            self.chirp, self.window, self.pose_array[indices], self.values[indices], self.bounds, full, dict(self.flags)
        )


# ==================== 通用读写 ====================

def _write_container(path: Union[str, Path], magic: bytes, header: Dict, payload: bytes) -> None:
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_PREAMBLE.pack(magic, FORMAT_VERSION, len(encoded)))
        f.write(encoded)
        f.write(payload)


def _read_container(path: Union[str, Path], magic: bytes):
    """返回 (header, payload bytes)；magic / version / 截断各自抛出不同异常"""
    data = Path(path).read_bytes()
    if len(data) < len(magic):
        raise TruncatedFileError(f"文件过短，无法读取 magic: {path}")
    if data[:len(magic)] != magic:
        raise BadMagicError(f"magic 不匹配: 期望 {magic!r}，实际 {data[:len(magic)]!r}")
    if len(data) < _PREAMBLE.size:
        raise TruncatedFileError(f"文件头被截断: {path}")
    _, version, header_len = _PREAMBLE.unpack_from(data)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"不支持的格式版本 {version}（当前 {FORMAT_VERSION}）")
    end = _PREAMBLE.size + header_len
    if len(data) < end:
        raise TruncatedFileError(f"JSON 头被截断: 需要 {end} 字节，实际 {len(data)}")
    try:
        header = json.loads(data[_PREAMBLE.size:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DatasetFormatError(f"JSON 头无法解析: {e}") from e
    return header, data[end:]


def _complex_bytes(values: np.ndarray, dtype: str) -> bytes:
    pairs = np.stack([values.real, values.imag], axis=-1)
    return pairs.astype(dtype).tobytes()


def _take(payload: bytes, offset: int, count: int, dtype: str) -> np.ndarray:
    size = count * np.dtype(dtype).itemsize
    if offset + size > len(payload):
        raise TruncatedFileError(f"payload 被截断: 需要 {offset + size} 字节，实际 {len(payload)}")
    return np.frombuffer(payload, dtype=dtype, count=count, offset=offset)


# ==================== 测量集 ====================

def write_dataset(path: Union[str, Path], dataset: MeasurementSet, f64_payload: Optional[bool] = None) -> None:
    """
    写入测量集

    Args:
        path: 输出路径
        dataset: 测量集
        f64_payload: 复数值是否以 f64 保存；None 时沿用 dataset.flags 中的设置（默认 f32）
    """
    flags = dict(dataset.flags)
    if f64_payload is not None:
        flags["f64_payload"] = bool(f64_payload)
    flags.setdefault("f64_payload", False)
    flags["full_spectrum"] = dataset.full_spectrum is not None
    dtype = "<f8" if flags["f64_payload"] else "<f4"

    header = {
        "chirp": dataset.chirp.to_dict(),
        "window": dataset.window.to_dict(),
        "num_poses": dataset.num_poses,
        "bounds": dataset.bounds.to_dict() if dataset.bounds is not None else None,
        "flags": flags,
    }
    payload = dataset.pose_array.astype("<f8").tobytes() + _complex_bytes(dataset.values, dtype)
    if dataset.full_spectrum is not None:
        payload += _complex_bytes(dataset.full_spectrum, dtype)
    _write_container(path, DATASET_MAGIC, header, payload)
    logger.info(f"已写入数据集: {path}（{dataset.num_poses} 个位姿，窗口 {dataset.window.width} bin）")


def read_dataset(path: Union[str, Path]) -> MeasurementSet:
    """
    读取测量集

    Raises:
        BadMagicError / VersionMismatchError / TruncatedFileError: 对应的格式错误
        DatasetFormatError: 头字段缺失或 payload 长度与声明不符
    """
    header, payload = _read_container(path, DATASET_MAGIC)
    try:
        chirp = ChirpConfig.from_dict(header["chirp"])
        window = BinWindow.from_dict(header["window"])
        num_poses = int(header["num_poses"])
        flags = dict(header.get("flags", {}))
    except (KeyError, TypeError) as e:
        raise DatasetFormatError(f"JSON 头缺少字段: {e}") from e
    bounds = SceneBounds.from_dict(header["bounds"]) if header.get("bounds") else None
    dtype = "<f8" if flags.get("f64_payload") else "<f4"
    item = np.dtype(dtype).itemsize

    poses = _take(payload, 0, num_poses * 6, "<f8").reshape(num_poses, 6)
    offset = num_poses * 6 * 8
    raw = _take(payload, offset, num_poses * window.width * 2, dtype).astype(np.float64)
    values = (raw[0::2] + 1j * raw[1::2]).reshape(num_poses, window.width)
    offset += num_poses * window.width * 2 * item

    full = None
    if flags.get("full_spectrum"):
        n = chirp.num_samples
        raw = _take(payload, offset, num_poses * n * 2, dtype).astype(np.float64)
        full = (raw[0::2] + 1j * raw[1::2]).reshape(num_poses, n)
        offset += num_poses * n * 2 * item
    if offset != len(payload):
        raise DatasetFormatError(f"payload 长度 {len(payload)} 与头部声明 {offset} 不符")

    return MeasurementSet(chirp, window, poses.copy(), values, bounds, full, flags)


# ==================== 体数据 ====================

def write_volume(path: Union[str, Path], volume: Volume) -> None:
    _write_container(path, VOLUME_MAGIC, volume.grid_dict(), volume.intensities.astype("<f8").tobytes())
    logger.info(f"已写入体数据: {path}（dims={volume.dims}）")


def read_volume(path: Union[str, Path]) -> Volume:
    header, payload = _read_container(path, VOLUME_MAGIC)
    try:
        dims = tuple(int(d) for d in header["dims"])
        origin, voxel_size = header["origin"], header["voxel_size"]
    except (KeyError, TypeError) as e:
        raise DatasetFormatError(f"体数据头缺少字段: {e}") from e
    count = int(np.prod(dims))
    data = _take(payload, 0, count, "<f8")
    if count * 8 != len(payload):
        raise DatasetFormatError(f"体数据 payload 长度 {len(payload)} 与 dims {dims} 不符")
    return Volume(origin, voxel_size, dims, data.reshape(dims).copy())


# ==================== 检查点 ====================

def save_field(path: Union[str, Path], field_: SceneField, metadata: Optional[Dict] = None) -> None:
    """保存场的类型、构造参数、参数张量以及元数据（如幅度归一化系数）"""
    torch.save(
        {
            "kind": field_.kind,
            "config": field_.config(),
            "state_dict": field_.state_dict(),
            "metadata": metadata or {},
        },
        path,
    )
    logger.info(f"已保存检查点: {path}")


def load_field(path: Union[str, Path]):
    """
    Returns:
        tuple: (SceneField, metadata)
    """
    try:
        ckpt = torch.load(path, map_location="cpu", weights_only=True)
        field_ = build_field(ckpt["kind"], ckpt["config"])
        field_.load_state_dict(ckpt["state_dict"])
    except (KeyError, RuntimeError, EOFError, pickle.UnpicklingError) as e:
        raise DatasetFormatError(f"检查点无法加载: {path}: {e}") from e
    return field_, ckpt.get("metadata", {})
