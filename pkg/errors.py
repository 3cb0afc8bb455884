"""
异常定义模块
所有模块抛出的业务异常都继承自 RadarFieldError，
同时继承最接近的内置异常，调用方可以按任意一种捕获。
"""

from typing import Dict, Optional, Tuple


class RadarFieldError(Exception):
    """项目异常基类"""

    @property
    def error_class(self) -> str:
        return type(self).__name__


class ConfigError(RadarFieldError, ValueError):
    """配置参数非法（构造时校验失败）"""


class BinRangeError(RadarFieldError, ValueError):
    """散射体超出采样 chirp 的无模糊距离（bin ≥ N）"""


class GeometryError(RadarFieldError, ValueError):
    """几何退化，例如采样点与天线重合"""


class ShapeMismatchError(RadarFieldError, ValueError):
    """输入形状 / bin 集合 / 网格不一致"""


class EmptyResultError(RadarFieldError, ValueError):
    """结果为空（空点云、空场景等）"""


class DatasetFormatError(RadarFieldError, IOError):
    """数据文件格式错误"""


class BadMagicError(DatasetFormatError):
    """文件头 magic 不匹配"""


class VersionMismatchError(DatasetFormatError):
    """文件格式版本不支持"""


class TruncatedFileError(DatasetFormatError):
    """文件被截断，拒绝返回部分数据"""


class ReconstructionError(RadarFieldError, RuntimeError):
    """训练过程中出现 NaN / Inf"""

    def __init__(
        self,
        message: str,
        step: int,
        grad_stats: Optional[Dict[str, Tuple[float, float]]] = None,
    ):
        super().__init__(f"{message} (step={step}, grad_stats={grad_stats})")
        self.step = step
        self.grad_stats = grad_stats or {}
