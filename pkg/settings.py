"""
运行环境配置
从 .env / 环境变量读取全局参数，并统一日志格式
"""

import logging
import os
import sys
from typing import Optional

import torch
from dotenv import load_dotenv

# 加载环境变量
load_dotenv()

LOG_LEVEL = os.getenv("RADARFIELD_LOG_LEVEL", "INFO").upper()

# 单个分块内复数中间张量的元素上限（位姿 × 点 × bin），控制 forward / backward 的内存占用
CHUNK_ELEMENTS = int(os.getenv("RADARFIELD_CHUNK_ELEMENTS", str(2 ** 22)))
if CHUNK_ELEMENTS < 1:
    raise ValueError("RADARFIELD_CHUNK_ELEMENTS 必须 ≥ 1，请检查 .env 配置")

_threads_env = os.getenv("RADARFIELD_THREADS")
THREADS: Optional[int] = int(_threads_env) if _threads_env else None

# 为 1 时运行全尺寸的方法对比测试（耗时数分钟）
RUN_ACCEPTANCE = os.getenv("RADARFIELD_ACCEPTANCE", "0") == "1"

_configured = False


def get_logger(name: str) -> logging.Logger:
    """返回带 [LEVEL] 标签格式的 logger"""
    global _configured
    if not _configured:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("[%(levelname)s] %(message)s"))
        root = logging.getLogger("radarfield")
        root.addHandler(handler)
        root.setLevel(LOG_LEVEL)
        root.propagate = False
        _configured = True
    return logging.getLogger(f"radarfield.{name}")


def configure_threads(threads: Optional[int] = None) -> Optional[int]:
    """
    设置 torch 线程数

    Args:
        threads: 线程数；None 时使用 RADARFIELD_THREADS，仍为 None 则保持 torch 默认

    Returns:
        实际生效的线程数（未设置时为 None）
    """
    threads = threads if threads is not None else THREADS
    if threads is not None:
        if threads < 1:
            raise ValueError(f"线程数必须 ≥ 1: {threads}")
        torch.set_num_threads(threads)
    return threads
