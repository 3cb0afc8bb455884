"""
测试命令行入口：simulate → fit → export-volume → eval 全流程，以及 bench / leakage / 错误输出
"""

import csv
import json
import tempfile
from pathlib import Path

import numpy as np
import pytest

from backprojection import Volume
from dataset_io import read_dataset, read_volume, write_volume
from radarfield import EXIT_ERROR, main


@pytest.fixture
def inputs(tmp_path):
    phantom = tmp_path / "phantom.json"
    phantom.write_text(json.dumps({
        "bounds": {"min": [-0.05, -0.05, -0.05], "max": [0.05, 0.05, 0.05]},
        "primitives": [{"type": "sphere_shell", "center": [0.0, 0.0, 0.0], "radius": 0.025, "count": 32}],
    }), encoding="utf-8")
    aperture = tmp_path / "aperture.json"
    aperture.write_text(json.dumps({"n_z": 1, "n_theta": 8}), encoding="utf-8")
    return phantom, aperture


def _last_error(capsys):
    lines = [line for line in capsys.readouterr().err.splitlines() if line.strip()]
    return json.loads(lines[-1])


def test_pipeline(tmp_path, inputs):
    """测试1: 仿真 → 训练 → 导出 → 评估"""
    phantom, aperture = inputs
    data, gt = tmp_path / "d.rfds", tmp_path / "gt.rfvl"
    assert main([
        "simulate", "--phantom", str(phantom), "--aperture", str(aperture), "--out", str(data),
        "--gt-volume", str(gt), "--grid", "12", "--full-spectrum",
    ]) == 0
    dataset = read_dataset(data)
    assert dataset.num_poses == 8
    assert dataset.full_spectrum is not None

    ckpt, log = tmp_path / "field.ckpt", tmp_path / "train.jsonl"
    assert main([
        "--threads", "1", "fit", "--data", str(data), "--field", "grid", "--grid", "12",
        "--epochs", "2", "--batch", "4", "--out", str(ckpt), "--log", str(log),
    ]) == 0
    assert len(log.read_text(encoding="utf-8").splitlines()) == 4

    pred = tmp_path / "pred.rfvl"
    assert main(["export-volume", "--ckpt", str(ckpt), "--grid", "12", "--out", str(pred)]) == 0
    assert read_volume(pred).same_grid(read_volume(gt))

    report = tmp_path / "report.json"
    assert main(["eval", "--pred", str(pred), "--gt", str(gt), "--report", str(report)]) == 0
    result = json.loads(report.read_text(encoding="utf-8"))
    assert set(result) == {"iou", "chamfer_m", "hausdorff_m", "psnr_db", "ssim"}
    assert 0.0 <= result["iou"] <= 1.0

    bp = tmp_path / "bp.rfvl"
    assert main(["backproject", "--data", str(data), "--grid", "12", "--out", str(bp)]) == 0
    assert read_volume(bp).dims == (12, 12, 12)


def test_leakage_csv(tmp_path):
    """测试2: 泄漏表：闭式谱与直接求和一致"""
    out = tmp_path / "leak.csv"
    assert main(["leakage", "--alpha", "0.3", "--n", "64", "--out", str(out)]) == 0
    with open(out, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 64
    assert max(float(r["abs_error"]) for r in rows) <= 1e-10


def test_bench_csv(tmp_path):
    """测试3: 基准表每个 (count, model) 一行，操作计数与理论值一致"""
    out = tmp_path / "bench.csv"
    assert main(["bench", "--counts", "10,20", "--reps", "1", "--out", str(out)]) == 0
    with open(out, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 6
    assert {r["model"] for r in rows} == {"spectral", "time", "rq"}
    assert all(r["ops"] == r["theoretical_ops"] for r in rows)


def test_error_output(tmp_path, capsys):
    """测试4: 业务异常 → stderr 一行 JSON，退出码 2"""
    missing = tmp_path / "missing.rfds"
    assert main(["backproject", "--data", str(missing), "--out", str(tmp_path / "v.rfvl")]) == EXIT_ERROR
    assert _last_error(capsys)["error"] == "FileNotFoundError"

    bogus = tmp_path / "bogus.rfds"
    bogus.write_bytes(b"JUNKJUNKJUNKJUNKJUNK")
    assert main(["backproject", "--data", str(bogus), "--out", str(tmp_path / "v.rfvl")]) == EXIT_ERROR
    error = _last_error(capsys)
    assert error["error"] == "BadMagicError"
    assert error["message"]

    assert main(["bench", "--counts", "abc", "--out", str(tmp_path / "b.csv")]) == EXIT_ERROR
    assert _last_error(capsys)["error"] == "ConfigError"


def test_compare_report(tmp_path, inputs):
    """测试5: 多方法对比：无完整频谱时跳过 tf-ts，反投影总在报告中"""
    phantom, aperture = inputs
    data = tmp_path / "d.rfds"
    assert main(["simulate", "--phantom", str(phantom), "--aperture", str(aperture), "--out", str(data)]) == 0

    report = tmp_path / "compare.json"
    assert main([
        "--threads", "1", "compare", "--data", str(data), "--phantom", str(phantom), "--grid", "12",
        "--modes", "spectral,tf-ts,rq", "--epochs", "1", "--batch", "8", "--report", str(report),
    ]) == 0
    result = json.loads(report.read_text(encoding="utf-8"))
    assert set(result) == {"spectral", "rq", "backprojection"}
    assert "grad_std_ratio" in result["spectral"]
    assert "final_loss" not in result["backprojection"]

    assert main([
        "compare", "--data", str(data), "--phantom", str(phantom), "--modes", "fourier",
        "--report", str(tmp_path / "bad.json"),
    ]) == EXIT_ERROR


def test_eval_small_grid(tmp_path):
    """测试6: 8³ 体数据的 MIP 小于 SSIM 窗口 → 报告中 ssim 为 null，其余指标照常"""
    values = np.random.default_rng(0).uniform(0.0, 1.0, size=(8, 8, 8))
    vol = Volume([0.0, 0.0, 0.0], 0.01, values.shape, values)
    pred, gt = tmp_path / "pred.rfvl", tmp_path / "gt.rfvl"
    write_volume(pred, vol)
    write_volume(gt, vol)
    report = tmp_path / "report.json"
    assert main(["eval", "--pred", str(pred), "--gt", str(gt), "--report", str(report)]) == 0
    result = json.loads(report.read_text(encoding="utf-8"))
    assert result["ssim"] is None
    assert result["iou"] == 1.0


if __name__ == "__main__":
    print("=" * 60)
    print("测试命令行入口")
    print("=" * 60)
    for case in (test_leakage_csv, test_bench_csv, test_eval_small_grid):
        with tempfile.TemporaryDirectory() as tmp:
            case(Path(tmp))
    print("\n✅ 全部通过")
    print("需要 pytest（fixture / capsys）: test_pipeline, test_error_output, test_compare_report")
