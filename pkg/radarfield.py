"""
radarfield 命令行入口

    radarfield simulate       体模 + 孔径 + chirp → 测量集（.rfds）
    radarfield fit            训练反射率场 → 检查点 + JSONL 训练日志
    radarfield backproject    相干反投影 → 体数据
    radarfield export-volume  检查点 → 体数据
    radarfield eval           体数据 vs 真值 → JSON 报告
    radarfield bench          正向模型耗时基准 → CSV
    radarfield leakage        单音频谱泄漏表 → CSV
    radarfield compare        多方法对比 → JSON 报告

成功退出码 0；业务异常在 stderr 输出一行 {"error": 类名, "message": ...}，退出码 2。
"""

import argparse
import json
import sys
from typing import List, Optional

from aperture import BinWindow, CylindricalApertureSpec
from backprojection import Volume, backproject
from bench import bench_forward, compare_methods, leakage_table, write_csv
from dataset_io import load_field, read_dataset, read_volume, save_field, write_dataset, write_volume
from errors import ConfigError, RadarFieldError
from metrics import evaluate
from phantom import PhantomSpec, rasterize
from reconstruction import MODES, LossConfig, OptimizerConfig, default_quadrature, fit
from scene_field import CoordinateNetworkField, VoxelGridField, sample_quadrature, sample_volume
from settings import configure_threads, get_logger
from signal_model import ChirpConfig
from simulator import simulate

logger = get_logger(__name__)

EXIT_ERROR = 2


def _chirp(path: Optional[str]) -> ChirpConfig:
    return ChirpConfig.load(path) if path else ChirpConfig()


def _write_json(path: str, data) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, ensure_ascii=False)
    logger.info(f"已写入报告: {path}")


def _parse_counts(text: str) -> List[int]:
    try:
        return [int(float(part)) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise ConfigError(f"无法解析 counts: {text}") from e


# ==================== 子命令 ====================

def cmd_simulate(args) -> None:
    phantom = PhantomSpec.load(args.phantom)
    dataset = simulate(
        phantom,
        CylindricalApertureSpec.load(args.aperture),
        _chirp(args.chirp),
        noise=args.noise,
        seed=args.seed,
        mono=args.mono,
        full_spectrum=args.full_spectrum,
        show_progress=True,
    )
    write_dataset(args.out, dataset, f64_payload=args.f64)
    if args.gt_volume:
        positions, sigmas = phantom.scatterers()
        write_volume(args.gt_volume, rasterize(positions, sigmas, Volume.spanning(phantom.bounds, args.grid)))


def cmd_fit(args) -> None:
    dataset = read_dataset(args.data)
    if dataset.bounds is None:
        raise ConfigError("数据集缺少场景边界，无法构建场")
    if args.field == "grid":
        field_ = VoxelGridField.spanning(dataset.bounds, args.grid)
        quadrature = default_quadrature(field_, args.quadrature, args.seed)
    else:
        field_ = CoordinateNetworkField(dataset.bounds, seed=args.seed)
        quadrature = sample_quadrature(dataset.bounds, args.quadrature, args.grid, args.seed).unit_cells()
    opt = OptimizerConfig.for_field(args.field, args.lr, epochs=args.epochs, batch_size=args.batch, seed=args.seed)
    loss_cfg = LossConfig(lambda_=args.lambda_, normalize=not args.no_normalize)
    field_, log = fit(dataset, field_, args.mode, quadrature, opt, loss_cfg, log_path=args.log, show_progress=True)
    save_field(args.out, field_, {"mode": args.mode, "amplitude_scale": log.scale, "steps": len(log)})


def cmd_backproject(args) -> None:
    dataset = read_dataset(args.data)
    if dataset.bounds is None:
        raise ConfigError("数据集缺少场景边界，无法确定反投影网格")
    volume = backproject(dataset, Volume.spanning(dataset.bounds, args.grid), args.coherent_real, show_progress=True)
    write_volume(args.out, volume)


def cmd_export_volume(args) -> None:
    field_, metadata = load_field(args.ckpt)
    grid = Volume.spanning(field_.bounds, args.grid)
    write_volume(args.out, sample_volume(field_, grid, float(metadata.get("amplitude_scale", 1.0))))


def cmd_eval(args) -> None:
    report = evaluate(read_volume(args.pred), read_volume(args.gt), args.threshold)
    _write_json(args.report, report)
    print(json.dumps(report))


def cmd_bench(args) -> None:
    window = None
    if args.window_width:
        window = BinWindow(args.window_start, args.window_start + args.window_width - 1)
    rows = bench_forward(_chirp(args.chirp), counts=_parse_counts(args.counts), repetitions=args.reps,
                         window=window, seed=args.seed, show_progress=True)
    write_csv(rows, args.out)


def cmd_leakage(args) -> None:
    write_csv(leakage_table(args.alpha, args.n), args.out)


def cmd_compare(args) -> None:
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    report = compare_methods(
        read_dataset(args.data),
        PhantomSpec.load(args.phantom),
        resolution=args.grid,
        modes=modes,
        field_kind=args.field,
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        seed=args.seed,
        show_progress=True,
    )
    _write_json(args.report, report)


# ==================== 参数解析 ====================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="radarfield", description="FMCW 雷达体积重建工具")
    parser.add_argument("--threads", type=int, default=None, help="torch 线程数，1 保证逐位可复现")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="仿真测量集")
    p.add_argument("--phantom", required=True)
    p.add_argument("--aperture", required=True)
    p.add_argument("--chirp", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mono", action="store_true")
    p.add_argument("--full-spectrum", action="store_true", help="额外保存完整频谱（tf-ts 模式需要）")
    p.add_argument("--f64", action="store_true", help="复数值以 f64 保存")
    p.add_argument("--gt-volume", default=None, help="同时写出真值体")
    p.add_argument("--grid", type=int, default=64, help="真值体最长轴体素数")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="训练反射率场")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=MODES, default="spectral")
    p.add_argument("--field", choices=["grid", "net"], default="grid")
    p.add_argument("--grid", type=int, default=64, help="网格场 / 求积的最长轴单元数")
    p.add_argument("--quadrature", choices=["voxel-centers", "stratified-random"], default="voxel-centers")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=None, help="默认：网格 1e-2，网络 1e-3")
    p.add_argument("--lambda", dest="lambda_", type=float, default=0.5)
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("backproject", help="相干反投影")
    p.add_argument("--data", required=True)
    p.add_argument("--grid", type=int, default=64)
    p.add_argument("--coherent-real", action="store_true", help="取相干和的实部而不是模")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_backproject)

    p = sub.add_parser("export-volume", help="检查点导出为体数据")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--grid", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_volume)

    p = sub.add_parser("eval", help="评估重建体")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="正向模型耗时基准")
    p.add_argument("--counts", default="1e2,1e3,1e4")
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--chirp", default=None)
    p.add_argument("--window-start", type=int, default=0)
    p.add_argument("--window-width", type=int, default=0, help="0 表示按默认场景自动计算窗口")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("leakage", help="单音频谱泄漏表")
    p.add_argument("--alpha", type=float, required=True, help="角频率（rad/sample）")
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_leakage)

    p = sub.add_parser("compare", help="多方法对比")
    p.add_argument("--data", required=True)
    p.add_argument("--phantom", required=True)
    p.add_argument("--grid", type=int, default=32)
    p.add_argument("--modes", default="spectral,tf-ts,tf-ss,rq")
    p.add_argument("--field", choices=["grid", "net"], default="grid")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        configure_threads(args.threads)
        args.func(args)
    except (RadarFieldError, OSError, ValueError) as e:
        error_class = e.error_class if isinstance(e, RadarFieldError) else type(e).__name__
        print(json.dumps({"error": error_class, "message": str(e)}, ensure_ascii=False), file=sys.stderr)
        return EXIT_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
