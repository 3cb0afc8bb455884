"""
测试 FMCW 信号模型：距离换算、拍频信号与单音 DFT 闭式解
"""

import math

import numpy as np
import pytest

from errors import BinRangeError, ConfigError
from forward_model import naive_dft
from signal_model import (
    SPEED_OF_LIGHT,
    ChirpConfig,
    ToneParams,
    angular_frequency,
    beat_frequency,
    beat_signal,
    bin_frequency,
    bin_to_range,
    dirichlet_envelope,
    fractional_bin,
    max_range,
    range_resolution,
    tone_dft,
    tone_kernel,
)

CFG = ChirpConfig()


def test_range_resolution():
    """测试1: 距离分辨率只取决于带宽"""
    four_ghz = ChirpConfig(slope=4e9 * 5e6 / 256)
    assert math.isclose(range_resolution(four_ghz), 0.0375, rel_tol=1e-3)
    # B = S·N/fs ≈ 3.599 GHz
    assert math.isclose(range_resolution(CFG), 0.0418, rel_tol=5e-3)
    assert math.isclose(max_range(CFG), 256 * range_resolution(CFG))


def test_beat_frequency():
    """测试2: 拍频"""
    assert beat_frequency(CFG, 0.0) == 0.0
    assert math.isclose(beat_frequency(CFG, 0.23), 107858, rel_tol=1e-4)
    # 一个距离分辨率恰好对应一个 bin 间隔
    assert math.isclose(beat_frequency(CFG, range_resolution(CFG)), CFG.sample_rate / CFG.num_samples, rel_tol=1e-12)
    with pytest.raises(ConfigError):
        beat_frequency(CFG, -1.0)


def test_fractional_bin():
    """测试3: 时延 → 小数 bin，以及反向换算"""
    assert fractional_bin(CFG, 0.0) == 0.0
    tau = 2 * 0.23 / SPEED_OF_LIGHT
    assert abs(fractional_bin(CFG, tau) - 5.522) < 1e-3
    assert math.isclose(bin_to_range(CFG, fractional_bin(CFG, tau)), 0.23, rel_tol=1e-12)
    assert math.isclose(bin_frequency(CFG, 1.0), CFG.sample_rate / CFG.num_samples)
    with pytest.raises(BinRangeError):
        fractional_bin(CFG, CFG.sample_rate / CFG.slope)


def test_chirp_validation():
    """测试4: 非法 chirp 参数在构造时报错"""
    for bad in ({"slope": 0.0}, {"sample_rate": -1.0}, {"num_samples": 1}, {"num_samples": 2.5}):
        with pytest.raises(ConfigError):
            ChirpConfig(**bad)
    assert ChirpConfig.from_dict(CFG.to_dict()) == CFG


def test_beat_signal():
    """测试5: 拍频信号"""
    assert np.allclose(beat_signal(CFG, 0.0), np.ones(CFG.num_samples))
    assert np.all(beat_signal(CFG, 1e-9, amplitude=0.0) == 0)
    x = beat_signal(CFG, 2 * 0.23 / SPEED_OF_LIGHT)
    assert np.allclose(np.abs(x), 1.0)


def test_tone_params_wraps_phase():
    tone = ToneParams(1.0, 2 * math.pi + 0.5, 0.1)
    assert math.isclose(tone.phase, 0.5, rel_tol=1e-12)
    assert -math.pi < ToneParams(1.0, -math.pi, 0.1).phase <= math.pi
    with pytest.raises(ConfigError):
        ToneParams(-1.0, 0.0, 0.1)


def test_tone_dft_matches_brute_force():
    """测试6: 闭式单音 DFT 与直接求和一致（1000 组随机 M、φ、α，N ∈ {8, 64, 256}）"""
    rng = np.random.default_rng(0)
    sizes = (8, 64, 256)
    worst = 0.0
    for i in range(1000):
        n = sizes[i % len(sizes)]
        tone = ToneParams(rng.uniform(0, 3), rng.uniform(-math.pi, math.pi), rng.uniform(0, 2 * math.pi))
        brute = naive_dft(tone.magnitude * np.exp(1j * (tone.angular_freq * np.arange(n) + tone.phase)))
        for k in rng.choice(n, size=2, replace=False):
            worst = max(worst, abs(tone_dft(tone, n, int(k)) - brute[k]))
    print(f"最大误差: {worst:.3e}")
    assert worst <= 1e-10


def test_beat_signal_spectrum():
    """拍频信号的 DFT 逐 bin 等于 tone_dft，峰值落在 round(fractional_bin)"""
    cfg = ChirpConfig(f0=77e9)
    for distance in (0.11, 0.23, 0.4):
        tau = 2 * distance / SPEED_OF_LIGHT
        spectrum = naive_dft(beat_signal(cfg, tau, amplitude=0.7))
        tone = ToneParams(0.7, 2 * math.pi * cfg.f0 * tau, angular_frequency(cfg, tau))
        closed = np.array([tone_dft(tone, cfg.num_samples, k) for k in range(cfg.num_samples)])
        assert np.max(np.abs(closed - spectrum)) <= 1e-10
        k_frac = fractional_bin(cfg, tau)
        assert int(np.argmax(np.abs(spectrum))) == int(math.floor(k_frac + 0.5))


def test_range_resolution_fixed_bandwidth():
    """fs、N 同比例变化（带宽不变）时距离分辨率不变；N 加倍（fs 不变）时减半"""
    base = range_resolution(CFG)
    for factor in (0.5, 2.0, 4.0):
        scaled = ChirpConfig(sample_rate=CFG.sample_rate * factor, num_samples=int(CFG.num_samples * factor))
        assert math.isclose(range_resolution(scaled), base, rel_tol=1e-12)
    doubled = ChirpConfig(num_samples=2 * CFG.num_samples)
    assert math.isclose(range_resolution(doubled), base / 2, rel_tol=1e-12)


def test_tone_dft_on_bin_and_near_bin():
    """测试7: 恰在 bin 上以及距 bin 极近时走极限分支"""
    n = 64
    on_bin = ToneParams(2.0, 0.5, 2 * math.pi * 5 / n)
    assert abs(tone_dft(on_bin, n, 5) - 2.0 * np.exp(0.5j)) < 1e-12
    assert abs(tone_dft(on_bin, n, 6)) < 1e-12

    near = ToneParams(1.0, 0.0, 2 * math.pi * 5 / n + 1e-11)
    brute = naive_dft(np.exp(1j * near.angular_freq * np.arange(n)))
    assert abs(tone_dft(near, n, 5) - brute[5]) < 1e-10

    with pytest.raises(BinRangeError):
        tone_dft(on_bin, n, n)


def test_dirichlet_envelope():
    """测试8: 频谱泄漏曲线"""
    n = 32
    on_bin = dirichlet_envelope(2 * math.pi * 4 / n, n)
    assert math.isclose(on_bin[4], 1.0, rel_tol=1e-12)
    assert np.count_nonzero(on_bin > 1e-12) == 1

    half = dirichlet_envelope(2 * math.pi * 4.5 / n, n)
    top_two = sorted(np.argsort(half)[-2:])
    assert top_two == [4, 5]
    assert math.isclose(half[4], half[5], rel_tol=1e-12)
    brute = np.abs(naive_dft(np.exp(1j * 2 * math.pi * 4.5 / n * np.arange(n))))
    assert np.max(np.abs(half - brute)) <= 1e-10


def test_tone_kernel_shape():
    alpha = angular_frequency(CFG, np.full((2, 3), 1e-9))
    kern = tone_kernel(alpha, CFG.num_samples, np.arange(5))
    assert tuple(kern.shape) == (2, 3, 5)


if __name__ == "__main__":
    print("=" * 60)
    print("测试信号模型")
    print("=" * 60)
    test_range_resolution()
    test_beat_frequency()
    test_fractional_bin()
    test_chirp_validation()
    test_beat_signal()
    test_tone_params_wraps_phase()
    test_tone_dft_matches_brute_force()
    test_beat_signal_spectrum()
    test_range_resolution_fixed_bandwidth()
    test_tone_dft_on_bin_and_near_bin()
    test_dirichlet_envelope()
    test_tone_kernel_shape()
    print("\n✅ 全部通过")
