import numpy as np
import pytest

from pulsebench.classic import (RgbTrace, chrom_hr, chrom_pulse,
                                extract_rgb_trace, green_hr, pos_hr,
                                pos_pulse)
from pulsebench.signal_core import BandConfig, SignalError
from pulsebench.stmap import build_stmap
from pulsebench.synth import SynthConfig, gen_video

FS = 30.0
BAND = BandConfig()


def pulsatile_trace(hr_bpm=72.0, n=600, strengths=(0.7, 1.0, 0.5),
                    flicker=None, seed=0):
    """Trace mimicking skin: per-channel pulsatile modulation of a baseline."""
    rng = np.random.default_rng(seed)
    t = np.arange(n) / FS
    p = np.sin(2 * np.pi * (hr_bpm / 60.0) * t
               + rng.uniform(0, 2 * np.pi))
    base = np.array([187.0, 150.0, 127.0])
    chans = []
    for mu, s in zip(base, strengths):
        ch = mu * (1.0 + 0.02 * s * p)
        if flicker is not None:
            freq, amp = flicker
            ch = ch * (1.0 + amp * np.sin(2 * np.pi * freq * t))
        chans.append(ch)
    return RgbTrace(chans[0], chans[1], chans[2], FS)


class TestExtractRgbTrace:
    def test_uniform_video_constant_trace(self):
        cfg = SynthConfig(hr_bpm=72, duration_sec=2.0, seed=0,
                          pulse_strength=(0, 0, 0))
        seq, track, _ = gen_video(cfg)
        tr = extract_rgb_trace(seq, track)
        for ch in (tr.r, tr.g, tr.b):
            assert np.max(np.abs(ch - ch[0])) < 1e-9

    def test_equals_1x1_raw_map(self):
        cfg = SynthConfig(hr_bpm=80, duration_sec=3.0, seed=2)
        seq, track, _ = gen_video(cfg)
        tr = extract_rgb_trace(seq, track)
        one = build_stmap(seq, track, grid=(1, 1), color="raw",
                          normalize=False)
        assert np.max(np.abs(tr.stacked() - one.values[0])) < 1e-12

    def test_pulsatile_video_carries_tone(self):
        cfg = SynthConfig(hr_bpm=72, duration_sec=20.0, seed=3)
        seq, track, _ = gen_video(cfg)
        tr = extract_rgb_trace(seq, track)
        assert abs(green_hr(tr, BAND).bpm - 72.0) <= 1.0


class TestGreen:
    def test_clean_tone(self):
        t = np.arange(600) / FS
        g = 128.0 + 5.0 * np.sin(2 * np.pi * 1.2 * t)
        tr = RgbTrace(np.full(600, 100.0), g, np.full(600, 90.0), FS)
        assert abs(green_hr(tr, BAND).bpm - 72.0) <= 1.0

    def test_linear_drift_removed(self):
        t = np.arange(600) / FS
        g = 128.0 + 5.0 * np.sin(2 * np.pi * 1.2 * t) \
            + np.linspace(0.0, 20.0, 600)
        tr = RgbTrace(np.full(600, 100.0), g, np.full(600, 90.0), FS)
        assert abs(green_hr(tr, BAND).bpm - 72.0) <= 1.0

    def test_noise_stays_in_band(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            g = 100.0 + rng.standard_normal(600)
            tr = RgbTrace(np.full(600, 100.0), g, np.full(600, 90.0), FS)
            bpm = green_hr(tr, BAND).bpm
            assert BAND.band_lo_bpm <= bpm <= BAND.band_hi_bpm


class TestChrom:
    def test_pulsatile_skin(self):
        assert abs(chrom_hr(pulsatile_trace(), BAND).bpm - 72.0) <= 1.0

    def test_common_mode_flicker_cancelled(self):
        tr = pulsatile_trace(flicker=(0.2, 0.10))
        assert abs(chrom_hr(tr, BAND).bpm - 72.0) <= 1.0

    def test_identical_channels_degenerate(self):
        ch = np.full(600, 120.0)
        with pytest.raises(SignalError):
            chrom_pulse(RgbTrace(ch, ch.copy(), ch.copy(), FS), BAND)

    def test_zero_mean_channel_rejected(self):
        ch = np.full(600, 120.0)
        with pytest.raises(SignalError):
            chrom_hr(RgbTrace(np.zeros(600), ch, ch.copy(), FS), BAND)


class TestPos:
    def test_pulsatile_skin(self):
        assert abs(pos_hr(pulsatile_trace(), BAND).bpm - 72.0) <= 1.0

    def test_step_illumination(self):
        cfg = SynthConfig(hr_bpm=72, duration_sec=20.0, seed=5)
        seq, track, _ = gen_video(
            cfg, illum_fn=lambda t: 0.3 if t >= 10.0 else 0.0)
        tr = extract_rgb_trace(seq, track)
        assert abs(pos_hr(tr, BAND).bpm - 72.0) <= 2.0

    def test_degenerate_second_projection_falls_back_to_first(self):
        # R constant, G/B counter-modulated: the second POS component is
        # exactly zero over a whole-trace window, so alpha = 0 and the
        # first component alone must carry the tone.
        n = 600
        t = np.arange(n) / FS
        g = 0.05 * np.sin(2 * np.pi * 1.2 * t)  # 24 exact periods
        tr = RgbTrace(np.full(n, 150.0), 150.0 * (1 + g), 120.0 * (1 - g), FS)
        est = pos_hr(tr, BAND, window_sec=n / FS)
        assert abs(est.bpm - 72.0) <= 1.0

    def test_fully_constant_rejected(self):
        ch = np.full(600, 120.0)
        with pytest.raises(SignalError):
            pos_hr(RgbTrace(ch, ch.copy(), ch.copy(), FS), BAND)


class TestInvariances:
    def test_power_of_two_scaling_bit_exact(self):
        tr = pulsatile_trace(seed=9)
        scaled = RgbTrace(4.0 * tr.r, 4.0 * tr.g, 4.0 * tr.b, FS)
        assert green_hr(tr, BAND).bpm == green_hr(scaled, BAND).bpm
        assert chrom_hr(tr, BAND).bpm == chrom_hr(scaled, BAND).bpm
        assert pos_hr(tr, BAND).bpm == pos_hr(scaled, BAND).bpm

    def test_arbitrary_positive_scaling(self):
        tr = pulsatile_trace(seed=10)
        for k in (0.37, 11.0):
            scaled = RgbTrace(k * tr.r, k * tr.g, k * tr.b, FS)
            assert abs(chrom_hr(tr, BAND).bpm
                       - chrom_hr(scaled, BAND).bpm) < 1e-6
            assert abs(pos_hr(tr, BAND).bpm
                       - pos_hr(scaled, BAND).bpm) < 1e-6

    def test_slow_multiplicative_drift(self):
        base = pulsatile_trace(seed=11)
        drifted = pulsatile_trace(seed=11, flicker=(0.15, 0.08))
        for est in (chrom_hr, pos_hr):
            assert abs(est(base, BAND).bpm - est(drifted, BAND).bpm) <= 1.0
