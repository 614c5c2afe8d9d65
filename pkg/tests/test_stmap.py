import math

import cv2
import numpy as np
import pytest

from pulsebench.signal_core import BandConfig, PulseTrace, spectral_hr
from pulsebench.stmap import (IDX_CHEEK_L, IDX_CHEEK_R, IDX_CHIN, IDX_EYE_L,
                              IDX_EYE_R, N_LANDMARKS, FrameSequence,
                              LandmarkTrack, MapConfigError, TrackError,
                              build_stmap, compute_roi, mask_augment,
                              rgb_to_yuv, skin_mask, sliding_clips,
                              smooth_landmarks)
from pulsebench.synth import SynthConfig, gen_video


def make_points(eye_l, eye_r, cheek_l, cheek_r, chin):
    pts = np.tile([500.0, 500.0], (N_LANDMARKS, 1))
    pts[IDX_EYE_L], pts[IDX_EYE_R] = eye_l, eye_r
    pts[IDX_CHEEK_L], pts[IDX_CHEEK_R] = cheek_l, cheek_r
    pts[IDX_CHIN] = chin
    return pts


def full_frame_points(w, h):
    """Landmarks whose ROI box covers [0,w) x [0,h) exactly."""
    third = h / 3.0
    return make_points((w * 0.25, third), (w * 0.75, third),
                       (0.0, h * 0.6), (float(w), h * 0.6),
                       (w / 2.0, float(h)))


class TestSmoothLandmarks:
    def test_static_points_unchanged(self):
        pts = np.tile(make_points((10, 10), (20, 10), (5, 15), (25, 15),
                                  (15, 25)), (7, 1, 1))
        track = LandmarkTrack(pts, np.ones(7, dtype=bool))
        out = smooth_landmarks(track, 5)
        assert np.allclose(out.points, pts)

    def test_spike_reduced_by_window(self):
        pts = np.tile(make_points((10, 10), (20, 10), (5, 15), (25, 15),
                                  (15, 25)), (9, 1, 1))
        pts[4, :, 0] += 9.0
        out = smooth_landmarks(LandmarkTrack(pts, np.ones(9, bool)), 3)
        assert np.allclose(out.points[4, :, 0], pts[0, :, 0] + 3.0)

    def test_invalid_frame_interpolated_to_midpoint(self):
        a = make_points((10, 10), (20, 10), (5, 15), (25, 15), (15, 25))
        b = a + 4.0
        pts = np.stack([a, np.zeros_like(a), b])
        out = smooth_landmarks(LandmarkTrack(pts, [True, False, True]), 1)
        assert np.allclose(out.points[1], a + 2.0)
        assert not out.validity[1]

    def test_even_window_rejected(self):
        track = LandmarkTrack(np.zeros((3, N_LANDMARKS, 2)), np.ones(3, bool))
        with pytest.raises(TrackError):
            smooth_landmarks(track, 4)

    def test_all_invalid_rejected(self):
        track = LandmarkTrack(np.zeros((3, N_LANDMARKS, 2)), np.zeros(3, bool))
        with pytest.raises(TrackError):
            smooth_landmarks(track, 3)


class TestComputeRoi:
    def frontal(self):
        return make_points((130, 140), (170, 140), (100, 150), (200, 150),
                           (150, 260))

    def test_hand_geometry(self):
        roi = compute_roi(self.frontal())
        assert roi.w == pytest.approx(100.0)
        assert roi.h == pytest.approx(120.0)
        assert roi.box_height == pytest.approx(180.0)
        assert roi.rotation_deg == pytest.approx(0.0)
        assert roi.origin[0] == pytest.approx(100.0)
        assert roi.origin[1] == pytest.approx(80.0)

    def test_rotated_landmarks(self):
        pts = self.frontal()
        theta = math.radians(10.0)
        c, s = math.cos(theta), math.sin(theta)
        center = np.array([150.0, 150.0])
        rotated = (pts - center) @ np.array([[c, s], [-s, c]]) + center
        roi = compute_roi(rotated)
        assert roi.rotation_deg == pytest.approx(10.0, abs=1e-9)
        assert roi.w == pytest.approx(100.0, abs=1e-6)
        assert roi.h == pytest.approx(120.0, abs=1e-6)

    def test_mirrored_landmarks(self):
        pts = self.frontal()
        mirrored = pts.copy()
        mirrored[:, 0] = 300.0 - pts[:, 0]
        roi = compute_roi(mirrored)
        assert roi.w == pytest.approx(100.0, abs=1e-6)
        assert roi.h == pytest.approx(120.0, abs=1e-6)

    def test_coincident_eyes_rejected(self):
        pts = self.frontal()
        pts[IDX_EYE_R] = pts[IDX_EYE_L]
        with pytest.raises(TrackError):
            compute_roi(pts)


class TestSkinMask:
    def test_skin_tone_accepted(self):
        frame = np.tile(np.array([200.0, 150.0, 120.0]), (60, 60, 1))
        roi = compute_roi(full_frame_points(60, 60))
        mask = skin_mask(frame, roi)
        assert mask.all()

    def test_black_rejected(self):
        frame = np.zeros((60, 60, 3))
        roi = compute_roi(full_frame_points(60, 60))
        assert not skin_mask(frame, roi).any()

    def test_gray_bypass(self):
        frame = np.full((60, 60, 1), 99.0)
        roi = compute_roi(full_frame_points(60, 60))
        assert skin_mask(frame, roi).all()

    def test_false_outside_roi(self):
        frame = np.tile(np.array([200.0, 150.0, 120.0]), (60, 60, 1))
        pts = make_points((20, 20), (40, 20), (10, 25), (50, 25), (30, 50))
        mask = skin_mask(frame, compute_roi(pts))
        assert mask[20:50, 10:50].all()
        assert not mask[:5, :].any()


class TestRgbToYuv:
    def test_black_maps_to_offset(self):
        assert np.array_equal(rgb_to_yuv([0.0, 0.0, 0.0]), [0.0, 128.0, 128.0])

    def test_gray_axis(self):
        for g in (0.0, 17.5, 128.0, 255.0):
            y, u, v = rgb_to_yuv([g, g, g])
            assert y == pytest.approx(g * (0.299 + 0.587 + 0.114))
            assert u == 128.0 and v == 128.0

    def test_pure_red(self):
        y, u, v = rgb_to_yuv([255.0, 0.0, 0.0])
        # direct matrix multiply of the transform's first column
        assert y == pytest.approx(255 * 0.299)
        assert u == pytest.approx(128 - 255 * 0.169)
        assert v == pytest.approx(128 + 255 * 0.5)

    def test_affine_superposition(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            p, q = rng.uniform(0, 255, 3), rng.uniform(0, 255, 3)
            lhs = rgb_to_yuv(p + q) + rgb_to_yuv([0.0, 0.0, 0.0])
            rhs = rgb_to_yuv(p) + rgb_to_yuv(q)
            assert np.max(np.abs(lhs - rhs)) < 1e-12 * 255


def gray_sequence(frames):
    return FrameSequence(np.asarray(frames, dtype=np.float64)[..., None],
                         30.0, "GRAY")


def full_frame_track(n, w, h):
    pts = np.tile(full_frame_points(w, h), (n, 1, 1))
    return LandmarkTrack(pts, np.ones(n, dtype=bool))


class TestBuildStmap:
    def test_quadrant_means(self):
        frame = np.zeros((40, 40))
        frame[:20, :20], frame[:20, 20:] = 10.0, 20.0
        frame[20:, :20], frame[20:, 20:] = 30.0, 40.0
        seq = gray_sequence(np.tile(frame, (4, 1, 1)))
        out = build_stmap(seq, full_frame_track(4, 40, 40), grid=(2, 2),
                          normalize=False)
        assert np.allclose(out.values[:, 0, 0], [10.0, 20.0, 30.0, 40.0])

    def test_constant_video_normalizes_to_half(self):
        seq = gray_sequence(np.full((6, 40, 40), 77.0))
        out = build_stmap(seq, full_frame_track(6, 40, 40), grid=(2, 2))
        assert np.all(out.values == 0.5)

    def test_global_intensity_tone_recoverable_per_row(self):
        t = np.arange(300) / 30.0
        intensity = 128.0 + 10.0 * np.sin(2 * np.pi * 1.2 * t)
        frames = np.broadcast_to(intensity[:, None, None], (300, 40, 40))
        seq = gray_sequence(frames.copy())
        out = build_stmap(seq, full_frame_track(300, 40, 40), grid=(2, 2))
        band = BandConfig()
        for row in out.values[:, :, 0]:
            est = spectral_hr(PulseTrace(row, 30.0), band)
            assert abs(est.bpm - 72.0) <= 1.0

    def test_rotation_invariance(self):
        cfg = SynthConfig(hr_bpm=72, duration_sec=3.0, seed=4,
                          width=120, height=120)
        seq, track, _ = gen_video(cfg)
        base = build_stmap(seq, track, grid=(3, 3), color="raw",
                           normalize=False)
        m = cv2.getRotationMatrix2D((60.0, 60.0), 15.0, 1.0)
        rot_frames = np.stack([
            cv2.warpAffine(f, m, (120, 120), flags=cv2.INTER_LINEAR)
            for f in seq.frames])
        ones = np.ones((track.points.shape[0], N_LANDMARKS, 1))
        homog = np.concatenate([track.points, ones], axis=2)
        rot_points = homog @ m.T
        rot = build_stmap(FrameSequence(rot_frames, 30.0, "RGB"),
                          LandmarkTrack(rot_points, track.validity),
                          grid=(3, 3), color="raw", normalize=False)
        # tolerance: 2% of the 8-bit pixel dynamic range
        assert np.max(np.abs(rot.values - base.values)) <= 0.02 * 255.0

    def test_invalid_frames_become_masked_zero_columns(self):
        frames = np.full((8, 40, 40), 50.0) \
            + np.arange(8)[:, None, None].astype(float)
        seq = gray_sequence(frames)
        track = full_frame_track(8, 40, 40)
        validity = track.validity.copy()
        validity[3] = False
        out = build_stmap(seq, LandmarkTrack(track.points, validity),
                          grid=(2, 2))
        assert out.mask[3]
        assert np.all(out.values[:, 3, :] == 0.0)
        keep = out.values[:, ~out.mask, :]
        assert keep.min() == 0.0 and keep.max() == 1.0

    def test_nir_stays_single_channel(self):
        cfg = SynthConfig(hr_bpm=70, duration_sec=2.0, seed=1, gray=True)
        seq, track, _ = gen_video(cfg)
        out = build_stmap(seq, track)
        assert out.n_channels == 1

    def test_all_invalid_rejected(self):
        seq = gray_sequence(np.zeros((4, 40, 40)))
        track = LandmarkTrack(np.zeros((4, N_LANDMARKS, 2)),
                              np.zeros(4, bool))
        with pytest.raises(TrackError):
            build_stmap(seq, track)


class TestSlidingClips:
    def test_standard_schedule(self):
        clips = sliding_clips(900, 300, 150)
        assert [c[0] for c in clips] == [0, 150, 300, 450, 600]
        assert all(e - s == 300 for s, e in clips)

    def test_exact_fit(self):
        assert sliding_clips(300, 300, 150) == [(0, 300)]

    def test_too_short_rejected(self):
        with pytest.raises(MapConfigError, match="too short"):
            sliding_clips(299, 300, 150)


def toy_map(t=60, n=4):
    rng = np.random.default_rng(0)
    values = rng.uniform(0.1, 0.9, size=(n, t, 1))
    from pulsebench.stmap import SpatialTemporalMap
    return SpatialTemporalMap(values, 30.0)


class TestMaskAugment:
    def test_p_zero_is_identity(self):
        m = toy_map()
        out = mask_augment(m, rng_seed=1, p_mask=0.0)
        assert np.array_equal(out.values, m.values)
        assert not out.mask.any()

    def test_p_one_single_contiguous_run(self):
        for seed in range(20):
            out = mask_augment(toy_map(), rng_seed=seed, p_mask=1.0)
            flags = np.flatnonzero(out.mask)
            run = flags.size
            assert 10 <= run <= 30
            assert flags[-1] - flags[0] + 1 == run  # contiguous
            assert np.all(out.values[:, out.mask, :] == 0.0)

    def test_masked_fraction_concentrates(self):
        m = toy_map(t=40, n=2)
        hits = sum(mask_augment(m, rng_seed=s, p_mask=0.5).mask.any()
                   for s in range(10_000))
        assert 0.48 <= hits / 10_000 <= 0.52

    def test_deterministic_per_seed(self):
        a = mask_augment(toy_map(), rng_seed=7, p_mask=1.0)
        b = mask_augment(toy_map(), rng_seed=7, p_mask=1.0)
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.mask, b.mask)

    def test_overlong_mask_rejected(self):
        with pytest.raises(MapConfigError):
            mask_augment(toy_map(t=25), rng_seed=0, len_range=(10, 30))
