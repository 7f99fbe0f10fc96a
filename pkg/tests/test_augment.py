import json

import numpy as np
import pytest

from medspeech.audio_io import AudioClip
from medspeech.augment import (
    AugmentConfig,
    NoiseBank,
    TECHNIQUES,
    TechniqueSettings,
    apply_pipeline,
    axis_mask,
    axis_scale,
    codec_sim,
    default_config_json,
    level_volume,
    overlay,
    resample_cycle,
    reverb,
    segment_dropout,
    warp,
)
from medspeech.features import Spectrogram, spectrogram


def rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


def sine(freq=440.0, amp=0.5, seconds=0.5, rate=16000):
    t = np.arange(int(seconds * rate)) / rate
    return AudioClip(amp * np.sin(2 * np.pi * freq * t), rate)


class TestOverlay:
    def test_high_snr_is_nearly_identity(self):
        clip = sine()
        noise = sine(freq=997.0, amp=0.4)
        out = overlay(clip, noise, snr_db=60.0)
        assert np.max(np.abs(out.samples - clip.samples)) <= 0.002

    def test_measured_snr_matches_requested(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            clip = AudioClip(rng.normal(0, 0.15, size=4000), 16000)
            noise = AudioClip(rng.normal(0, 0.3, size=int(rng.integers(500, 6000))), 16000)
            snr = float(rng.uniform(-5, 30))
            out = overlay(clip, noise, snr)
            added = out.samples - np.clip(clip.samples + 0, -1, 1)
            # reconstruct the scaled noise from the unclipped sum
            reps = -(-len(clip) // len(noise))
            looped = np.tile(noise.samples, reps)[: len(clip)]
            gain = rms(clip.samples) / (rms(looped) * 10 ** (snr / 20))
            measured = 20 * np.log10(rms(clip.samples) / rms(gain * looped))
            assert abs(measured - snr) <= 0.1
            del added

    def test_looping_covers_whole_clip(self):
        clip = sine(seconds=0.3)
        n = len(clip)
        noise = AudioClip(np.full(n // 3, 0.2), 16000)
        out = overlay(clip, noise, snr_db=0.0)
        # constant positive noise everywhere: no sample untouched
        assert np.all(out.samples != clip.samples)

    def test_silent_inputs_rejected(self):
        clip = sine()
        silent = AudioClip(np.zeros(100), 16000)
        with pytest.raises(ValueError):
            overlay(silent, clip, 10.0)
        with pytest.raises(ValueError):
            overlay(clip, silent, 10.0)

    def test_output_clamped(self):
        clip = sine(amp=0.9)
        noise = sine(freq=441.0, amp=0.9)
        out = overlay(clip, noise, snr_db=-10.0)
        assert np.max(np.abs(out.samples)) <= 1.0


class TestReverb:
    def test_zero_rt60_impulse(self):
        x = np.zeros(16000)
        x[0] = 1.0
        out = reverb(AudioClip(x, 16000), 0.0)
        assert out.samples[0] == pytest.approx(0.5)
        wet = out.samples - 0.5 * x
        nonzero = np.nonzero(np.abs(wet) > 1e-12)[0]
        assert nonzero[0] == round(0.0297 * 16000)

    def test_first_echo_at_min_comb_delay(self):
        x = np.zeros(16000)
        x[0] = 1.0
        out = reverb(AudioClip(x, 16000), 0.6)
        wet = out.samples - 0.5 * x
        nonzero = np.nonzero(np.abs(wet) > 1e-12)[0]
        assert nonzero[0] == 475

    def test_silent_in_silent_out(self):
        out = reverb(AudioClip(np.zeros(8000), 16000), 0.5)
        assert np.all(out.samples == 0.0)

    def test_length_preserved_and_clamped(self):
        clip = sine(amp=0.99, seconds=0.4)
        out = reverb(clip, 1.2)
        assert len(out) == len(clip)
        assert np.max(np.abs(out.samples)) <= 1.0

    def test_negative_rt60_rejected(self):
        with pytest.raises(ValueError):
            reverb(sine(), -0.1)


class TestResampleCycle:
    def test_same_rate_nearly_identity(self):
        clip = sine()
        out = resample_cycle(clip, 16000)
        assert len(out) == len(clip)
        c = np.corrcoef(out.samples, clip.samples)[0, 1]
        assert c >= 0.999

    def test_length_within_one(self):
        clip = sine(seconds=0.173)
        for rate in (8000, 11025, 12345):
            out = resample_cycle(clip, rate)
            assert abs(len(out) - len(clip)) <= 1

    def test_440hz_through_8k(self):
        clip = sine()
        out = resample_cycle(clip, 8000)
        n = min(len(out), len(clip))
        c = np.corrcoef(out.samples[:n], clip.samples[:n])[0, 1]
        assert c >= 0.99


class TestCodecSim:
    def test_zero_fixed_point(self):
        out = codec_sim(AudioClip(np.zeros(100), 16000))
        assert np.all(out.samples == 0.0)

    def test_error_bound_dense_grid(self):
        x = np.linspace(-1.0, 1.0, 200001)
        out = codec_sim(AudioClip(x, 16000))
        assert np.max(np.abs(out.samples - x)) <= 0.031

    def test_error_bound_random(self):
        rng = np.random.default_rng(6)
        x = rng.uniform(-1, 1, size=50000)
        out = codec_sim(AudioClip(x, 16000))
        assert np.max(np.abs(out.samples - x)) <= 0.031

    def test_range_law(self):
        x = np.array([-1.0, -0.999, 0.999, 1.0, 2.0, -2.0])
        out = codec_sim(AudioClip(x, 16000))
        assert np.all(np.abs(out.samples) <= 1.0)


class TestLevelVolume:
    def test_fixed_point_gain_one(self):
        clip = sine(amp=1.0)
        target = 20 * np.log10(rms(clip.samples))
        out = level_volume(clip, target)
        gains = out.samples[np.abs(clip.samples) > 1e-6] / clip.samples[np.abs(clip.samples) > 1e-6]
        assert np.max(np.abs(gains - 1.0)) <= 1e-4

    def test_derived_amplitude(self):
        clip = sine(amp=0.1)
        out = level_volume(clip, -20.0)
        assert np.max(np.abs(out.samples)) == pytest.approx(0.141421, abs=1e-4)

    def test_rms_within_tenth_db(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            clip = AudioClip(rng.normal(0, 0.1, size=3000), 16000)
            target = float(rng.uniform(-40, -15))
            out = level_volume(clip, target)
            assert abs(20 * np.log10(rms(out.samples)) - target) <= 0.1

    def test_silent_noop(self, caplog):
        clip = AudioClip(np.zeros(100), 16000)
        out = level_volume(clip, -20.0)
        assert np.all(out.samples == 0.0)


class TestSegmentDropout:
    def test_zero_segments_identity(self):
        clip = sine()
        out = segment_dropout(clip, 0, rng=np.random.default_rng(0))
        np.testing.assert_array_equal(out.samples, clip.samples)

    def test_zeroed_runs_bounded(self):
        clip = AudioClip(np.ones(16000), 16000)
        rng = np.random.default_rng(5)
        n, lo, hi = 3, 10.0, 50.0
        out = segment_dropout(clip, n, (lo, hi), rng)
        zeroed = int(np.sum(out.samples == 0.0))
        assert zeroed <= n * int(round(hi * 16))
        # every zero run has bounded length
        runs = np.diff(np.flatnonzero(np.diff(np.r_[1, out.samples, 1] == 0)))[::2]
        assert len(runs) <= n
        assert all(r <= n * int(round(hi * 16)) for r in runs)

    def test_determinism(self):
        clip = sine()
        a = segment_dropout(clip, 2, rng=np.random.default_rng(42))
        b = segment_dropout(clip, 2, rng=np.random.default_rng(42))
        np.testing.assert_array_equal(a.samples, b.samples)


def toy_spec(frames=40, bins=30, seed=0):
    rng = np.random.default_rng(seed)
    return Spectrogram(rng.random((frames, bins)) + 0.5)


class TestAxisMask:
    def test_width_zero_identity(self):
        spec = toy_spec()
        out = axis_mask(spec, "time", 0, 3, np.random.default_rng(1))
        np.testing.assert_array_equal(out.mags, spec.mags)

    def test_masked_exactly_zero_rest_untouched(self):
        spec = toy_spec()
        out = axis_mask(spec, "frequency", 5, 2, np.random.default_rng(2))
        changed = out.mags != spec.mags
        assert np.all(out.mags[changed] == 0.0)
        cols = np.unique(np.nonzero(changed)[1])
        assert np.all(np.any(changed, axis=0)[cols])

    def test_zero_fraction_bound(self):
        for seed in range(100):
            spec = toy_spec(seed=seed)
            n, w = 2, 6
            out = axis_mask(spec, "time", w, n, np.random.default_rng(seed))
            frac = np.mean(np.all(out.mags == 0.0, axis=1))
            assert frac <= n * w / spec.frames + 1e-12

    def test_overwide_clamped(self):
        spec = toy_spec(frames=4)
        out = axis_mask(spec, "time", 100, 1, np.random.default_rng(3))
        assert out.frames == 4


class TestAxisScale:
    def test_factor_one_identity(self):
        spec = toy_spec()
        out = axis_scale(spec, "time", 1.0)
        np.testing.assert_array_equal(out.mags, spec.mags)

    def test_time_half(self):
        spec = toy_spec(frames=100)
        out = axis_scale(spec, "time", 0.5)
        assert out.frames == 50
        assert out.bins == spec.bins

    def test_tone_peak_moves(self):
        mags = np.zeros((10, 257))
        mags[:, 32] = 1.0
        out = axis_scale(Spectrogram(mags), "frequency", 1.1)
        peaks = np.argmax(out.mags, axis=1)
        assert np.all(np.abs(peaks - 35) <= 1)

    def test_factor_range_enforced(self):
        with pytest.raises(ValueError):
            axis_scale(toy_spec(), "time", 0.4)
        with pytest.raises(ValueError):
            axis_scale(toy_spec(), "frequency", 2.5)


class TestWarp:
    def test_zero_identity(self):
        spec = toy_spec()
        out = warp(spec, 0, np.random.default_rng(0))
        np.testing.assert_array_equal(out.mags, spec.mags)

    def test_frame_count_preserved(self):
        for seed in range(20):
            spec = toy_spec(frames=30, seed=seed)
            out = warp(spec, 4, np.random.default_rng(seed))
            assert out.frames == spec.frames

    def test_mass_roughly_conserved_on_smooth_input(self):
        t = np.linspace(0, 3, 60)
        smooth = np.outer(1.5 + np.sin(t), np.ones(20))
        spec = Spectrogram(smooth)
        for seed in range(100):
            out = warp(spec, 5, np.random.default_rng(seed))
            rel = abs(out.mags.sum() - spec.mags.sum()) / spec.mags.sum()
            assert rel < 0.05

    def test_too_few_frames_rejected(self):
        with pytest.raises(ValueError):
            warp(toy_spec(frames=8), 4, np.random.default_rng(0))


class TestConfig:
    def test_defaults_match_probability_table(self):
        cfg = AugmentConfig()
        assert cfg.settings("overlay").probability == 0.5
        for name in TECHNIQUES:
            if name != "overlay":
                assert cfg.settings(name).probability == 0.1

    def test_shipped_defaults_file_parses_to_defaults(self):
        cfg = AugmentConfig.from_json(default_config_json())
        assert cfg == AugmentConfig()

    def test_json_round_trip(self):
        cfg = AugmentConfig(
            {"overlay": TechniqueSettings(True, 0.25, {"snr_db": (0.0, 10.0)})},
            pipeline_seed=99,
        )
        back = AugmentConfig.from_json(cfg.to_json())
        assert back == cfg

    def test_bad_probability_rejected(self):
        with pytest.raises(ValueError):
            TechniqueSettings(probability=1.5)

    def test_unordered_range_rejected(self):
        with pytest.raises(ValueError):
            TechniqueSettings(params={"snr_db": (10.0, 0.0)})

    def test_unknown_technique_rejected(self):
        with pytest.raises(ValueError):
            AugmentConfig.from_json(json.dumps({"sparkle": {"probability": 0.1}}))


def all_off_config():
    return AugmentConfig(
        {name: TechniqueSettings(True, 0.0) for name in TECHNIQUES}
    )


class TestApplyPipeline:
    def test_all_probabilities_zero_is_identity(self):
        clip = sine()
        result = apply_pipeline(clip, all_off_config(), None, seed=3)
        np.testing.assert_array_equal(result.clip.samples, clip.samples)
        np.testing.assert_array_equal(result.spec.mags, spectrogram(clip).mags)
        assert result.applied == ()

    def test_same_seed_bit_identical(self):
        clip = sine(seconds=0.4)
        bank = NoiseBank({"hum": sine(freq=50.0, amp=0.2, seconds=0.1)})
        cfg = AugmentConfig(pipeline_seed=5)
        a = apply_pipeline(clip, cfg, bank, seed=11)
        b = apply_pipeline(clip, cfg, bank, seed=11)
        assert a.applied == b.applied
        np.testing.assert_array_equal(a.clip.samples, b.clip.samples)
        np.testing.assert_array_equal(a.spec.mags, b.spec.mags)

    def test_different_seed_differs_eventually(self):
        clip = sine(seconds=0.4)
        bank = NoiseBank({"hum": sine(freq=50.0, amp=0.2, seconds=0.1)})
        cfg = AugmentConfig(pipeline_seed=5)
        applied = {apply_pipeline(clip, cfg, bank, seed=s).applied for s in range(40)}
        assert len(applied) > 1

    def test_empty_bank_overlay_skipped(self, caplog):
        clip = sine()
        cfg = AugmentConfig(
            {"overlay": TechniqueSettings(True, 1.0)}
            | {n: TechniqueSettings(True, 0.0) for n in TECHNIQUES if n != "overlay"}
        )
        result = apply_pipeline(clip, cfg, None, seed=0)
        assert "overlay" not in result.applied
        np.testing.assert_array_equal(result.clip.samples, clip.samples)

    def test_signal_outputs_in_range(self):
        clip = sine(amp=0.95, seconds=0.3)
        bank = NoiseBank({"n": sine(freq=123.0, amp=0.8, seconds=0.05)})
        cfg = AugmentConfig(
            {name: TechniqueSettings(True, 1.0) for name in TECHNIQUES}
        )
        for seed in range(10):
            result = apply_pipeline(clip, cfg, bank, seed=seed)
            assert np.max(np.abs(result.clip.samples)) <= 1.0
            assert np.all(result.spec.mags >= 0.0)

    def test_noise_bank_rejects_wrong_rate(self):
        with pytest.raises(ValueError):
            NoiseBank({"bad": sine(rate=8000)})
