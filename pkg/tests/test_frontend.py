import struct
import wave

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qbye_mixer.frontend import (
    AudioClip,
    FrontendConfig,
    MalformedWavError,
    UnsupportedChannelsError,
    UnsupportedEncodingError,
    UnsupportedSampleRateError,
    apply_cmvn,
    compute_mfcc,
    load_wav,
    log_mel_frames,
    mix_noise_at_snr,
    noise_scale,
    save_wav,
    standardize_duration,
)

from oracles import textbook_dct_ortho, textbook_log_mel


def write_pcm(path, samples, rate=16000, channels=1, width=2):
    with wave.open(str(path), "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(width)
        w.setframerate(rate)
        w.writeframes(np.asarray(samples, dtype=f"<i{width}").tobytes())


def tone(freq=1000.0, amp=0.5, n=16000):
    return AudioClip(amp * np.sin(2 * np.pi * freq * np.arange(n) / 16000))


class TestLoadWav:
    def test_zeros(self, tmp_path):
        write_pcm(tmp_path / "z.wav", np.zeros(16000, np.int16))
        clip = load_wav(tmp_path / "z.wav")
        assert len(clip) == 16000 and not clip.samples.any()

    def test_scaling(self, tmp_path):
        write_pcm(tmp_path / "a.wav", np.array([16384, -32768, 1], np.int16))
        clip = load_wav(tmp_path / "a.wav")
        assert clip.samples[0] == 0.5
        assert clip.samples[1] == -1.0
        assert clip.samples[2] == pytest.approx(1 / 32768)

    def test_stereo_rejected(self, tmp_path):
        write_pcm(tmp_path / "s.wav", np.zeros(200, np.int16), channels=2)
        with pytest.raises(UnsupportedChannelsError, match="unsupported channel count"):
            load_wav(tmp_path / "s.wav")

    def test_rate_rejected(self, tmp_path):
        write_pcm(tmp_path / "r.wav", np.zeros(100, np.int16), rate=8000)
        with pytest.raises(UnsupportedSampleRateError):
            load_wav(tmp_path / "r.wav")

    def test_width_rejected(self, tmp_path):
        write_pcm(tmp_path / "w.wav", np.zeros(100, np.int32), width=4)
        with pytest.raises(UnsupportedEncodingError):
            load_wav(tmp_path / "w.wav")

    def test_float_encoding_rejected(self, tmp_path):
        data = np.zeros(10, "<f4").tobytes()
        fmt = struct.pack("<HHIIHH", 3, 1, 16000, 64000, 4, 32)
        body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(data)) + data
        (tmp_path / "f.wav").write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
        with pytest.raises(UnsupportedEncodingError):
            load_wav(tmp_path / "f.wav")

    def test_garbage_rejected(self, tmp_path):
        (tmp_path / "g.wav").write_bytes(b"not a wav file at all")
        with pytest.raises(MalformedWavError):
            load_wav(tmp_path / "g.wav")

    def test_round_trip(self, tmp_path):
        clip = tone(440.0, 0.3, 1234)
        save_wav(tmp_path / "t.wav", clip)
        back = load_wav(tmp_path / "t.wav")
        np.testing.assert_allclose(back.samples, clip.samples, atol=1 / 32768)


class TestStandardizeDuration:
    def test_identity_at_target(self):
        clip = tone()
        assert standardize_duration(clip, 1.0, np.random.default_rng(0)) is clip

    def test_pad(self):
        payload = np.linspace(0.1, 0.9, 8000)
        out = standardize_duration(AudioClip(payload), 1.0, np.random.default_rng(3)).samples
        nz = np.flatnonzero(out)
        left, right = nz[0], 16000 - nz[-1] - 1
        assert len(out) == 16000 and left + right == 8000
        np.testing.assert_array_equal(out[left:left + 8000], payload.astype(np.float32))

    def test_crop_reproducible(self):
        clip = AudioClip(np.random.default_rng(1).uniform(-1, 1, 32000))
        a = standardize_duration(clip, 1.0, np.random.default_rng(7)).samples
        b = standardize_duration(clip, 1.0, np.random.default_rng(7)).samples
        np.testing.assert_array_equal(a, b)

    def test_empty(self):
        with pytest.raises(ValueError):
            standardize_duration(AudioClip(np.zeros(0)), 1.0, np.random.default_rng(0))

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(1, 40000), seed=st.integers(0, 2**32 - 1))
    def test_payload_preserved(self, n, seed):
        payload = np.arange(1, n + 1, dtype=np.float32)
        out = standardize_duration(AudioClip(payload), 1.0, np.random.default_rng(seed)).samples
        assert len(out) == 16000
        if n >= 16000:
            start = int(out[0]) - 1
            np.testing.assert_array_equal(out, payload[start:start + 16000])
        else:
            nz = np.flatnonzero(out)
            np.testing.assert_array_equal(out[nz[0]:nz[0] + n], payload)
            assert np.count_nonzero(out) == n


class TestNoiseMixing:
    def test_equal_powers_zero_db(self):
        s = tone(300.0, 0.2)
        out = mix_noise_at_snr(s, s, 0.0, np.random.default_rng(0))
        np.testing.assert_allclose(out.samples, 2 * s.samples, rtol=1e-6)

    def test_quarter_power(self):
        s = np.ones(100) * 0.1
        assert noise_scale(s, 2 * s, 0.0) == pytest.approx(0.5)

    def test_six_db(self):
        rng = np.random.default_rng(0)
        s = rng.normal(size=16000) * 0.1
        n = rng.normal(size=16000)
        n *= np.sqrt(np.mean(s ** 2) / np.mean(n ** 2))
        alpha = noise_scale(s, n, 6.0)
        assert alpha == pytest.approx(10 ** -0.3, rel=1e-12)
        measured = 10 * np.log10(np.mean(s ** 2) / np.mean((alpha * n) ** 2))
        assert abs(measured - 6.0) < 1e-6

    def test_zero_power_rejected(self):
        with pytest.raises(ValueError):
            mix_noise_at_snr(AudioClip(np.zeros(100)), tone(n=200), 5.0, np.random.default_rng(0))
        with pytest.raises(ValueError):
            mix_noise_at_snr(tone(n=100), AudioClip(np.zeros(200)), 5.0, np.random.default_rng(0))

    def test_short_noise_rejected(self):
        with pytest.raises(ValueError):
            mix_noise_at_snr(tone(n=200), tone(n=100), 5.0, np.random.default_rng(0))

    @settings(max_examples=50, deadline=None)
    @given(snr=st.floats(-20, 40), seed=st.integers(0, 2**31), extra=st.integers(0, 5000))
    def test_requested_snr_hit(self, snr, seed, extra):
        rng = np.random.default_rng(seed)
        signal = AudioClip(rng.uniform(-0.5, 0.5, 4000))
        noise = AudioClip(rng.uniform(-1, 1, 4000 + extra))
        start = int(np.random.default_rng(seed + 1).integers(0, extra + 1))
        out = mix_noise_at_snr(signal, noise, snr, np.random.default_rng(seed + 1))
        segment = noise.samples[start:start + 4000].astype(np.float64)
        scaled = noise_scale(signal.samples, segment, snr) * segment
        measured = 10 * np.log10(np.mean(signal.samples.astype(np.float64) ** 2) / np.mean(scaled ** 2))
        assert abs(measured - snr) < 1e-6
        np.testing.assert_allclose(out.samples, signal.samples + scaled, atol=1e-6)


class TestMfcc:
    def test_shape(self):
        feat = compute_mfcc(tone())
        assert feat.shape == (81, 81) and feat.dtype == np.float32

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            compute_mfcc(tone(n=15999))

    def test_zero_clip(self):
        feat = compute_mfcc(AudioClip(np.zeros(16000)))
        assert np.all(feat == feat[:, :1])
        np.testing.assert_allclose(feat[1:], 0.0, atol=1e-5)
        assert feat[0, 0] == pytest.approx(np.sqrt(81) * np.log(1e-10), rel=1e-6)

    def test_deterministic(self):
        clip = AudioClip(np.random.default_rng(2).uniform(-1, 1, 16000))
        assert compute_mfcc(clip).tobytes() == compute_mfcc(clip).tobytes()

    def test_tone_matches_textbook_oracle(self):
        clip = tone(1000.0, 0.5)
        expected = textbook_log_mel(clip.samples)
        got = log_mel_frames(clip, FrontendConfig())
        assert got.shape == expected.shape == (81, 81)
        np.testing.assert_allclose(got, expected, atol=1e-3)
        mfcc = compute_mfcc(clip)
        for j in (0, 40, 80):
            np.testing.assert_allclose(mfcc[:, j], textbook_dct_ortho(expected[j]), atol=1e-3)

    def test_tone_energy_lands_near_1khz(self):
        logmel = log_mel_frames(tone(1000.0), FrontendConfig())
        from qbye_mixer.frontend import hz_to_mel, mel_to_hz
        centres = mel_to_hz(np.linspace(0, hz_to_mel(8000), 83))[1:-1]
        peak = centres[np.argmax(logmel[40])]
        assert 900 < peak < 1100

    def test_config_validation(self):
        with pytest.raises(ValueError):
            FrontendConfig(n_mfcc=90)
        with pytest.raises(ValueError):
            FrontendConfig(fft_size=256)


class TestCmvn:
    def test_arithmetic_row(self):
        feat = np.tile(np.arange(81, dtype=np.float32), (3, 1))
        out = apply_cmvn(feat)
        assert np.all(np.abs(out.mean(axis=1)) < 1e-5)

    def test_constant_row(self):
        out = apply_cmvn(np.full((2, 81), -7.25, np.float32))
        assert np.all(np.abs(out) < 1e-6)

    def test_near_idempotent(self):
        feat = np.random.default_rng(0).normal(3, 2, (81, 81)).astype(np.float32)
        once = apply_cmvn(feat)
        assert np.max(np.abs(apply_cmvn(once) - once)) < 1e-4

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**31), scale=st.floats(1e-2, 1e3), shift=st.floats(-100, 100))
    def test_row_statistics(self, seed, scale, shift):
        feat = np.random.default_rng(seed).normal(shift, scale, (81, 81)).astype(np.float32)
        out = apply_cmvn(feat).astype(np.float64)
        assert np.all(np.abs(out.mean(axis=1)) < 1e-5)
        # output variance is var / (var + eps): within 1e-4 of 1 iff var >= ~1e4 * eps
        wide = feat.astype(np.float64).var(axis=1) >= 1e4 * 1e-8
        assert np.all(np.abs(out.var(axis=1)[wide] - 1) < 1e-4)
