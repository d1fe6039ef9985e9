import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mclnn.dsp import (
    EPS_LOG,
    AudioBuffer,
    hann,
    hz_to_mel,
    log_mel,
    log_mel_spectrogram,
    mel_filterbank,
    mel_to_hz,
    read_wav,
    stft_magnitude,
    write_wav,
)

from oracles import naive_dft


def _naive_stft(x, n_fft, hop):
    win = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n_fft) / n_fft)
    frames = []
    for start in range(0, len(x) - n_fft + 1, hop):
        frames.append(np.abs(naive_dft(x[start:start + n_fft] * win))[: n_fft // 2 + 1])
    return np.array(frames)


class TestStft:
    def test_one_frame(self):
        assert stft_magnitude(np.zeros(2048)).shape == (1, 1025)

    def test_zero_signal(self):
        assert not stft_magnitude(np.zeros(5000)).any()

    def test_bin_centred_sine(self, backend):
        sr, k = 22050, 37
        x = np.sin(2 * np.pi * k * sr / 2048 * np.arange(4096) / sr)
        mag = stft_magnitude(AudioBuffer(x, sr))
        assert np.all(mag.argmax(axis=1) == k)
        assert np.max(np.abs(mag - _naive_stft(x, 2048, 1024))) < 1e-9

    def test_random_signal_vs_naive_dft(self, backend):
        x = np.random.default_rng(0).uniform(-1, 1, 3000)
        assert np.max(np.abs(stft_magnitude(x, 256, 100) - _naive_stft(x, 256, 100))) < 1e-9

    def test_too_short(self):
        with pytest.raises(ValueError, match="shorter than one"):
            stft_magnitude(np.zeros(2047))

    @given(st.integers(0, 3000), st.integers(1, 600))
    @settings(max_examples=80, deadline=None)
    def test_frame_count(self, extra, hop):
        n = 256 + extra
        assert stft_magnitude(np.zeros(n), 256, hop).shape[0] == (n - 256) // hop + 1

    @given(st.floats(1.01, 50.0), st.integers(0, 1000))
    @settings(max_examples=30, deadline=None)
    def test_scaling_never_decreases(self, c, seed):
        x = np.random.default_rng(seed).normal(size=600)
        assert np.all(stft_magnitude(c * x, 128, 64) >= stft_magnitude(x, 128, 64))

    def test_hann_periodic(self):
        w = hann(8)
        assert w[0] == 0.0 and w[4] == 1.0
        np.testing.assert_allclose(w[1:], w[:0:-1], atol=1e-15)


class TestMel:
    def test_mel_1000(self):
        m = float(hz_to_mel(1000.0))
        assert m == pytest.approx(2595 * math.log10(1 + 1000 / 700), rel=1e-15)
        assert abs(m - 1000.0) < 0.5 and round(m, 1) == 1000.0

    def test_inverse(self):
        f = np.array([0.0, 100.0, 4410.0, 22050.0])
        np.testing.assert_allclose(mel_to_hz(hz_to_mel(f)), f, atol=1e-9)

    @pytest.mark.parametrize("sr", [8000, 22050, 44100])
    def test_filter_shape_invariants(self, sr):
        fb = mel_filterbank(sr, 256, 2048)
        assert fb.filters.shape == (256, 1025)
        assert np.all(fb.filters >= 0)
        assert np.all(np.diff(fb.center_bins) > 0)
        for row in fb.filters:
            support = np.flatnonzero(row)
            assert support.size and np.all(np.diff(support) == 1)
            seg = row[support[0]:support[-1] + 1]
            peak = int(seg.argmax())
            assert np.all(np.diff(seg[:peak + 1]) >= 0) and np.all(np.diff(seg[peak:]) <= 0)

    def test_sampled_mode_rejects_empty(self):
        with pytest.raises(ValueError, match="empty mel filters"):
            mel_filterbank(44100, 256, 2048, mode="sampled")

    def test_sampled_mode_small_bank(self):
        fb = mel_filterbank(16000, 40, 512, mode="sampled")
        assert fb.filters.max() <= 1.0 and np.all(fb.filters.sum(axis=1) > 0)

    def test_integrated_close_to_sampled_for_wide_filters(self):
        a = mel_filterbank(16000, 20, 2048, mode="integrated").filters
        b = mel_filterbank(16000, 20, 2048, mode="sampled").filters
        assert np.max(np.abs(a - b)) < 0.05

    @pytest.mark.parametrize("kwargs,match", [
        ({"n_mels": 0}, "n_mels"), ({"f_min": 5000.0, "f_max": 4000.0}, "f_min"),
        ({"f_max": 20000.0}, "f_max"), ({"mode": "slaney"}, "mode"),
    ])
    def test_invalid(self, kwargs, match):
        with pytest.raises(ValueError, match=match):
            mel_filterbank(16000, **kwargs)


class TestLogMel:
    def test_zero_spectrogram(self):
        fb = mel_filterbank(22050, 64, 1024)
        out = log_mel(np.zeros((3, 513)), fb)
        assert out.shape == (3, 64) and np.all(out == np.log(EPS_LOG))

    def test_doubling_shifts_by_log2(self):
        fb = mel_filterbank(22050, 64, 1024)
        spec = np.random.default_rng(0).uniform(1, 2, (4, 513))
        np.testing.assert_allclose(log_mel(2 * spec, fb) - log_mel(spec, fb), math.log(2), atol=1e-9)

    def test_shape(self):
        fb = mel_filterbank(44100)
        assert log_mel(np.ones((10, 1025)), fb).shape == (10, 256)

    def test_flat_spectrum_gives_filter_areas(self):
        fb = mel_filterbank(44100)
        out = log_mel(np.ones((1, 1025)), fb)[0]
        areas = np.array([sum(row) for row in fb.filters.tolist()])
        assert np.max(np.abs(np.exp(out) - EPS_LOG - areas)) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="does not match"):
            log_mel(np.ones((2, 100)), mel_filterbank(22050, 16, 1024))

    def test_one_second_clip(self):
        sr = 44100
        x = np.sin(2 * np.pi * 440 * np.arange(sr) / sr)
        out = log_mel_spectrogram(AudioBuffer(x, sr))
        assert out.shape == (42, 256) and np.all(np.isfinite(out))


class TestWav:
    def test_round_trip(self, tmp_path):
        x = np.round(np.random.default_rng(0).uniform(-0.9, 0.9, 500) * 32767) / 32767
        write_wav(tmp_path / "a.wav", AudioBuffer(x, 16000))
        back = read_wav(tmp_path / "a.wav")
        assert back.sample_rate == 16000
        np.testing.assert_allclose(back.samples, x * 32767 / 32768, atol=1e-12)

    def test_stereo_downmix(self, tmp_path):
        import wave
        pcm = np.array([[1000, 3000], [-2000, 0]], dtype="<i2")
        with wave.open(str(tmp_path / "s.wav"), "wb") as w:
            w.setnchannels(2)
            w.setsampwidth(2)
            w.setframerate(8000)
            w.writeframes(pcm.tobytes())
        assert read_wav(tmp_path / "s.wav").samples.tolist() == [2000 / 32768, -1000 / 32768]

    def test_rejects_8bit(self, tmp_path):
        import wave
        with wave.open(str(tmp_path / "b.wav"), "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(1)
            w.setframerate(8000)
            w.writeframes(bytes(10))
        with pytest.raises(ValueError, match="16-bit"):
            read_wav(tmp_path / "b.wav")

    def test_bad_rate(self):
        with pytest.raises(ValueError, match="sample rate"):
            AudioBuffer(np.zeros(3), 0)
