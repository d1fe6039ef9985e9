"""Log-mel spectrogram frontend.

Defaults: periodic Hann window, magnitude spectrum, HTK mel scale
``2595 * log10(1 + f / 700)``, natural log with a 1e-10 floor.
"""

import wave
from dataclasses import dataclass

import numpy as np

from .numerics import rfft

__all__ = [
    "AudioBuffer",
    "MelFilterbank",
    "read_wav",
    "write_wav",
    "hann",
    "stft_magnitude",
    "hz_to_mel",
    "mel_to_hz",
    "mel_filterbank",
    "log_mel",
    "log_mel_spectrogram",
]

EPS_LOG = 1e-10


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")


@dataclass(frozen=True)
class MelFilterbank:
    filters: np.ndarray  # (n_mels, n_fft // 2 + 1)
    edges_hz: np.ndarray  # (n_mels + 2,): lower edge, centres, upper edge
    sample_rate: int
    n_fft: int

    @property
    def centers_hz(self):
        return self.edges_hz[1:-1]

    @property
    def center_bins(self):
        """Fractional FFT-bin position of every filter peak."""
        return self.centers_hz * self.n_fft / self.sample_rate


def read_wav(path):
    """16-bit PCM WAV, channels averaged to mono, scaled to [-1, 1)."""
    with wave.open(str(path), "rb") as w:
        if w.getsampwidth() != 2:
            raise ValueError(f"{path}: only 16-bit PCM is supported (sample width {w.getsampwidth()} bytes)")
        if w.getcomptype() != "NONE":
            raise ValueError(f"{path}: compressed WAV ({w.getcomptype()}) is not supported")
        ch = w.getnchannels()
        sr = w.getframerate()
        raw = w.readframes(w.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    pcm = pcm.reshape(-1, ch).mean(axis=1) / 32768.0
    return AudioBuffer(pcm, sr)


def write_wav(path, audio):
    pcm = np.clip(np.round(np.asarray(audio.samples) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(audio.sample_rate))
        w.writeframes(pcm.tobytes())


def hann(n):
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_magnitude(audio, n_fft=2048, hop=1024, window="hann"):
    """Frames ``floor((N - n_fft) / hop) + 1`` by ``n_fft // 2 + 1`` bins; no padding."""
    x = np.asarray(audio.samples if isinstance(audio, AudioBuffer) else audio, dtype=np.float64)
    if hop < 1:
        raise ValueError(f"hop must be >= 1, got {hop}")
    if len(x) < n_fft:
        raise ValueError(f"audio has {len(x)} samples, shorter than one {n_fft}-sample frame")
    if window == "hann":
        win = hann(n_fft)
    elif window in (None, "rect"):
        win = np.ones(n_fft)
    else:
        win = np.asarray(window, dtype=np.float64)
    n_frames = (len(x) - n_fft) // hop + 1
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    return np.abs(rfft(x[idx] * win))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def _tri_integral(x, lo, c, hi):
    # antiderivative of the unit-peak triangle (lo, c, hi), zero left of lo
    x = np.clip(x, lo, hi)
    rise = (x - lo) ** 2 / (2.0 * (c - lo))
    fall = (c - lo) / 2.0 + (hi - c) / 2.0 - (hi - x) ** 2 / (2.0 * (hi - c))
    return np.where(x <= c, rise, fall)


def mel_filterbank(sample_rate, n_mels=256, n_fft=2048, f_min=0.0, f_max=None, mode="integrated"):
    """Triangular filters with peaks equally spaced on the mel scale.

    ``mode="integrated"`` (default) weights bin ``k`` by the mean of the
    triangle over that bin's frequency interval ``[f_k - df/2, f_k + df/2]``,
    so narrow low-frequency filters still touch at least one bin.
    ``mode="sampled"`` evaluates the triangle at bin centres and rejects
    filters that end up empty.
    """
    f_max = sample_rate / 2.0 if f_max is None else float(f_max)
    if n_mels < 1:
        raise ValueError(f"n_mels must be >= 1, got {n_mels}")
    if not 0.0 <= f_min < f_max <= sample_rate / 2.0:
        raise ValueError(f"need 0 <= f_min < f_max <= sr/2, got f_min={f_min}, f_max={f_max}")
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    lo, c, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    df = sample_rate / n_fft
    freqs = np.arange(n_fft // 2 + 1) * df
    if mode == "integrated":
        filters = (_tri_integral(freqs + df / 2, lo, c, hi) - _tri_integral(freqs - df / 2, lo, c, hi)) / df
    elif mode == "sampled":
        filters = np.maximum(0.0, np.minimum((freqs - lo) / (c - lo), (hi - freqs) / (hi - c)))
    else:
        raise ValueError(f"unknown filterbank mode {mode!r}")
    filters = np.maximum(filters, 0.0)
    empty = np.flatnonzero(filters.sum(axis=1) == 0)
    if empty.size:
        raise ValueError(
            f"{empty.size} empty mel filters (first: {int(empty[0])}); too many mels "
            f"for n_fft={n_fft} at {sample_rate} Hz"
        )
    return MelFilterbank(filters, edges, int(sample_rate), n_fft)


def log_mel(spec, fb):
    """``log(fb @ frame + 1e-10)`` for every frame."""
    spec = np.asarray(spec, dtype=np.float64)
    filters = fb.filters if isinstance(fb, MelFilterbank) else np.asarray(fb)
    if spec.ndim != 2 or spec.shape[1] != filters.shape[1]:
        raise ValueError(f"spectrogram shape {spec.shape} does not match filterbank {filters.shape}")
    return np.log(spec @ filters.T + EPS_LOG)


def log_mel_spectrogram(audio, n_fft=2048, hop=1024, n_mels=256, fb=None):
    if fb is None:
        fb = mel_filterbank(audio.sample_rate, n_mels, n_fft)
    return log_mel(stft_magnitude(audio, n_fft, hop), fb)
