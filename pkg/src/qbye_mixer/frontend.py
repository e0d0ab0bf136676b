"""Audio frontend: WAV decoding, duration standardization, SNR noise mixing,
MFCC extraction and CMVN.

All functions are pure given their inputs and the generator passed in.
"""

from __future__ import annotations

import wave
from dataclasses import asdict, dataclass

import numpy as np
from scipy.fft import dct

SAMPLE_RATE = 16000


class WavError(ValueError):
    """Base class for WAV decoding failures."""


class MalformedWavError(WavError):
    pass


class UnsupportedSampleRateError(WavError):
    pass


class UnsupportedChannelsError(WavError):
    pass


class UnsupportedEncodingError(WavError):
    pass


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"sample_rate must be {SAMPLE_RATE}, got {self.sample_rate}")
        samples = np.ascontiguousarray(self.samples, dtype=np.float32)
        if samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FrontendConfig:
    win_ms: float = 25.0
    hop_ms: float = 12.5
    n_mels: int = 81
    n_mfcc: int = 81
    fft_size: int = 512
    preemphasis: float = 0.97
    log_floor: float = 1e-10
    cmvn_eps: float = 1e-8
    fmin: float = 0.0
    fmax: float = 8000.0
    clip_s: float = 1.0

    def __post_init__(self):
        if self.n_mfcc > self.n_mels:
            raise ValueError("n_mfcc must not exceed n_mels")
        if self.fft_size < self.win_length:
            raise ValueError(f"fft_size {self.fft_size} shorter than window {self.win_length}")

    @property
    def win_length(self) -> int:
        return int(round(self.win_ms * SAMPLE_RATE / 1000))

    @property
    def hop_length(self) -> int:
        return int(round(self.hop_ms * SAMPLE_RATE / 1000))

    @property
    def clip_samples(self) -> int:
        return int(round(self.clip_s * SAMPLE_RATE))

    @property
    def n_frames(self) -> int:
        return self.clip_samples // self.hop_length + 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FrontendConfig":
        return cls(**d)


def load_wav(path) -> AudioClip:
    """Decode a mono 16 kHz PCM16 WAV file into floats in [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as w:
            channels = w.getnchannels()
            width = w.getsampwidth()
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except wave.Error as exc:
        msg = str(exc)
        if "unknown format" in msg:
            raise UnsupportedEncodingError(f"{path}: unsupported encoding ({msg})") from exc
        raise MalformedWavError(f"{path}: malformed header ({msg})") from exc
    except EOFError as exc:
        raise MalformedWavError(f"{path}: malformed header (truncated)") from exc
    if channels != 1:
        raise UnsupportedChannelsError(f"{path}: unsupported channel count {channels}")
    if width != 2:
        raise UnsupportedEncodingError(f"{path}: unsupported sample width {8 * width} bits")
    if rate != SAMPLE_RATE:
        raise UnsupportedSampleRateError(f"{path}: unsupported sample rate {rate}")
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioClip(pcm.astype(np.float32) / 32768.0)


def save_wav(path, clip: AudioClip) -> None:
    """Write a clip as PCM16; samples are clipped to the int16 range."""
    pcm = np.clip(np.round(clip.samples.astype(np.float64) * 32768.0), -32768, 32767)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(clip.sample_rate)
        w.writeframes(pcm.astype("<i2").tobytes())


def standardize_duration(clip: AudioClip, target_s: float, rng: np.random.Generator) -> AudioClip:
    """Random-crop or random two-sided zero-pad ``clip`` to ``target_s`` seconds."""
    if target_s <= 0:
        raise ValueError("target_s must be positive")
    n = len(clip)
    if n == 0:
        raise ValueError("cannot standardize an empty clip")
    target = int(round(target_s * clip.sample_rate))
    if n == target:
        return clip
    if n > target:
        start = int(rng.integers(0, n - target + 1))
        return AudioClip(clip.samples[start:start + target])
    left = int(rng.integers(0, target - n + 1))
    out = np.zeros(target, dtype=np.float32)
    out[left:left + n] = clip.samples
    return AudioClip(out)


def noise_scale(signal: np.ndarray, noise: np.ndarray, snr_db: float) -> float:
    """Gain that puts ``noise`` at ``snr_db`` below ``signal`` (mean-square powers)."""
    p_signal = float(np.mean(np.square(signal, dtype=np.float64)))
    p_noise = float(np.mean(np.square(noise, dtype=np.float64)))
    if p_signal <= 0:
        raise ValueError("signal has zero power")
    if p_noise <= 0:
        raise ValueError("noise has zero power")
    return float(np.sqrt(p_signal / (p_noise * 10.0 ** (snr_db / 10.0))))


def mix_noise_at_snr(signal: AudioClip, noise: AudioClip, snr_db: float,
                     rng: np.random.Generator) -> AudioClip:
    """Add a random aligned segment of ``noise`` to ``signal`` at ``snr_db``.

    The result is not clipped, so the SNR holds exactly even for hot mixes.
    """
    n = len(signal)
    if len(noise) < n:
        raise ValueError(f"noise ({len(noise)} samples) shorter than signal ({n})")
    start = int(rng.integers(0, len(noise) - n + 1))
    segment = noise.samples[start:start + n].astype(np.float64)
    alpha = noise_scale(signal.samples, segment, snr_db)
    return AudioClip(signal.samples.astype(np.float64) + alpha * segment)


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: FrontendConfig) -> np.ndarray:
    """Triangular HTK-mel filters evaluated at the FFT bin centre frequencies.

    Returns an (n_mels, fft_size // 2 + 1) matrix with unit peak height.
    """
    bin_hz = np.arange(cfg.fft_size // 2 + 1) * SAMPLE_RATE / cfg.fft_size
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_hz[None, :] - lo) / (mid - lo)
    falling = (hi - bin_hz[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def log_mel_frames(clip: AudioClip, cfg: FrontendConfig) -> np.ndarray:
    """Log mel energies, shape (n_frames, n_mels), float64."""
    x = clip.samples.astype(np.float64)
    x = np.concatenate([x[:1], x[1:] - cfg.preemphasis * x[:-1]])
    half = cfg.win_length // 2
    x = np.pad(x, half, mode="reflect")
    n_frames = 1 + (len(x) - cfg.win_length) // cfg.hop_length
    idx = np.arange(cfg.win_length)[None, :] + cfg.hop_length * np.arange(n_frames)[:, None]
    # periodic Hann
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(cfg.win_length) / cfg.win_length)
    spec = np.fft.rfft(x[idx] * window, n=cfg.fft_size, axis=1)
    power = spec.real ** 2 + spec.imag ** 2
    mel = power @ mel_filterbank(cfg).T
    return np.log(np.maximum(mel, cfg.log_floor))


def compute_mfcc(clip: AudioClip, cfg: FrontendConfig | None = None) -> np.ndarray:
    """MFCC matrix of a 1 s clip, rows = coefficient, columns = frame.

    Frames are centred (reflect padding of half a window on both sides), so a
    16000-sample clip at a 200-sample hop gives exactly 81 frames.
    """
    cfg = cfg or FrontendConfig()
    if len(clip) != cfg.clip_samples:
        raise ValueError(f"expected {cfg.clip_samples} samples, got {len(clip)}")
    logmel = log_mel_frames(clip, cfg)
    coeffs = dct(logmel, type=2, norm="ortho", axis=1)[:, :cfg.n_mfcc]
    return np.ascontiguousarray(coeffs.T, dtype=np.float32)


def apply_cmvn(feat: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Per-coefficient mean/variance normalization over the time axis."""
    x = np.asarray(feat, dtype=np.float64)
    mean = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    return ((x - mean) / np.sqrt(var + eps)).astype(np.float32)


def featurize(clip: AudioClip, cfg: FrontendConfig | None = None) -> np.ndarray:
    """compute_mfcc followed by apply_cmvn: the encoder's input matrix."""
    cfg = cfg or FrontendConfig()
    return apply_cmvn(compute_mfcc(clip, cfg), cfg.cmvn_eps)
