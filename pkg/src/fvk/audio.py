"""Audio ingestion, spectrogram frontends and Griffin-Lim reconstruction.

All functions here are pure; everything is safe to call concurrently.
"""

import csv
import wave
from dataclasses import dataclass, field

import numpy as np

LOG_FLOOR = float(np.log(1e-5))


class AudioError(ValueError):
    pass


@dataclass
class AudioClip:
    """Mono waveform with samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.clip(np.asarray(self.samples, dtype=np.float64), -1.0, 1.0)
        if self.samples.size == 0:
            raise AudioError("empty audio clip")
        if self.sample_rate <= 0:
            raise AudioError(f"sample rate must be positive, got {self.sample_rate}")

    @property
    def duration(self):
        return self.samples.size / self.sample_rate


@dataclass
class FrontendConfig:
    sample_rate: int = 16000
    num_bands: int = 80
    hop_length: int = 400
    window_size: int = 1600
    fft_size: int = 0            # 0: next power of two >= window_size
    log_floor: float = LOG_FLOOR

    def __post_init__(self):
        if self.fft_size == 0:
            n = 1
            while n < self.window_size:
                n *= 2
            self.fft_size = n
        if self.window_size > self.fft_size:
            raise AudioError(
                f"window_size {self.window_size} exceeds fft_size {self.fft_size}"
            )


def encoder_frontend():
    """Frontend used by the speaker encoder (and classifier)."""
    return FrontendConfig(hop_length=400, window_size=1600)


def generative_frontend():
    """Higher time-resolution frontend for the generative model."""
    return FrontendConfig(hop_length=300, window_size=1200)


def verification_frontend():
    """Frontend of the speaker verification model."""
    return FrontendConfig(hop_length=400, window_size=1600)


@dataclass
class MelSpectrogram:
    """T x F matrix of floored log-mel energies."""

    frames: np.ndarray
    hop_length: int
    window_size: int
    num_bands: int = field(default=0)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2:
            raise AudioError(f"mel frames must be 2-D, got {self.frames.shape}")
        if self.num_bands == 0:
            self.num_bands = self.frames.shape[1]

    @property
    def num_frames(self):
        return self.frames.shape[0]


# ---------------------------------------------------------------------------
# WAV I/O (RIFF PCM16 mono)

def load_wav(path) -> AudioClip:
    try:
        with wave.open(str(path), "rb") as fh:
            if fh.getnchannels() != 1:
                raise AudioError(f"{path}: expected mono, got {fh.getnchannels()} channels")
            if fh.getsampwidth() != 2 or fh.getcomptype() != "NONE":
                raise AudioError(f"{path}: expected uncompressed PCM16")
            n = fh.getnframes()
            raw = fh.readframes(n)
            if len(raw) < 2 * n:
                raise AudioError(f"{path}: truncated payload ({len(raw)} of {2 * n} bytes)")
            rate = fh.getframerate()
    except wave.Error as exc:
        raise AudioError(f"{path}: not a readable RIFF/WAVE file ({exc})") from exc
    except EOFError as exc:
        raise AudioError(f"{path}: truncated WAV header") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(samples, rate)


def write_wav(path, clip: AudioClip):
    pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(clip.sample_rate)
        fh.writeframes(pcm.tobytes())


# ---------------------------------------------------------------------------
# resampling

def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Linear-interpolation resampling; output length = round(n * target / source)."""
    if target_rate <= 0:
        raise AudioError("target_rate must be positive")
    if target_rate == clip.sample_rate:
        return AudioClip(clip.samples.copy(), clip.sample_rate)
    n = clip.samples.size
    m = int(round(n * target_rate / clip.sample_rate))
    pos = np.arange(m) * (clip.sample_rate / target_rate)
    out = np.interp(pos, np.arange(n), clip.samples)
    return AudioClip(out, target_rate)


# ---------------------------------------------------------------------------
# STFT / mel

def hann_window(n):
    # periodic form, the usual analysis window for overlapping STFT frames
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_count(num_samples, cfg: FrontendConfig):
    if num_samples < cfg.window_size:
        raise AudioError(
            f"clip of {num_samples} samples is shorter than the "
            f"{cfg.window_size}-sample analysis window"
        )
    return (num_samples - cfg.window_size) // cfg.hop_length + 1


def stft(samples, cfg: FrontendConfig):
    """Hann-windowed complex STFT, shape (frames, fft_size // 2 + 1)."""
    t = frame_count(samples.size, cfg)
    idx = np.arange(cfg.window_size)[None, :] + cfg.hop_length * np.arange(t)[:, None]
    frames = samples[idx] * hann_window(cfg.window_size)[None, :]
    return np.fft.rfft(frames, n=cfg.fft_size, axis=1)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: FrontendConfig):
    """Triangular mel filters from 0 Hz to Nyquist, shape (num_bands, fft bins)."""
    edges_mel = np.linspace(0.0, hz_to_mel(cfg.sample_rate / 2.0), cfg.num_bands + 2)
    edges_hz = mel_to_hz(edges_mel)
    freqs = np.fft.rfftfreq(cfg.fft_size, d=1.0 / cfg.sample_rate)
    lower, center, upper = edges_hz[:-2, None], edges_hz[1:-1, None], edges_hz[2:, None]
    up = (freqs[None, :] - lower) / np.maximum(center - lower, 1e-12)
    down = (upper - freqs[None, :]) / np.maximum(upper - center, 1e-12)
    return np.maximum(0.0, np.minimum(up, down))


def band_centers_hz(cfg: FrontendConfig):
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(cfg.sample_rate / 2.0), cfg.num_bands + 2))
    return edges[1:-1]


def mel_spectrogram(clip: AudioClip, cfg: FrontendConfig) -> MelSpectrogram:
    """Floored natural-log mel energies of the linear-magnitude STFT."""
    if clip.sample_rate != cfg.sample_rate:
        raise AudioError(
            f"clip rate {clip.sample_rate} != frontend rate {cfg.sample_rate}; resample first"
        )
    mag = np.abs(stft(clip.samples, cfg))
    mel = mag @ mel_filterbank(cfg).T
    frames = np.log(np.maximum(mel, np.exp(cfg.log_floor)))
    return MelSpectrogram(frames, cfg.hop_length, cfg.window_size, cfg.num_bands)


def mel_to_linear(mel: MelSpectrogram, cfg: FrontendConfig):
    """Approximate linear-magnitude spectrogram from floored log-mel frames."""
    fb = mel_filterbank(cfg)
    energies = np.exp(mel.frames.astype(np.float64))
    weights = fb.sum(axis=0)
    mag = energies @ fb / np.maximum(weights, 1e-8)[None, :]
    return np.maximum(mag, 0.0)


# ---------------------------------------------------------------------------
# Griffin-Lim

def _istft_least_squares(spec, cfg: FrontendConfig):
    from . import _kernels

    t = spec.shape[0]
    win = hann_window(cfg.window_size)
    frames = np.fft.irfft(spec, n=cfg.fft_size, axis=1)[:, : cfg.window_size]
    n = (t - 1) * cfg.hop_length + cfg.window_size
    num = _kernels.overlap_add(np.ascontiguousarray(frames * win), cfg.hop_length, n)
    den = _kernels.overlap_add(
        np.ascontiguousarray(np.tile(win * win, (t, 1))), cfg.hop_length, n
    )
    # samples with negligible window coverage are left at zero: dividing by a
    # vanishing coverage turns spectral leakage into edge spikes, and the
    # zeroed set is iteration-independent so the distance descent still holds
    covered = den > 1e-6 * den.max()
    out = np.zeros(n)
    out[covered] = num[covered] / den[covered]
    return out


def griffin_lim(mag, cfg: FrontendConfig, iterations=60, return_trace=False):
    """Iterative phase reconstruction of a linear-magnitude spectrogram.

    Phase starts at zero, so the result is deterministic. The spectral
    distance || |STFT(x_k)| - mag || is non-increasing across iterations.
    """
    mag = np.asarray(mag, dtype=np.float64)
    if iterations < 1:
        raise AudioError("iterations must be >= 1")
    if np.any(mag < 0):
        raise AudioError("magnitude spectrogram must be non-negative")
    spec = mag.astype(np.complex128)  # zero phase
    trace = []
    x = None
    for _ in range(iterations):
        x = _istft_least_squares(spec, cfg)
        rebuilt = stft(x, cfg)
        if return_trace:
            trace.append(float(np.linalg.norm(np.abs(rebuilt) - mag)))
        phase = np.exp(1j * np.angle(rebuilt))
        spec = mag * phase
    peak = np.max(np.abs(x))
    if peak > 1.0:
        x = x / peak
    clip = AudioClip(x, cfg.sample_rate)
    return (clip, trace) if return_trace else clip


def invert_mel(mel: MelSpectrogram, cfg: FrontendConfig, iterations=60) -> AudioClip:
    """Log-mel frames back to a waveform via filterbank inversion + Griffin-Lim."""
    return griffin_lim(mel_to_linear(mel, cfg), cfg, iterations)


# ---------------------------------------------------------------------------
# export

def spectrogram_to_csv(mel: MelSpectrogram, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in mel.frames:
            writer.writerow([f"{v:.6f}" for v in row])


def spectrogram_from_csv(path, hop_length, window_size) -> MelSpectrogram:
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    return MelSpectrogram(np.asarray(rows), hop_length, window_size)
