"""Signal frontend: framing, magnitude features, and waveform reconstruction.

Audio is 16 kHz mono throughout. Analysis uses 256-sample (16 ms) frames
with a 128-sample hop (50% overlap) and a periodic Hann window, zero-padded
to a 512-point FFT. The feature kept per frame is the magnitude of bins
0..255; the bin-256 (Nyquist) magnitude is discarded and restored as zero on
synthesis, while all 257 phases are retained for reconstruction.

Synthesis overlap-adds the windowed frames and divides by the summed window,
which is exactly 1 in the interior for this Hann/50% configuration, so
interior samples of band-limited signals round-trip. The first and last
half-frames lean on partial overlap and are only approximately recovered.

All functions are pure and safe to call from multiple threads.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError

__all__ = [
    "FRAME_LEN",
    "HOP",
    "FFT_SIZE",
    "N_FEATURES",
    "SAMPLE_RATE",
    "Waveform",
    "FeatureSequence",
    "covered_length",
    "features_of",
    "frame_and_window",
    "frame_count",
    "hann_window",
    "read_wav",
    "reconstruct",
    "stft_magnitude",
    "write_wav",
]

SAMPLE_RATE = 16000
FRAME_LEN = 256
HOP = 128
FFT_SIZE = 512
N_FEATURES = 256


@dataclass
class Waveform:
    """A finite mono signal with its sample rate."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 1:
            raise DimensionError(f"Waveform: samples must be 1-D, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise ConfigError(f"Waveform: sample rate must be positive, got {self.sample_rate}")
        if not np.isfinite(self.samples).all():
            raise ValueError("Waveform: samples contain non-finite values")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate


@dataclass
class FeatureSequence:
    """Per-frame magnitude features plus the phases needed for synthesis."""

    magnitudes: np.ndarray  # (T, N_FEATURES), non-negative
    phases: np.ndarray | None = None  # (T, FFT_SIZE // 2 + 1)
    frame_len: int = FRAME_LEN
    hop: int = HOP
    fft_size: int = FFT_SIZE

    def __post_init__(self):
        self.magnitudes = np.asarray(self.magnitudes)
        if self.magnitudes.ndim != 2:
            raise DimensionError(
                f"FeatureSequence: magnitudes must be 2-D, got shape {self.magnitudes.shape}"
            )
        if self.magnitudes.shape[0] < 1:
            raise DimensionError("FeatureSequence: need at least one frame")
        if self.magnitudes.shape[1] != self.fft_size // 2:
            raise DimensionError(
                f"FeatureSequence: magnitudes must have {self.fft_size // 2} bins,"
                f" got {self.magnitudes.shape[1]}"
            )
        if self.hop * 2 != self.frame_len:
            raise ConfigError(
                f"FeatureSequence: hop {self.hop} must be half the frame length {self.frame_len}"
            )
        if self.magnitudes.min(initial=0.0) < 0.0:
            raise ValueError("FeatureSequence: magnitudes must be non-negative")
        if self.phases is not None:
            self.phases = np.asarray(self.phases)
            want = (self.magnitudes.shape[0], self.fft_size // 2 + 1)
            if self.phases.shape != want:
                raise DimensionError(
                    f"FeatureSequence: phases shape {self.phases.shape}, expected {want}"
                )

    @property
    def n_frames(self) -> int:
        return self.magnitudes.shape[0]


def hann_window(n: int = FRAME_LEN) -> np.ndarray:
    """Periodic Hann window of length n."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_count(n_samples: int, frame_len: int = FRAME_LEN, hop: int = HOP) -> int:
    if n_samples < frame_len:
        raise DimensionError(
            f"signal of {n_samples} samples is shorter than one {frame_len}-sample frame"
        )
    return (n_samples - frame_len) // hop + 1


def covered_length(n_frames: int, frame_len: int = FRAME_LEN, hop: int = HOP) -> int:
    """Number of samples spanned by n_frames overlapping frames."""
    return (n_frames - 1) * hop + frame_len


def frame_and_window(w: Waveform) -> np.ndarray:
    """Slice a waveform into half-overlapping windowed frames, shape (T, 256).

    Samples past the last whole frame are dropped. Raises if the signal is
    shorter than one frame.
    """
    x = np.asarray(w.samples, dtype=np.float64)
    n = frame_count(x.shape[0])
    idx = np.arange(FRAME_LEN)[np.newaxis, :] + HOP * np.arange(n)[:, np.newaxis]
    return x[idx] * hann_window()[np.newaxis, :]


def stft_magnitude(framed: np.ndarray) -> FeatureSequence:
    """Magnitude features (and phases) of windowed frames.

    ``framed`` is (T, 256) as produced by :func:`frame_and_window`. Each
    frame is zero-padded to 512 points; magnitudes of bins 0..255 become the
    features and all 257 phases are kept for later synthesis.
    """
    framed = np.asarray(framed)
    if framed.ndim != 2 or framed.shape[1] != FRAME_LEN:
        raise DimensionError(
            f"stft_magnitude: expected (T, {FRAME_LEN}) frames, got shape {framed.shape}"
        )
    spectra = np.fft.rfft(framed, n=FFT_SIZE, axis=1)
    magnitudes = np.abs(spectra[:, :N_FEATURES])
    phases = np.angle(spectra)
    return FeatureSequence(magnitudes=magnitudes, phases=phases)


def features_of(w: Waveform) -> FeatureSequence:
    """Full analysis path: frame, window, and transform a waveform."""
    return stft_magnitude(frame_and_window(w))


def reconstruct(fs: FeatureSequence) -> Waveform:
    """Overlap-add synthesis from magnitudes and stored phases.

    The discarded Nyquist magnitude is restored as zero. Output length is
    ``(T - 1) * hop + frame_len``; interior samples of band-limited signals
    match the analyzed waveform, edges are tapered by partial overlap.
    """
    if fs.phases is None:
        raise ValueError("reconstruct: feature sequence has no phases")
    t_frames = fs.n_frames
    n_bins = fs.fft_size // 2 + 1
    spectra = np.zeros((t_frames, n_bins), dtype=np.complex128)
    spectra[:, :N_FEATURES] = fs.magnitudes
    spectra *= np.exp(1j * fs.phases)
    frames = np.fft.irfft(spectra, n=fs.fft_size, axis=1)[:, : fs.frame_len]

    n_out = covered_length(t_frames, fs.frame_len, fs.hop)
    out = np.zeros(n_out)
    wsum = np.zeros(n_out)
    win = hann_window(fs.frame_len)
    for t in range(t_frames):
        start = t * fs.hop
        out[start : start + fs.frame_len] += frames[t]
        wsum[start : start + fs.frame_len] += win
    good = wsum > 1e-8
    out[good] /= wsum[good]
    return Waveform(out)


# ---------------------------------------------------------------------------
# WAV I/O (16-bit PCM mono, 16 kHz only)
# ---------------------------------------------------------------------------


def read_wav(path) -> Waveform:
    """Read a 16 kHz mono 16-bit PCM WAV file into float samples in [-1, 1]."""
    try:
        fh_ctx = wave.open(str(path), "rb")
    except wave.Error as exc:
        raise ConfigError(f"{path}: not a readable WAV file ({exc})") from exc
    with fh_ctx as fh:
        channels = fh.getnchannels()
        width = fh.getsampwidth()
        rate = fh.getframerate()
        n = fh.getnframes()
        if channels != 1:
            raise ConfigError(f"{path}: expected mono audio, got {channels} channels")
        if width != 2:
            raise ConfigError(f"{path}: expected 16-bit PCM, got sample width {width}")
        if rate != SAMPLE_RATE:
            raise ConfigError(f"{path}: expected {SAMPLE_RATE} Hz audio, got {rate} Hz")
        raw = fh.readframes(n)
    ints = np.frombuffer(raw, dtype="<i2")
    return Waveform(ints.astype(np.float64) / 32767.0, sample_rate=rate)


def write_wav(path, w: Waveform) -> None:
    """Write float samples to 16-bit PCM, clipping to [-1, 1]."""
    if w.sample_rate != SAMPLE_RATE:
        raise ConfigError(f"write_wav: only {SAMPLE_RATE} Hz audio is supported, got {w.sample_rate}")
    clipped = np.clip(w.samples, -1.0, 1.0)
    ints = np.round(clipped * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate)
        fh.writeframes(ints.tobytes())
