"""Spectrogram image feature (SIF) extraction.

Pipeline: frame the waveform, Hamming-window each frame, magnitude DFT,
down-sample in frequency by block averaging, de-noise each frequency row
by subtracting its minimum over time, optionally append a short-time
energy row. All arithmetic is float64 so finite-difference gradient
checks downstream stay meaningful.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

SAMPLE_RATE = 16000        # Hz
WINDOW_LEN = 1600          # 100 ms at 16 kHz
HOP_LEN = 160              # 10 ms at 16 kHz
FFT_SIZE = 2048
N_FREQ = 52

SIF_MAGIC = b"SIF1"


class SifFormatError(Exception):
    """Raised when a .sif file is malformed."""


@dataclass
class Waveform:
    """Mono audio signal, amplitudes nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class FrameConfig:
    """Framing parameters: analysis window, hop, and FFT length (samples)."""

    window_len_samples: int = WINDOW_LEN
    hop_samples: int = HOP_LEN
    fft_size: int = FFT_SIZE

    def __post_init__(self):
        if not (0 < self.window_len_samples <= self.fft_size):
            raise ValueError(
                f"need 0 < window_len ({self.window_len_samples}) <= fft_size ({self.fft_size})"
            )
        if self.hop_samples <= 0:
            raise ValueError(f"hop_samples must be positive, got {self.hop_samples}")
        if self.fft_size & (self.fft_size - 1) != 0:
            raise ValueError(f"fft_size must be a power of two, got {self.fft_size}")

    @property
    def frame_len_samples(self) -> int:
        # frame length after zero-padding to the FFT size
        return self.fft_size


@dataclass
class Spectrogram:
    """Non-negative magnitude spectrogram; rows = frequency bins, cols = frames."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.size == 0:
            raise ValueError(f"spectrogram must be a non-empty 2-d matrix, got shape {self.values.shape}")

    @property
    def n_bins(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


@dataclass
class Sif:
    """Spectrogram image feature: de-noised frequency rows plus optional energy row."""

    values: np.ndarray
    n_freq: int
    has_energy: bool

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        expected_rows = self.n_freq + (1 if self.has_energy else 0)
        if self.values.shape[0] != expected_rows:
            raise ValueError(
                f"expected {expected_rows} rows for n_freq={self.n_freq}, "
                f"has_energy={self.has_energy}; got {self.values.shape[0]}"
            )

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def hamming_window(length: int) -> np.ndarray:
    """Symmetric Hamming window 0.54 - 0.46*cos(2*pi*n/(length-1)).

    length == 1 returns [0.08], the n=0 endpoint value of the formula.
    """
    if length < 1:
        raise ValueError(f"window length must be >= 1, got {length}")
    if length == 1:
        return np.array([0.08])
    n = np.arange(length, dtype=np.float64)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * n / (length - 1))


def dft_magnitude(frame: np.ndarray, fft_size: int) -> np.ndarray:
    """Magnitude spectrum |X(f)| for f = 0 .. fft_size/2 - 1.

    The frame is zero-padded to fft_size. Computed with an FFT but equal,
    within rounding, to the naive DFT sum.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 1:
        raise ValueError(f"frame must be 1-d, got shape {frame.shape}")
    if len(frame) > fft_size:
        raise ValueError(f"frame length {len(frame)} exceeds fft_size {fft_size}")
    spectrum = np.fft.rfft(frame, n=fft_size)
    return np.abs(spectrum[: fft_size // 2])


def spectrogram(wave: Waveform, cfg: FrameConfig = FrameConfig()) -> Spectrogram:
    """Short-time magnitude spectrogram.

    Frames start at hop intervals; the final partial frame is dropped.
    Each frame is Hamming-windowed over window_len_samples and zero-padded
    to fft_size. n_frames = 1 + floor((len - window_len) / hop).
    """
    samples = wave.samples
    if len(samples) < cfg.window_len_samples:
        raise ValueError(
            f"waveform has {len(samples)} samples, shorter than one "
            f"{cfg.window_len_samples}-sample window"
        )
    frames = np.lib.stride_tricks.sliding_window_view(samples, cfg.window_len_samples)
    frames = frames[:: cfg.hop_samples]  # [n_frames, window_len]
    windowed = frames * hamming_window(cfg.window_len_samples)
    spectrum = np.fft.rfft(windowed, n=cfg.fft_size, axis=1)
    mags = np.abs(spectrum[:, : cfg.fft_size // 2])
    return Spectrogram(mags.T)


def downsample_freq(spec: Spectrogram, n_out_bins: int) -> Spectrogram:
    """Down-sample in frequency by averaging blocks of W = floor(n_bins / n_out_bins).

    Input bins >= n_out_bins * W (the remainder above the covered range)
    are discarded.
    """
    if n_out_bins == 0:
        raise ValueError("n_out_bins must be >= 1")
    if n_out_bins > spec.n_bins:
        raise ValueError(f"n_out_bins {n_out_bins} exceeds available bins {spec.n_bins}")
    w = spec.n_bins // n_out_bins
    kept = spec.values[: n_out_bins * w, :]
    out = kept.reshape(n_out_bins, w, spec.n_frames).mean(axis=1)
    return Spectrogram(out)


def denoise(spec: Spectrogram) -> Spectrogram:
    """Subtract each frequency row's minimum over time; row minima become exactly 0."""
    mins = spec.values.min(axis=1, keepdims=True)
    return Spectrogram(spec.values - mins)


def extract_sif(
    wave: Waveform,
    cfg: FrameConfig = FrameConfig(),
    n_freq: int = N_FREQ,
    with_energy: bool = False,
    energy_scale: float = 1.0,
) -> Sif:
    """Full SIF pipeline: spectrogram -> frequency down-sampling -> de-noising.

    With with_energy, a row holding energy_scale * (column sum of the
    de-noised rows) is appended below the frequency rows.
    """
    spec = denoise(downsample_freq(spectrogram(wave, cfg), n_freq))
    values = spec.values
    if with_energy:
        energy = energy_scale * values.sum(axis=0, keepdims=True)
        values = np.vstack([values, energy])
    return Sif(values, n_freq=n_freq, has_energy=with_energy)


def write_sif(sif: Sif, path) -> None:
    """Write a .sif file: magic, u32 rows, u32 cols, u8 energy flag, f64 column-major data."""
    header = SIF_MAGIC + struct.pack(
        "<IIB", sif.n_rows, sif.n_frames, 1 if sif.has_energy else 0
    )
    body = np.ascontiguousarray(sif.values.T, dtype="<f8").tobytes()
    with open(path, "wb") as f:
        f.write(header + body)


def read_sif(path) -> Sif:
    """Read a .sif file written by write_sif; round-trips bit-exactly."""
    with open(path, "rb") as f:
        raw = f.read()
    header_len = len(SIF_MAGIC) + 9
    if len(raw) < header_len:
        raise SifFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    if raw[:4] != SIF_MAGIC:
        raise SifFormatError(f"{path}: bad magic {raw[:4]!r}")
    n_rows, n_cols, energy_flag = struct.unpack("<IIB", raw[4:header_len])
    if energy_flag not in (0, 1):
        raise SifFormatError(f"{path}: invalid energy flag {energy_flag}")
    expected = header_len + n_rows * n_cols * 8
    if len(raw) != expected:
        raise SifFormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw[header_len:], dtype="<f8")
    values = data.reshape((n_rows, n_cols), order="F").astype(np.float64)
    has_energy = energy_flag == 1
    return Sif(values, n_freq=n_rows - (1 if has_energy else 0), has_energy=has_energy)
