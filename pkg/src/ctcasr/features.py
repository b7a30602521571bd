"""Audio loading and the log-spectrogram front end.

The whole pipeline runs at 8 kHz: 20 ms Hamming windows (160 samples)
every 10 ms (80 samples), a 160-point FFT keeping the 81 non-negative
frequency bins, ln(|X| + 1e-10), then per-utterance mean/variance
normalization. WAV files are parsed directly so format problems can be
reported with a byte offset instead of whatever a codec library says.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numerics
from .errors import DataError, FormatError

SAMPLE_RATE = 8000
FRAME_WIDTH_MS = 20
FRAME_SHIFT_MS = 10
FFT_SIZE = SAMPLE_RATE * FRAME_WIDTH_MS // 1000  # 160 samples per window
HOP = SAMPLE_RATE * FRAME_SHIFT_MS // 1000  # 80 samples per shift
BINS = FFT_SIZE // 2 + 1  # 81
LOG_FLOOR = 1e-10
STD_GUARD = 1e-5

_CACHE_HEADER = struct.Struct("<II")


@dataclass
class AudioClip:
    samples: np.ndarray  # float64 mono in [-1, 1]
    sample_rate: int

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class Spectrogram:
    values: np.ndarray  # (frames, BINS), normalized
    frame_width_ms: int = FRAME_WIDTH_MS
    frame_shift_ms: int = FRAME_SHIFT_MS

    @property
    def frames(self) -> int:
        return self.values.shape[0]


def frame_count(n_samples: int) -> int:
    """Number of full analysis windows in an n-sample clip."""
    if n_samples < FFT_SIZE:
        raise DataError(f"clip of {n_samples} samples is shorter than one {FFT_SIZE}-sample window")
    return (n_samples - FFT_SIZE) // HOP + 1


def _parse_fmt(body: bytes, offset: int):
    if len(body) < 16:
        raise FormatError("fmt chunk shorter than 16 bytes", offset=offset)
    codec, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", body)
    if codec != 1:
        raise FormatError(f"non-PCM codec {codec}; only 16-bit PCM is supported", offset=offset)
    if bits != 16:
        raise FormatError(f"{bits}-bit PCM is not supported; expected 16", offset=offset)
    if channels < 1:
        raise FormatError("fmt chunk declares zero channels", offset=offset)
    return channels, rate


def load_wav(path) -> AudioClip:
    """Read a 16-bit PCM WAV file; multi-channel input is averaged to mono."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF":
        raise FormatError(f"{path}: missing RIFF header", offset=0)
    if raw[8:12] != b"WAVE":
        raise FormatError(f"{path}: RIFF form type is not WAVE", offset=8)

    fmt = None
    data = None
    data_offset = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos : pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body_start = pos + 8
        if body_start + size > len(raw):
            raise FormatError(f"{path}: truncated {chunk_id!r} chunk", offset=pos)
        if chunk_id == b"fmt ":
            fmt = _parse_fmt(raw[body_start : body_start + size], body_start)
        elif chunk_id == b"data" and data is None:
            data = raw[body_start : body_start + size]
            data_offset = body_start
        pos = body_start + size + (size & 1)  # chunks are 2-byte aligned
    if pos != len(raw):
        raise FormatError(f"{path}: dangling bytes after last chunk", offset=pos)

    if fmt is None:
        raise FormatError(f"{path}: no fmt chunk", offset=12)
    if data is None:
        raise FormatError(f"{path}: no data chunk", offset=12)
    if len(data) == 0:
        raise FormatError(f"{path}: zero-length data chunk", offset=data_offset)
    channels, rate = fmt
    frame_bytes = 2 * channels
    if len(data) % frame_bytes:
        raise FormatError(
            f"{path}: data chunk is not a whole number of frames",
            offset=data_offset + len(data) - (len(data) % frame_bytes),
        )
    samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    if channels > 1:
        samples = samples.reshape(-1, channels).mean(axis=1)
    return AudioClip(samples=samples, sample_rate=rate)


def wav_duration(path) -> float:
    """Duration in seconds from chunk headers alone; audio data is never read."""
    with open(path, "rb") as f:
        head = f.read(12)
        if len(head) < 12 or head[:4] != b"RIFF":
            raise FormatError(f"{path}: missing RIFF header", offset=0)
        if head[8:12] != b"WAVE":
            raise FormatError(f"{path}: RIFF form type is not WAVE", offset=8)
        fmt = None
        data_size = None
        pos = 12
        while True:
            hdr = f.read(8)
            if not hdr:
                break
            if len(hdr) < 8:
                raise FormatError(f"{path}: truncated chunk header", offset=pos)
            chunk_id = hdr[:4]
            (size,) = struct.unpack("<I", hdr[4:])
            if chunk_id == b"fmt ":
                fmt = _parse_fmt(f.read(size), pos + 8)
                if size & 1:
                    f.seek(1, 1)
            else:
                if chunk_id == b"data" and data_size is None:
                    data_size = size
                f.seek(size + (size & 1), 1)
            pos += 8 + size + (size & 1)
    if fmt is None or data_size is None:
        raise FormatError(f"{path}: missing fmt or data chunk", offset=12)
    channels, rate = fmt
    return (data_size // (2 * channels)) / rate


def resample(clip: AudioClip, rate: int = SAMPLE_RATE) -> AudioClip:
    """Linear-interpolation resampling; duration is preserved to within
    one sample period. Same-rate input is returned as-is."""
    if rate < 1:
        raise DataError(f"target rate must be positive, got {rate}")
    if clip.sample_rate == rate:
        return clip
    n_in = len(clip.samples)
    n_out = max(1, round(n_in * rate / clip.sample_rate))
    positions = np.arange(n_out) * (clip.sample_rate / rate)
    out = np.interp(positions, np.arange(n_in), clip.samples)
    return AudioClip(samples=out, sample_rate=rate)


def log_spectrogram(clip: AudioClip) -> Spectrogram:
    """8 kHz clip -> (T', 81) normalized log-magnitude spectrogram."""
    if clip.sample_rate != SAMPLE_RATE:
        raise DataError(
            f"log_spectrogram expects {SAMPLE_RATE} Hz input, got {clip.sample_rate} Hz; resample first"
        )
    n = len(clip.samples)
    t_frames = frame_count(n)
    idx = np.arange(t_frames)[:, None] * HOP + np.arange(FFT_SIZE)[None, :]
    frames = clip.samples[idx] * np.hamming(FFT_SIZE)
    mags = np.abs(np.fft.rfft(frames, n=FFT_SIZE, axis=1))
    values = np.log(mags + LOG_FLOOR)
    values = values - values.mean()
    std = float(values.std())
    if std < STD_GUARD:
        # constant input (e.g. digital silence): rounding residue divided
        # by the guard would be noise, so the output is exactly zero
        values = np.zeros_like(values)
    else:
        values = values / std
    return Spectrogram(values=values.astype(numerics.get_dtype()))


def write_cache(spec: Spectrogram, path) -> None:
    """Binary feature record: two little-endian uint32 (frames, bins)
    followed by row-major little-endian float32 values."""
    values = np.ascontiguousarray(spec.values, dtype="<f4")
    with open(path, "wb") as f:
        f.write(_CACHE_HEADER.pack(values.shape[0], values.shape[1]))
        f.write(values.tobytes())


def read_cache(path) -> Spectrogram:
    raw = Path(path).read_bytes()
    if len(raw) < _CACHE_HEADER.size:
        raise FormatError(f"{path}: feature record shorter than its header", offset=0)
    frames, bins = _CACHE_HEADER.unpack_from(raw)
    if bins != BINS:
        raise FormatError(f"{path}: feature record has {bins} bins, expected {BINS}", offset=4)
    expected = _CACHE_HEADER.size + 4 * frames * bins
    if len(raw) != expected:
        raise FormatError(
            f"{path}: feature record holds {len(raw) - _CACHE_HEADER.size} payload bytes, "
            f"expected {expected - _CACHE_HEADER.size}",
            offset=min(len(raw), expected),
        )
    values = np.frombuffer(raw, dtype="<f4", offset=_CACHE_HEADER.size).reshape(frames, bins)
    return Spectrogram(values=values.astype(numerics.get_dtype()))


def extract_features(path, cache_dir=None) -> Spectrogram:
    """load -> resample to 8 kHz -> log spectrogram, with an optional disk cache
    keyed by a hash of the absolute source path."""
    if cache_dir is not None:
        cache_path = Path(cache_dir) / cache_name(path)
        if cache_path.exists():
            return read_cache(cache_path)
    spec = log_spectrogram(resample(load_wav(path)))
    if cache_dir is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        write_cache(spec, cache_path)
    return spec


def cache_name(path) -> str:
    import hashlib

    digest = hashlib.sha1(str(Path(path).resolve()).encode("utf-8")).hexdigest()
    return f"{digest}.feat"
