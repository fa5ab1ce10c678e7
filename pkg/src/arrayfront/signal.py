"""Audio containers, WAV file I/O, and invertible STFT analysis/synthesis.

All internal arithmetic runs in double precision; file encodings are only
applied at the I/O boundary. The STFT uses centered frames: the input is
reflect-padded by half a window on each side so that frame ``t`` is centered
at sample ``t * hop``, which keeps the frame-to-time mapping exact when
converting segment annotations.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    ClippingWarning,
    MalformedHeaderError,
    TruncatedDataError,
    UnsupportedEncodingError,
    WavError,
)

_WINDOW_KINDS = ("sqrt_hann", "hann", "boxcar")


def _window_array(kind: str, length: int) -> np.ndarray:
    if kind not in _WINDOW_KINDS:
        raise ValueError(f"unknown window {kind!r}, expected one of {_WINDOW_KINDS}")
    if kind == "boxcar":
        return np.ones(length)
    n = np.arange(length)
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)  # periodic
    return np.sqrt(hann) if kind == "sqrt_hann" else hann


@dataclass(frozen=True)
class MultichannelWave:
    """Synchronized multi-channel PCM audio.

    ``samples`` is a (channels, n_samples) float array; all channels share
    one length and one sample rate. Amplitudes are nominally in [-1, 1].
    """

    sample_rate: int
    samples: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 2:
            raise ValueError("samples must be a (channels, n_samples) array")
        if samples.shape[0] < 1:
            raise ValueError("need at least one channel")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be positive")
        if samples.size and not np.all(np.isfinite(samples)):
            raise ValueError("samples contain NaN or Inf")
        object.__setattr__(self, "sample_rate", int(self.sample_rate))
        object.__setattr__(self, "samples", samples)

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate

    def channel(self, index: int) -> "MultichannelWave":
        """Extract one channel as a mono wave."""
        return MultichannelWave(self.sample_rate, self.samples[index : index + 1])

    def subset(self, indices) -> "MultichannelWave":
        """Restrict to the given channel indices, preserving their order."""
        idx = list(indices)
        if not idx:
            raise ValueError("channel subset must not be empty")
        return MultichannelWave(self.sample_rate, self.samples[idx])


@dataclass(frozen=True)
class StftConfig:
    """Analysis/synthesis framing parameters.

    The same taper is used for analysis and synthesis, so the overlap-added
    product window must be constant (COLA) for the chosen hop; this is
    verified at construction within 1e-6 relative deviation.
    """

    window_length: int = 1024
    hop: int = 256
    fft_size: int = 1024
    window: str = "sqrt_hann"

    def __post_init__(self):
        if not (0 < self.hop <= self.window_length <= self.fft_size):
            raise ValueError(
                "need 0 < hop <= window_length <= fft_size, got "
                f"hop={self.hop} window_length={self.window_length} fft_size={self.fft_size}"
            )
        taper = _window_array(self.window, self.window_length)
        product = taper * taper
        # Infinite-tiling overlap-add of the product window, evaluated over
        # one hop period.
        ola = np.zeros(self.hop)
        for j in range(self.hop):
            ola[j] = product[j :: self.hop].sum()
        if ola.min() <= 0.0:
            raise ValueError(f"window {self.window!r} with hop {self.hop} leaves gaps (not COLA)")
        deviation = (ola.max() - ola.min()) / ola.max()
        if deviation > 1e-6:
            raise ValueError(
                f"window {self.window!r} with hop {self.hop} violates COLA "
                f"(relative deviation {deviation:.3e})"
            )

    @property
    def bins(self) -> int:
        return self.fft_size // 2 + 1

    def frame_rate(self, sample_rate: int) -> float:
        return sample_rate / self.hop

    def n_frames(self, n_samples: int) -> int:
        """Frame count produced for an input of ``n_samples`` samples."""
        if n_samples <= 0:
            return 0
        return 1 + int(np.ceil(n_samples / self.hop))


@dataclass(frozen=True)
class StftTensor:
    """Complex time-frequency tensor indexed [channel][frame][bin]."""

    values: np.ndarray
    config: StftConfig
    original_length: int
    sample_rate: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.complex128)
        if values.ndim != 3:
            raise ValueError("values must be a (channels, frames, bins) array")
        if values.shape[2] != self.config.bins:
            raise ValueError(
                f"bin count {values.shape[2]} does not match fft_size {self.config.fft_size}"
            )
        frames = values.shape[1]
        analysis_frames = self.config.n_frames(self.original_length)
        crop_length = max(frames - 1, 0) * self.config.hop  # frame-run convention
        if frames != analysis_frames and self.original_length != crop_length:
            raise ValueError(
                f"frame count {frames} inconsistent with original_length "
                f"{self.original_length} at hop {self.config.hop}"
            )
        if values.size and not np.all(np.isfinite(values)):
            raise ValueError("tensor values contain NaN or Inf")
        object.__setattr__(self, "values", values)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def frames(self) -> int:
        return self.values.shape[1]

    @property
    def bins(self) -> int:
        return self.values.shape[2]

    @property
    def frame_rate(self) -> float:
        return self.config.frame_rate(self.sample_rate)

    def subset(self, indices) -> "StftTensor":
        idx = list(indices)
        if not idx:
            raise ValueError("channel subset must not be empty")
        return StftTensor(self.values[idx], self.config, self.original_length, self.sample_rate)


def stft(wave: MultichannelWave, cfg: StftConfig | None = None) -> StftTensor:
    """Per-channel framed transform with center alignment.

    The signal is reflect-padded by window_length/2 on each side (plus zero
    fill on the right so the last frame exists), windowed, and transformed
    with an ``fft_size``-point real FFT.
    """
    cfg = cfg or StftConfig()
    n = wave.n_samples
    n_frames = cfg.n_frames(n)
    if n_frames == 0:
        values = np.zeros((wave.channels, 0, cfg.bins), dtype=np.complex128)
        return StftTensor(values, cfg, n, wave.sample_rate)

    pad = cfg.window_length // 2
    last_start = (n_frames - 1) * cfg.hop
    padded_length = last_start + cfg.window_length
    taper = _window_array(cfg.window, cfg.window_length)

    out = np.empty((wave.channels, n_frames, cfg.bins), dtype=np.complex128)
    for c in range(wave.channels):
        x = wave.samples[c]
        padded = np.zeros(padded_length)
        padded[pad : pad + n] = x
        left = min(pad, n - 1)
        if left > 0:
            padded[pad - left : pad] = x[1 : left + 1][::-1]
        right = min(padded_length - pad - n, n - 1)
        if right > 0:
            padded[pad + n : pad + n + right] = x[n - right - 1 : n - 1][::-1]
        frames = np.lib.stride_tricks.sliding_window_view(padded, cfg.window_length)
        frames = frames[:: cfg.hop][:n_frames]
        out[c] = np.fft.rfft(frames * taper, n=cfg.fft_size, axis=1)
    return StftTensor(out, cfg, n, wave.sample_rate)


def istft(tensor: StftTensor) -> MultichannelWave:
    """Overlap-add synthesis; exact inverse of :func:`stft` up to rounding.

    Each frame is inverse-transformed, synthesis-windowed, and accumulated;
    the result is divided by the accumulated squared-window envelope and
    trimmed to ``original_length``.
    """
    cfg = tensor.config
    n = tensor.original_length
    n_frames = tensor.frames
    expected = cfg.n_frames(n)
    if n_frames != expected:
        raise ValueError(f"tensor has {n_frames} frames but config implies {expected}")
    if n == 0:
        return MultichannelWave(tensor.sample_rate, np.zeros((tensor.channels, 0)))

    pad = cfg.window_length // 2
    length = (n_frames - 1) * cfg.hop + cfg.window_length
    taper = _window_array(cfg.window, cfg.window_length)

    envelope = np.zeros(length)
    product = taper * taper
    for t in range(n_frames):
        envelope[t * cfg.hop : t * cfg.hop + cfg.window_length] += product
    safe = np.where(envelope > 1e-12, envelope, 1.0)

    out = np.empty((tensor.channels, n))
    for c in range(tensor.channels):
        acc = np.zeros(length)
        frames = np.fft.irfft(tensor.values[c], n=cfg.fft_size, axis=1)[:, : cfg.window_length]
        frames = frames * taper
        for t in range(n_frames):
            acc[t * cfg.hop : t * cfg.hop + cfg.window_length] += frames[t]
        out[c] = (acc / safe)[pad : pad + n]
    return MultichannelWave(tensor.sample_rate, out)


# --- WAV file I/O (RIFF/WAVE, PCM16 or IEEE float32) ---

_PCM = 1
_IEEE_FLOAT = 3
_EXTENSIBLE = 0xFFFE


def read_wav(path) -> MultichannelWave:
    """Read a PCM 16-bit or IEEE float32 RIFF/WAVE file.

    Integer samples are scaled to [-1, 1] by 1/32768. Header, encoding, and
    length defects raise distinct :class:`WavError` subclasses.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12:
        raise MalformedHeaderError(f"{path}: file too short for a RIFF header")
    if blob[0:4] != b"RIFF":
        raise MalformedHeaderError(f"{path}: missing RIFF magic")
    if blob[8:12] != b"WAVE":
        raise MalformedHeaderError(f"{path}: missing WAVE form type")
    riff_size = struct.unpack_from("<I", blob, 4)[0]
    declared_end = 8 + riff_size

    fmt = None
    offset = 12
    while offset + 8 <= len(blob):
        chunk_id = blob[offset : offset + 4]
        chunk_size = struct.unpack_from("<I", blob, offset + 4)[0]
        body = offset + 8
        if chunk_id == b"fmt ":
            if chunk_size < 16 or body + 16 > len(blob):
                raise MalformedHeaderError(f"{path}: fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", blob, body)
            if fmt[0] == _EXTENSIBLE and chunk_size >= 40 and body + 26 <= len(blob):
                subformat = struct.unpack_from("<H", blob, body + 24)[0]
                fmt = (subformat,) + fmt[1:]
        elif chunk_id == b"data":
            if fmt is None:
                raise MalformedHeaderError(f"{path}: data chunk precedes fmt chunk")
            available = min(len(blob), declared_end) - body
            if chunk_size > available:
                raise TruncatedDataError(
                    f"{path}: data chunk declares {chunk_size} bytes but only "
                    f"{max(available, 0)} are present"
                )
            return _decode_data(path, fmt, blob[body : body + chunk_size])
        body_end = body + chunk_size + (chunk_size & 1)
        if body_end <= offset:
            raise MalformedHeaderError(f"{path}: nonsensical chunk size at offset {offset}")
        offset = body_end
    raise MalformedHeaderError(f"{path}: no data chunk found")


def _decode_data(path, fmt, payload: bytes) -> MultichannelWave:
    audio_format, channels, sample_rate, _byte_rate, block_align, bits = fmt
    if channels < 1:
        raise MalformedHeaderError(f"{path}: channel count {channels} invalid")
    if sample_rate <= 0:
        raise MalformedHeaderError(f"{path}: sample rate {sample_rate} invalid")
    if (audio_format, bits) == (_PCM, 16):
        dtype, scale = np.dtype("<i2"), 1.0 / 32768.0
    elif (audio_format, bits) == (_IEEE_FLOAT, 32):
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise UnsupportedEncodingError(
            f"{path}: format code {audio_format} with {bits} bits is not supported "
            "(expect PCM 16-bit or IEEE float 32-bit)"
        )
    frame_bytes = channels * dtype.itemsize
    if block_align not in (0, frame_bytes):
        raise MalformedHeaderError(
            f"{path}: block alignment {block_align} inconsistent with "
            f"{channels} channels of {bits}-bit samples"
        )
    if len(payload) % frame_bytes:
        raise TruncatedDataError(f"{path}: data chunk ends mid-frame")
    raw = np.frombuffer(payload, dtype=dtype)
    samples = raw.reshape(-1, channels).T.astype(np.float64) * scale
    if samples.size and not np.all(np.isfinite(samples)):
        raise WavError(f"{path}: file contains non-finite float samples")
    return MultichannelWave(sample_rate, samples)


def write_wav(wave: MultichannelWave, path, encoding: str = "float32") -> None:
    """Write a RIFF/WAVE file in the requested encoding.

    ``float32`` round-trips float32-representable samples exactly. ``int16``
    quantizes by round(x * 32768); out-of-range values are clamped and the
    occurrence count is reported through a :class:`ClippingWarning`.
    """
    if encoding == "float32":
        data = wave.samples.T.astype("<f4", copy=False).tobytes()
        fmt_code, bits = _IEEE_FLOAT, 32
    elif encoding == "int16":
        scaled = np.round(wave.samples * 32768.0)
        clipped = int(np.count_nonzero((scaled < -32768.0) | (scaled > 32767.0)))
        if clipped:
            warnings.warn(
                f"{clipped} samples clamped while encoding to int16", ClippingWarning
            )
        data = np.clip(scaled, -32768.0, 32767.0).astype("<i2").T.tobytes()
        fmt_code, bits = _PCM, 16
    else:
        raise ValueError(f"unknown encoding {encoding!r}, expected 'float32' or 'int16'")

    channels = wave.channels
    frame_bytes = channels * bits // 8
    header = struct.pack(
        "<HHIIHH",
        fmt_code,
        channels,
        wave.sample_rate,
        wave.sample_rate * frame_bytes,
        frame_bytes,
        bits,
    )
    chunks = [(b"fmt ", header)]
    if fmt_code == _IEEE_FLOAT:
        chunks.append((b"fact", struct.pack("<I", wave.n_samples)))
    chunks.append((b"data", data))

    body = b"".join(
        cid + struct.pack("<I", len(payload)) + payload + (b"\x00" if len(payload) & 1 else b"")
        for cid, payload in chunks
    )
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE" + body)
