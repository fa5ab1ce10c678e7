"""Deterministic synthetic multichannel scene rendering.

Scenes propagate gated point sources to microphones with fractional sample
delays (speed of sound 343 m/s), 1/r attenuation, an optional exponential-
decay velvet-noise reverb tail, and additive diffuse noise. Per-source clean
images are returned alongside the mixture so separation quality can be
measured against ground truth. Rendering is bitwise deterministic in the
scene seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import next_fast_len

from .errors import SceneSpecError
from .rttm import Segment, SegmentList
from .signal import MultichannelWave, read_wav

SPEED_OF_SOUND = 343.0
_VELVET_DENSITY = 1000.0  # reverb tail impulses per second
_TAIL_GAIN = 0.6  # first tail impulse amplitude relative to the direct path

SOURCE_KINDS = ("speech", "sinusoid", "file")


@dataclass(frozen=True)
class SourceSpec:
    id: str
    position: tuple
    kind: str = "speech"
    gain_db: float = 0.0
    freq_hz: float | None = None
    path: str | None = None


@dataclass(frozen=True)
class RoomSpec:
    kind: str = "anechoic"  # or "reverb"
    decay_s: float = 0.0


@dataclass(frozen=True)
class SceneSpec:
    duration_s: float
    mics: tuple
    sources: tuple
    schedule: SegmentList
    room: RoomSpec = field(default_factory=RoomSpec)
    noise_db: float | None = None
    seed: int = 0
    session: str = "sim"

    def __post_init__(self):
        _validate_scene(self)

    @staticmethod
    def from_dict(doc: dict) -> "SceneSpec":
        return _scene_from_dict(doc)

    @staticmethod
    def from_json(text: str) -> "SceneSpec":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise SceneSpecError("", f"not valid JSON: {e}") from None
        if not isinstance(doc, dict):
            raise SceneSpecError("", "top-level value must be an object")
        return _scene_from_dict(doc)


def _validate_scene(spec: SceneSpec):
    if spec.duration_s <= 0:
        raise SceneSpecError("/duration_s", "must be > 0")
    if len(spec.mics) < 1:
        raise SceneSpecError("/mics", "need at least one microphone")
    if len(spec.sources) < 1:
        raise SceneSpecError("/sources", "need at least one source")
    for m, pos in enumerate(spec.mics):
        if len(pos) != 3 or not all(np.isfinite(pos)):
            raise SceneSpecError(f"/mics/{m}", "position must be three finite numbers")
    ids = set()
    for i, src in enumerate(spec.sources):
        if not src.id:
            raise SceneSpecError(f"/sources/{i}/id", "must be a non-empty string")
        if src.id in ids:
            raise SceneSpecError(f"/sources/{i}/id", f"duplicate source id {src.id!r}")
        ids.add(src.id)
        if len(src.position) != 3 or not all(np.isfinite(src.position)):
            raise SceneSpecError(f"/sources/{i}/position", "must be three finite numbers")
        if src.kind not in SOURCE_KINDS:
            raise SceneSpecError(f"/sources/{i}/kind", f"expected one of {SOURCE_KINDS}")
        if src.kind == "sinusoid" and not src.freq_hz:
            raise SceneSpecError(f"/sources/{i}/freq_hz", "required for sinusoid sources")
        if src.kind == "file" and not src.path:
            raise SceneSpecError(f"/sources/{i}/path", "required for file sources")
        for m, mic in enumerate(spec.mics):
            if np.linalg.norm(np.subtract(src.position, mic)) < 1e-9:
                raise SceneSpecError(
                    f"/sources/{i}/position", f"coincides with microphone {m}"
                )
    if spec.room.kind not in ("anechoic", "reverb"):
        raise SceneSpecError("/room/kind", "expected 'anechoic' or 'reverb'")
    if spec.room.kind == "reverb" and spec.room.decay_s <= 0:
        raise SceneSpecError("/room/decay_s", "must be > 0 for reverb rooms")
    for k, seg in enumerate(spec.schedule):
        if seg.speaker not in ids:
            raise SceneSpecError(f"/schedule/{k}", f"unknown source id {seg.speaker!r}")
        if seg.end > spec.duration_s + 1e-9:
            raise SceneSpecError(f"/schedule/{k}", "segment extends past scene duration")


def _scene_from_dict(doc: dict) -> SceneSpec:
    known = {"duration_s", "mics", "sources", "schedule", "room", "noise_db", "seed", "session"}
    for key in doc:
        if key not in known:
            raise SceneSpecError(f"/{key}", "unknown field")
    try:
        duration = float(doc["duration_s"])
    except (KeyError, TypeError, ValueError):
        raise SceneSpecError("/duration_s", "missing or not a number") from None
    session = str(doc.get("session", "sim"))
    room_doc = doc.get("room", {"type": "anechoic"})
    room = RoomSpec(
        kind=str(room_doc.get("type", room_doc.get("kind", "anechoic"))),
        decay_s=float(room_doc.get("decay_s", 0.0)),
    )
    mics = tuple(tuple(float(v) for v in pos) for pos in doc.get("mics", ()))
    sources = []
    for i, src in enumerate(doc.get("sources", ())):
        if not isinstance(src, dict):
            raise SceneSpecError(f"/sources/{i}", "must be an object")
        sources.append(
            SourceSpec(
                id=str(src.get("id", "")),
                position=tuple(float(v) for v in src.get("position", ())),
                kind=str(src.get("kind", "speech")),
                gain_db=float(src.get("gain_db", 0.0)),
                freq_hz=None if src.get("freq_hz") is None else float(src["freq_hz"]),
                path=src.get("path"),
            )
        )
    segments = []
    for k, seg in enumerate(doc.get("schedule", ())):
        try:
            segments.append(
                Segment(session, str(seg["speaker"]), float(seg["onset"]), float(seg["duration"]))
            )
        except (KeyError, TypeError, ValueError) as e:
            raise SceneSpecError(f"/schedule/{k}", str(e)) from None
    noise_db = doc.get("noise_db")
    return SceneSpec(
        duration_s=duration,
        mics=mics,
        sources=tuple(sources),
        schedule=SegmentList(tuple(segments)),
        room=room,
        noise_db=None if noise_db is None else float(noise_db),
        seed=int(doc.get("seed", 0)),
        session=session,
    )


@dataclass(frozen=True)
class RenderResult:
    mixture: MultichannelWave
    images: dict  # source id -> MultichannelWave of per-mic clean images
    schedule: SegmentList


def _pink_noise(rng: np.random.Generator, n: int, rate: int) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / rate)
    spec[1:] /= np.sqrt(freqs[1:])
    spec[0] = 0.0
    x = np.fft.irfft(spec, n)
    return x / max(np.sqrt(np.mean(x**2)), 1e-30)


def _dry_source(src: SourceSpec, rng: np.random.Generator, n: int, rate: int) -> np.ndarray:
    if src.kind == "speech":
        x = _pink_noise(rng, n, rate)
        t = np.arange(n) / rate
        syllabic = 0.5 * (1.0 + np.sin(2.0 * np.pi * 4.0 * t + rng.uniform(0.0, 2.0 * np.pi)))
        x = x * (0.05 + 0.95 * syllabic**2)
        x = x / max(np.max(np.abs(x)), 1e-30) * 0.5
    elif src.kind == "sinusoid":
        t = np.arange(n) / rate
        x = 0.5 * np.sin(2.0 * np.pi * src.freq_hz * t + rng.uniform(0.0, 2.0 * np.pi))
    else:
        wave = read_wav(src.path)
        if wave.n_samples < n:
            raise SceneSpecError("/sources", f"file {src.path} shorter than the scene")
        x = wave.samples[0, :n].copy()
    return x * 10.0 ** (src.gain_db / 20.0)


def _gate(x: np.ndarray, segments, rate: int) -> np.ndarray:
    """Zero the source outside its scheduled segments, with 10 ms ramps."""
    env = np.zeros(len(x))
    for seg in segments:
        a = int(round(seg.onset * rate))
        b = min(int(round(seg.end * rate)), len(x))
        env[a:b] = 1.0
    ramp = max(int(0.010 * rate), 1)
    kernel = np.hanning(2 * ramp + 1)
    kernel /= kernel.sum()
    smoothed = np.convolve(env, kernel, mode="same")
    # ramps live inside the scheduled segments; outside them the gate is 0
    return x * env * smoothed


def _velvet_tail(rng: np.random.Generator, rate: int, decay_s: float) -> np.ndarray:
    n_tail = int(decay_s * rate)
    grid = max(int(rate / _VELVET_DENSITY), 1)
    tail = np.zeros(n_tail)
    for start in range(0, n_tail, grid):
        pos = start + int(rng.integers(0, grid))
        if pos < n_tail:
            tail[pos] = rng.choice((-1.0, 1.0))
    envelope = 10.0 ** (-3.0 * np.arange(n_tail) / n_tail)  # 60 dB over decay_s
    return _TAIL_GAIN * tail * envelope


def render(spec: SceneSpec, sample_rate: int = 16000) -> RenderResult:
    """Render mixture, per-source clean images, and the ground-truth schedule."""
    rate = int(sample_rate)
    n = int(round(spec.duration_s * rate))
    mic_positions = np.asarray(spec.mics, dtype=np.float64)

    distances = np.empty((len(spec.sources), len(spec.mics)))
    for i, src in enumerate(spec.sources):
        distances[i] = np.linalg.norm(mic_positions - np.asarray(src.position), axis=1)
    max_delay = int(np.ceil(distances.max() / SPEED_OF_SOUND * rate))
    tail_len = int(spec.room.decay_s * rate) if spec.room.kind == "reverb" else 0
    nfft = next_fast_len(n + max_delay + tail_len + 2)
    freqs = np.fft.rfftfreq(nfft, 1.0 / rate)

    images = {}
    mix = np.zeros((len(spec.mics), n))
    for i, src in enumerate(spec.sources):
        rng = np.random.default_rng([spec.seed, 101, i])
        dry = _gate(
            _dry_source(src, rng, n, rate), spec.schedule.for_speaker(src.id), rate
        )
        spectrum = np.fft.rfft(dry, nfft)
        per_mic = np.empty((len(spec.mics), n))
        for m in range(len(spec.mics)):
            r = distances[i, m]
            tau = r / SPEED_OF_SOUND
            transfer = np.exp(-2j * np.pi * freqs * tau) / max(r, 1e-3)
            if tail_len:
                tail_rng = np.random.default_rng([spec.seed, 202, i, m])
                kernel = np.zeros(nfft)
                offset = int(np.ceil(tau * rate)) + 1
                tail = _velvet_tail(tail_rng, rate, spec.room.decay_s)
                kernel[offset : offset + len(tail)] = tail[: max(nfft - offset, 0)]
                transfer = transfer + np.fft.rfft(kernel) / max(r, 1e-3)
            per_mic[m] = np.fft.irfft(spectrum * transfer, nfft)[:n]
        images[src.id] = MultichannelWave(rate, per_mic)
        mix += per_mic

    if spec.noise_db is not None:
        mix_rms = np.sqrt(np.mean(mix**2))
        if mix_rms > 0:
            level = mix_rms * 10.0 ** (spec.noise_db / 20.0)
            noise_rng = np.random.default_rng([spec.seed, 303])
            mix = mix + level * noise_rng.standard_normal(mix.shape)

    return RenderResult(MultichannelWave(rate, mix), images, spec.schedule)


def si_snr(estimate, target) -> float:
    """Scale-invariant SNR in dB, clamped to [-60, +60].

    The estimate is projected onto the target; the returned value is the
    ratio of projection power to residual power.
    """
    est = _as_mono(estimate)
    tgt = _as_mono(target)
    if est.shape != tgt.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {tgt.shape}")
    target_power = float(np.dot(tgt, tgt))
    if target_power <= 0:
        raise ValueError("target signal is silent")
    alpha = float(np.dot(est, tgt)) / target_power
    projection = alpha * tgt
    residual = est - projection
    num = float(np.dot(projection, projection))
    den = float(np.dot(residual, residual))
    if den <= num * 1e-12:
        return 60.0
    if num <= den * 1e-12:
        return -60.0
    return float(np.clip(10.0 * np.log10(num / den), -60.0, 60.0))


def _as_mono(wave) -> np.ndarray:
    if isinstance(wave, MultichannelWave):
        if wave.channels != 1:
            raise ValueError("expected a mono wave")
        return wave.samples[0]
    arr = np.asarray(wave, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError("expected a 1-D signal")
    return arr
