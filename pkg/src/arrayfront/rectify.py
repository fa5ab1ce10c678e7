"""Sliding-window cACGMM rectification of a diarization annotation.

The recording is tiled with long windows (120 s length, 60 s shift by
default, final window right-aligned to the recording end). Each window runs
the activity-gated EM seeded from the incoming annotation; the per-frame
speaker probability is the frequency mean of that speaker's posterior mask.
Overlapping windows are combined by arithmetic mean, thresholded, median
filtered, and converted back to segments.

Inside rectification windows the binary activity is softened: annotated
inactivity becomes a small prior weight instead of a hard zero, so spatial
evidence can overturn wrong labels (a hard zero could only ever delete
speech, never reassign it).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import median_filter

from .cacgmm import cacgmm_em, segments_to_activity
from .rttm import Segment, SegmentList
from .signal import MultichannelWave, StftConfig, StftTensor, stft


@dataclass(frozen=True)
class RectifyConfig:
    window_s: float = 120.0
    shift_s: float = 60.0
    threshold: float = 0.5
    median_frames: int = 11
    min_segment_s: float = 0.2
    min_gap_s: float = 0.3
    em_iterations: int = 10
    inactive_floor: float = 0.25

    def __post_init__(self):
        if not 0 < self.shift_s <= self.window_s:
            raise ValueError("need 0 < shift_s <= window_s")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie strictly between 0 and 1")
        if self.median_frames < 1 or self.median_frames % 2 == 0:
            raise ValueError("median_frames must be a positive odd count")
        if self.min_segment_s < 0 or self.min_gap_s < 0:
            raise ValueError("min_segment_s and min_gap_s must be >= 0")
        if self.em_iterations < 1:
            raise ValueError("em_iterations must be >= 1")
        if not 0 <= self.inactive_floor < 1:
            raise ValueError("inactive_floor must lie in [0, 1)")


@dataclass(frozen=True)
class FrameProbabilities:
    """Per-speaker per-frame speech probability with window coverage."""

    speakers: tuple
    probabilities: np.ndarray  # (n_speakers, n_frames) in [0, 1]
    coverage: np.ndarray  # (n_frames,) number of windows contributing
    frame_rate: float

    def __post_init__(self):
        probs = np.asarray(self.probabilities, dtype=np.float64)
        if probs.ndim != 2 or probs.shape[0] != len(self.speakers):
            raise ValueError("probabilities must be (n_speakers, n_frames)")
        if probs.size and (not np.all(np.isfinite(probs)) or probs.min() < 0 or probs.max() > 1):
            raise ValueError("probabilities must be finite values in [0, 1]")
        if np.any(np.asarray(self.coverage) < 1):
            raise ValueError("every frame must be covered by at least one window")
        object.__setattr__(self, "probabilities", probs)

    @property
    def n_frames(self) -> int:
        return self.probabilities.shape[1]


def window_starts(duration_s: float, window_s: float, shift_s: float) -> list:
    """Window start times tiling [0, duration]; the last start is
    right-aligned to the recording end when the shift grid falls short."""
    starts = []
    s = 0.0
    while s + window_s <= duration_s + 1e-9:
        starts.append(s)
        s += shift_s
    if not starts:
        return [0.0]
    if starts[-1] + window_s < duration_s - 1e-9:
        starts.append(duration_s - window_s)
    return starts


def combine_windows(window_probs: list, n_frames: int, speakers: tuple, frame_rate: float) -> FrameProbabilities:
    """Arithmetic mean of per-window probabilities over their overlaps.

    ``window_probs`` holds (first_frame, probabilities) pairs. An uncovered
    frame is a window-accounting bug and is fatal.
    """
    n_speakers = len(speakers)
    acc = np.zeros((n_speakers, n_frames))
    coverage = np.zeros(n_frames, dtype=np.int64)
    for first, probs in window_probs:
        width = probs.shape[1]
        if first < 0 or first + width > n_frames:
            raise RuntimeError("window accounting bug: window exceeds the timeline")
        acc[:, first : first + width] += probs
        coverage[first : first + width] += 1
    if np.any(coverage < 1):
        raise RuntimeError("window accounting bug: uncovered frames")
    return FrameProbabilities(speakers, acc / coverage, coverage, frame_rate)


def probabilities_to_segments(
    probs: FrameProbabilities, cfg: RectifyConfig, session: str
) -> SegmentList:
    """Threshold, median-filter, and convert runs to segments.

    Runs use frame-center timing: frames [a, b] become the segment
    [(a - 0.5) / rate, (b + 0.5) / rate]. Segments shorter than
    ``min_segment_s`` are dropped, then same-speaker gaps shorter than
    ``min_gap_s`` are merged.
    """
    rate = probs.frame_rate
    entries = []
    for row, speaker in enumerate(probs.speakers):
        active = probs.probabilities[row] >= cfg.threshold
        if cfg.median_frames > 1 and active.size:
            active = median_filter(
                active.astype(np.float64), size=cfg.median_frames, mode="nearest"
            ) > 0.5
        spans = []
        for first, last in _runs(active):
            onset = max(0.0, (first - 0.5) / rate)
            end = (last + 0.5) / rate
            if end - onset >= cfg.min_segment_s:
                spans.append([onset, end])
        merged = []
        for onset, end in spans:
            if merged and onset - merged[-1][1] < cfg.min_gap_s:
                merged[-1][1] = max(merged[-1][1], end)
            else:
                merged.append([onset, end])
        entries.extend(
            Segment(session, speaker, onset, end - onset) for onset, end in merged
        )
    return SegmentList(tuple(entries))


def _runs(active: np.ndarray):
    """Yield (first, last) inclusive frame indices of each True run."""
    if active.size == 0:
        return
    padded = np.concatenate([[False], active, [False]])
    changes = np.flatnonzero(padded[1:] != padded[:-1])
    for first, after in zip(changes[::2], changes[1::2]):
        yield int(first), int(after) - 1


def rectify(
    wave: MultichannelWave,
    init: SegmentList,
    cfg: RectifyConfig | None = None,
    stft_cfg: StftConfig | None = None,
) -> tuple[SegmentList, FrameProbabilities]:
    """One pass of sliding-window rectification.

    Multi-stage rectification is expressed by feeding the output segments
    back in as the next call's ``init``.
    """
    cfg = cfg or RectifyConfig()
    stft_cfg = stft_cfg or StftConfig()
    if wave.channels < 2:
        raise ValueError("rectification needs at least two channels")
    if len(init) == 0:
        raise ValueError("initial annotation must not be empty")
    sessions = init.sessions()
    if len(sessions) != 1:
        raise ValueError(f"initial annotation must cover exactly one session, got {sessions}")
    session = sessions[0]

    tensor = stft(wave, stft_cfg)
    fps = tensor.frame_rate
    n_frames = tensor.frames
    speakers = init.speakers()
    activity = segments_to_activity(init, fps, n_frames, speakers)
    soft = activity.softened(cfg.inactive_floor)

    starts = window_starts(wave.duration_s, cfg.window_s, cfg.shift_s)
    window_probs = []
    for w, start_s in enumerate(starts):
        first = int(np.ceil(start_s * fps - 1e-9))
        if w == len(starts) - 1:
            last = n_frames
        else:
            last = min(n_frames, int(np.ceil((start_s + cfg.window_s) * fps - 1e-9)))
        if last - first < 2:
            continue
        window_tensor = StftTensor(
            tensor.values[:, first:last],
            stft_cfg,
            original_length=(last - first - 1) * stft_cfg.hop,
            sample_rate=tensor.sample_rate,
        )
        masks, _, _ = cacgmm_em(window_tensor, soft.sliced(first, last), cfg.em_iterations)
        speaker_probs = masks.gamma[: len(speakers)].mean(axis=2)  # (S, frames)
        window_probs.append((first, speaker_probs))

    probs = combine_windows(window_probs, n_frames, speakers, fps)
    segments = probabilities_to_segments(probs, cfg, session)
    return segments, probs
