"""RTTM segment lists and DER scoring with a boundary-forgiveness collar."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import RttmParseError, SessionMismatchError, UndefinedDerError


@dataclass(frozen=True)
class Segment:
    session: str
    speaker: str
    onset: float
    duration: float

    def __post_init__(self):
        if not self.speaker:
            raise ValueError("speaker id must be a non-empty string")
        if self.onset < 0:
            raise ValueError(f"onset {self.onset} must be >= 0")
        if not self.duration > 0:
            raise ValueError(f"duration {self.duration} must be > 0")

    @property
    def end(self) -> float:
        return self.onset + self.duration


@dataclass(frozen=True)
class SegmentList:
    """Speaker-attributed time segments, kept sorted by (onset, speaker)."""

    entries: tuple

    def __post_init__(self):
        ordered = tuple(sorted(self.entries, key=lambda s: (s.onset, s.speaker, s.duration)))
        object.__setattr__(self, "entries", ordered)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def speakers(self) -> tuple:
        return tuple(sorted({s.speaker for s in self.entries}))

    def sessions(self) -> tuple:
        return tuple(sorted({s.session for s in self.entries}))

    def for_speaker(self, speaker: str) -> "SegmentList":
        return SegmentList(tuple(s for s in self.entries if s.speaker == speaker))

    def shifted(self, offset_s: float) -> "SegmentList":
        return SegmentList(
            tuple(
                Segment(s.session, s.speaker, s.onset + offset_s, s.duration)
                for s in self.entries
            )
        )

    def total_speech(self) -> float:
        return sum(s.duration for s in self.entries)


def parse_rttm(text: str) -> SegmentList:
    """Parse SPEAKER records; `;;` comment lines and blank lines are skipped."""
    entries = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(";;"):
            continue
        tokens = line.split()
        if tokens[0] != "SPEAKER":
            raise RttmParseError(number, f"unsupported record type {tokens[0]!r}")
        if len(tokens) < 8:
            raise RttmParseError(number, f"expected at least 8 fields, got {len(tokens)}")
        session = tokens[1]
        try:
            onset = float(tokens[3])
            duration = float(tokens[4])
        except ValueError:
            raise RttmParseError(number, "onset/duration are not numbers") from None
        speaker = tokens[7]
        if duration <= 0:
            raise RttmParseError(number, f"non-positive duration {duration}")
        if onset < 0:
            raise RttmParseError(number, f"negative onset {onset}")
        entries.append(Segment(session, speaker, onset, duration))
    return SegmentList(tuple(entries))


def read_rttm(path) -> SegmentList:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_rttm(fh.read())


def write_rttm(segments: SegmentList) -> str:
    """Render at millisecond precision, ordered by (onset, speaker)."""
    lines = [
        f"SPEAKER {s.session} 1 {s.onset:.3f} {s.duration:.3f} <NA> <NA> {s.speaker} <NA> <NA>"
        for s in segments
    ]
    return "".join(line + "\n" for line in lines)


def save_rttm(segments: SegmentList, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(write_rttm(segments))


@dataclass(frozen=True)
class DerReport:
    miss_seconds: float
    false_alarm_seconds: float
    speaker_error_seconds: float
    scored_speech_seconds: float
    mapping: dict = field(default_factory=dict)

    @property
    def miss_pct(self) -> float:
        return 100.0 * self.miss_seconds / self.scored_speech_seconds

    @property
    def false_alarm_pct(self) -> float:
        return 100.0 * self.false_alarm_seconds / self.scored_speech_seconds

    @property
    def speaker_error_pct(self) -> float:
        return 100.0 * self.speaker_error_seconds / self.scored_speech_seconds

    @property
    def der_pct(self) -> float:
        return self.miss_pct + self.false_alarm_pct + self.speaker_error_pct

    def to_dict(self) -> dict:
        return {
            "der_pct": self.der_pct,
            "miss_pct": self.miss_pct,
            "false_alarm_pct": self.false_alarm_pct,
            "speaker_error_pct": self.speaker_error_pct,
            "miss_seconds": self.miss_seconds,
            "false_alarm_seconds": self.false_alarm_seconds,
            "speaker_error_seconds": self.speaker_error_seconds,
            "scored_speech_seconds": self.scored_speech_seconds,
            "mapping": dict(sorted(self.mapping.items())),
        }


def _merge_intervals(intervals):
    merged = []
    for lo, hi in sorted(intervals):
        if merged and lo <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    return merged


def der(reference: SegmentList, hypothesis: SegmentList, collar_s: float = 0.25) -> DerReport:
    """Diarization error rate with collar exclusion and scored overlaps.

    The timeline is cut into homogeneous regions; regions within ``collar_s``
    of any reference boundary are excluded. The hypothesis-to-reference
    speaker mapping maximizes the total correctly attributed time over the
    retained regions (optimal assignment). Overlapped speech is scored with
    multi-speaker counting, md-eval style.
    """
    if len(reference) == 0:
        raise UndefinedDerError("reference contains no speech")
    if collar_s < 0:
        raise ValueError("collar must be >= 0")
    ref_sessions = set(reference.sessions())
    hyp_sessions = set(hypothesis.sessions())
    if len(ref_sessions) != 1:
        raise SessionMismatchError(f"reference must cover exactly one session, got {ref_sessions}")
    if hyp_sessions and hyp_sessions != ref_sessions:
        raise SessionMismatchError(f"reference session {ref_sessions} != hypothesis {hyp_sessions}")

    excluded = _merge_intervals(
        (b - collar_s, b + collar_s)
        for s in reference
        for b in (s.onset, s.end)
    ) if collar_s > 0 else []

    cuts = set()
    for s in list(reference) + list(hypothesis):
        cuts.add(s.onset)
        cuts.add(s.end)
    for lo, hi in excluded:
        cuts.add(lo)
        cuts.add(hi)
    cuts = sorted(c for c in cuts)

    ref_speakers = reference.speakers()
    hyp_speakers = hypothesis.speakers()
    r_index = {spk: i for i, spk in enumerate(ref_speakers)}
    h_index = {spk: i for i, spk in enumerate(hyp_speakers)}

    regions = []  # (length, ref speaker set, hyp speaker set)
    exc_iter = 0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi - lo <= 0:
            continue
        mid = 0.5 * (lo + hi)
        while exc_iter < len(excluded) and excluded[exc_iter][1] <= lo:
            exc_iter += 1
        if exc_iter < len(excluded) and excluded[exc_iter][0] <= mid <= excluded[exc_iter][1]:
            continue
        active_r = frozenset(s.speaker for s in reference if s.onset <= mid < s.end)
        active_h = frozenset(s.speaker for s in hypothesis if s.onset <= mid < s.end)
        if active_r or active_h:
            regions.append((hi - lo, active_r, active_h))

    overlap = np.zeros((len(ref_speakers), max(len(hyp_speakers), 1)))
    for length, active_r, active_h in regions:
        for r in active_r:
            for h in active_h:
                overlap[r_index[r], h_index[h]] += length
    rows, cols = linear_sum_assignment(-overlap[:, : max(len(hyp_speakers), 1)])
    mapping = {}
    mapped_pairs = set()
    for r, h in zip(rows, cols):
        if h < len(hyp_speakers) and overlap[r, h] > 0:
            mapping[hyp_speakers[h]] = ref_speakers[r]
            mapped_pairs.add((ref_speakers[r], hyp_speakers[h]))

    miss = fa = err = total = 0.0
    for length, active_r, active_h in regions:
        nr, nh = len(active_r), len(active_h)
        correct = sum(1 for r in active_r for h in active_h if (r, h) in mapped_pairs)
        miss += length * max(0, nr - nh)
        fa += length * max(0, nh - nr)
        err += length * (min(nr, nh) - correct)
        total += length * nr
    if total <= 0:
        raise UndefinedDerError("no reference speech remains after collar exclusion")
    return DerReport(miss, fa, err, total, mapping)
