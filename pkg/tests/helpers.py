"""Shared fixtures-in-code and independent oracles for the test suite.

The oracles here deliberately avoid the library's own code paths: the lag
oracle scans every lag with direct dot products, and the DER oracle scores a
millisecond grid under every speaker mapping.
"""

import itertools

import numpy as np

import arrayfront as af
from arrayfront.rttm import Segment, SegmentList

RATE = 16000

SQUARE_MICS = ((0.05, 0.05, 1.5), (-0.05, 0.05, 1.5), (-0.05, -0.05, 1.5), (0.05, -0.05, 1.5))


def brute_force_lag(x, y, max_lag):
    """Argmax of normalized cross-correlation over every integer lag.

    Ties prefer smaller |lag|, then the negative lag, matching the library's
    documented rule.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    norm = np.sqrt(np.dot(x, x) * np.dot(y, y))
    best = None
    for lag in range(-max_lag, max_lag + 1):
        if lag >= 0:
            n = min(len(x), len(y) - lag)
            r = float(np.dot(x[:n], y[lag : lag + n]))
        else:
            n = min(len(x) + lag, len(y))
            r = float(np.dot(x[-lag : -lag + n], y[:n]))
        r /= norm
        key = (-r, abs(lag), lag)
        if best is None or key < best[0]:
            best = (key, lag, r)
    return best[1], best[2]


def frame_der(reference, hypothesis, collar_s, step=0.001):
    """Frame-level DER oracle: midpoint-sampled grid, exhaustive mappings."""
    end = max(s.end for s in reference)
    if len(hypothesis):
        end = max(end, max(s.end for s in hypothesis))
    end += collar_s + step
    times = np.arange(0.0, end, step) + step / 2

    ref_speakers = reference.speakers()
    hyp_speakers = hypothesis.speakers()
    ref_active = np.zeros((len(ref_speakers), len(times)), bool)
    hyp_active = np.zeros((len(hyp_speakers), len(times)), bool)
    for i, spk in enumerate(ref_speakers):
        for s in reference.for_speaker(spk):
            ref_active[i] |= (times >= s.onset) & (times < s.end)
    for i, spk in enumerate(hyp_speakers):
        for s in hypothesis.for_speaker(spk):
            hyp_active[i] |= (times >= s.onset) & (times < s.end)

    keep = np.ones(len(times), bool)
    if collar_s > 0:
        for s in reference:
            for b in (s.onset, s.end):
                keep &= ~((times >= b - collar_s) & (times <= b + collar_s))

    nr = ref_active[:, keep].sum(axis=0)
    nh = hyp_active[:, keep].sum(axis=0)
    total = float(nr.sum()) * step
    if total <= 0:
        raise ValueError("no reference speech retained")
    miss = float(np.maximum(nr - nh, 0).sum()) * step
    fa = float(np.maximum(nh - nr, 0).sum()) * step

    best_correct = 0.0
    slots = list(ref_speakers) + [None] * len(hyp_speakers)
    for assignment in set(itertools.permutations(slots, len(hyp_speakers))):
        correct = 0.0
        for h, r in enumerate(assignment):
            if r is None:
                continue
            ri = ref_speakers.index(r)
            correct += float(
                (ref_active[ri, keep] & hyp_active[h, keep]).sum()
            ) * step
        best_correct = max(best_correct, correct)
    err = float(np.minimum(nr, nh).sum()) * step - best_correct
    return 100.0 * (miss + fa + err) / total


def two_source_scene(
    duration_s=11.0,
    schedule=None,
    noise_db=-30.0,
    seed=7,
    session="sim",
    positions=((2.0, 0.0, 1.5), (0.0, 2.0, 1.5)),
    ids=("spkA", "spkB"),
):
    """4-mic square array with two sources at right angles."""
    if schedule is None:
        schedule = SegmentList(
            (
                Segment(session, ids[0], 0.5, 7.5),
                Segment(session, ids[1], 3.0, 7.5),
            )
        )
    sources = tuple(
        af.SourceSpec(id=i, position=p) for i, p in zip(ids, positions)
    )
    return af.SceneSpec(
        duration_s=duration_s,
        mics=SQUARE_MICS,
        sources=sources,
        schedule=schedule,
        noise_db=noise_db,
        seed=seed,
        session=session,
    )


def conversation_schedule(session, duration_s, seed, turn_range=(3.0, 7.0), gap_range=(0.4, 1.2)):
    """Alternating two-speaker schedule used by the rectification tests."""
    rng = np.random.default_rng(seed)
    entries = []
    t = 1.0
    spk = 0
    while t < duration_s - turn_range[1] - 1.0:
        turn = float(rng.uniform(*turn_range))
        entries.append(Segment(session, f"spk{spk}", round(t, 3), round(turn, 3)))
        t += turn + float(rng.uniform(*gap_range))
        spk = 1 - spk
    return SegmentList(tuple(entries))


def swap_speaker_labels(segments, t0, t1, a="spk0", b="spk1"):
    """Swap the two speakers' labels inside [t0, t1], splitting at the edges."""
    other = {a: b, b: a}
    out = []
    for s in segments:
        lo, hi = max(s.onset, t0), min(s.end, t1)
        if lo >= hi or s.speaker not in other:
            out.append(s)
            continue
        if s.onset < lo:
            out.append(Segment(s.session, s.speaker, s.onset, lo - s.onset))
        out.append(Segment(s.session, other[s.speaker], lo, hi - lo))
        if hi < s.end:
            out.append(Segment(s.session, s.speaker, hi, s.end - hi))
    return SegmentList(tuple(out))


def delay_channels(wave, delays):
    """Shift channel c by delays[c] samples (positive = delayed), zero-filled."""
    shifted = np.zeros_like(wave.samples)
    n = wave.n_samples
    for c, d in enumerate(delays):
        if d >= 0:
            shifted[c, d:] = wave.samples[c, : n - d]
        else:
            shifted[c, : n + d] = wave.samples[c, -d:]
    return af.MultichannelWave(wave.sample_rate, shifted)
