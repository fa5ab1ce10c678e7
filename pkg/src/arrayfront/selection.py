"""Channel ranking, virtual subarray partitioning, and selection policies.

Channels are ranked by envelope variance: per channel, 20 mel-spaced
sub-band magnitude envelopes are cube-root compressed, gain-normalized by
each band's own temporal mean, and the per-band temporal variances (each
normalized by its maximum across channels) are summed. Degradations that
flatten envelope modulation, such as added noise or reverberation smear,
lower the score, so higher means closer and cleaner.

Consecutive runs of the ranking form ceil(N/K) "virtual" subarrays (K = 5
by default) which are scored by the SINR of an MVDR beamformer driven by
annotation-derived covariances, and the selection policies pick channels
from the best subarray, the front half of subarrays, or the top 80% of the
EV ranking.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .beamform import apply_beamformer, estimate_covariance, mvdr_weights
from .cacgmm import ActivityMatrix
from .errors import NoiseFloorError
from .signal import StftTensor

MEL_BANDS = 20
DEFAULT_GROUP_SIZE = 5
SINR_CLAMP_DB = 60.0
POLICY_MODES = ("single_subarray", "front_half_subarrays", "ev_top_80pct")


@dataclass(frozen=True)
class SelectionPolicy:
    mode: str

    def __post_init__(self):
        if self.mode not in POLICY_MODES:
            raise ValueError(f"unknown policy {self.mode!r}, expected one of {POLICY_MODES}")


@dataclass(frozen=True)
class ChannelRanking:
    """Channels ordered by descending EV score; ties break by lower index."""

    order: tuple
    scores: np.ndarray  # aligned with original channel indexing
    silent: tuple = ()

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        order = tuple(int(c) for c in self.order)
        if sorted(order) != list(range(len(scores))):
            raise ValueError("order must be a permutation of the channel indices")
        if np.any(scores < 0) or not np.all(np.isfinite(scores)):
            raise ValueError("scores must be finite and nonnegative")
        expected = tuple(sorted(range(len(scores)), key=lambda c: (-scores[c], c)))
        if order != expected:
            raise ValueError("order must sort by descending score, ties by lower index")
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "scores", scores)

    def to_dict(self) -> dict:
        return {
            "order": list(self.order),
            "scores": [float(s) for s in self.scores],
            "silent": list(self.silent),
        }


@dataclass(frozen=True)
class SubarrayPlan:
    """EV-consecutive channel groups, optionally SINR-scored and ordered."""

    subarrays: tuple  # tuple of channel-index tuples
    group_size: int
    sinr_db: tuple | None = None
    order: tuple | None = None  # subarray indices by descending SINR

    @property
    def scored(self) -> bool:
        return self.sinr_db is not None

    def to_dict(self) -> dict:
        return {
            "subarrays": [list(g) for g in self.subarrays],
            "group_size": self.group_size,
            "sinr_db": None if self.sinr_db is None else [float(v) for v in self.sinr_db],
            "order": None if self.order is None else list(self.order),
        }


def mel_filterbank(n_bands: int, n_bins: int, sample_rate: int, fft_size: int) -> np.ndarray:
    """Triangular mel filters over [0, Nyquist], rows normalized to unit sum."""

    def to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def to_hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    edges = to_hz(np.linspace(to_mel(0.0), to_mel(sample_rate / 2.0), n_bands + 2))
    bin_freqs = np.arange(n_bins) * sample_rate / fft_size
    bank = np.zeros((n_bands, n_bins))
    for b in range(n_bands):
        lo, mid, hi = edges[b], edges[b + 1], edges[b + 2]
        rising = (bin_freqs - lo) / max(mid - lo, 1e-9)
        falling = (hi - bin_freqs) / max(hi - mid, 1e-9)
        bank[b] = np.clip(np.minimum(rising, falling), 0.0, None)
        total = bank[b].sum()
        if total > 0:
            bank[b] /= total
    return bank


def ev_scores(tensor: StftTensor) -> ChannelRanking:
    """Envelope-variance ranking; higher score = closer/cleaner channel.

    Silent channels are scored 0 with a warning, never NaN.
    """
    if tensor.channels < 2:
        raise ValueError("EV ranking needs at least two channels")
    if tensor.frames < 50:
        raise ValueError(f"EV ranking needs at least 50 frames, got {tensor.frames}")
    bank = mel_filterbank(MEL_BANDS, tensor.bins, tensor.sample_rate, tensor.config.fft_size)
    envelopes = np.einsum("bf,ctf->cbt", bank, np.abs(tensor.values))  # (C, B, T)

    silent = tuple(
        int(c) for c in np.flatnonzero(envelopes.max(axis=(1, 2)) <= 0.0)
    )
    if silent:
        warnings.warn(f"channels {list(silent)} are silent and scored 0")

    compressed = np.cbrt(envelopes)
    mean = compressed.mean(axis=2, keepdims=True)  # per channel, per band
    normalized = compressed / np.maximum(mean, 1e-300)
    variance = normalized.var(axis=2)  # (C, B)
    band_max = variance.max(axis=0, keepdims=True)
    variance = variance / np.where(band_max > 0, band_max, 1.0)
    scores = variance.sum(axis=1)
    scores[list(silent)] = 0.0

    order = tuple(sorted(range(tensor.channels), key=lambda c: (-scores[c], c)))
    return ChannelRanking(order=order, scores=scores, silent=silent)


def partition_subarrays(ranking: ChannelRanking, group_size: int = DEFAULT_GROUP_SIZE) -> SubarrayPlan:
    """Consecutive runs of K ranked channels; only the last group may be smaller."""
    if group_size < 1:
        raise ValueError("group size must be >= 1")
    order = ranking.order
    groups = tuple(
        tuple(order[i : i + group_size]) for i in range(0, len(order), group_size)
    )
    return SubarrayPlan(subarrays=groups, group_size=group_size)


def score_subarrays(
    plan: SubarrayPlan, tensor: StftTensor, activity: ActivityMatrix
) -> SubarrayPlan:
    """Score each subarray by the average SINR of its MVDR output.

    Per speaker, the target covariance is estimated on frames where exactly
    that speaker is active and the noise covariance on no-speech frames;
    SINR contrasts the beamformed energy on those frame sets and is clamped
    to +/-60 dB. Scores average over speakers; ties keep EV order.
    """
    if activity.n_frames != tensor.frames:
        raise ValueError("activity does not cover the tensor's frames")
    speech = activity.values[:-1]  # drop the always-on noise row
    n_speakers = speech.shape[0]
    active_counts = (speech > 0).sum(axis=0)
    nospeech = active_counts == 0
    if not np.any(nospeech):
        raise NoiseFloorError(
            "no no-speech frames found; supply an annotation with a noise floor"
        )

    speaker_masks = []
    for s in range(n_speakers):
        single = (speech[s] > 0) & (active_counts == 1)
        if np.any(single):
            speaker_masks.append(single)
    if not speaker_masks:
        raise ValueError("no frames where exactly one speaker is active")

    nospeech_mask = np.broadcast_to(
        nospeech[:, None].astype(np.float64), (tensor.frames, tensor.bins)
    )
    sinrs = []
    for group in plan.subarrays:
        sub = tensor.subset(group)
        phi_n = estimate_covariance(sub, nospeech_mask)
        values = []
        for single in speaker_masks:
            target_mask = np.broadcast_to(
                single[:, None].astype(np.float64), (tensor.frames, tensor.bins)
            )
            phi_t = estimate_covariance(sub, target_mask)
            weights = mvdr_weights(phi_t, phi_n, reference=0)
            output = apply_beamformer(sub, weights).values[0]  # (T, F)
            power = np.mean(np.abs(output) ** 2, axis=1)  # per frame
            signal = float(power[single].mean())
            noise_floor = float(power[nospeech].mean())
            ratio = signal / max(noise_floor, 1e-300)
            values.append(float(np.clip(10.0 * np.log10(max(ratio, 1e-300)), -SINR_CLAMP_DB, SINR_CLAMP_DB)))
        sinrs.append(float(np.mean(values)))

    order = tuple(sorted(range(len(plan.subarrays)), key=lambda g: (-sinrs[g], g)))
    return SubarrayPlan(
        subarrays=plan.subarrays,
        group_size=plan.group_size,
        sinr_db=tuple(sinrs),
        order=order,
    )


def select_channels(
    plan: SubarrayPlan, ranking: ChannelRanking, policy: SelectionPolicy
) -> tuple:
    """Apply a selection policy; returns sorted channel indices, never empty."""
    if policy.mode == "ev_top_80pct":
        count = int(np.ceil(0.8 * len(ranking.order)))
        return tuple(sorted(ranking.order[:count]))
    if not plan.scored:
        raise ValueError(f"policy {policy.mode} needs a SINR-scored plan")
    if policy.mode == "single_subarray":
        return tuple(sorted(plan.subarrays[plan.order[0]]))
    n_groups = len(plan.subarrays)
    keep = int(np.ceil(n_groups / 2))
    chosen = []
    for g in plan.order[:keep]:
        chosen.extend(plan.subarrays[g])
    return tuple(sorted(chosen))
