"""Inter-channel lag estimation and alignment.

Lags are found by normalized cross-correlation, evaluated in two passes: a
coarse search on decimated energy envelopes (about 50 Hz frame rate) followed
by a sample-level refinement within two envelope frames of the coarse peak.
Resolution is one sample; fractional misalignment is left to beamforming.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import next_fast_len

from .errors import SilentChannelError
from .signal import MultichannelWave

DEFAULT_MAX_LAG_S = 2.0
_ENVELOPE_RATE_HZ = 50.0


@dataclass(frozen=True)
class LagEstimate:
    """Lag of a channel relative to the reference.

    Positive lag means the channel is delayed: channel[n] ~ reference[n - lag].
    """

    channel: int
    lag: int
    peak_correlation: float


def _pick_peak(values: np.ndarray, lags: np.ndarray) -> int:
    """Index of the maximum; exact ties prefer smaller |lag|, then negative."""
    best = values.max()
    candidates = np.flatnonzero(values >= best)
    keys = sorted(candidates, key=lambda i: (abs(int(lags[i])), int(lags[i])))
    return int(keys[0])


def _correlation_window(x: np.ndarray, y: np.ndarray, lag_lo: int, lag_hi: int) -> np.ndarray:
    """r(l) = sum_n x[n] * y[n + l] for l in [lag_lo, lag_hi], via one FFT pair."""
    span = max(len(x), len(y)) + max(abs(lag_lo), abs(lag_hi))
    nfft = next_fast_len(span + 1)
    spec = np.fft.rfft(y, nfft) * np.conj(np.fft.rfft(x, nfft))
    circular = np.fft.irfft(spec, nfft)
    lags = np.arange(lag_lo, lag_hi + 1)
    return circular[lags % nfft]


def _envelope(x: np.ndarray, hop: int) -> np.ndarray:
    n_blocks = len(x) // hop
    if n_blocks == 0:
        return np.sqrt(np.mean(x**2, keepdims=True))
    blocks = x[: n_blocks * hop].reshape(n_blocks, hop)
    return np.sqrt(np.mean(blocks**2, axis=1))


def estimate_lag(
    x: np.ndarray,
    y: np.ndarray,
    max_lag: int,
    channel: int = 0,
    envelope_hop: int = 320,
) -> LagEstimate:
    """Argmax of normalized cross-correlation over integer lags in [-max_lag, +max_lag].

    ``envelope_hop`` sets the decimation of the coarse pass (320 samples is
    50 Hz at 16 kHz). Raises :class:`SilentChannelError` on all-zero input.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if max_lag < 0:
        raise ValueError("max_lag must be >= 0")
    if max_lag >= min(len(x), len(y)):
        raise ValueError(f"max_lag {max_lag} must be smaller than the signal length")
    energy_x = float(np.dot(x, x))
    energy_y = float(np.dot(y, y))
    if energy_x <= 0 or energy_y <= 0:
        raise SilentChannelError("correlation undefined for an all-zero signal")
    norm = np.sqrt(energy_x * energy_y)

    hop = max(1, min(int(envelope_hop), max_lag if max_lag > 0 else int(envelope_hop)))
    coarse_reach = max_lag // hop + 1
    env_x = _envelope(x, hop)
    env_y = _envelope(y, hop)
    reach = min(coarse_reach, min(len(env_x), len(env_y)) - 1)
    if reach > 0 and min(len(env_x), len(env_y)) >= 8:
        env_lags = np.arange(-reach, reach + 1)
        env_corr = _correlation_window(env_x, env_y, -reach, reach)
        coarse = int(env_lags[_pick_peak(env_corr, env_lags)]) * hop
    else:
        coarse = None

    if coarse is None or abs(coarse) > max_lag:
        # Too little envelope evidence, or the coarse peak lies outside the
        # allowed range: search the full range so the clipped argmax is exact.
        lo, hi = -max_lag, max_lag
    else:
        lo = max(-max_lag, coarse - 2 * hop)
        hi = min(max_lag, coarse + 2 * hop)
    corr = _correlation_window(x, y, lo, hi) / norm
    lags = np.arange(lo, hi + 1)
    best = _pick_peak(corr, lags)
    return LagEstimate(channel=channel, lag=int(lags[best]), peak_correlation=float(corr[best]))


def synchronize(
    wave: MultichannelWave,
    reference: int = 0,
    max_lag: int | None = None,
    envelope_hop: int | None = None,
) -> tuple[MultichannelWave, list[LagEstimate]]:
    """Align every channel to the reference by its estimated lag.

    Each channel is shifted by -lag with zeros filling the vacated end;
    re-estimating lags on the output yields 0 for every channel.
    """
    if not 0 <= reference < wave.channels:
        raise ValueError(f"reference channel {reference} out of range for {wave.channels} channels")
    if max_lag is None:
        max_lag = int(DEFAULT_MAX_LAG_S * wave.sample_rate)
    if envelope_hop is None:
        envelope_hop = max(1, int(round(wave.sample_rate / _ENVELOPE_RATE_HZ)))

    ref_signal = wave.samples[reference]
    estimates = []
    aligned = np.zeros_like(wave.samples)
    n = wave.n_samples
    for c in range(wave.channels):
        if c == reference:
            if float(np.dot(ref_signal, ref_signal)) <= 0:
                raise SilentChannelError(f"channel {c}: correlation undefined for an all-zero signal")
            est = LagEstimate(channel=c, lag=0, peak_correlation=1.0)
        else:
            try:
                est = estimate_lag(
                    ref_signal, wave.samples[c], max_lag, channel=c, envelope_hop=envelope_hop
                )
            except SilentChannelError as e:
                raise SilentChannelError(f"channel {c}: {e}") from None
        estimates.append(est)
        lag = est.lag
        if lag >= 0:
            aligned[c, : n - lag] = wave.samples[c, lag:]
        else:
            aligned[c, -lag:] = wave.samples[c, : n + lag]
    return MultichannelWave(wave.sample_rate, aligned), estimates
