import numpy as np
import pytest

import arrayfront as af
from arrayfront.cacgmm import segments_to_activity
from arrayfront.errors import NoiseFloorError
from arrayfront.rttm import Segment, SegmentList
from arrayfront.selection import (
    SelectionPolicy,
    ev_scores,
    partition_subarrays,
    score_subarrays,
    select_channels,
)
from arrayfront.signal import MultichannelWave, stft
from helpers import RATE, two_source_scene


def speechlike(rng, n=6 * RATE):
    x = rng.standard_normal(n)
    spec = np.fft.rfft(x)
    f = np.fft.rfftfreq(n, 1 / RATE)
    spec[1:] /= np.sqrt(f[1:])
    spec[0] = 0
    x = np.fft.irfft(spec, n)
    t = np.arange(n) / RATE
    x *= 0.05 + 0.95 * (0.5 * (1 + np.sin(2 * np.pi * 4 * t))) ** 2
    return x / np.abs(x).max()


def add_noise(rng, x, snr_db):
    noise = rng.standard_normal(len(x))
    noise *= np.sqrt(np.mean(x**2) / np.mean(noise**2)) * 10 ** (-snr_db / 20)
    return x + noise


def add_reverb(rng, x, decay_s=0.5):
    n_tail = int(decay_s * RATE)
    tail = rng.standard_normal(n_tail) * np.exp(-6.9078 * np.arange(n_tail) / n_tail)
    h = np.zeros(n_tail + 1)
    h[0] = 1.0
    h[1:] += 0.9 * tail
    return np.convolve(x, h)[: len(x)]


class TestEvScores:
    def test_identical_channels_tie_by_index(self, rng):
        x = speechlike(rng)
        ranking = ev_scores(stft(MultichannelWave(RATE, np.stack([x, x, x]))))
        assert ranking.scores[0] == pytest.approx(ranking.scores[1])
        assert ranking.order == (0, 1, 2)

    def test_noise_degrades_rank(self, rng):
        x = speechlike(rng)
        noisy = add_noise(rng, x, snr_db=0.0)
        ranking = ev_scores(stft(MultichannelWave(RATE, np.stack([x, noisy]))))
        assert ranking.scores[0] > ranking.scores[1]

    def test_reverb_degrades_rank(self, rng):
        x = speechlike(rng)
        wet = add_reverb(rng, x)
        ranking = ev_scores(stft(MultichannelWave(RATE, np.stack([x, wet]))))
        assert ranking.scores[0] > ranking.scores[1]

    def test_global_gain_invariance(self, rng):
        x = speechlike(rng)
        y = add_noise(rng, x, 5.0)
        a = ev_scores(stft(MultichannelWave(RATE, np.stack([x, y]))))
        b = ev_scores(stft(MultichannelWave(RATE, 0.3 * np.stack([x, y]))))
        assert np.allclose(a.scores, b.scores, rtol=1e-9)

    def test_single_channel_gain_leaves_ranking(self, rng):
        x = speechlike(rng)
        y = add_noise(rng, x, 3.0)
        z = add_reverb(rng, x)
        base = ev_scores(stft(MultichannelWave(RATE, np.stack([x, y, z]))))
        scaled = np.stack([x, 7.0 * y, z])
        after = ev_scores(stft(MultichannelWave(RATE, scaled)))
        assert base.order == after.order

    def test_monotone_degradation(self, rng):
        x = speechlike(rng)
        noise = rng.standard_normal(len(x))
        noise /= np.sqrt(np.mean(noise**2))
        rms = np.sqrt(np.mean(x**2))
        previous_rank = None
        for snr_db in np.linspace(30.0, -8.0, 20):
            degraded = x + rms * 10 ** (-snr_db / 20) * noise
            ranking = ev_scores(stft(MultichannelWave(RATE, np.stack([x, degraded]))))
            rank_of_degraded = ranking.order.index(1)
            if previous_rank is not None:
                assert rank_of_degraded >= previous_rank
            previous_rank = rank_of_degraded

    def test_silent_channel_scores_zero(self, rng):
        x = speechlike(rng)
        with pytest.warns(UserWarning, match="silent"):
            ranking = ev_scores(
                stft(MultichannelWave(RATE, np.stack([x, np.zeros_like(x)])))
            )
        assert ranking.scores[1] == 0.0
        assert np.all(np.isfinite(ranking.scores))

    def test_preconditions(self, rng):
        with pytest.raises(ValueError, match="two channels"):
            ev_scores(stft(MultichannelWave(RATE, speechlike(rng)[None, :])))
        short = MultichannelWave(RATE, 0.1 * rng.standard_normal((2, 2000)))
        with pytest.raises(ValueError, match="50 frames"):
            ev_scores(stft(short))


class TestPartition:
    def ranking(self, n):
        return af.ChannelRanking(order=tuple(range(n)), scores=np.arange(n, 0, -1.0))

    def test_24_channels_k5(self):
        plan = partition_subarrays(self.ranking(24), 5)
        assert [len(g) for g in plan.subarrays] == [5, 5, 5, 5, 4]

    def test_exact_fit(self):
        plan = partition_subarrays(self.ranking(5), 5)
        assert len(plan.subarrays) == 1

    def test_degenerate_small_array(self):
        plan = partition_subarrays(self.ranking(4), 5)
        assert plan.subarrays == ((0, 1, 2, 3),)

    def test_groups_partition_channels(self, rng):
        order = tuple(int(c) for c in rng.permutation(13))
        scores = np.zeros(13)
        for position, channel in enumerate(order):
            scores[channel] = 13 - position  # consistent with the order
        ranking = af.ChannelRanking(order=order, scores=scores)
        plan = partition_subarrays(ranking, 4)
        flat = [c for g in plan.subarrays for c in g]
        assert sorted(flat) == list(range(13))
        assert len(flat) == len(set(flat))

    def test_inconsistent_ranking_rejected(self):
        with pytest.raises(ValueError, match="descending"):
            af.ChannelRanking(order=(1, 0), scores=np.array([2.0, 1.0]))
        with pytest.raises(ValueError, match="permutation"):
            af.ChannelRanking(order=(0, 0), scores=np.array([1.0, 1.0]))


@pytest.fixture(scope="module")
def scene():
    spec = two_source_scene(
        duration_s=8.0,
        schedule=SegmentList(
            (
                Segment("sim", "spkA", 0.5, 2.5),
                Segment("sim", "spkB", 3.5, 2.5),
            )
        ),
        noise_db=-25.0,
        seed=21,
    )
    result = af.render(spec, RATE)
    tensor = stft(result.mixture)
    activity = segments_to_activity(result.schedule, tensor.frame_rate, tensor.frames)
    return tensor, activity


class TestScoreSubarrays:

    def test_duplicated_subarrays_tie_by_ev_rank(self, scene):
        tensor, activity = scene
        doubled = af.StftTensor(
            np.concatenate([tensor.values, tensor.values], axis=0),
            tensor.config, tensor.original_length, tensor.sample_rate,
        )
        ranking = af.ChannelRanking(order=tuple(range(8)), scores=np.zeros(8))
        plan = partition_subarrays(ranking, 4)
        scored = score_subarrays(plan, doubled, activity)
        assert scored.sinr_db[0] == pytest.approx(scored.sinr_db[1], abs=1e-9)
        assert scored.order == (0, 1)

    def test_noisy_subarray_ranks_last(self, scene, rng):
        tensor, activity = scene
        noisy = tensor.values.copy()
        power = np.sqrt(np.mean(np.abs(noisy) ** 2))
        noisy += (
            10.0 * power * (rng.standard_normal(noisy.shape) + 1j * rng.standard_normal(noisy.shape))
        )
        stacked = af.StftTensor(
            np.concatenate([tensor.values, noisy], axis=0),
            tensor.config, tensor.original_length, tensor.sample_rate,
        )
        ranking = af.ChannelRanking(order=tuple(range(8)), scores=np.zeros(8))
        plan = partition_subarrays(ranking, 4)
        scored = score_subarrays(plan, stacked, activity)
        assert scored.order[0] == 0
        assert scored.sinr_db[0] > scored.sinr_db[1]

    def test_scores_clamped_and_finite(self, scene):
        tensor, activity = scene
        ranking = af.ChannelRanking(order=tuple(range(4)), scores=np.zeros(4))
        scored = score_subarrays(partition_subarrays(ranking, 4), tensor, activity)
        assert np.all(np.isfinite(scored.sinr_db))
        assert np.all(np.abs(scored.sinr_db) <= 60.0)

    def test_missing_noise_floor_rejected(self, scene):
        tensor, _ = scene
        always_on = af.ActivityMatrix(
            ("spkA",), np.ones((2, tensor.frames)), tensor.frame_rate
        )
        ranking = af.ChannelRanking(order=tuple(range(4)), scores=np.zeros(4))
        with pytest.raises(NoiseFloorError):
            score_subarrays(partition_subarrays(ranking, 4), tensor, always_on)


class TestSelectChannels:
    def scored_plan(self, n=24, k=5):
        ranking = af.ChannelRanking(order=tuple(range(n)), scores=np.arange(n, 0, -1.0))
        plan = partition_subarrays(ranking, k)
        n_groups = len(plan.subarrays)
        sinr = tuple(float(v) for v in np.arange(n_groups, 0, -1.0))
        plan = af.SubarrayPlan(
            subarrays=plan.subarrays, group_size=k, sinr_db=sinr,
            order=tuple(range(n_groups)),
        )
        return plan, ranking

    def test_single_subarray(self):
        plan, ranking = self.scored_plan()
        got = select_channels(plan, ranking, SelectionPolicy("single_subarray"))
        assert got == (0, 1, 2, 3, 4)

    def test_front_half(self):
        plan, ranking = self.scored_plan()
        got = select_channels(plan, ranking, SelectionPolicy("front_half_subarrays"))
        assert len(got) == 15  # ceil(5/2) = 3 groups of 5

    def test_ev_top_80pct(self):
        plan, ranking = self.scored_plan(n=10, k=5)
        got = select_channels(plan, ranking, SelectionPolicy("ev_top_80pct"))
        assert got == tuple(range(8))

    def test_never_empty_and_in_range(self):
        plan, ranking = self.scored_plan(n=3, k=5)
        for mode in ("single_subarray", "front_half_subarrays", "ev_top_80pct"):
            got = select_channels(plan, ranking, SelectionPolicy(mode))
            assert len(got) >= 1
            assert set(got) <= set(range(3))

    def test_unscored_plan_rejected_when_needed(self):
        ranking = af.ChannelRanking(order=tuple(range(6)), scores=np.zeros(6))
        plan = partition_subarrays(ranking, 3)
        with pytest.raises(ValueError, match="scored"):
            select_channels(plan, ranking, SelectionPolicy("single_subarray"))
        select_channels(plan, ranking, SelectionPolicy("ev_top_80pct"))

    def test_unknown_policy_rejected(self):
        with pytest.raises(ValueError):
            SelectionPolicy("best_effort")
