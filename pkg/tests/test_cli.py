import json
import os
import subprocess
import sys

import numpy as np
import pytest

import arrayfront as af
from arrayfront.rttm import Segment, SegmentList, save_rttm
from helpers import RATE, delay_channels, two_source_scene


def run_cli(*args, env_extra=None):
    env = dict(os.environ)
    if env_extra:
        env.update(env_extra)
    return subprocess.run(
        [sys.executable, "-m", "arrayfront", *args],
        capture_output=True, text=True, env=env,
    )


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    """Small rendered scene shared by the CLI tests."""
    root = tmp_path_factory.mktemp("clifx")
    schedule = SegmentList(
        (
            Segment("sess", "spkA", 0.5, 2.5),
            Segment("sess", "spkB", 3.5, 2.5),
        )
    )
    spec = two_source_scene(
        duration_s=7.0, schedule=schedule, noise_db=-30.0, seed=23, session="sess"
    )
    result = af.render(spec, RATE)
    af.write_wav(result.mixture, root / "mix.wav", "float32")
    save_rttm(schedule, root / "init.rttm")
    mono = result.mixture.channel(0)
    af.write_wav(mono, root / "mono.wav", "float32")
    # co-located variant for lag tests: no geometric inter-channel delays
    rng = np.random.default_rng(77)
    base = result.mixture.samples[0]
    stacked = np.stack([base + 0.02 * rng.standard_normal(base.shape) for _ in range(4)])
    af.write_wav(af.MultichannelWave(RATE, stacked), root / "colocated.wav", "float32")
    return root


class TestExitCodes:
    def test_missing_file_is_io_error(self, tmp_path):
        proc = run_cli("sync", "--in", str(tmp_path / "nope.wav"), "--out", str(tmp_path / "o.wav"))
        assert proc.returncode == 2
        assert "nope.wav" in proc.stderr

    def test_bad_flag_is_usage_error(self):
        proc = run_cli("sync", "--nonsense")
        assert proc.returncode == 64

    def test_unknown_subcommand_is_usage_error(self):
        proc = run_cli("frobnicate")
        assert proc.returncode == 64

    def test_mono_select_is_processing_error(self, fixture_dir, tmp_path):
        proc = run_cli(
            "select", "--in", str(fixture_dir / "mono.wav"),
            "--rttm", str(fixture_dir / "init.rttm"),
            "--policy", "ev80", "--out", str(tmp_path / "plan.json"),
        )
        assert proc.returncode == 3
        assert "2 channels" in proc.stderr


class TestSync:
    def test_aligned_input(self, fixture_dir, tmp_path):
        out = tmp_path / "synced.wav"
        proc = run_cli(
            "sync", "--in", str(fixture_dir / "colocated.wav"), "--out", str(out),
            "--ref", "0", "--max-lag-s", "0.5",
        )
        assert proc.returncode == 0, proc.stderr
        report = json.loads((tmp_path / "synced.wav.lags.json").read_text())
        assert [e["lag_samples"] for e in report["lags"]] == [0, 0, 0, 0]
        assert out.exists()

    def test_recovers_delays(self, fixture_dir, tmp_path):
        wave = af.read_wav(fixture_dir / "colocated.wav")
        delayed = delay_channels(wave, [0, 100, -200, 55])
        af.write_wav(delayed, tmp_path / "delayed.wav", "float32")
        proc = run_cli(
            "sync", "--in", str(tmp_path / "delayed.wav"),
            "--out", str(tmp_path / "fixed.wav"),
        )
        assert proc.returncode == 0
        report = json.loads((tmp_path / "fixed.wav.lags.json").read_text())
        assert [e["lag_samples"] for e in report["lags"]] == [0, 100, -200, 55]


class TestSelect:
    def test_plan_structure(self, fixture_dir, tmp_path):
        out = tmp_path / "plan.json"
        proc = run_cli(
            "select", "--in", str(fixture_dir / "mix.wav"),
            "--rttm", str(fixture_dir / "init.rttm"),
            "--policy", "single", "--k", "2", "--out", str(out),
        )
        assert proc.returncode == 0, proc.stderr
        plan = json.loads(out.read_text())
        assert len(plan["plan"]["subarrays"]) == 2
        assert len(plan["selected_channels"]) == 2
        assert sorted(plan["ranking"]["order"]) == [0, 1, 2, 3]
        assert len(plan["plan"]["sinr_db"]) == 2

    def test_ev80_policy_count(self, fixture_dir, tmp_path):
        out = tmp_path / "plan.json"
        proc = run_cli(
            "select", "--in", str(fixture_dir / "mix.wav"),
            "--rttm", str(fixture_dir / "init.rttm"),
            "--policy", "ev80", "--out", str(out),
        )
        assert proc.returncode == 0
        plan = json.loads(out.read_text())
        assert len(plan["selected_channels"]) == 4  # ceil(0.8 * 4)


class TestEnhance:
    def test_writes_named_segment_files(self, fixture_dir, tmp_path):
        out_dir = tmp_path / "enh"
        proc = run_cli(
            "enhance", "--in", str(fixture_dir / "mix.wav"),
            "--rttm", str(fixture_dir / "init.rttm"),
            "--speaker", "spkA", "--bf", "mvdr",
            "--em-iterations", "5", "--out-dir", str(out_dir),
        )
        assert proc.returncode == 0, proc.stderr
        files = sorted(p.name for p in out_dir.iterdir())
        assert files == ["sess-spkA-500-3000.wav"]
        wave = af.read_wav(out_dir / files[0])
        assert wave.channels == 1
        assert wave.n_samples > RATE

    def test_gevd_flag_changes_output(self, fixture_dir, tmp_path):
        outputs = {}
        for kind in ("mvdr", "gevd"):
            out_dir = tmp_path / kind
            proc = run_cli(
                "enhance", "--in", str(fixture_dir / "mix.wav"),
                "--rttm", str(fixture_dir / "init.rttm"),
                "--speaker", "spkA", "--bf", kind,
                "--em-iterations", "4", "--out-dir", str(out_dir),
            )
            assert proc.returncode == 0, proc.stderr
            outputs[kind] = (out_dir / "sess-spkA-500-3000.wav").read_bytes()
        assert outputs["mvdr"] != outputs["gevd"]

    def test_unknown_speaker_listed(self, fixture_dir, tmp_path):
        proc = run_cli(
            "enhance", "--in", str(fixture_dir / "mix.wav"),
            "--rttm", str(fixture_dir / "init.rttm"),
            "--speaker", "ghost", "--out-dir", str(tmp_path / "x"),
        )
        assert proc.returncode == 3
        assert "spkA" in proc.stderr and "spkB" in proc.stderr

    def test_empty_rttm_is_processing_error(self, fixture_dir, tmp_path):
        empty = tmp_path / "empty.rttm"
        empty.write_text("")
        proc = run_cli(
            "enhance", "--in", str(fixture_dir / "mix.wav"),
            "--rttm", str(empty), "--speaker", "spkA",
            "--out-dir", str(tmp_path / "x"),
        )
        assert proc.returncode == 3


class TestRectifyCommand:
    def test_output_parses_and_stages_accepted(self, fixture_dir, tmp_path):
        out = tmp_path / "rect.rttm"
        proc = run_cli(
            "rectify", "--in", str(fixture_dir / "mix.wav"),
            "--rttm", str(fixture_dir / "init.rttm"),
            "--window-s", "7", "--shift-s", "3.5",
            "--em-iterations", "4", "--stages", "1",
            "--out", str(out),
        )
        assert proc.returncode == 0, proc.stderr
        segments = af.read_rttm(out)
        assert len(segments) >= 1
        assert set(segments.speakers()) <= {"spkA", "spkB"}

    def test_two_stages_feed_forward(self, fixture_dir, tmp_path):
        outs = {}
        for stages in ("1", "2"):
            out = tmp_path / f"rect{stages}.rttm"
            proc = run_cli(
                "rectify", "--in", str(fixture_dir / "mix.wav"),
                "--rttm", str(fixture_dir / "init.rttm"),
                "--window-s", "7", "--shift-s", "3.5",
                "--em-iterations", "4", "--stages", stages,
                "--out", str(out),
            )
            assert proc.returncode == 0, proc.stderr
            outs[stages] = af.read_rttm(out)
        assert len(outs["2"]) >= 1  # second stage consumed the first's output

    def test_probs_dump(self, fixture_dir, tmp_path):
        out = tmp_path / "rect.rttm"
        probs = tmp_path / "probs.f32"
        proc = run_cli(
            "rectify", "--in", str(fixture_dir / "mix.wav"),
            "--rttm", str(fixture_dir / "init.rttm"),
            "--window-s", "7", "--shift-s", "3.5",
            "--em-iterations", "3", "--stages", "1",
            "--out", str(out), "--probs-out", str(probs),
        )
        assert proc.returncode == 0, proc.stderr
        sidecar = json.loads((tmp_path / "probs.f32.json").read_text())
        data = np.fromfile(probs, dtype=np.float32)
        assert data.size == len(sidecar["speakers"]) * sidecar["n_frames"]
        assert sidecar["frame_rate"] == pytest.approx(62.5)


class TestScore:
    def test_identity_zero(self, fixture_dir):
        proc = run_cli(
            "score", "--ref", str(fixture_dir / "init.rttm"),
            "--hyp", str(fixture_dir / "init.rttm"),
        )
        assert proc.returncode == 0
        report = json.loads(proc.stdout)
        assert report["der_pct"] == pytest.approx(0.0, abs=1e-9)

    def test_collar_flag(self, fixture_dir, tmp_path):
        shifted = SegmentList(
            tuple(
                Segment(s.session, s.speaker, s.onset + 0.2, s.duration)
                for s in af.read_rttm(fixture_dir / "init.rttm")
            )
        )
        save_rttm(shifted, tmp_path / "hyp.rttm")
        strict = run_cli(
            "score", "--ref", str(fixture_dir / "init.rttm"),
            "--hyp", str(tmp_path / "hyp.rttm"), "--collar", "0",
        )
        forgiving = run_cli(
            "score", "--ref", str(fixture_dir / "init.rttm"),
            "--hyp", str(tmp_path / "hyp.rttm"),
        )
        strict_der = json.loads(strict.stdout)["der_pct"]
        default_der = json.loads(forgiving.stdout)["der_pct"]
        assert default_der == pytest.approx(0.0, abs=1e-9)
        assert strict_der > 0

    def test_session_mismatch(self, fixture_dir, tmp_path):
        other = SegmentList((Segment("other", "a", 0.0, 1.0),))
        save_rttm(other, tmp_path / "other.rttm")
        proc = run_cli(
            "score", "--ref", str(fixture_dir / "init.rttm"),
            "--hyp", str(tmp_path / "other.rttm"),
        )
        assert proc.returncode == 3


class TestSimulate:
    def scene_doc(self):
        return {
            "duration_s": 2.0,
            "session": "scn",
            "mics": [[0, 0, 1.5], [0.1, 0, 1.5]],
            "sources": [
                {"id": "a", "position": [1.5, 0.3, 1.5]},
                {"id": "b", "position": [-1.0, 1.0, 1.5]},
            ],
            "schedule": [
                {"speaker": "a", "onset": 0.1, "duration": 1.0},
                {"speaker": "b", "onset": 0.9, "duration": 1.0},
            ],
            "noise_db": -30,
            "seed": 12,
        }

    def test_outputs_and_schedule_roundtrip(self, tmp_path):
        spec_path = tmp_path / "scene.json"
        spec_path.write_text(json.dumps(self.scene_doc()))
        proc = run_cli("simulate", "--spec", str(spec_path), "--out-prefix", str(tmp_path / "fx" / "s1"))
        assert proc.returncode == 0, proc.stderr
        assert (tmp_path / "fx" / "s1.wav").exists()
        schedule = af.read_rttm(tmp_path / "fx" / "s1.rttm")
        assert len(schedule) == 2
        assert (tmp_path / "fx" / "s1-image-a.wav").exists()
        assert (tmp_path / "fx" / "s1-image-b.wav").exists()

    def test_deterministic_across_runs(self, tmp_path):
        spec_path = tmp_path / "scene.json"
        spec_path.write_text(json.dumps(self.scene_doc()))
        blobs = []
        for tag in ("x", "y"):
            proc = run_cli("simulate", "--spec", str(spec_path), "--out-prefix", str(tmp_path / tag))
            assert proc.returncode == 0
            blobs.append((tmp_path / f"{tag}.wav").read_bytes())
        assert blobs[0] == blobs[1]

    def test_invalid_spec_points_at_field(self, tmp_path):
        doc = self.scene_doc()
        doc["sources"] = []
        spec_path = tmp_path / "bad.json"
        spec_path.write_text(json.dumps(doc))
        proc = run_cli("simulate", "--spec", str(spec_path), "--out-prefix", str(tmp_path / "z"))
        assert proc.returncode == 3
        assert "/sources" in proc.stderr


class TestThreadOverride:
    def test_output_unchanged_under_thread_cap(self, fixture_dir, tmp_path):
        digests = []
        for threads in (None, "2"):
            out = tmp_path / f"plan-{threads}.json"
            extra = {"ARRAYFRONT_NUM_THREADS": threads} if threads else None
            proc = run_cli(
                "select", "--in", str(fixture_dir / "mix.wav"),
                "--rttm", str(fixture_dir / "init.rttm"),
                "--policy", "ev80", "--out", str(out),
                env_extra=extra,
            )
            assert proc.returncode == 0, proc.stderr
            digests.append(out.read_bytes())
        assert digests[0] == digests[1]


class TestConfig:
    def test_config_supplies_values_flags_win(self, fixture_dir, tmp_path):
        config = {
            "sync": {"reference": 1, "max_lag_s": 0.25},
            "io": {"in": str(fixture_dir / "mix.wav")},
        }
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(config))
        out = tmp_path / "o.wav"
        proc = run_cli("--config", str(cfg_path), "sync", "--out", str(out), "--ref", "2")
        assert proc.returncode == 0, proc.stderr
        report = json.loads((tmp_path / "o.wav.lags.json").read_text())
        assert report["reference"] == 2  # flag beats config

    def test_unknown_config_key_rejected(self, fixture_dir, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"bogus": 1}))
        proc = run_cli(
            "--config", str(cfg_path), "score",
            "--ref", str(fixture_dir / "init.rttm"),
            "--hyp", str(fixture_dir / "init.rttm"),
        )
        assert proc.returncode == 3
        assert "bogus" in proc.stderr

    def test_missing_required_value(self, tmp_path):
        proc = run_cli("sync", "--out", str(tmp_path / "o.wav"))
        assert proc.returncode == 3
        assert "--in" in proc.stderr
