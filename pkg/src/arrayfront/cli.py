"""Batch command-line interface.

One binary with subcommands mirroring the processing stages (sync, select,
enhance, rectify, score, simulate) so externally produced diarization can be
interleaved as RTTM files between stages. Side outputs are JSON for
scripting. Exit codes: 0 success, 2 I/O error, 3 processing error, 64 usage.

The heavy modules are imported lazily inside the command handlers so that
``--help`` stays fast and the ARRAYFRONT_NUM_THREADS override can be applied
to the BLAS thread pools before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

EXIT_OK = 0
EXIT_IO = 2
EXIT_PROCESSING = 3
EXIT_USAGE = 64

CONFIG_DEFAULTS = {
    "stft": {"window_length": 1024, "hop": 256, "fft_size": 1024, "window": "sqrt_hann"},
    "selection": {"policy": "single", "k": 5},
    "beamformer": "mvdr",
    "sync": {"reference": 0, "max_lag_s": 2.0},
    "gss": {"context_s": 15.0, "em_iterations": 20},
    "rectify": {
        "window_s": 120.0,
        "shift_s": 60.0,
        "threshold": 0.5,
        "median_frames": 11,
        "min_segment_s": 0.2,
        "min_gap_s": 0.3,
        "em_iterations": 10,
        "inactive_floor": 0.25,
    },
    "stages": 2,
    "score": {"collar": 0.25},
    "io": {
        "in": None,
        "out": None,
        "rttm": None,
        "out_dir": None,
        "ref": None,
        "hyp": None,
        "spec": None,
        "out_prefix": None,
        "channels": None,
        "lags_out": None,
        "probs_out": None,
    },
}

POLICY_NAMES = {
    "single": "single_subarray",
    "front50": "front_half_subarrays",
    "ev80": "ev_top_80pct",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="arrayfront", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON pipeline configuration; explicit flags win")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("sync", help="estimate inter-channel lags and align channels")
    p.add_argument("--in", dest="in_path", help="input multichannel WAV")
    p.add_argument("--out", help="aligned output WAV")
    p.add_argument("--ref", type=int, help="reference channel index (default 0)")
    p.add_argument("--max-lag-s", type=float, help="lag search range in seconds (default 2)")
    p.add_argument("--lags-out", help="lag report JSON (default <out>.lags.json)")

    p = sub.add_parser("select", help="rank channels and pick a subset")
    p.add_argument("--in", dest="in_path", help="input multichannel WAV")
    p.add_argument("--rttm", help="diarization annotation driving SINR scoring")
    p.add_argument("--policy", choices=sorted(POLICY_NAMES), help="selection policy")
    p.add_argument("--k", type=int, help="virtual subarray size (default 5)")
    p.add_argument("--out", help="plan JSON output path")

    p = sub.add_parser("enhance", help="guided source separation for one speaker")
    p.add_argument("--in", dest="in_path", help="input multichannel WAV")
    p.add_argument("--rttm", help="diarization annotation")
    p.add_argument("--speaker", help="target speaker id")
    p.add_argument("--channels", help="plan JSON restricting the channel set")
    p.add_argument("--bf", choices=["mvdr", "gevd"], help="beamformer kind")
    p.add_argument("--context-s", type=float, help="context seconds around segments")
    p.add_argument("--em-iterations", type=int, help="EM iterations per segment")
    p.add_argument("--out-dir", help="directory for per-segment WAVs")

    p = sub.add_parser("rectify", help="sliding-window cACGMM diarization rectification")
    p.add_argument("--in", dest="in_path", help="input multichannel WAV")
    p.add_argument("--rttm", help="initial diarization RTTM")
    p.add_argument("--channels", help="plan JSON restricting the channel set")
    p.add_argument("--window-s", type=float, help="window length (default 120)")
    p.add_argument("--shift-s", type=float, help="window shift (default 60)")
    p.add_argument("--threshold", type=float, help="speech probability threshold")
    p.add_argument("--median-frames", type=int, help="median filter length (odd)")
    p.add_argument("--min-segment-s", type=float, help="drop shorter segments")
    p.add_argument("--min-gap-s", type=float, help="merge same-speaker gaps below this")
    p.add_argument("--em-iterations", type=int, help="EM iterations per window")
    p.add_argument("--inactive-floor", type=float, help="soft floor for annotated inactivity")
    p.add_argument("--stages", type=int, help="rectification passes (default 2)")
    p.add_argument("--out", help="rectified RTTM output")
    p.add_argument("--probs-out", help="optional frame-probability dump (float32 + JSON sidecar)")

    p = sub.add_parser("score", help="DER between reference and hypothesis RTTM")
    p.add_argument("--ref", help="reference RTTM")
    p.add_argument("--hyp", help="hypothesis RTTM")
    p.add_argument("--collar", type=float, help="boundary forgiveness in seconds (default 0.25)")

    p = sub.add_parser("simulate", help="render a synthetic scene to WAV + RTTM")
    p.add_argument("--spec", help="scene JSON")
    p.add_argument("--out-prefix", help="output path prefix")
    p.add_argument("--sample-rate", type=int, default=16000)
    return parser


def _merge_config(path) -> dict:
    from .errors import ConfigError

    merged = json.loads(json.dumps(CONFIG_DEFAULTS))  # deep copy
    if path is None:
        return merged
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top-level value must be an object")
    _merge_section(doc, merged, path, "")
    return merged


def _merge_section(doc, into, path, prefix):
    from .errors import ConfigError

    for key, value in doc.items():
        if key not in into:
            raise ConfigError(f"{path}: unknown key {prefix}/{key}")
        if isinstance(into[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{path}: {prefix}/{key} must be an object")
            _merge_section(value, into[key], path, f"{prefix}/{key}")
        else:
            into[key] = value


def _pick(flag, config_value):
    return flag if flag is not None else config_value


def _require(value, name):
    from .errors import ConfigError

    if value is None:
        raise ConfigError(f"missing required value {name} (flag or config)")
    return value


def _stft_config(cfg):
    from .signal import StftConfig

    sect = cfg["stft"]
    return StftConfig(
        window_length=int(sect["window_length"]),
        hop=int(sect["hop"]),
        fft_size=int(sect["fft_size"]),
        window=str(sect["window"]),
    )


def _json_dump(doc, path=None):
    text = json.dumps(doc, indent=2, sort_keys=True)
    if path is None:
        print(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


def _load_channel_subset(path):
    if path is None:
        return None
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    channels = doc.get("selected_channels") if isinstance(doc, dict) else doc
    from .errors import ConfigError

    if not isinstance(channels, list) or not channels:
        raise ConfigError(f"{path}: expected a non-empty channel list under 'selected_channels'")
    return [int(c) for c in channels]


def cmd_sync(args, cfg) -> int:
    from .signal import read_wav, write_wav
    from .sync import synchronize

    in_path = _require(_pick(args.in_path, cfg["io"]["in"]), "--in")
    out_path = _require(_pick(args.out, cfg["io"]["out"]), "--out")
    reference = int(_pick(args.ref, cfg["sync"]["reference"]))
    max_lag_s = float(_pick(args.max_lag_s, cfg["sync"]["max_lag_s"]))
    lags_out = _pick(args.lags_out, cfg["io"]["lags_out"]) or f"{out_path}.lags.json"

    wave = read_wav(in_path)
    aligned, estimates = synchronize(
        wave, reference=reference, max_lag=int(max_lag_s * wave.sample_rate)
    )
    write_wav(aligned, out_path, encoding="float32")
    _json_dump(
        {
            "reference": reference,
            "lags": [
                {"channel": e.channel, "lag_samples": e.lag, "peak": e.peak_correlation}
                for e in estimates
            ],
        },
        lags_out,
    )
    print(f"sync: wrote {out_path}; lags {[e.lag for e in estimates]}")
    return EXIT_OK


def cmd_select(args, cfg) -> int:
    from .cacgmm import segments_to_activity
    from .rttm import read_rttm
    from .selection import (
        SelectionPolicy,
        ev_scores,
        partition_subarrays,
        score_subarrays,
        select_channels,
    )
    from .signal import read_wav, stft

    in_path = _require(_pick(args.in_path, cfg["io"]["in"]), "--in")
    rttm_path = _require(_pick(args.rttm, cfg["io"]["rttm"]), "--rttm")
    out_path = _require(_pick(args.out, cfg["io"]["out"]), "--out")
    policy_name = _pick(args.policy, cfg["selection"]["policy"])
    policy = SelectionPolicy(POLICY_NAMES.get(policy_name, policy_name))
    group_size = int(_pick(args.k, cfg["selection"]["k"]))

    wave = read_wav(in_path)
    if wave.channels < 2:
        raise ValueError("channel selection needs >= 2 channels")
    tensor = stft(wave, _stft_config(cfg))
    segments = read_rttm(rttm_path)
    ranking = ev_scores(tensor)
    plan = partition_subarrays(ranking, group_size)
    activity = segments_to_activity(segments, tensor.frame_rate, tensor.frames)
    plan = score_subarrays(plan, tensor, activity)
    selected = select_channels(plan, ranking, policy)

    _json_dump(
        {
            "ranking": ranking.to_dict(),
            "plan": plan.to_dict(),
            "policy": policy.mode,
            "selected_channels": list(selected),
        },
        out_path,
    )
    print(f"select: policy {policy.mode} picked channels {list(selected)}")
    return EXIT_OK


def cmd_enhance(args, cfg) -> int:
    from .cacgmm import gss_enhance_segments
    from .rttm import read_rttm
    from .signal import read_wav, stft, write_wav

    in_path = _require(_pick(args.in_path, cfg["io"]["in"]), "--in")
    rttm_path = _require(_pick(args.rttm, cfg["io"]["rttm"]), "--rttm")
    out_dir = _require(_pick(args.out_dir, cfg["io"]["out_dir"]), "--out-dir")
    speaker = _require(args.speaker, "--speaker")
    beamformer = _pick(args.bf, cfg["beamformer"])
    context_s = float(_pick(args.context_s, cfg["gss"]["context_s"]))
    iterations = int(_pick(args.em_iterations, cfg["gss"]["em_iterations"]))
    subset = _load_channel_subset(_pick(args.channels, cfg["io"]["channels"]))

    wave = read_wav(in_path)
    if subset:
        wave = wave.subset(subset)
    if wave.channels < 2:
        raise ValueError("guided source separation needs >= 2 channels")
    segments = read_rttm(rttm_path)
    if len(segments) == 0:
        raise ValueError(f"{rttm_path}: annotation is empty")
    tensor = stft(wave, _stft_config(cfg))
    enhanced = gss_enhance_segments(
        tensor, segments, speaker,
        context_s=context_s, beamformer=beamformer, iterations=iterations,
    )
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for item in enhanced:
        seg = item.segment
        name = (
            f"{seg.session}-{seg.speaker}-{int(round(seg.onset * 1000)):d}"
            f"-{int(round(seg.end * 1000)):d}.wav"
        )
        path = os.path.join(out_dir, name)
        write_wav(item.wave, path, encoding="float32")
        written.append(name)
    print(f"enhance: wrote {len(written)} segment files to {out_dir}")
    return EXIT_OK


def cmd_rectify(args, cfg) -> int:
    import numpy as np

    from .rectify import RectifyConfig, rectify
    from .rttm import read_rttm, save_rttm
    from .signal import read_wav

    in_path = _require(_pick(args.in_path, cfg["io"]["in"]), "--in")
    rttm_path = _require(_pick(args.rttm, cfg["io"]["rttm"]), "--rttm")
    out_path = _require(_pick(args.out, cfg["io"]["out"]), "--out")
    probs_out = _pick(args.probs_out, cfg["io"]["probs_out"])
    stages = int(_pick(args.stages, cfg["stages"]))
    if stages < 1:
        raise ValueError("need at least one rectification stage")
    subset = _load_channel_subset(_pick(args.channels, cfg["io"]["channels"]))

    sect = cfg["rectify"]
    rcfg = RectifyConfig(
        window_s=float(_pick(args.window_s, sect["window_s"])),
        shift_s=float(_pick(args.shift_s, sect["shift_s"])),
        threshold=float(_pick(args.threshold, sect["threshold"])),
        median_frames=int(_pick(args.median_frames, sect["median_frames"])),
        min_segment_s=float(_pick(args.min_segment_s, sect["min_segment_s"])),
        min_gap_s=float(_pick(args.min_gap_s, sect["min_gap_s"])),
        em_iterations=int(_pick(args.em_iterations, sect["em_iterations"])),
        inactive_floor=float(_pick(args.inactive_floor, sect["inactive_floor"])),
    )

    wave = read_wav(in_path)
    if subset:
        wave = wave.subset(subset)
    segments = read_rttm(rttm_path)
    if len(segments) == 0:
        raise ValueError(f"{rttm_path}: annotation is empty")
    stft_cfg = _stft_config(cfg)
    probs = None
    for _stage in range(stages):
        segments, probs = rectify(wave, segments, rcfg, stft_cfg)
        if len(segments) == 0:
            break
    save_rttm(segments, out_path)
    if probs_out and probs is not None:
        probs.probabilities.astype(np.float32).tofile(probs_out)
        _json_dump(
            {
                "speakers": list(probs.speakers),
                "frame_rate": probs.frame_rate,
                "n_frames": probs.n_frames,
                "layout": "row-major float32 (speakers x frames)",
            },
            f"{probs_out}.json",
        )
    print(f"rectify: {stages} stage(s), {len(segments)} segments -> {out_path}")
    return EXIT_OK


def cmd_score(args, cfg) -> int:
    from .rttm import der, read_rttm

    ref_path = _require(_pick(args.ref, cfg["io"]["ref"]), "--ref")
    hyp_path = _require(_pick(args.hyp, cfg["io"]["hyp"]), "--hyp")
    collar = float(_pick(args.collar, cfg["score"]["collar"]))
    report = der(read_rttm(ref_path), read_rttm(hyp_path), collar)
    _json_dump(report.to_dict())
    return EXIT_OK


def cmd_simulate(args, cfg) -> int:
    from .rttm import save_rttm
    from .signal import write_wav
    from .simulate import SceneSpec, render

    spec_path = _require(_pick(args.spec, cfg["io"]["spec"]), "--spec")
    prefix = _require(_pick(args.out_prefix, cfg["io"]["out_prefix"]), "--out-prefix")
    with open(spec_path, "r", encoding="utf-8") as fh:
        spec = SceneSpec.from_json(fh.read())
    result = render(spec, sample_rate=args.sample_rate)
    directory = os.path.dirname(prefix)
    if directory:
        os.makedirs(directory, exist_ok=True)
    write_wav(result.mixture, f"{prefix}.wav", encoding="float32")
    save_rttm(result.schedule, f"{prefix}.rttm")
    for source_id, image in result.images.items():
        write_wav(image, f"{prefix}-image-{source_id}.wav", encoding="float32")
    print(f"simulate: wrote {prefix}.wav, {prefix}.rttm, {len(result.images)} image files")
    return EXIT_OK


_COMMANDS = {
    "sync": cmd_sync,
    "select": cmd_select,
    "enhance": cmd_enhance,
    "rectify": cmd_rectify,
    "score": cmd_score,
    "simulate": cmd_simulate,
}


def main(argv=None) -> int:
    # the ARRAYFRONT_NUM_THREADS override is forwarded to the BLAS pools in
    # the package __init__, before numpy first loads
    args = _build_parser().parse_args(argv)
    from .errors import ArrayfrontError, WavError

    try:
        cfg = _merge_config(args.config)
        return _COMMANDS[args.command](args, cfg)
    except (WavError, FileNotFoundError, PermissionError, IsADirectoryError) as e:
        print(f"arrayfront {args.command}: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ArrayfrontError, ValueError) as e:
        print(f"arrayfront {args.command}: {e}", file=sys.stderr)
        return EXIT_PROCESSING
    except OSError as e:
        print(f"arrayfront {args.command}: I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
