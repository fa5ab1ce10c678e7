"""Multi-channel far-field speech front-end.

Channel synchronization, envelope-variance channel selection over virtual
subarrays, mask-driven MVDR/GEVD beamforming, cACGMM guided source
separation, sliding-window diarization rectification, and DER scoring.
"""

import os as _os

# BLAS pools read their thread caps at load time, so the override has to be
# forwarded before numpy is first imported below.
_threads = _os.environ.get("ARRAYFRONT_NUM_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .beamform import (
    BeamformerWeights,
    SpatialCovariance,
    apply_beamformer,
    estimate_covariance,
    gevd_weights,
    mvdr_weights,
)
from .cacgmm import (
    ActivityMatrix,
    CacgmmParams,
    TFMaskSet,
    cacgmm_em,
    gss_enhance,
    gss_enhance_segments,
    segments_to_activity,
)
from .rectify import (
    FrameProbabilities,
    RectifyConfig,
    combine_windows,
    probabilities_to_segments,
    rectify,
    window_starts,
)
from .rttm import DerReport, Segment, SegmentList, der, parse_rttm, read_rttm, save_rttm, write_rttm
from .selection import (
    ChannelRanking,
    SelectionPolicy,
    SubarrayPlan,
    ev_scores,
    partition_subarrays,
    score_subarrays,
    select_channels,
)
from .signal import MultichannelWave, StftConfig, StftTensor, istft, read_wav, stft, write_wav
from .simulate import RenderResult, RoomSpec, SceneSpec, SourceSpec, render, si_snr
from .sync import LagEstimate, estimate_lag, synchronize

__version__ = "0.1.0"

__all__ = [
    "ActivityMatrix",
    "BeamformerWeights",
    "CacgmmParams",
    "ChannelRanking",
    "DerReport",
    "FrameProbabilities",
    "LagEstimate",
    "MultichannelWave",
    "RectifyConfig",
    "RenderResult",
    "RoomSpec",
    "SceneSpec",
    "Segment",
    "SegmentList",
    "SelectionPolicy",
    "SourceSpec",
    "SpatialCovariance",
    "StftConfig",
    "StftTensor",
    "SubarrayPlan",
    "TFMaskSet",
    "apply_beamformer",
    "cacgmm_em",
    "combine_windows",
    "der",
    "estimate_covariance",
    "estimate_lag",
    "ev_scores",
    "gevd_weights",
    "gss_enhance",
    "gss_enhance_segments",
    "istft",
    "mvdr_weights",
    "parse_rttm",
    "partition_subarrays",
    "probabilities_to_segments",
    "read_rttm",
    "read_wav",
    "rectify",
    "render",
    "save_rttm",
    "score_subarrays",
    "segments_to_activity",
    "select_channels",
    "si_snr",
    "stft",
    "synchronize",
    "window_starts",
    "write_rttm",
    "write_wav",
]
