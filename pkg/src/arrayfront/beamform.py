"""Mask-weighted spatial covariance estimation and MVDR/GEVD beamformers.

MVDR uses the reference-channel (Souden) formulation, which stays robust
when the target covariance is not exactly rank one. GEVD takes the principal
generalized eigenvector of the (target, noise) pair, followed by blind
analytic normalization and a phase alignment that makes the reference-channel
response real and nonnegative. Every inversion or generalized eigenproblem
is diagonally loaded with 1e-6 * trace / channels.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .signal import StftTensor

DIAGONAL_LOADING = 1e-6


@dataclass(frozen=True)
class SpatialCovariance:
    """Per-bin Hermitian PSD matrices with their accumulated mask weight."""

    matrices: np.ndarray  # (bins, channels, channels) complex
    weight_mass: np.ndarray  # (bins,)
    degenerate_bins: np.ndarray  # (bins,) bool, True where mass was zero

    @property
    def bins(self) -> int:
        return self.matrices.shape[0]

    @property
    def channels(self) -> int:
        return self.matrices.shape[1]


@dataclass(frozen=True)
class BeamformerWeights:
    """Per-bin complex weight vectors; y = w^H x."""

    weights: np.ndarray  # (bins, channels)
    reference: int
    kind: str
    fallback_bins: int = 0


def estimate_covariance(tensor: StftTensor, mask: np.ndarray) -> SpatialCovariance:
    """Mask-weighted second-order statistics, one matrix per frequency bin.

    ``mask`` holds per-frame per-bin weights in [0, 1]. Bins with zero mask
    mass receive a small identity matrix and are flagged, not fatal.
    """
    x = tensor.values  # (C, T, F)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != (tensor.frames, tensor.bins):
        raise ValueError(
            f"mask shape {mask.shape} does not match (frames, bins) = "
            f"({tensor.frames}, {tensor.bins})"
        )
    if mask.size and (mask.min() < 0 or mask.max() > 1 + 1e-9):
        raise ValueError("mask values must lie in [0, 1]")

    weighted = mask[None, :, :] * x  # (C, T, F)
    phi = np.einsum("atf,btf->fab", weighted, np.conj(x))
    mass = mask.sum(axis=0)  # (F,)
    degenerate = mass <= 0
    safe_mass = np.where(degenerate, 1.0, mass)
    phi /= safe_mass[:, None, None]

    if degenerate.any():
        mean_power = float(np.mean(np.abs(x) ** 2)) if x.size else 0.0
        epsilon = 1e-10 * max(mean_power, 1e-30)
        phi[degenerate] = epsilon * np.eye(tensor.channels)[None]
    phi = 0.5 * (phi + np.conj(np.swapaxes(phi, -1, -2)))
    return SpatialCovariance(phi, mass, degenerate)


def _loaded(phi: np.ndarray) -> np.ndarray:
    """Add 1e-6 * trace / C identity; zero-trace matrices get a tiny floor."""
    c = phi.shape[-1]
    trace = np.abs(np.trace(phi))
    return phi + (DIAGONAL_LOADING * max(trace, 1e-30) / c) * np.eye(c)


def mvdr_weights(
    target: SpatialCovariance, noise: SpatialCovariance, reference: int
) -> BeamformerWeights:
    """Souden-style MVDR: w = (Phi_n^-1 Phi_t / trace(Phi_n^-1 Phi_t)) e_ref."""
    _check_pair(target, noise, reference)
    bins, c = target.bins, target.channels
    weights = np.zeros((bins, c), dtype=np.complex128)
    fallback = 0
    for f in range(bins):
        w = None
        try:
            g = np.linalg.solve(_loaded(noise.matrices[f]), target.matrices[f])
            denom = np.trace(g)
            if abs(denom) > 0:
                candidate = g[:, reference] / denom
                if np.all(np.isfinite(candidate)):
                    w = candidate
        except np.linalg.LinAlgError:
            w = None
        if w is None:
            fallback += 1
            w = _passthrough(c, reference)
        weights[f] = w
    _report_fallback(fallback, bins, "mvdr")
    return BeamformerWeights(weights, reference, "mvdr", fallback)


def gevd_weights(
    target: SpatialCovariance, noise: SpatialCovariance, reference: int
) -> BeamformerWeights:
    """Principal generalized eigenvector of (Phi_t, Phi_n), with BAN.

    Blind analytic normalization rescales each bin so the beamformer passes
    noise with approximately unit gain; the phase is aligned so w^H e_ref is
    real and nonnegative.
    """
    _check_pair(target, noise, reference)
    bins, c = target.bins, target.channels
    weights = np.zeros((bins, c), dtype=np.complex128)
    fallback = 0
    for f in range(bins):
        w = None
        phi_n = _loaded(noise.matrices[f])
        try:
            eigvals, eigvecs = scipy.linalg.eigh(target.matrices[f], phi_n)
            candidate = eigvecs[:, int(np.argmax(eigvals))]
            if np.all(np.isfinite(candidate)) and np.linalg.norm(candidate) > 0:
                w = candidate
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError):
            w = None
        if w is None:
            fallback += 1
            weights[f] = _passthrough(c, reference)
            continue
        numerator = np.sqrt(np.real(w.conj() @ phi_n @ phi_n @ w) / c)
        denominator = np.real(w.conj() @ phi_n @ w)
        if denominator > 0 and np.isfinite(numerator):
            w = w * (numerator / denominator)
        if abs(w[reference]) > 0:
            w = w * np.exp(-1j * np.angle(w[reference]))
        weights[f] = w
    _report_fallback(fallback, bins, "gevd")
    return BeamformerWeights(weights, reference, "gevd", fallback)


def apply_beamformer(tensor: StftTensor, weights: BeamformerWeights) -> StftTensor:
    """y_{t,f} = w_f^H x_{t,f}; yields a single-channel tensor."""
    if weights.weights.shape != (tensor.bins, tensor.channels):
        raise ValueError(
            f"weights shaped {weights.weights.shape} do not fit a tensor with "
            f"{tensor.channels} channels and {tensor.bins} bins"
        )
    out = np.einsum("fc,ctf->tf", np.conj(weights.weights), tensor.values)
    return StftTensor(out[None], tensor.config, tensor.original_length, tensor.sample_rate)


def _check_pair(target: SpatialCovariance, noise: SpatialCovariance, reference: int):
    if target.matrices.shape != noise.matrices.shape:
        raise ValueError("target and noise covariances must have matching shapes")
    if not 0 <= reference < target.channels:
        raise ValueError(f"reference channel {reference} out of range")


def _passthrough(channels: int, reference: int) -> np.ndarray:
    w = np.zeros(channels, dtype=np.complex128)
    w[reference] = 1.0
    return w


def _report_fallback(count: int, bins: int, kind: str):
    if count:
        warnings.warn(
            f"{kind} beamformer fell back to reference pass-through in "
            f"{count}/{bins} bins"
        )
