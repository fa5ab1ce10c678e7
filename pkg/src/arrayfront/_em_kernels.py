"""Fused inner loops for the cACGMM EM, compiled with numba.

The kernels work directly on the unnormalized class densities

    p_k(t, f) = a_{t,k} * pi_{f,k} * det(B_{f,k})^-1 * (z^H B_{f,k}^-1 z)^-D

so no per-point exp/log is needed; one log per (t, f) accumulates the
total log-likelihood. Loops are sequential with strict IEEE semantics
(fastmath disabled), which makes results bitwise reproducible and
independent of any thread-count setting.
"""

import numba
import numpy as np


@numba.njit(cache=True, fastmath=False)
def estep(z, gate, binv, pi, inv_det, valid, gamma, quad):
    """Posterior update; returns the total log-likelihood over valid points.

    z:       (F, T, C) unit-norm observations
    gate:    (K, T) activity constraint in [0, 1]
    binv:    (F, K, C, C) inverses of the shape matrices
    pi:      (F, K) mixture weights
    inv_det: (F, K) reciprocal determinants of the shape matrices
    valid:   (F, T) False where the observation had no energy
    gamma:   (F, K, T) output posteriors
    quad:    (F, K, T) output quadratic forms z^H B^-1 z
    """
    n_bins, n_frames, n_channels = z.shape
    n_classes = pi.shape[1]
    loglik = 0.0
    p = np.empty(n_classes)
    # For a trace-C HPD shape matrix and unit-norm z the quadratic form is
    # at least 1/C; anything below this floor is numerical garbage from an
    # ill-conditioned inverse, so clamping there cannot bias valid values.
    q_floor = 0.25 / n_channels
    for f in range(n_bins):
        for t in range(n_frames):
            if not valid[f, t]:
                gsum = 0.0
                for k in range(n_classes):
                    gamma[f, k, t] = gate[k, t]
                    gsum += gate[k, t]
                for k in range(n_classes):
                    gamma[f, k, t] /= gsum
                continue
            total = 0.0
            for k in range(n_classes):
                q = 0.0
                for c in range(n_channels):
                    zr = z[f, t, c].real
                    zi = z[f, t, c].imag
                    q += binv[f, k, c, c].real * (zr * zr + zi * zi)
                    for d in range(c + 1, n_channels):
                        cr = zr * z[f, t, d].real + zi * z[f, t, d].imag
                        ci = zr * z[f, t, d].imag - zi * z[f, t, d].real
                        q += 2.0 * (binv[f, k, c, d].real * cr - binv[f, k, c, d].imag * ci)
                if q < q_floor:
                    q = q_floor
                quad[f, k, t] = q
                power = 1.0
                iq = 1.0 / q
                for _ in range(n_channels):
                    power *= iq
                pk = gate[k, t] * pi[f, k] * inv_det[f, k] * power
                p[k] = pk
                total += pk
            if total > 0.0:
                for k in range(n_classes):
                    gamma[f, k, t] = p[k] / total
                loglik += np.log(total)
            else:
                gsum = 0.0
                for k in range(n_classes):
                    gamma[f, k, t] = gate[k, t]
                    gsum += gate[k, t]
                for k in range(n_classes):
                    gamma[f, k, t] /= gsum
    return loglik


@numba.njit(cache=True, fastmath=False)
def mstep_accumulate(z, gamma, quad, valid, numer, mass):
    """Accumulate sum_t gamma/quad * z z^H (upper triangle) and sum_t gamma.

    numer: (F, K, C, C) zero-initialized accumulator, filled for c <= d
    mass:  (F, K) zero-initialized posterior mass
    """
    n_bins, n_frames, n_channels = z.shape
    n_classes = mass.shape[1]
    for f in range(n_bins):
        for t in range(n_frames):
            if not valid[f, t]:
                continue
            for k in range(n_classes):
                g = gamma[f, k, t]
                mass[f, k] += g
                w = g / quad[f, k, t]
                for c in range(n_channels):
                    zc = z[f, t, c] * w
                    for d in range(c, n_channels):
                        numer[f, k, c, d] += zc * np.conj(z[f, t, d])
