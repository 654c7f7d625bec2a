"""ERLE, SI-SDR and real-time factor."""

from __future__ import annotations

import numpy as np

from taylor_aec.signal import AudioClip

EPS = 1e-12
ERLE_CEILING_DB = 120.0
SI_SDR_CEILING_DB = 100.0


def _samples(x) -> np.ndarray:
    return np.asarray(x.samples if isinstance(x, AudioClip) else x, dtype=np.float64)


def erle(d, e, segment: slice | tuple | None = None) -> float:
    """10 log10(sum d^2 / sum e^2) in dB, capped at ERLE_CEILING_DB.

    ``segment`` is a sample slice or a (start, stop) pair.
    """
    d, e = _samples(d), _samples(e)
    if d.shape != e.shape:
        raise ValueError(f"length mismatch: {d.shape} vs {e.shape}")
    if segment is not None:
        seg = segment if isinstance(segment, slice) else slice(*segment)
        d, e = d[seg], e[seg]
    pd = np.sum(d**2)
    if pd == 0:
        raise ValueError("microphone signal has zero energy")
    pe = np.sum(e**2)
    if pe == 0:
        return ERLE_CEILING_DB
    return float(min(10 * np.log10((pd + EPS) / (pe + EPS)), ERLE_CEILING_DB))


def si_sdr(reference, estimate) -> float:
    ref, est = _samples(reference), _samples(estimate)
    if ref.shape != est.shape:
        raise ValueError(f"length mismatch: {ref.shape} vs {est.shape}")
    ref_energy = np.dot(ref, ref)
    if ref_energy == 0:
        raise ValueError("reference has zero energy")
    target = np.dot(est, ref) / ref_energy * ref
    residual = est - target
    num, den = np.dot(target, target), np.dot(residual, residual)
    if den == 0:
        return SI_SDR_CEILING_DB
    if num == 0:
        return -SI_SDR_CEILING_DB
    return float(np.clip(10 * np.log10(num / den), -SI_SDR_CEILING_DB, SI_SDR_CEILING_DB))


def rtf(process_seconds: float, audio_seconds: float) -> float:
    if audio_seconds <= 0:
        raise ValueError("audio_seconds must be positive")
    return process_seconds / audio_seconds
