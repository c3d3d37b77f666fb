"""Recurrent Chinese Restaurant Process prior with exponential decay."""

from __future__ import annotations

import math

import numpy as np


def decayed_mass(state, t: int, h) -> float:
    """Sum over ``delta = 0..h.delta`` of ``exp(-delta/alpha) * m_{t-delta}``.

    Counts must already exclude the document being sampled.
    """
    counts = state.doc_counts
    mass = 0.0
    for d in range(h.delta + 1):
        m = counts.get(t - d)
        if m:
            mass += m * math.exp(-d / h.alpha)
    return mass


def prior_weights(clusters, t: int, h) -> tuple[np.ndarray, float]:
    """Unnormalised weights for each live cluster, and ``gamma`` for a new one."""
    return np.array([decayed_mass(c, t, h) for c in clusters], dtype=np.float64), float(h.gamma)


def prior_probabilities(clusters, t: int, h) -> np.ndarray:
    """Normalised ``(existing..., new)`` probabilities."""
    w, g = prior_weights(clusters, t, h)
    full = np.append(w, g)
    return full / full.sum()
