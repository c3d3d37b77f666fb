"""Log-likelihood terms for words, region indices and coordinates."""

from __future__ import annotations

import math
from typing import Mapping

import numpy as np

EPS = 1e-10
_LOG_2PI = math.log(2 * math.pi)


def smooth(p, eps: float = EPS) -> np.ndarray:
    """Floor a probability vector at ``eps`` and renormalise.

    Count-ratio estimates put exact zeros on unseen tokens; without the floor
    any document with a new word gets zero probability under every cluster.
    """
    q = np.maximum(p, eps)
    return q / q.sum()


def word_loglik(token_counts: Mapping[int, int], topic) -> float:
    topic = np.asarray(topic)
    total = 0.0
    for tok, cnt in token_counts.items():
        if not 0 <= tok < len(topic):
            raise IndexError(f"token id {tok} out of range for vocabulary of {len(topic)}")
        total += cnt * math.log(topic[tok])
    return total


def region_logprob(region: int, region_weights) -> float:
    if not 0 <= region < len(region_weights):
        raise IndexError(f"region {region} out of range")
    return math.log(region_weights[region])


def location_loglik(location, mean, cov) -> float:
    """Bivariate Gaussian log density."""
    cov = np.asarray(cov, dtype=np.float64)
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
    if not det > 0:
        raise np.linalg.LinAlgError("singular or indefinite covariance")
    diff = np.asarray(location, dtype=np.float64) - np.asarray(mean, dtype=np.float64)
    maha = float(diff @ np.linalg.solve(cov, diff))
    return -_LOG_2PI - 0.5 * math.log(det) - 0.5 * maha
