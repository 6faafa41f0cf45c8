"""Per-episode training metrics and rolling statistics."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EpisodeMetrics:
    """One row of the training log / results CSV."""

    episode: int
    accuracy: float
    reward_sum: int
    loss: float
    rolling_mean: float
    rolling_std: float
    wall_ms: int


class RollingWindow:
    """Mean and population std over the last ``window`` values.

    Before ``window`` values exist the statistics cover the available
    prefix.
    """

    def __init__(self, window: int = 200):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = window
        self._values: deque[float] = deque(maxlen=window)

    def push(self, value: float) -> tuple[float, float]:
        self._values.append(value)
        arr = np.fromiter(self._values, dtype=np.float64)
        return float(arr.mean()), float(arr.std())

    def __len__(self):
        return len(self._values)
