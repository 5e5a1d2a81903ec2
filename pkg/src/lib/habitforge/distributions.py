"""
Empirical cumulative distribution functions.
"""
from dataclasses import dataclass

import numpy as np
import pandas as pd


@dataclass(frozen=True, eq=False)
class EmpiricalCDF:
    """
    Right-continuous step function F(x) = fraction of sample values <= x.

    x holds the distinct sample values in ascending order and p the CDF value
    reached at each of them, so the last p is 1.0 for any non-empty sample.
    """

    x: np.ndarray
    p: np.ndarray
    n: int

    @classmethod
    def from_values(cls, values):
        """Build the CDF of a 1-D sample (empty samples give an empty CDF)."""
        sample = np.sort(np.asarray(values, dtype=float).ravel())
        if sample.size == 0:
            return cls(x=np.empty(0), p=np.empty(0), n=0)
        support = np.unique(sample)
        p = np.searchsorted(sample, support, side="right") / sample.size
        return cls(x=support, p=p, n=int(sample.size))

    @property
    def is_empty(self):
        return self.n == 0

    def __call__(self, value):
        """Evaluate F at a scalar or array."""
        if self.is_empty:
            return np.zeros_like(np.asarray(value, dtype=float))
        idx = np.searchsorted(self.x, np.asarray(value, dtype=float), side="right")
        padded = np.concatenate(([0.0], self.p))
        return padded[idx]

    def points(self):
        """List of (x, F(x)) pairs at the jump points."""
        return [(float(x), float(p)) for x, p in zip(self.x, self.p)]

    def median(self):
        """Smallest x with F(x) >= 0.5."""
        if self.is_empty:
            return float("nan")
        return float(self.x[np.searchsorted(self.p, 0.5, side="left")])

    def to_frame(self, **labels):
        """Tabular form; keyword arguments become constant leading columns."""
        frame = pd.DataFrame({"x": self.x, "cdf": self.p})
        for offset, (name, value) in enumerate(labels.items()):
            frame.insert(offset, name, value)
        return frame


def cdf_at(sorted_sample, support):
    """Fraction of a sorted sample <= each support point."""
    sorted_sample = np.asarray(sorted_sample)
    if sorted_sample.size == 0:
        return np.zeros(len(support))
    return np.searchsorted(sorted_sample, support, side="right") / sorted_sample.size
