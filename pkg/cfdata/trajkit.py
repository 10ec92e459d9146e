"""
Trajectory numerics: differentiation on nonuniform grids, resampling, error metrics
(part of cfdata)
"""

import numpy as np

from .api import InvalidInput

__all__ = ["TimeSeries", "finite_diff", "resample_uniform", "rmse", "uniform_grid"]


class TimeSeries:
    """
    Values sampled at strictly increasing timestamps (seconds).

        >>> s = TimeSeries([0, 1, 2], [0.0, 2.0, 4.0])
        >>> len(s)
        3
        >>> TimeSeries([0, 0], [1, 2])
        Traceback (most recent call last):
            ...
        cfdata.api.InvalidInput: timestamps must be strictly increasing
    """

    __slots__ = ["t", "values"]

    def __init__(self, t, values):
        t = np.asarray(t, dtype=float)
        values = np.asarray(values, dtype=float)
        if t.ndim != 1 or t.shape != values.shape:
            raise InvalidInput("timestamps and values must be 1-d and of equal length")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise InvalidInput("timestamps must be strictly increasing")
        self.t = t
        self.values = values

    def __len__(self):
        return self.t.size

    def with_values(self, values):
        return TimeSeries(self.t, values)

    def __repr__(self):
        return "<TimeSeries n=%d span=[%g, %g]>" % (len(self), self.t[0], self.t[-1]) if len(self) else "<TimeSeries n=0>"


def _series(s):
    if isinstance(s, TimeSeries):
        return s
    t, values = s
    return TimeSeries(t, values)


def finite_diff(series):
    """
    Derivative on the same timestamps: nonuniform central differences inside,
    one-sided first-order differences at both ends.

        >>> finite_diff(TimeSeries([0, 1, 2, 3], [0, 1, 2, 3])).values.tolist()
        [1.0, 1.0, 1.0, 1.0]
    """
    s = _series(series)
    if len(s) < 2:
        raise InvalidInput("finite_diff needs at least 2 samples")
    t, y = s.t, s.values
    d = np.empty_like(y)
    d[1:-1] = (y[2:] - y[:-2]) / (t[2:] - t[:-2])
    d[0] = (y[1] - y[0]) / (t[1] - t[0])
    d[-1] = (y[-1] - y[-2]) / (t[-1] - t[-2])
    return TimeSeries(t, d)


def uniform_grid(t0, t1, dt):
    """Grid t0, t0+dt, ... not beyond t1 (a 1e-9 s slack absorbs round-off)."""
    if dt <= 0:
        raise InvalidInput("dt must be > 0")
    n = int(np.floor((t1 - t0) / dt + 1e-9)) + 1
    return t0 + dt * np.arange(n)


def resample_uniform(series, dt):
    """
    Linear interpolation onto t0, t0+dt, ... <= t_end; never extrapolates.

        >>> r = resample_uniform(TimeSeries([0, 1], [0, 2]), 0.5)
        >>> r.t.tolist(), r.values.tolist()
        ([0.0, 0.5, 1.0], [0.0, 1.0, 2.0])
    """
    s = _series(series)
    if dt <= 0:
        raise InvalidInput("dt must be > 0")
    if len(s) < 2:
        raise InvalidInput("resample_uniform needs at least 2 samples")
    grid = uniform_grid(s.t[0], s.t[-1], dt)
    grid = grid[grid <= s.t[-1]]
    return TimeSeries(grid, np.interp(grid, s.t, s.values))


def rmse(a, b):
    """
    Root mean squared difference of two series on identical grids.

        >>> round(rmse(TimeSeries([0, 1], [0, 0]), TimeSeries([0, 1], [3, 4])), 4)
        3.5355
    """
    a, b = _series(a), _series(b)
    if len(a) != len(b) or not np.array_equal(a.t, b.t):
        raise InvalidInput("rmse needs series on identical grids")
    if len(a) == 0:
        raise InvalidInput("rmse of empty series")
    return float(np.sqrt(np.mean((a.values - b.values) ** 2)))
