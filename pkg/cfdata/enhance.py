"""
Trajectory enhancement: minimum-jerk gap filling, Kalman estimation,
wavelet denoising of acceleration and vehicle size estimation
(part of cfdata)
"""

import numpy as np
import pandas as pd
import pywt

from . import api
from .api import InvalidInput, NumericalError
from .assess import speed_consistency
from .trajkit import TimeSeries, finite_diff, rmse, uniform_grid
from .utils import runs, storage

__all__ = [
    "MinJerkProblem",
    "fill_min_jerk",
    "repair_zero_speed",
    "kf_constant_speed",
    "kf_constant_acc",
    "estimate_noise_sigma",
    "decompose",
    "reconstruct",
    "wavelet_denoise",
    "estimate_length",
    "estimate_width",
    "EnhancedPair",
    "enhance_pair",
]

DEGREE = 7
MIN_FILL_DURATION = 0.2
MAX_CONDITION = 1e12

ENHANCED_COLUMNS = ["t", "x_lead", "v_lead", "a_lead", "j_lead", "x_fol", "v_fol", "a_fol", "j_fol"]


def _jerk_gram():
    """Gram matrix of the third derivatives of 1, s, ..., s^7 over [0, 1]."""
    i = np.arange(DEGREE + 1)
    c = i * (i - 1) * (i - 2)
    power = i[:, None] + i[None, :] - 5
    with np.errstate(divide="ignore", invalid="ignore"):
        gram = np.where(power > 0, np.outer(c, c) / np.where(power > 0, power, 1), 0.0)
    return gram


_GRAM = _jerk_gram()
# the KKT system is solved with the Hessian scaled to unit max entry
_GRAM_SCALED = _GRAM / np.abs(_GRAM).max()


class MinJerkProblem:
    """
    Degree-7 position polynomial on [t0, t1] with position, speed and
    acceleration fixed at both ends, minimizing the integrated squared jerk.

    The problem is solved in scaled time s = (t - t0) / T; `p` holds the
    coefficients in local time t - t0.

        >>> pb = MinJerkProblem(0, 2, 0, 2, 1, 1, 0, 0)
        >>> x, v = fill_min_jerk(pb, [0.5, 1.0])
        >>> [round(float(e), 9) for e in x.values]
        [0.5, 1.0]
    """

    def __init__(self, t0, t1, x0, x1, v0, v1, a0, a1):
        self.t0, self.t1 = float(t0), float(t1)
        self.x0, self.x1 = float(x0), float(x1)
        self.v0, self.v1 = float(v0), float(v1)
        self.a0, self.a1 = float(a0), float(a1)
        self.q = None
        self.multipliers = None

    @property
    def duration(self):
        return self.t1 - self.t0

    def constraints(self):
        """Equality constraints `A q = b` on the scaled coefficients."""
        T = self.duration
        i = np.arange(DEGREE + 1, dtype=float)
        A = np.zeros((6, DEGREE + 1))
        A[0, 0] = 1.0
        A[1, 1] = 1.0
        A[2, 2] = 2.0
        A[3] = 1.0
        A[4] = i
        A[5] = i * (i - 1)
        b = np.array([self.x0, self.v0 * T, self.a0 * T**2, self.x1, self.v1 * T, self.a1 * T**2])
        return A, b

    def solve(self):
        values = [self.t0, self.t1, self.x0, self.x1, self.v0, self.v1, self.a0, self.a1]
        if not np.all(np.isfinite(values)):
            raise InvalidInput("boundary conditions must be finite")
        if self.duration < MIN_FILL_DURATION - 1e-9:
            raise InvalidInput("fill interval %.3fs shorter than %.1fs" % (self.duration, MIN_FILL_DURATION))

        A, b = self.constraints()
        H = _GRAM_SCALED
        n, m = H.shape[0], A.shape[0]
        kkt = np.zeros((n + m, n + m))
        kkt[:n, :n] = 2 * H
        kkt[:n, n:] = A.T
        kkt[n:, :n] = A
        rhs = np.concatenate([np.zeros(n), b])

        cond = np.linalg.cond(kkt)
        if not np.isfinite(cond) or cond > MAX_CONDITION:
            raise NumericalError("singular KKT system on [%g, %g] (condition %.3g)" % (self.t0, self.t1, cond))
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError as e:
            raise NumericalError("KKT solve failed on [%g, %g]: %s" % (self.t0, self.t1, e))

        self.q = sol[:n]
        self.multipliers = sol[n:]
        scale = np.maximum(1.0, np.abs(b))
        worst = float(np.max(np.abs(A @ self.q - b) / scale))
        if worst > 1e-6:
            raise NumericalError("boundary conditions missed by %.3g (relative)" % worst)
        return self.q

    @property
    def p(self):
        """Coefficients of x(t) = sum p_i (t - t0)^i."""
        if self.q is None:
            self.solve()
        return self.q / self.duration ** np.arange(DEGREE + 1)

    def cost(self, q=None):
        """Integrated squared jerk of the scaled coefficients `q` (default: the solution)."""
        if q is None:
            q = self.q if self.q is not None else self.solve()
        q = np.asarray(q, dtype=float)
        q = np.concatenate([q, np.zeros(DEGREE + 1 - len(q))])
        return float(q @ _GRAM @ q) / self.duration**5

    @property
    def kkt_residual(self):
        """Largest entry of the Lagrangian gradient (unit-scaled Hessian) and constraint residual at the solution."""
        if self.q is None:
            self.solve()
        A, b = self.constraints()
        grad = 2 * _GRAM_SCALED @ self.q + A.T @ self.multipliers
        return float(max(np.max(np.abs(grad)), np.max(np.abs(A @ self.q - b))))

    def evaluate(self, t):
        if self.q is None:
            self.solve()
        s = (np.asarray(t, dtype=float) - self.t0) / self.duration
        x = np.polynomial.polynomial.polyval(s, self.q)
        dq = np.polynomial.polynomial.polyder(self.q)
        v = np.polynomial.polynomial.polyval(s, dq) / self.duration
        return x, v

    def __repr__(self):
        return "<MinJerkProblem [%g, %g]>" % (self.t0, self.t1)


def fill_min_jerk(problem, timestamps):
    """Position and speed of the minimum-jerk fill at `timestamps` (within [t0, t1])."""
    t = np.asarray(timestamps, dtype=float)
    if t.size and (t.min() < problem.t0 - 1e-9 or t.max() > problem.t1 + 1e-9):
        raise InvalidInput("fill timestamps outside [%g, %g]" % (problem.t0, problem.t1))
    x, v = problem.evaluate(t)
    return TimeSeries(t, x), TimeSeries(t, v)


def _clusters(times, gap):
    times = sorted(float(t) for t in times)
    clusters = []
    for t in times:
        if clusters and t - clusters[-1][1] <= gap:
            clusters[-1][1] = t
        else:
            clusters.append([t, t])
    return clusters


def repair_zero_speed(x, v, artifacts=(), config=None):
    """
    Removes the samples around each cluster of zero-speed artifacts (0.5 s
    before the first zero, 1.5 s after the last) and refills every hole,
    including genuinely missing spans longer than 1.5 steps and at least
    MIN_FILL_DURATION, with the minimum-jerk fill. Shorter steps are left
    for resampling. A hole touching either end cannot be filled and is
    trimmed.

    Returns `storage(x, v, fill_intervals)`; surviving samples keep their
    timestamps and values.
    """
    cfg = config or api.config.enhance
    if not np.array_equal(x.t, v.t):
        raise InvalidInput("x and v must share timestamps")
    t, xs, vs = x.t, x.values, v.values
    keep = np.ones(len(t), dtype=bool)
    for first, last in _clusters(artifacts, cfg.artifact_cluster_gap):
        keep &= ~((t >= first - cfg.zero_speed_before - 1e-9) & (t <= last + cfg.zero_speed_after + 1e-9))

    survivors = np.flatnonzero(keep)
    if survivors.size < 2:
        raise InvalidInput("fewer than 2 samples survive artifact removal")
    fill_intervals = []
    lo, hi = survivors[0], survivors[-1] + 1
    if lo > 0:
        fill_intervals.append((float(t[0]), float(t[lo])))
    if hi < len(t):
        fill_intervals.append((float(t[hi - 1]), float(t[-1])))
    t, xs, vs, keep = t[lo:hi], xs[lo:hi], vs[lo:hi], keep[lo:hi]

    acc = np.zeros(len(t))
    for a, b in runs(keep):
        if b - a >= 2:
            acc[a:b] = finite_diff(TimeSeries(t[a:b], vs[a:b])).values

    survivors = np.flatnonzero(keep)
    pieces_t, pieces_x, pieces_v = [], [], []
    start = 0
    for k in range(len(survivors) - 1):
        i0, i1 = survivors[k], survivors[k + 1]
        hole = t[i0 + 1 : i1]
        gap = t[i1] - t[i0]
        if hole.size == 0:
            if gap <= 1.5 * cfg.dt or gap < MIN_FILL_DURATION - 1e-9:
                continue
            hole = t[i0] + cfg.dt * np.arange(1, int(round(gap / cfg.dt)))
            hole = hole[hole < t[i1] - 1e-9]
        seg = survivors[start : k + 1]
        pieces_t.append(t[seg])
        pieces_x.append(xs[seg])
        pieces_v.append(vs[seg])
        problem = MinJerkProblem(t[i0], t[i1], xs[i0], xs[i1], vs[i0], vs[i1], acc[i0], acc[i1])
        fx, fv = fill_min_jerk(problem, hole)
        pieces_t.append(hole)
        pieces_x.append(fx.values)
        pieces_v.append(fv.values)
        fill_intervals.append((float(t[i0]), float(t[i1])))
        start = k + 1
    seg = survivors[start:]
    pieces_t.append(t[seg])
    pieces_x.append(xs[seg])
    pieces_v.append(vs[seg])

    out_t = np.concatenate(pieces_t)
    return storage(
        x=TimeSeries(out_t, np.concatenate(pieces_x)),
        v=TimeSeries(out_t, np.concatenate(pieces_v)),
        fill_intervals=sorted(fill_intervals),
    )


def _check_spd(P, step):
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        raise NumericalError("state covariance lost positive-definiteness at step %d" % step)


def _kalman(t, Z, transition, Q, R):
    """Forward predict/update pass with identity measurement of the full state."""
    n, dim = Z.shape
    state = Z[0].copy()
    P = R.copy()
    identity = np.eye(dim)
    out = np.empty_like(Z)
    out[0] = state
    for i in range(1, n):
        F = transition(t[i] - t[i - 1])
        state = F @ state
        P = F @ P @ F.T + Q
        S = P + R
        K = np.linalg.solve(S.T, P.T).T
        state = state + K @ (Z[i] - state)
        P = (identity - K) @ P
        P = (P + P.T) / 2
        _check_spd(P, i)
        out[i] = state
    return out


def _constant_speed(dt):
    return np.array([[1.0, dt], [0.0, 1.0]])


def _constant_acc(dt):
    return np.array([[1.0, dt, dt * dt / 2], [0.0, 1.0, dt], [0.0, 0.0, 1.0]])


def _diag(stds):
    return np.diag(np.asarray(stds, dtype=float) ** 2)


def kf_constant_speed(x, config=None):
    """
    Kalman filter with state (x, v) under a constant-speed model; the
    measurements are the positions and their finite differences.

    Returns `(x_hat, v_hat)` on the input timestamps.
    """
    cfg = config or api.config.kalman
    if len(x) < 2:
        raise InvalidInput("kf_constant_speed needs at least 2 samples")
    if not np.all(np.isfinite(x.values)):
        raise InvalidInput("non-finite position measurement")
    Z = np.column_stack([x.values, finite_diff(x).values])
    out = _kalman(x.t, Z, _constant_speed, _diag(cfg.q1), _diag(cfg.r1))
    return x.with_values(out[:, 0]), x.with_values(out[:, 1])


def kf_constant_acc(x, v, config=None):
    """
    Kalman filter with state (x, v, a) under a constant-acceleration model.
    The acceleration measurement (finite difference of v) carries a large
    variance, so the returned `a_k` is over-smoothed.

    Returns `(x_hat, v_hat, a_k)`.
    """
    cfg = config or api.config.kalman
    if not np.array_equal(x.t, v.t):
        raise InvalidInput("x and v must share timestamps")
    if len(x) < 2:
        raise InvalidInput("kf_constant_acc needs at least 2 samples")
    if not (np.all(np.isfinite(x.values)) and np.all(np.isfinite(v.values))):
        raise InvalidInput("non-finite measurement")
    Z = np.column_stack([x.values, v.values, finite_diff(v).values])
    out = _kalman(x.t, Z, _constant_acc, _diag(cfg.q2), _diag(cfg.r2))
    return x.with_values(out[:, 0]), x.with_values(out[:, 1]), x.with_values(out[:, 2])


def estimate_noise_sigma(a_v, a_k):
    """Noise scale of the differentiated acceleration: rmse against the over-smoothed one."""
    return rmse(a_v, a_k)


def _levels(n, wavelet, spec):
    return max(1, min(spec.max_levels, pywt.dwt_max_level(n, wavelet.dec_len)))


def decompose(values, spec=None):
    """Multilevel DWT with symmetric extension: `[cA_L, cD_L, ..., cD_1]`."""
    spec = spec or api.config.wavelet
    values = np.asarray(values, dtype=float)
    wavelet = pywt.Wavelet(spec.family)
    if values.size < 2 * wavelet.dec_len:
        raise InvalidInput("wavelet transform needs at least %d samples" % (2 * wavelet.dec_len))
    return pywt.wavedec(values, wavelet, mode="symmetric", level=_levels(values.size, wavelet, spec))


def reconstruct(coeffs, n, spec=None):
    spec = spec or api.config.wavelet
    return pywt.waverec(coeffs, spec.family, mode="symmetric")[:n]


def wavelet_denoise(a_v, sigma, spec=None):
    """
    Soft-thresholds the detail coefficients of `a_v` at the universal
    threshold sigma * sqrt(2 ln n) and reconstructs on the same grid.

        >>> t = np.arange(64) * 0.1
        >>> out = wavelet_denoise(TimeSeries(t, np.full(64, 1.5)), 0.3)
        >>> bool(np.allclose(out.values, 1.5))
        True
    """
    spec = spec or api.config.wavelet
    if sigma < 0:
        raise InvalidInput("sigma must be >= 0")
    steps = np.diff(a_v.t)
    if steps.size and not np.allclose(steps, steps[0], rtol=0, atol=1e-6):
        raise InvalidInput("wavelet_denoise needs a uniform grid")
    coeffs = decompose(a_v.values, spec)
    n = len(a_v)
    if sigma == 0:
        return a_v.with_values(a_v.values.copy())
    threshold = sigma * np.sqrt(2 * np.log(n))
    coeffs[1:] = [pywt.threshold(c, threshold, mode=spec.threshold_mode) for c in coeffs[1:]]
    return a_v.with_values(reconstruct(coeffs, n, spec))


def _estimate_size(series, lo, hi, spec):
    values = np.asarray(series, dtype=float)
    values = values[np.isfinite(values)]
    if values.size == 0:
        raise InvalidInput("no size samples")
    if values.min() == values.max():
        return float(values[0])
    if np.var(values) < spec.var_max:
        return float(np.mean(values))
    return float(np.percentile(np.clip(values, lo, hi), spec.percentile))


def estimate_length(series, spec=None):
    """
    Stable series: the mean. Noisy series: the 95th percentile of the
    samples clamped to [3.5, 6.5] m.

        >>> estimate_length([4.5] * 10)
        4.5
        >>> estimate_length([4.0] * 50 + [7.5] * 50)
        6.5
    """
    spec = spec or api.config.size
    return _estimate_size(series, spec.length_min, spec.length_max, spec)


def estimate_width(series, spec=None):
    """Same rule as `estimate_length`, clamped to [1.5, 2.5] m."""
    spec = spec or api.config.size
    return _estimate_size(series, spec.width_min, spec.width_max, spec)


class EnhancedPair:
    """
    Smoothed series of both vehicles on a uniform grid. `lead` and `fol`
    hold `x, v, a, j` arrays plus `sigma_a`, `length`, `width` and
    `fill_intervals`.
    """

    def __init__(self, pair_id, leader_type, t, lead, fol):
        self.pair_id = pair_id
        self.leader_type = leader_type
        self.t = t
        self.lead = lead
        self.fol = fol

    @property
    def subset(self):
        return "H-A" if self.leader_type == "AV" else "H-H"

    @property
    def duration(self):
        return float(self.t[-1] - self.t[0])

    @property
    def fill_intervals(self):
        return sorted(self.lead.fill_intervals + self.fol.fill_intervals)

    def series(self, vehicle, name):
        return TimeSeries(self.t, getattr(self, vehicle)[name])

    def to_frame(self):
        return pd.DataFrame(
            {
                "t": self.t,
                "x_lead": self.lead.x,
                "v_lead": self.lead.v,
                "a_lead": self.lead.a,
                "j_lead": self.lead.j,
                "x_fol": self.fol.x,
                "v_fol": self.fol.v,
                "a_fol": self.fol.a,
                "j_fol": self.fol.j,
            },
            columns=ENHANCED_COLUMNS,
        )

    def metadata(self):
        meta = {"pair_id": self.pair_id, "leader_type": self.leader_type}
        for name in ("lead", "fol"):
            veh = getattr(self, name)
            meta[name] = {
                "length": veh.length,
                "width": veh.width,
                "sigma_a": veh.sigma_a,
                "fill_intervals": [list(iv) for iv in veh.fill_intervals],
            }
        return meta

    def __repr__(self):
        return "<EnhancedPair %s %s %.1fs>" % (self.pair_id, self.subset, self.duration)


def _repaired(t, veh, cfg):
    """Position and speed of one vehicle with artifacts and holes repaired (raw timestamps)."""
    x = TimeSeries(t, veh.x)
    if veh.v is None:
        _, v = kf_constant_speed(x, cfg.kalman)
        artifacts = ()
    else:
        v = TimeSeries(t, veh.v)
        _, artifacts = speed_consistency(x, v)
    return repair_zero_speed(x, v, artifacts, cfg.enhance)


def _smoothed(grid, repaired, veh, cfg):
    x = TimeSeries(grid, np.interp(grid, repaired.x.t, repaired.x.values))
    v = TimeSeries(grid, np.interp(grid, repaired.v.t, repaired.v.values))
    x_hat, v_hat, a_k = kf_constant_acc(x, v, cfg.kalman)
    a_v = finite_diff(v_hat)
    sigma = estimate_noise_sigma(a_v, a_k)
    a_hat = wavelet_denoise(a_v, sigma, cfg.wavelet)
    if veh.is_av:
        length, width = cfg.size.av_length, cfg.size.av_width
    else:
        length, width = estimate_length(veh.length, cfg.size), estimate_width(veh.width, cfg.size)
    return storage(
        x=x_hat.values,
        v=v_hat.values,
        a=a_hat.values,
        j=finite_diff(a_hat).values,
        sigma_a=sigma,
        length=length,
        width=width,
        fill_intervals=repaired.fill_intervals,
    )


def enhance_pair(pair, cfg=None):
    """
    Full enhancement of a CFPair: artifact repair and gap filling, resampling
    to the uniform grid, constant-acceleration Kalman estimation, wavelet
    denoising of the differentiated speed and size estimation.
    """
    cfg = cfg or api.config
    lead = _repaired(pair.t, pair.lead, cfg)
    fol = _repaired(pair.t, pair.fol, cfg)
    t0 = max(lead.x.t[0], fol.x.t[0])
    t1 = min(lead.x.t[-1], fol.x.t[-1])
    if t1 <= t0:
        raise InvalidInput("no common time span after repair")
    grid = uniform_grid(t0, t1, cfg.enhance.dt)

    out_lead = _smoothed(grid, lead, pair.lead, cfg)
    out_fol = _smoothed(grid, fol, pair.fol, cfg)
    if np.any(out_lead.x <= out_fol.x):
        raise InvalidInput("smoothed leader not ahead of follower")
    return EnhancedPair(pair.pair_id, pair.leader_type, grid, out_lead, out_fol)
