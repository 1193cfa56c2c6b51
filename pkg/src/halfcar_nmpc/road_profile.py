"""Road excitation: spectral reconstruction of sampled height profiles.

The measured heights are detrended with a quadratic whose slope matches the
data at both window ends and mirrored about the end samples to an even
periodic extension, smooth through the second derivative across the edges.
That extension is transformed with an FFT.
Frequencies above the cutoff are dropped; what remains is a finite
trigonometric series that is evaluated, and differentiated term by term,
at arbitrary times.  Edge effects of the truncation decay away from the
window ends, so accuracy statements refer to the interior 80 %.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    InsufficientDataError,
    InvalidConfigError,
    InvalidInputError,
    RoadWindowError,
)

MIN_SAMPLES = 8
_WINDOW_TOL = 1e-9


@dataclass(frozen=True)
class RoadMeasurement:
    sample_period: float
    heights: np.ndarray
    start_time: float = 0.0

    def __post_init__(self):
        heights = np.asarray(self.heights, dtype=float)
        object.__setattr__(self, "heights", heights)
        if not (self.sample_period > 0 and math.isfinite(self.sample_period)):
            raise InvalidInputError("sample_period must be positive")
        if heights.ndim != 1 or heights.size < 2:
            raise InvalidInputError("need at least two height samples")
        if not np.all(np.isfinite(heights)):
            raise InvalidInputError("heights contain non-finite values")

    @property
    def times(self) -> np.ndarray:
        return self.start_time + self.sample_period * np.arange(self.heights.size)

    @property
    def end_time(self) -> float:
        return self.start_time + self.sample_period * (self.heights.size - 1)


@dataclass(frozen=True)
class AxleDelay:
    delta: float = 0.0

    def __post_init__(self):
        if not (self.delta >= 0 and math.isfinite(self.delta)):
            raise InvalidInputError("axle delay must be a finite non-negative time")

    @classmethod
    def from_speed(cls, wheelbase: float, speed: float) -> "AxleDelay":
        """Time for the rear axle to reach the spot the front axle is on."""
        if speed <= 0:
            raise InvalidInputError("vehicle speed must be positive")
        return cls(wheelbase / speed)


@dataclass(frozen=True, eq=False)
class RoadSignal:
    """Band-limited road height ``w(t)`` and its exact derivative.

    ``w(t) = q(tau) + sum_k A_k cos(om_k tau) + B_k sin(om_k tau)`` with a
    low-degree trend polynomial ``q`` and
    ``tau = t - origin - delay``.
    """

    origin: float
    sample_period: float
    n_samples: int
    trend: tuple[float, ...]
    omega: np.ndarray
    cos_coef: np.ndarray
    sin_coef: np.ndarray
    delay: float = 0.0
    _dense: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def window(self) -> tuple[float, float]:
        t0 = self.origin + self.delay
        return t0, t0 + self.sample_period * (self.n_samples - 1)

    def _check_window(self, t: np.ndarray) -> None:
        lo, hi = self.window
        tol = _WINDOW_TOL * max(1.0, abs(lo), abs(hi))
        if t.size and (t.min() < lo - tol or t.max() > hi + tol):
            raise RoadWindowError(
                f"road evaluated on [{t.min():.6g}, {t.max():.6g}] outside window "
                f"[{lo:.6g}, {hi:.6g}]"
            )

    def _trend(self, tau):
        q = np.polynomial.Polynomial(self.trend)
        return q(tau), q.deriv()(tau)

    def evaluate(self, t):
        """Return ``(w, wdot)`` at the given time(s)."""
        tt = np.asarray(t, dtype=float)
        scalar = tt.ndim == 0
        tt = np.atleast_1d(tt)
        self._check_window(tt)
        tau = tt - self.origin - self.delay
        w, wd = self._trend(tau)
        # chunked to bound the size of the phase matrix
        chunk = max(1, 2_000_000 // max(1, self.omega.size))
        for i in range(0, tau.size, chunk):
            ph = np.outer(tau[i : i + chunk], self.omega)
            c, s = np.cos(ph), np.sin(ph)
            w[i : i + chunk] += c @ self.cos_coef + s @ self.sin_coef
            wd[i : i + chunk] += (c @ (self.omega * self.sin_coef)) - (
                s @ (self.omega * self.cos_coef)
            )
        if scalar:
            return float(w[0]), float(wd[0])
        return w, wd

    def amplitude_at(self, frequency_hz: float) -> float:
        """Amplitude of the series term at ``frequency_hz`` (0 if absent)."""
        om = 2 * math.pi * frequency_hz
        hits = np.isclose(self.omega, om, rtol=0, atol=1e-9 * max(1.0, om))
        if not hits.any():
            return 0.0
        return float(np.hypot(self.cos_coef[hits], self.sin_coef[hits]).max())

    def _dense_grid(self, factor: int):
        if factor not in self._dense:
            m = 2 * (self.n_samples - 1)  # period of the mirrored extension
            size = m * factor
            k = np.rint(self.omega * self.sample_period * m / (2 * math.pi)).astype(int)
            spec = np.zeros(size // 2 + 1, dtype=complex)
            half = np.where((k == 0) | (2 * k == size), 1.0, 0.5) * size
            spec[k] = (self.cos_coef - 1j * self.sin_coef) * half
            keep = (self.n_samples - 1) * factor + 1
            w = np.fft.irfft(spec, n=size)[:keep]
            dspec = np.zeros_like(spec)
            dspec[k] = spec[k] * 1j * self.omega
            wd = np.fft.irfft(dspec, n=size)[:keep]
            tau = np.arange(keep) * (self.sample_period / factor)
            tw, twd = self._trend(tau)
            w += tw
            wd += twd
            self._dense[factor] = (w, wd)
        return self._dense[factor]

    def sample_grid(self, t_first: float, spacing: float, count: int):
        """Evaluate on ``t_first + spacing * arange(count)``.

        Grids commensurate with the sample period are served from a cached
        zero-padded inverse FFT, which equals the series at those points.
        """
        t = t_first + spacing * np.arange(count)
        self._check_window(t)
        ratio = self.sample_period / spacing
        factor = int(round(ratio))
        if factor >= 1 and abs(ratio - factor) < 1e-9 * ratio and factor <= 64:
            offset = (t_first - self.origin - self.delay) / spacing
            start = int(round(offset))
            if abs(offset - start) < 1e-6 and start >= 0:
                w, wd = self._dense_grid(factor)
                if start + count <= w.size:
                    return w[start : start + count].copy(), wd[start : start + count].copy()
        return self.evaluate(t)


def _end_slopes(tau, h, width=16, degree=4):
    """Slopes at both window ends from local least-squares polynomials."""
    k = min(width, tau.size)
    deg = min(degree, k - 1)
    head = np.polynomial.Polynomial.fit(tau[:k], h[:k], deg)
    tail = np.polynomial.Polynomial.fit(tau[-k:], h[-k:], deg)
    return float(head.deriv()(tau[0])), float(tail.deriv()(tau[-1]))


def _edge_trend(tau, h, width=16) -> np.polynomial.Polynomial:
    """Quadratic whose slope matches the data at both window ends.

    The residual then has zero slope at the ends, so its mirror image is
    smooth through the second derivative.
    """
    s0, s1 = _end_slopes(tau, h, width)
    q = np.polynomial.Polynomial([0.0, s0, (s1 - s0) / (2 * tau[-1])])
    return q + float(np.mean(h - q(tau)))


def reconstruct(m: RoadMeasurement, cutoff_hz: float = 50.0) -> RoadSignal:
    """Band-limited trigonometric interpolant of the measured heights."""
    nyquist = 0.5 / m.sample_period
    if not (0 < cutoff_hz <= nyquist * (1 + 1e-12)):
        raise InvalidConfigError(
            f"cutoff {cutoff_hz} Hz outside (0, {nyquist:g}] (Nyquist)"
        )
    n = m.heights.size
    if n < MIN_SAMPLES:
        raise InsufficientDataError(f"need at least {MIN_SAMPLES} samples, got {n}")
    tau = m.sample_period * np.arange(n)
    # fit the end slopes over about one cutoff period: short windows let
    # measurement noise through as large spurious slopes
    width = max(16, int(math.ceil(1.0 / (cutoff_hz * m.sample_period))))
    trend = _edge_trend(tau, m.heights, width)
    resid = m.heights - trend(tau)
    ext = np.concatenate([resid, resid[-2:0:-1]])
    size = ext.size
    spec = np.fft.rfft(ext)
    freqs = np.fft.rfftfreq(size, d=m.sample_period)
    keep = freqs <= cutoff_hz * (1 + 1e-12)
    k = np.nonzero(keep)[0]
    weight = np.where((k == 0) | (2 * k == size), 1.0, 2.0) / size
    return RoadSignal(
        origin=float(m.start_time),
        sample_period=float(m.sample_period),
        n_samples=n,
        trend=tuple(float(c) for c in trend.coef),
        omega=2 * math.pi * freqs[k],
        cos_coef=weight * spec[k].real,
        sin_coef=-weight * spec[k].imag,
    )


def rear_wheel_signal(s: RoadSignal, d: AxleDelay) -> RoadSignal:
    """Signal seen by the rear axle: ``w(t - delta)``."""
    return replace(s, delay=s.delay + d.delta, _dense={})


def perturb_uniform(values: Sequence[float], amplitude: float, seed: int) -> np.ndarray:
    """Add i.i.d. uniform noise on ``[-amplitude, amplitude]``."""
    if amplitude < 0:
        raise InvalidInputError("amplitude must be non-negative")
    values = np.asarray(values, dtype=float)
    rng = np.random.default_rng(seed)
    xi = rng.uniform(-amplitude, amplitude, size=values.shape)
    return values + xi


@dataclass(frozen=True)
class SyntheticProfile:
    """Seeded sum of sinusoids plus raised-cosine bumps.

    ``bumps`` are ``(time, height, duration)`` triples in s, m, s.
    """

    duration: float = 12.0
    sample_period: float = 0.002
    start_time: float = 0.0
    seed: int = 0
    n_tones: int = 4
    tone_amplitude: float = 0.01
    min_hz: float = 0.5
    max_hz: float = 4.0
    bumps: tuple[tuple[float, float, float], ...] = ()

    def measurement(self) -> RoadMeasurement:
        n = int(round(self.duration / self.sample_period)) + 1
        t = self.start_time + self.sample_period * np.arange(n)
        rng = np.random.default_rng(self.seed)
        h = np.zeros(n)
        if self.n_tones:
            freq = rng.uniform(self.min_hz, self.max_hz, self.n_tones)
            amp = rng.uniform(0.5, 1.0, self.n_tones) * self.tone_amplitude
            phase = rng.uniform(0, 2 * math.pi, self.n_tones)
            for f, a, ph in zip(freq, amp, phase):
                h += a * np.sin(2 * math.pi * f * t + ph)
        for tb, height, width in self.bumps:
            inside = (t >= tb) & (t <= tb + width)
            h[inside] += 0.5 * height * (1 - np.cos(2 * math.pi * (t[inside] - tb) / width))
        return RoadMeasurement(self.sample_period, h, self.start_time)


def read_road_csv(path: str | Path) -> RoadMeasurement:
    """Load a ``time,height`` CSV with a strictly uniform time column."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["time", "height"]:
            raise InvalidInputError(f"{path}: expected header 'time,height', got {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError) as exc:
                raise InvalidInputError(f"{path}:{lineno}: bad row {row}") from exc
    if len(rows) < 2:
        raise InsufficientDataError(f"{path}: need at least two samples")
    t, h = np.array(rows).T
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise InvalidInputError(f"{path}: time column must be strictly increasing")
    period = (t[-1] - t[0]) / (t.size - 1)
    if np.max(np.abs(t - (t[0] + period * np.arange(t.size)))) > 1e-9:
        raise InvalidInputError(f"{path}: time column is not uniform to 1e-9 s")
    return RoadMeasurement(period, h, float(t[0]))
