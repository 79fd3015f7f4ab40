"""Hazard timeline and generic hazard-coupling formulas."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.special import expit

from .config import ScenarioConfig

__all__ = [
    "HazardTimeline",
    "HazardCoupling",
    "TransitionModel",
    "ResilienceSeries",
    "build_timeline",
    "compound_stress",
    "transition_probability",
    "resilience_trajectory",
    "outdoor_temperature",
]


@dataclass(frozen=True, eq=False)
class HazardTimeline:
    dt_h: float
    t_h: np.ndarray
    T_out: np.ndarray
    outage: np.ndarray
    smoke: np.ndarray

    def __post_init__(self):
        n = len(self.t_h)
        if not (len(self.T_out) == len(self.outage) == len(self.smoke) == n):
            raise ValueError("timeline arrays must share one length")
        if self.dt_h <= 0:
            raise ValueError("dt_h must be positive")
        if not np.all(np.isin(self.outage, (0, 1))):
            raise ValueError("outage indicator must be binary")
        if np.any((self.smoke < 0) | (self.smoke > 1)):
            raise ValueError("smoke factor must lie in [0, 1]")

    def __len__(self):
        return len(self.t_h)

    def slice(self, start, stop):
        return HazardTimeline(
            self.dt_h, self.t_h[start:stop], self.T_out[start:stop],
            self.outage[start:stop], self.smoke[start:stop],
        )


def outdoor_temperature(t_h, t_mean=32.0, amplitude=8.0, phase=0.15):
    """Diurnal heat-wave cycle; with the defaults it peaks at 40 C near 09:36."""
    return t_mean + amplitude * np.sin(2.0 * np.pi * (np.asarray(t_h) / 24.0 - phase))


def build_timeline(config: ScenarioConfig | None = None) -> HazardTimeline:
    config = config or ScenarioConfig()
    if config.dt_min <= 0 or config.duration_h <= 0:
        raise ValueError("duration and time step must be positive")
    total_min = config.duration_h * 60.0
    steps = total_min / config.dt_min
    if abs(steps - round(steps)) > 1e-9:
        raise ValueError("time step must divide the duration")
    steps = int(round(steps))

    # outage arithmetic in integer minutes keeps the duty cycle exact on the grid
    minutes = np.arange(steps, dtype=np.int64) * int(config.dt_min)
    period = int(round(config.outage_period_h * 60))
    length = int(round(config.outage_length_h * 60))
    phase = int(round(config.outage_phase_h * 60))
    if period <= 0:
        outage = np.zeros(steps, dtype=int)
    else:
        outage = (np.mod(minutes - phase, period) < length).astype(int)

    t_h = minutes / 60.0
    return HazardTimeline(
        dt_h=config.dt_min / 60.0,
        t_h=t_h,
        T_out=outdoor_temperature(t_h, config.t_mean, config.amplitude, config.phase),
        outage=outage,
        smoke=np.full(steps, float(config.smoke)),
    )


def _identity(H, T, S):
    return H


@dataclass
class HazardCoupling:
    """Weighted superposition of per-hazard stress transforms.

    ``transforms`` defaults to the identity on the hazard intensity. Weights
    are normalized at evaluation time, so only their ratios matter.
    """

    weights: np.ndarray
    intensities: np.ndarray
    transforms: Sequence[Callable] | None = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.intensities = np.asarray(self.intensities, dtype=float)
        if self.weights.shape != self.intensities.shape or self.weights.ndim != 1:
            raise ValueError("weights and intensities must be 1-D and equally long")
        if np.any(self.weights < 0):
            raise ValueError("hazard weights must be nonnegative")
        if self.transforms is None:
            self.transforms = [_identity] * len(self.weights)

    def adapt(self, rewards, qualities, alpha=0.05):
        """Nudge the importance weights with the reliability update rule.

        Negative results are floored at zero to keep the weights admissible.
        """
        from .fusion import RlWeights, rl_weight_update

        updated = rl_weight_update(RlWeights(self.weights, alpha), rewards, qualities)
        self.weights = np.maximum(updated.w, 0.0)
        return self


def compound_stress(coupling: HazardCoupling, T: float, S: float) -> float:
    total = coupling.weights.sum()
    if total <= 0:
        raise ValueError("hazard weights are all zero")
    w_hat = coupling.weights / total
    terms = [f(H, T, S) for f, H in zip(coupling.transforms, coupling.intensities)]
    return float(np.dot(w_hat, terms))


@dataclass(frozen=True)
class TransitionModel:
    theta0: float = 0.0
    theta1: float = 0.0
    theta2: float = 0.0
    theta3: float = 0.0


def transition_probability(model: TransitionModel, T_i, S_i, t):
    """Logistic probability that one hazard triggers another."""
    z = model.theta0 + model.theta1 * np.asarray(T_i) + model.theta2 * np.asarray(S_i) + model.theta3 * np.asarray(t)
    p = expit(z)
    return float(p) if np.ndim(p) == 0 else p


@dataclass(frozen=True, eq=False)
class ResilienceSeries:
    t: np.ndarray
    L: np.ndarray
    L0: float
    t0: float
    R: np.ndarray = field(repr=False)


def resilience_trajectory(L, L0: float, t0: float, t=None, dt: float = 1.0) -> ResilienceSeries:
    """Normalized cumulative performance loss since ``t0``.

    ``L`` is sampled on the grid ``t`` (or ``t0 + k*dt`` when omitted). The
    loss integral uses the trapezoidal rule; entries at or before ``t0`` are
    NaN because the ratio is undefined there.
    """
    L = np.asarray(L, dtype=float)
    if L0 <= 0:
        raise ValueError("baseline performance L0 must be positive")
    if t is None:
        t = t0 + dt * np.arange(len(L))
    t = np.asarray(t, dtype=float)
    if t.shape != L.shape:
        raise ValueError("L and t must share one shape")
    if t[-1] <= t0:
        raise ValueError("series must extend past t0")

    keep = t >= t0
    tt, dev = t[keep], np.abs(L[keep] - L0)
    if tt[0] > t0:
        # prepend t0 by linear interpolation so the integral starts exactly there
        dev0 = np.abs(np.interp(t0, t, L) - L0)
        tt, dev = np.concatenate([[t0], tt]), np.concatenate([[dev0], dev])
        loss = cumulative_trapezoid(dev, tt, initial=0.0)[1:]
    else:
        loss = cumulative_trapezoid(dev, tt, initial=0.0)

    R = np.full(L.shape, np.nan)
    span = t[keep] - t0
    with np.errstate(divide="ignore", invalid="ignore"):
        r = 1.0 - loss / (L0 * span)
    r[span <= 0] = np.nan
    R[keep] = r
    return ResilienceSeries(t=t, L=L, L0=float(L0), t0=float(t0), R=R)
