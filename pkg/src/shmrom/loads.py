"""External load histories: the harmonic portal load and the moving-train
sleeper pressures."""

from __future__ import annotations

import numpy as np

from .fem import ParamPoint

SLEEPER_SPACING = 0.65  # m
LOADED_AREA = 0.55 * 2.1  # m^2, sleeper footprint spread through the ballast


def portal_load_coefficient(param: ParamPoint, t):
    """Scalar load history ``A |sin(2 pi f t)|`` (Pa), scalar or array ``t``."""
    return param.amplitude * np.abs(np.sin(2.0 * np.pi * param.frequency * np.asarray(t, dtype=np.float64)))


def portal_load_coefficients(param: ParamPoint, dt: float, n_steps: int) -> np.ndarray:
    """Coefficient column for ``t = l * dt, l = 0..n_steps``, shape ``(n_steps + 1, 1)``."""
    t = dt * np.arange(n_steps + 1)
    return portal_load_coefficient(param, t)[:, None]


def load_vector_portal(f_spatial: np.ndarray, t: float, param: ParamPoint) -> np.ndarray:
    """Nodal load ``f(t)`` for a unit-pressure pattern ``f_spatial``."""
    f_spatial = np.asarray(f_spatial, dtype=np.float64)
    if not np.any(f_spatial):
        raise ValueError("empty loaded edge set: the spatial load pattern is zero")
    return portal_load_coefficient(param, t) * f_spatial


def kmh_to_ms(speed_kmh: float) -> float:
    return speed_kmh / 3.6


def time_modulation(t, x_prev, x_sleeper, x_next, axle_offset, speed):
    """Triangular time hat of one axle on one sleeper (``speed`` in m/s).

    Equal to 1 when the axle crosses the sleeper axis and decreasing linearly
    to 0 when it crosses the neighbouring axes; zero outside that window.
    Written as the smaller of the rising and falling ramps so that the three
    crossing instants give exactly 0, 1 and 0.
    """
    if not speed > 0:
        raise ValueError("speed must be positive")
    t = np.asarray(t, dtype=np.float64)
    t_prev, t_mid, t_next = ((x + axle_offset) / speed for x in (x_prev, x_sleeper, x_next))
    rise = (t - t_prev) / (t_mid - t_prev)
    fall = (t_next - t) / (t_next - t_mid)
    return np.clip(np.minimum(rise, fall), 0.0, 1.0)


def moving_load_signal(sleeper_positions, axle_offsets, speed_kmh: float, axle_load: float, t) -> np.ndarray:
    """Pressure ``p_xi(t)`` (Pa) on every sleeper, shape ``(n_sleepers, len(t))``.

    Sleepers must be uniformly spaced 0.65 m apart; the neighbour axes of the
    first and last sleeper are extrapolated with the same spacing.
    """
    if not speed_kmh > 0:
        raise ValueError("train speed must be positive")
    x = np.asarray(sleeper_positions, dtype=np.float64)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("need at least one sleeper position")
    if x.size > 1 and not np.allclose(np.diff(x), SLEEPER_SPACING, rtol=0, atol=1e-9):
        raise ValueError(f"sleepers must be uniformly spaced {SLEEPER_SPACING} m apart")
    speed = kmh_to_ms(speed_kmh)
    p_max = axle_load / LOADED_AREA
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    out = np.zeros((x.size, t.size))
    for xi, xs in enumerate(x):
        for x0 in np.asarray(axle_offsets, dtype=np.float64):
            out[xi] += time_modulation(t, xs - SLEEPER_SPACING, xs, xs + SLEEPER_SPACING, x0, speed)
    return p_max * out
