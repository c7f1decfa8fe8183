"""Discrete diffusion noise schedules and the cumulative signal fractions
derived from them."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NoiseSchedule",
    "build_linear",
    "sampler_timesteps",
    "step_alpha_bars",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Noise schedule for a T-step diffusion.

    ``betas[i]`` is the variance increment applied at step ``t = i + 1``.
    ``alphas`` is ``1 - betas`` and ``alpha_bars`` holds the running product
    of the alphas with a leading 1, so ``alpha_bars[t]`` is the surviving
    signal fraction after ``t`` steps and ``alpha_bars[0] == 1.0`` exactly.
    """

    betas: np.ndarray
    alphas: np.ndarray = field(init=False, repr=False)
    alpha_bars: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        betas = np.ascontiguousarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size == 0:
            raise ValueError("betas must be a nonempty 1-D sequence")
        if not np.all(np.isfinite(betas)):
            raise ValueError("betas must be finite")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ValueError("betas must lie strictly inside (0, 1)")
        alphas = 1.0 - betas
        # Leading 1.0 so alpha_bars[t] == alpha_bars[t-1] * alphas[t-1] holds
        # exactly for every t >= 1 (cumprod is a sequential product).
        alpha_bars = np.concatenate(([1.0], np.cumprod(alphas)))
        betas.setflags(write=False)
        alphas.setflags(write=False)
        alpha_bars.setflags(write=False)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", alpha_bars)

    @property
    def num_steps(self) -> int:
        return int(self.betas.size)

    def alpha_bar(self, t: int) -> float:
        """Cumulative signal fraction after ``t`` steps, ``0 <= t <= T``."""
        t = int(t)
        if t < 0 or t > self.num_steps:
            raise IndexError(f"step {t} outside [0, {self.num_steps}]")
        return float(self.alpha_bars[t])


def build_linear(T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Schedule whose betas interpolate linearly from start to end inclusive.

    ``T == 1`` degenerates to the single value ``beta_start``.
    """
    T = int(T)
    if T < 1:
        raise ValueError("T must be a positive integer")
    beta_start = float(beta_start)
    beta_end = float(beta_end)
    if not (np.isfinite(beta_start) and np.isfinite(beta_end)):
        raise ValueError("beta bounds must be finite")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    if T == 1:
        betas = np.array([beta_start])
    else:
        betas = np.linspace(beta_start, beta_end, T)
    return NoiseSchedule(betas=betas)


def sampler_timesteps(T: int, N: int) -> np.ndarray:
    """Map N sampler steps onto the T-step schedule.

    Returns the int array ``tau[i - 1] = round(i * T / N)`` for
    ``i = 1 .. N``; strictly increasing with ``tau[-1] == T``.
    """
    T = int(T)
    N = int(N)
    if not 1 <= N <= T:
        raise ValueError(f"need 1 <= N <= T, got N={N}, T={T}")
    taus = np.rint(np.arange(1, N + 1) * (T / N)).astype(np.int64)
    # T/N >= 1 guarantees consecutive targets differ by at least one.
    if taus[0] < 1 or np.any(np.diff(taus) < 1) or taus[-1] != T:
        raise AssertionError("sub-schedule failed to be strictly increasing")
    return taus


def step_alpha_bars(schedule: NoiseSchedule, num_steps: int) -> np.ndarray:
    """Cumulative signal fraction at each of the N sampler steps.

    Entry i holds alpha_bar at sub-schedule step i, with entry 0 fixed to
    alpha_bar(0) == 1 so index arithmetic matches sampler step counting.
    """
    taus = sampler_timesteps(schedule.num_steps, num_steps)
    return np.concatenate(([1.0], schedule.alpha_bars[taus]))
