"""
LDSeg - Noise Schedules
Immutable variance schedules for the forward/reverse latent diffusion.

Arrays are indexed by timestep 0..T; index 0 is the clean state
(beta = 0, alpha_bar = 1) so `alpha_bars[t_prev]` works for t_prev = 0.
"""

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Sequence

import numpy as np

from src.errors import RangeError


def _frozen(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    values.setflags(write=False)
    return values


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """
    beta/alpha/alpha_bar/sigma per step, plus the network timestep each
    step corresponds to (identity unless the schedule was respaced).
    """
    kind: str
    betas: np.ndarray
    timesteps: np.ndarray
    params: Dict[str, float] = field(default_factory=dict)

    @property
    def T(self) -> int:
        return len(self.betas) - 1

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @cached_property
    def alpha_bars(self) -> np.ndarray:
        return _frozen(np.cumprod(self.alphas))

    @property
    def sigmas(self) -> np.ndarray:
        return np.sqrt(self.betas)

    def describe(self) -> Dict[str, object]:
        """JSON-friendly summary stored in checkpoints."""
        return {"kind": self.kind, "T": self.T, **self.params}


def from_betas(betas: Sequence[float], kind: str = "custom", timesteps=None, params=None) -> NoiseSchedule:
    """Schedule from per-step betas for t = 1..T."""
    betas = np.asarray(betas, dtype=np.float64).reshape(-1)
    if betas.size < 1:
        raise RangeError("a schedule needs at least one step")
    if np.any(betas <= 0.0) or np.any(betas >= 1.0):
        raise RangeError("every beta must lie in (0, 1)")
    full = np.concatenate([[0.0], betas])
    if timesteps is None:
        timesteps = np.arange(len(full))
    return NoiseSchedule(
        kind=kind,
        betas=_frozen(full),
        timesteps=np.asarray(timesteps, dtype=np.int64),
        params=dict(params or {}),
    )


def make_linear_schedule(T: int, beta1: float = 1e-4, betaT: float = 0.02) -> NoiseSchedule:
    """Betas linearly interpolated from beta1 to betaT over T steps."""
    if T < 1:
        raise RangeError(f"T must be >= 1, got {T}")
    if not 0.0 < beta1 <= betaT < 1.0:
        raise RangeError(f"need 0 < beta1 <= betaT < 1, got ({beta1}, {betaT})")
    betas = np.linspace(beta1, betaT, T, dtype=np.float64)
    return from_betas(betas, kind="linear", params={"beta_start": beta1, "beta_end": betaT})


def make_cosine_schedule(T: int, offset: float = 0.008, max_beta: float = 0.999) -> NoiseSchedule:
    """
    alpha_bar(t) = f(t)/f(0), f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2);
    betas derived from consecutive ratios and clipped to max_beta.
    """
    if T < 1:
        raise RangeError(f"T must be >= 1, got {T}")
    if offset <= 0:
        raise RangeError(f"cosine offset must be positive, got {offset}")
    steps = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((steps / T + offset) / (1.0 + offset)) * (math.pi / 2.0)) ** 2
    betas = np.clip(1.0 - f[1:] / f[:-1], 0.0, max_beta)
    return from_betas(betas, kind="cosine", params={"cosine_offset": offset})


def respace(sched: NoiseSchedule, steps: Sequence[int]) -> NoiseSchedule:
    """
    Schedule over a step subsequence s_1 < ... < s_K of `sched`.

    beta'_i = 1 - alpha_bar[s_i] / alpha_bar[s_{i-1}] (alpha_bar[s_0] = 1), so the
    respaced chain keeps the original marginals at the kept steps. The network
    timestep for step i is `timesteps[i] = s_i`. The full subsequence returns
    `sched` unchanged.
    """
    steps = np.asarray(steps, dtype=np.int64)
    if steps.size == sched.T and np.array_equal(steps, np.arange(1, sched.T + 1)):
        return sched
    alpha_bars = sched.alpha_bars
    kept = np.concatenate([[1.0], alpha_bars[steps]])
    betas = 1.0 - kept[1:] / kept[:-1]
    return from_betas(
        betas,
        kind=f"{sched.kind}-respaced",
        timesteps=np.concatenate([[0], steps]),
        params=sched.params,
    )
