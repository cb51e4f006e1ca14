"""
LDSeg - Diffusion Kernels
Pure forward/reverse transition functions over numpy latents, and the
evenly spaced step subsequence used to shorten sampling.

Timesteps may be a scalar or a per-sample vector (length = batch size).
"""

from typing import List, Optional, Sequence

import numpy as np

from src.diffusion.schedule import NoiseSchedule
from src.errors import DimensionError, OrderingError, RangeError


# ============ Helpers ============

def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{what} shape {b.shape} differs from latent shape {a.shape}")


def _check_timesteps(t, T: int, lowest: int = 1) -> np.ndarray:
    t = np.asarray(t, dtype=np.int64)
    if np.any(t < lowest) or np.any(t > T):
        raise RangeError(f"timestep {t.tolist()} outside [{lowest}, {T}]")
    return t


def _per_sample(values: np.ndarray, t: np.ndarray, ndim: int) -> np.ndarray:
    """Gather schedule values at t, shaped to broadcast over a batch of latents."""
    picked = values[t]
    if t.ndim == 1 and ndim > 1:
        picked = picked.reshape((-1,) + (1,) * (ndim - 1))
    return picked


def _like(out: np.ndarray, ref: np.ndarray) -> np.ndarray:
    dtype = ref.dtype if np.issubdtype(ref.dtype, np.floating) else np.float64
    return np.asarray(out).astype(dtype, copy=False)


# ============ Forward Process ============

def q_sample(m0, t, eps, sched: NoiseSchedule) -> np.ndarray:
    """Closed-form corruption sqrt(alpha_bar_t) * m0 + sqrt(1 - alpha_bar_t) * eps."""
    m0, eps = np.asarray(m0), np.asarray(eps)
    _check_same_shape(m0, eps, "eps")
    t = _check_timesteps(t, sched.T)
    ab = _per_sample(sched.alpha_bars, t, m0.ndim)
    return _like(np.sqrt(ab) * m0 + np.sqrt(1.0 - ab) * eps, m0)


def q_step(m_prev, t, eps, sched: NoiseSchedule) -> np.ndarray:
    """One forward transition m_t = sqrt(alpha_t) * m_{t-1} + sqrt(beta_t) * eps."""
    m_prev, eps = np.asarray(m_prev), np.asarray(eps)
    _check_same_shape(m_prev, eps, "eps")
    t = _check_timesteps(t, sched.T)
    alpha = _per_sample(sched.alphas, t, m_prev.ndim)
    beta = _per_sample(sched.betas, t, m_prev.ndim)
    return _like(np.sqrt(alpha) * m_prev + np.sqrt(beta) * eps, m_prev)


# ============ Reverse Process ============

def ddpm_step(mt, eps_pred, t: int, z: Optional[np.ndarray], sched: NoiseSchedule) -> np.ndarray:
    """
    Ancestral update
        m_{t-1} = (m_t - beta_t / sqrt(1 - alpha_bar_t) * eps_pred) / sqrt(alpha_t) + sigma_t * z
    with sigma_t^2 = beta_t. Callers pass z = None (or zeros) at t = 1.
    """
    mt, eps_pred = np.asarray(mt), np.asarray(eps_pred)
    _check_same_shape(mt, eps_pred, "eps_pred")
    t = int(_check_timesteps(t, sched.T))
    alpha = sched.alphas[t]
    beta = sched.betas[t]
    mean = (mt - beta / np.sqrt(1.0 - sched.alpha_bars[t]) * eps_pred) / np.sqrt(alpha)
    if z is not None:
        z = np.asarray(z)
        _check_same_shape(mt, z, "z")
        mean = mean + sched.sigmas[t] * z
    return _like(mean, mt)


def predict_m0(mt, eps_pred, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Invert the closed-form corruption given an eps estimate."""
    ab = sched.alpha_bars[t]
    return (np.asarray(mt) - np.sqrt(1.0 - ab) * np.asarray(eps_pred)) / np.sqrt(ab)


def ddim_step(mt, eps_pred, t: int, t_prev: int, sched: NoiseSchedule) -> np.ndarray:
    """
    Deterministic (eta = 0) update from t to t_prev < t; t_prev = 0 lands on
    the clean estimate (alpha_bar_0 = 1).
    """
    mt, eps_pred = np.asarray(mt), np.asarray(eps_pred)
    _check_same_shape(mt, eps_pred, "eps_pred")
    if t_prev >= t:
        raise OrderingError(f"DDIM needs t_prev < t, got t={t} t_prev={t_prev}")
    t = int(_check_timesteps(t, sched.T))
    t_prev = int(_check_timesteps(t_prev, sched.T, lowest=0))
    m0_hat = predict_m0(mt, eps_pred, t, sched)
    ab_prev = sched.alpha_bars[t_prev]
    return _like(np.sqrt(ab_prev) * m0_hat + np.sqrt(1.0 - ab_prev) * eps_pred, mt)


# ============ Step Subsequences ============

def evenly_spaced_subsequence(K: int, T: int) -> List[int]:
    """
    K evenly spaced reals over [1, T], rounded half away from zero,
    deduplicated and ascending.
    """
    if T < 1 or not 1 <= K <= T:
        raise RangeError(f"need 1 <= K <= T, got K={K} T={T}")
    points = np.floor(np.linspace(1.0, float(T), K) + 0.5).astype(np.int64)
    return [int(s) for s in np.unique(points)]


def validate_subsequence(steps: Sequence[int], T: int) -> List[int]:
    """Check a user-supplied step list: strictly increasing, within [1, T]."""
    steps = [int(s) for s in steps]
    if not steps:
        raise RangeError("step list must not be empty")
    if steps[0] < 1 or steps[-1] > T:
        raise RangeError(f"steps must lie within [1, {T}], got {steps[0]}..{steps[-1]}")
    if any(b <= a for a, b in zip(steps, steps[1:])):
        raise OrderingError("steps must be strictly increasing")
    return steps
