"""DDPM machinery on latent tensors: schedule, normalization, forward process and sampling."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import DiffusionError

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Variance schedule; index ``t - 1`` of each array holds step ``t``."""

    betas: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64).reshape(-1)
        if len(b) < 1:
            raise ValueError("schedule needs at least one step")
        if not (np.all(b > 0) and np.all(b < 1)):
            raise ValueError("betas must lie in (0, 1)")
        if np.any(np.diff(b) < 0):
            raise ValueError("betas must be non-decreasing")
        b.setflags(write=False)
        object.__setattr__(self, "betas", b)
        a = 1.0 - b
        ab = np.cumprod(a)
        for arr in (a, ab):
            arr.setflags(write=False)
        object.__setattr__(self, "alphas", a)
        object.__setattr__(self, "alpha_bars", ab)

    @property
    def T(self) -> int:
        return len(self.betas)

    def beta(self, t: int) -> float:
        return float(self.betas[self._idx(t)])

    def alpha(self, t: int) -> float:
        return float(self.alphas[self._idx(t)])

    def alpha_bar(self, t: int) -> float:
        """``prod_{s <= t} alpha_s``; ``alpha_bar(0) == 1``."""
        if t == 0:
            return 1.0
        return float(self.alpha_bars[self._idx(t)])

    def _idx(self, t: int) -> int:
        if not 1 <= t <= self.T:
            raise ValueError(f"step {t} outside 1..{self.T}")
        return int(t) - 1


def make_linear_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0 < beta_start <= beta_end < 1:
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    return NoiseSchedule(np.linspace(beta_start, beta_end, T))


@dataclass(frozen=True)
class NormStats:
    min: float
    max: float

    def __post_init__(self):
        if not self.max > self.min:
            raise ValueError("NormStats need max > min")

    def as_tuple(self) -> tuple[float, float]:
        return (self.min, self.max)


def compute_stats(z) -> NormStats:
    z = np.asarray(z, dtype=np.float64)
    lo, hi = float(z.min()), float(z.max())
    if not hi > lo:
        raise ValueError("cannot max-min normalize a constant tensor")
    return NormStats(lo, hi)


def global_stats(latents: Sequence) -> NormStats:
    """Shared stats over a whole dataset, as an alternative to per-grid stats."""
    return NormStats(min(float(np.min(z)) for z in latents), max(float(np.max(z)) for z in latents))


def normalize(z, stats: NormStats | None = None) -> tuple[np.ndarray, NormStats]:
    """Map ``z`` to [-1, 1] by max-min scaling (per-tensor unless ``stats`` given)."""
    z = np.asarray(z, dtype=np.float64)
    stats = stats or compute_stats(z)
    return 2.0 * (z - stats.min) / (stats.max - stats.min) - 1.0, stats


def denormalize(z_norm, stats: NormStats) -> np.ndarray:
    z = np.asarray(z_norm, dtype=np.float64)
    return (z + 1.0) * 0.5 * (stats.max - stats.min) + stats.min


def _check_shapes(a, b, what):
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def forward_diffuse(z0, t: int, epsilon, schedule: NoiseSchedule) -> np.ndarray:
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(epsilon, dtype=np.float64)
    _check_shapes(z0, eps, "forward_diffuse")
    ab = schedule.alpha_bar(t)
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def predict_z0(z_t, t: int, eps_hat, schedule: NoiseSchedule) -> np.ndarray:
    """Invert the forward process given an epsilon estimate."""
    ab = schedule.alpha_bar(t)
    return (np.asarray(z_t) - np.sqrt(1.0 - ab) * np.asarray(eps_hat)) / np.sqrt(ab)


def dm_loss(epsilon, epsilon_hat) -> float:
    """Mean absolute difference between true and predicted noise."""
    a = np.asarray(epsilon, dtype=np.float64)
    b = np.asarray(epsilon_hat, dtype=np.float64)
    _check_shapes(a, b, "dm_loss")
    return float(np.mean(np.abs(a - b)))


class Denoiser(Protocol):
    def __call__(self, z_t: np.ndarray, t: int) -> np.ndarray: ...


def _eps_for(z_t, t, z0, schedule):
    ab = schedule.alpha_bar(t)
    return (z_t - np.sqrt(ab) * z0) / np.sqrt(1.0 - ab)


class OracleDenoiser:
    """Predicts the exact noise that separates ``z_t`` from a fixed target ``z0``."""

    def __init__(self, z0, schedule: NoiseSchedule):
        self.z0 = np.asarray(z0, dtype=np.float64)
        self.schedule = schedule

    def __call__(self, z_t, t):
        return _eps_for(np.asarray(z_t, dtype=np.float64), t, self.z0, self.schedule)


class DatasetNearestDenoiser:
    """Oracle denoiser toward the library latent nearest to the current z0 estimate.

    The estimate is ``z_t / sqrt(alpha_bar_t)``; distances are Euclidean and
    ties go to the lowest library index.
    """

    def __init__(self, latent_library: Sequence, schedule: NoiseSchedule):
        lib = [np.asarray(z, dtype=np.float64) for z in latent_library]
        if not lib:
            raise ValueError("latent library is empty")
        shape = lib[0].shape
        if any(z.shape != shape for z in lib):
            raise ValueError("library latents must share one shape")
        self.library = np.stack(lib)
        self.schedule = schedule
        self.last_index: int | None = None

    def nearest(self, z) -> int:
        d = np.sum((self.library - np.asarray(z)[None]) ** 2, axis=tuple(range(1, self.library.ndim)))
        return int(np.argmin(d))

    def __call__(self, z_t, t):
        z_t = np.asarray(z_t, dtype=np.float64)
        j = self.nearest(z_t / np.sqrt(self.schedule.alpha_bar(t)))
        self.last_index = j
        return _eps_for(z_t, t, self.library[j], self.schedule)


def sample(
    denoiser: Denoiser | Callable,
    shape: tuple[int, ...],
    schedule: NoiseSchedule,
    seed: int = 0,
) -> np.ndarray:
    """Ancestral DDPM sampling from pure noise down to step 1.

    Each step applies the posterior mean
    ``(z_t - beta_t / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t)`` and
    adds ``sqrt(beta_t)`` Gaussian noise for ``t > 1``.
    """
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(shape)
    for t in range(schedule.T, 0, -1):
        eps = np.asarray(denoiser(z, t), dtype=np.float64)
        if eps.shape != z.shape:
            raise DiffusionError(f"denoiser changed shape {z.shape} -> {eps.shape}", t)
        if not np.all(np.isfinite(eps)):
            raise DiffusionError("denoiser produced non-finite output", t)
        b, a, ab = schedule.beta(t), schedule.alpha(t), schedule.alpha_bar(t)
        z = (z - b / np.sqrt(1.0 - ab) * eps) / np.sqrt(a)
        if t > 1:
            z = z + np.sqrt(b) * rng.standard_normal(shape)
    return z
