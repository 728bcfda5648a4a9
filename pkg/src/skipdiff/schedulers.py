"""Coefficient plans for the single-noise update ``x_{i-1} = f x_i - g eps``.

Arrays are stored by update: entry ``i - 1`` of ``f``, ``g`` and
``sde_noise_scale`` drives the step from index ``i`` to ``i - 1``.  Schedule
arrays (``values``, ``t_grid``) have ``T + 1`` entries indexed by step.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .latent import LatentState


class ScheduleKind(str, Enum):
    VP = "VP-alphabar"
    VE = "VE-sigma"


@dataclass(frozen=True)
class NoiseLevel:
    """Marginal of x at one step: ``x = mean_scale * x0 + noise_std * z``."""

    kind: ScheduleKind
    value: float  # alphabar for VP, sigma for VE

    def __post_init__(self):
        if self.kind is ScheduleKind.VE and self.value < 0:
            raise ValueError(f"sigma must be nonnegative, got {self.value}")
        if self.kind is ScheduleKind.VP and not 0 < self.value <= 1:
            raise ValueError(f"alphabar must lie in (0, 1], got {self.value}")

    @property
    def mean_scale(self) -> float:
        return 1.0 if self.kind is ScheduleKind.VE else float(np.sqrt(self.value))

    @property
    def noise_std(self) -> float:
        return float(self.value) if self.kind is ScheduleKind.VE else float(np.sqrt(1.0 - self.value))


@dataclass(frozen=True)
class NoiseSchedule:
    kind: ScheduleKind
    values: np.ndarray
    t_grid: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        t = np.asarray(self.t_grid, dtype=np.float64)
        if v.shape != t.shape or v.ndim != 1 or v.size < 2:
            raise ValueError("schedule values and t_grid must be equal-length 1-D arrays")
        if self.kind is ScheduleKind.VP:
            # increasing from the x_T end (index T) toward x_0 (index 0)
            if not (np.all(np.diff(v) < 0) and v[-1] > 0 and v[0] <= 1):
                raise ValueError("alphabar must increase strictly toward index 0 within (0, 1]")
        else:
            if not (np.all(np.diff(v) > 0) and v[0] >= 0):
                raise ValueError("sigma grid must decrease strictly toward index 0 and stay >= 0")
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "t_grid", t)

    @property
    def num_steps(self) -> int:
        return self.values.size - 1

    def level(self, i: int) -> NoiseLevel:
        return NoiseLevel(self.kind, float(self.values[i]))


@dataclass(frozen=True)
class SchedulerPlan:
    f: np.ndarray
    g: np.ndarray
    schedule: NoiseSchedule
    name: str
    sde_noise_scale: np.ndarray
    stochastic: bool = False

    def __post_init__(self):
        arrays = {}
        for key in ("f", "g", "sde_noise_scale"):
            a = np.asarray(getattr(self, key), dtype=np.float64)
            if a.shape != (self.schedule.num_steps,):
                raise ValueError(f"{key} must have T = {self.schedule.num_steps} entries")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{key} has non-finite entries")
            a.setflags(write=False)
            arrays[key] = a
        if np.any(arrays["sde_noise_scale"] < 0):
            raise ValueError("sde_noise_scale must be nonnegative")
        if not self.stochastic and np.any(arrays["sde_noise_scale"] != 0):
            raise ValueError("deterministic plans carry no injected noise")
        for key, a in arrays.items():
            object.__setattr__(self, key, a)

    @property
    def T(self) -> int:
        return self.schedule.num_steps

    @property
    def t(self) -> np.ndarray:
        return self.schedule.t_grid

    def level(self, i: int) -> NoiseLevel:
        return self.schedule.level(i)

    def coeffs(self, i: int) -> tuple[float, float]:
        """(f(i-1), g(i-1)) for the update leaving step ``i``."""
        self._check_step(i)
        return float(self.f[i - 1]), float(self.g[i - 1])

    def _check_step(self, i: int) -> None:
        if not 1 <= i <= self.T:
            raise IndexError(f"update index {i} outside [1, {self.T}]")

    def same_coefficients(self, other: "SchedulerPlan") -> bool:
        return (
            np.array_equal(self.f, other.f)
            and np.array_equal(self.g, other.g)
            and np.array_equal(self.sde_noise_scale, other.sde_noise_scale)
            and np.array_equal(self.schedule.values, other.schedule.values)
            and np.array_equal(self.schedule.t_grid, other.schedule.t_grid)
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "f", "g", "t", "sigma_or_alphabar", "sde_noise_scale"])
            for i in range(self.T, 0, -1):
                w.writerow([
                    i, repr(float(self.f[i - 1])), repr(float(self.g[i - 1])),
                    repr(float(self.t[i])), repr(float(self.schedule.values[i])),
                    repr(float(self.sde_noise_scale[i - 1])),
                ])


def ddim_coefficients(alphabar_prev: float, alphabar_cur: float) -> tuple[float, float]:
    f = np.sqrt(alphabar_prev / alphabar_cur)
    # factored so that equal alphabars give exactly f = 1, g = 0
    g = f * np.sqrt(1.0 - alphabar_cur) - np.sqrt(1.0 - alphabar_prev)
    return float(f), float(g)


def build_ddim_plan(T: int, beta_start: float = 1e-4, beta_end: float = 0.02,
                    train_steps: int = 1000) -> SchedulerPlan:
    """Deterministic DDIM on a linear-beta schedule with trailing timestep spacing.

    Index ``i`` (1..T) maps to training timestep ``i * train_steps // T - 1``;
    index 0 is the clean end with alphabar = 1.
    """
    if T < 1 or train_steps < 1:
        raise ValueError("T and train_steps must be positive")
    if T > train_steps:
        raise ValueError(f"T = {T} exceeds train_steps = {train_steps}")
    if not 0 < beta_start < beta_end < 1:
        raise ValueError("need 0 < beta_start < beta_end < 1")
    betas = np.linspace(beta_start, beta_end, train_steps, dtype=np.float64)
    alphas_cumprod = np.cumprod(1.0 - betas)
    train_t = np.array([i * train_steps // T - 1 for i in range(1, T + 1)])
    alphabar = np.concatenate([[1.0], alphas_cumprod[train_t]])
    t_grid = np.concatenate([[0.0], (train_t + 1) / train_steps])
    f = np.empty(T)
    g = np.empty(T)
    for i in range(1, T + 1):
        f[i - 1], g[i - 1] = ddim_coefficients(alphabar[i - 1], alphabar[i])
    schedule = NoiseSchedule(ScheduleKind.VP, alphabar, t_grid)
    return SchedulerPlan(f, g, schedule, "ddim", np.zeros(T))


def loglinear_sigmas(T: int, sigma_max: float, sigma_min: float) -> np.ndarray:
    """T + 1 sigmas, index 0 = sigma_min, index T = sigma_max."""
    return np.exp(np.linspace(np.log(sigma_min), np.log(sigma_max), T + 1))


def karras_sigmas(T: int, sigma_max: float, sigma_min: float, rho: float = 7.0) -> np.ndarray:
    """T + 1 sigmas uniform in sigma^(1/rho); index 0 = sigma_min."""
    ramp = np.linspace(0.0, 1.0, T + 1)
    lo, hi = sigma_min ** (1.0 / rho), sigma_max ** (1.0 / rho)
    return (lo + ramp * (hi - lo)) ** rho


SIGMA_GRIDS = {"karras": karras_sigmas, "loglinear": loglinear_sigmas}


def euler_plan_from_sigmas(sigmas, name: str = "euler-ve") -> SchedulerPlan:
    sigmas = np.asarray(sigmas, dtype=np.float64)
    if sigmas.ndim != 1 or sigmas.size < 2:
        raise ValueError("need at least two sigmas")
    if not np.all(np.diff(sigmas) > 0):
        raise ValueError("sigma grid is not strictly monotone")
    T = sigmas.size - 1
    f = np.ones(T)
    g = sigmas[1:] - sigmas[:-1]
    schedule = NoiseSchedule(ScheduleKind.VE, sigmas, sigmas.copy())
    return SchedulerPlan(f, g, schedule, name, np.zeros(T))


def build_euler_ve_plan(T: int, sigma_max: float = 80.0, sigma_min: float = 0.002,
                        grid: str = "karras") -> SchedulerPlan:
    """Euler on the VE probability-flow ODE: ``x_{i-1} = x_i - (sigma_i - sigma_{i-1}) eps``.

    ``grid`` is ``"karras"`` (rho = 7) or ``"loglinear"``.
    """
    if T < 1:
        raise ValueError("T must be positive")
    if not sigma_max > sigma_min > 0:
        raise ValueError("need sigma_max > sigma_min > 0")
    try:
        make = SIGMA_GRIDS[grid]
    except KeyError:
        raise ValueError(f"unknown sigma grid {grid!r}; choose from {sorted(SIGMA_GRIDS)}") from None
    return euler_plan_from_sigmas(make(T, sigma_max, sigma_min))


def build_sde_euler_plan(T: int, sigma_max: float = 80.0, sigma_min: float = 0.002,
                         churn: float = 1.0, grid: str = "karras") -> SchedulerPlan:
    """Euler-VE coefficients plus per-step Gaussian injection ``churn * sqrt|dsigma|``."""
    if churn < 0:
        raise ValueError(f"churn must be nonnegative, got {churn}")
    base = build_euler_ve_plan(T, sigma_max, sigma_min, grid)
    scale = churn * np.sqrt(np.abs(np.asarray(base.g)))
    return SchedulerPlan(np.array(base.f), np.array(base.g), base.schedule, "sde-euler",
                         scale, stochastic=True)


def injection_rng(seed: int, i: int) -> np.random.Generator:
    """Counter-style stream keyed by (seed, step index) only."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(1, int(i))))


def injected_noise(plan: SchedulerPlan, seed: int, i: int, dim: int) -> np.ndarray:
    """Scaled noise added by the update leaving step ``i``; zeros for ODE plans."""
    plan._check_step(i)
    scale = plan.sde_noise_scale[i - 1]
    if scale == 0.0:
        return np.zeros(dim)
    return scale * injection_rng(seed, i).standard_normal(dim)


def initial_latent(plan: SchedulerPlan, seed: int, dim: int, side: Optional[int] = None) -> LatentState:
    """x_T drawn from the prior: N(0, I) for VP, N(0, sigma_max^2 I) for VE."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(0,)))
    z = rng.standard_normal(dim)
    if plan.schedule.kind is ScheduleKind.VE:
        z = plan.schedule.values[-1] * z
    return LatentState(z, plan.T, side)


def apply_update(plan: SchedulerPlan, i: int, x_i, noise, injected=None) -> LatentState:
    """``f(i-1) x_i - g(i-1) noise + injected``; oblivious to whether noise is fresh or cached."""
    f, g = plan.coeffs(i)
    x = x_i.values if isinstance(x_i, LatentState) else np.asarray(x_i, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != x.shape:
        raise ValueError(f"noise shape {noise.shape} does not match latent {x.shape}")
    out = f * x - g * noise
    if injected is not None:
        injected = np.asarray(injected, dtype=np.float64)
        if injected.shape != x.shape:
            raise ValueError("injected noise shape does not match latent")
        out = out + injected
    side = x_i.side if isinstance(x_i, LatentState) else None
    return LatentState(out, i - 1, side)
