"""Third-order skip criterion and the adaptive / baseline denoising loops."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .latent import (
    DEGENERATE_TOL,
    DiffWindow,
    LatentState,
    NonFiniteLatentError,
    NormKind,
    Trajectory,
    latent_norm,
    path_to_string,
    third_diff,
)
from .schedulers import SchedulerPlan, apply_update, injected_noise

PSNR_CAP = 200.0


@dataclass(frozen=True)
class ControllerConfig:
    delta: float = 0.01
    c_max: Optional[int] = 4  # None disables the consecutive-skip cap
    warmup: int = 3
    norm_kind: NormKind = NormKind.L2
    sde_delta: float = 0.01

    def __post_init__(self):
        if not self.delta >= 0:
            raise ValueError(f"delta must be nonnegative, got {self.delta}")
        if self.c_max is not None and self.c_max < 1:
            raise ValueError(f"c_max must be a positive integer, got {self.c_max}")
        if self.warmup < 3:
            raise ValueError("warmup must be at least 3: a third difference needs four latents")
        if not self.sde_delta >= 0:
            raise ValueError(f"sde_delta must be nonnegative, got {self.sde_delta}")
        object.__setattr__(self, "norm_kind", NormKind(self.norm_kind))


@dataclass
class ControllerState:
    window: DiffWindow = field(default_factory=DiffWindow)
    cached_noise: Optional[np.ndarray] = None
    consecutive_skips: int = 0
    noise_window: Optional[DiffWindow] = None  # scaled injected noise, SDE plans only
    decisions: list = field(default_factory=list)


def _relative_test(d3: float, d1: float, delta: float) -> bool:
    """True iff ``d3 >= delta * d1``, with the stationary case read as a skip."""
    if delta == 0.0:
        return True
    if d3 < DEGENERATE_TOL and d1 < DEGENERATE_TOL:
        return False
    if math.isinf(delta):
        return False
    return d3 >= delta * d1


def criterion_terms(window: DiffWindow, kind: NormKind) -> tuple[float, float]:
    """(||third difference||, ||Δx_i||) for the current window."""
    return latent_norm(third_diff(window), kind), latent_norm(window.latest_diff(), kind)


def should_evaluate(state: ControllerState, cfg: ControllerConfig) -> bool:
    """Whether the next step must call the denoiser (False = reuse the cached noise)."""
    if not state.window.full:
        raise ValueError("criterion window is not populated")
    if cfg.c_max is not None and state.consecutive_skips >= cfg.c_max:
        return True
    d3, d1 = criterion_terms(state.window, cfg.norm_kind)
    return _relative_test(d3, d1, cfg.delta)


def sde_should_evaluate(state: ControllerState, cfg: ControllerConfig) -> bool:
    """Skip only when both the latent and the injected-noise stream look stable."""
    if state.noise_window is None:
        raise ValueError("noise-stream criterion requires a stochastic plan")
    if not state.noise_window.full:
        raise ValueError("noise window is not populated")
    if should_evaluate(state, cfg):
        return True
    if not any(np.any(n) for n in state.noise_window.latents):
        return False
    n3, n1 = criterion_terms(state.noise_window, cfg.norm_kind)
    return _relative_test(n3, n1, cfg.sde_delta)


@dataclass
class RunReport:
    seed: int
    sampler: str
    delta: Optional[float]
    c_max: Optional[int]
    eval_count: int
    skip_path: str
    speedup: float
    l1_err: float
    rms_err: float
    psnr: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


def psnr(reference, candidate) -> float:
    ref = reference.values if isinstance(reference, LatentState) else np.asarray(reference, dtype=np.float64)
    cand = candidate.values if isinstance(candidate, LatentState) else np.asarray(candidate, dtype=np.float64)
    if ref.shape != cand.shape:
        raise ValueError(f"dimension mismatch: {ref.shape} vs {cand.shape}")
    rng = float(ref.max() - ref.min())
    if rng == 0.0:
        raise ValueError("reference has zero dynamic range")
    mse = float(np.mean((ref - cand) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(rng * rng / mse))


def make_report(plan: SchedulerPlan, seed: int, traj: Trajectory, reference: np.ndarray,
                cfg: Optional[ControllerConfig] = None) -> RunReport:
    evals = int(traj.evaluated.sum())
    diff = traj.final - reference
    return RunReport(
        seed=int(seed),
        sampler=plan.name,
        delta=None if cfg is None else float(cfg.delta),
        c_max=None if cfg is None else cfg.c_max,
        eval_count=evals,
        skip_path=path_to_string(traj.evaluated),
        speedup=plan.T / evals,
        l1_err=latent_norm(diff, NormKind.L1),
        rms_err=latent_norm(diff, NormKind.L2),
        psnr=psnr(reference, traj.final),
    )


def roll_out(plan: SchedulerPlan, denoiser, x_T: LatentState, seed: int,
             wants_eval: Callable[[int], bool],
             after_step: Optional[Callable[[int, np.ndarray, np.ndarray, bool], None]] = None,
             ) -> Trajectory:
    """Run T updates; ``wants_eval(j)`` picks fresh vs cached noise for row ``j``.

    The latent update is applied at every step regardless of the choice.
    """
    T = plan.T
    if x_T.step_index != T:
        raise ValueError(f"initial latent has step index {x_T.step_index}, plan starts at {T}")
    dim = x_T.dim
    latents = np.empty((T + 1, dim))
    noises = np.empty((T, dim))
    injected = np.empty((T, dim))
    evaluated = np.zeros(T, dtype=bool)
    latents[0] = x_T.values
    x = x_T
    cached = None
    for j in range(T):
        i = T - j
        if wants_eval(j):
            eps = np.asarray(denoiser.predict(x.values, plan, i), dtype=np.float64)
            cached = eps
            evaluated[j] = True
        elif cached is None:
            raise ValueError(f"step {i} reuses a prediction but none has been made yet")
        else:
            eps = cached
        inj = injected_noise(plan, seed, i, dim)
        try:
            x = apply_update(plan, i, x, eps, inj)
        except NonFiniteLatentError:
            raise NonFiniteLatentError(
                f"non-finite latent produced at step {i} (rms of x_{i} = {latent_norm(x.values):.6g})"
            ) from None
        latents[j + 1] = x.values
        noises[j] = eps
        injected[j] = inj
        if after_step is not None:
            after_step(j, x.values, inj, bool(evaluated[j]))
    return Trajectory(latents, noises, evaluated, injected)


def run_baseline(plan: SchedulerPlan, denoiser, x_T: LatentState, seed: int = 0):
    traj = roll_out(plan, denoiser, x_T, seed, lambda j: True)
    return traj, make_report(plan, seed, traj, traj.final)


def run_adaptive(plan: SchedulerPlan, denoiser, x_T: LatentState, cfg: ControllerConfig,
                 seed: int = 0, reference: Optional[Trajectory] = None):
    """Adaptive loop: ``cfg.warmup`` forced evaluations, then the criterion decides.

    The decision made after producing x_{i-1} governs the following step.  A
    stochastic plan switches to the joint latent + injected-noise criterion.
    ``reference`` is the paired baseline; when omitted it is computed with a
    fresh handle spawned from ``denoiser`` (same x_T, same seed).
    """
    if reference is None:
        reference, _ = run_baseline(plan, denoiser.spawn(), x_T, seed)
    state = ControllerState(window=DiffWindow([x_T.values]))
    if plan.stochastic:
        state.noise_window = DiffWindow([np.zeros(x_T.dim)])
    decide = sde_should_evaluate if plan.stochastic else should_evaluate
    trace = []
    plan_next = {"evaluate": True}

    def wants_eval(j: int) -> bool:
        return j < cfg.warmup or plan_next["evaluate"]

    def after_step(j: int, x_new: np.ndarray, inj: np.ndarray, was_eval: bool) -> None:
        state.consecutive_skips = 0 if was_eval else state.consecutive_skips + 1
        state.decisions.append(was_eval)
        state.window.push(x_new)
        if state.noise_window is not None:
            state.noise_window.push(inj)
        row = {"row": j, "step_index": plan.T - j - 1, "evaluated": was_eval,
               "dx_norm": float("nan"), "d3x_norm": float("nan"), "ratio": float("nan"),
               "next_evaluate": True}
        if state.window.full:
            d3, d1 = criterion_terms(state.window, cfg.norm_kind)
            row.update(dx_norm=d1, d3x_norm=d3, ratio=d3 / d1 if d1 > 0 else float("nan"))
            if j + 1 >= cfg.warmup:
                plan_next["evaluate"] = decide(state, cfg)
                row["next_evaluate"] = plan_next["evaluate"]
        trace.append(row)

    traj = roll_out(plan, denoiser, x_T, seed, wants_eval, after_step)
    traj.meta["trace"] = trace
    return traj, make_report(plan, seed, traj, reference.final, cfg)
