"""Skip-path oracles: fixed-path execution, greedy search and exhaustive search."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .controller import roll_out, run_baseline
from .latent import LatentState, NormKind, Trajectory, latent_norm
from .schedulers import SchedulerPlan

BRUTE_FORCE_LIMIT = 10 ** 6


@dataclass
class SearchTask:
    plan: SchedulerPlan
    denoiser: object
    x_T: LatentState
    target_skips: int
    distance: NormKind = NormKind.L1
    seed: int = 0

    def __post_init__(self):
        self.distance = NormKind(self.distance)
        if not 0 <= self.target_skips:
            raise ValueError("target skip count must be nonnegative")
        if self.target_skips >= self.plan.T:
            raise ValueError(f"cannot skip {self.target_skips} of {self.plan.T} steps: step 0 is always evaluated")


def run_with_path(plan: SchedulerPlan, denoiser, x_T: LatentState, path, seed: int = 0):
    path = np.asarray(path, dtype=bool)
    if path.shape != (plan.T,):
        raise ValueError(f"path length {path.size} does not match T = {plan.T}")
    if not path[0]:
        raise ValueError("the first step has no cached prediction to reuse")
    traj = roll_out(plan, denoiser, x_T, seed, lambda j: bool(path[j]))
    return traj, traj.final


class _Scorer:
    """Distance of a candidate path's x_0 to the full-step x_0."""

    def __init__(self, task: SearchTask):
        self.task = task
        base, _ = run_baseline(task.plan, task.denoiser.spawn(), task.x_T, task.seed)
        self.reference = base.final

    def __call__(self, path) -> float:
        t = self.task
        _, x0 = run_with_path(t.plan, t.denoiser.spawn(), t.x_T, path, t.seed)
        return latent_norm(x0 - self.reference, t.distance)


def greedy_search(task: SearchTask, return_history: bool = False):
    """Flip one step at a time, always the flip that keeps x_0 closest to the full run.

    Flipped steps are never re-enabled.  Ties go to the lowest index.  With
    ``return_history`` the per-round (path, distance) pairs are returned too.
    """
    score = _Scorer(task)
    path = np.ones(task.plan.T, dtype=bool)
    history = [(path.copy(), 0.0)]
    for _ in range(task.target_skips):
        best_idx, best_d = None, math.inf
        for idx in range(1, task.plan.T):
            if not path[idx]:
                continue
            trial = path.copy()
            trial[idx] = False
            d = score(trial)
            if d < best_d:
                best_idx, best_d = idx, d
        path[best_idx] = False
        history.append((path.copy(), best_d))
    if return_history:
        return path, history
    return path


def brute_force_search(task: SearchTask):
    """Exhaustive minimum over all paths with exactly N skips (step 0 kept).

    Ties resolve to the lexicographically smallest path with False < True,
    the same preference as the greedy lowest-index rule.
    """
    T, N = task.plan.T, task.target_skips
    count = math.comb(T - 1, N)
    if count > BRUTE_FORCE_LIMIT:
        raise ValueError(f"C({T - 1}, {N}) = {count} paths exceeds {BRUTE_FORCE_LIMIT}; use a smaller T or N")
    score = _Scorer(task)
    best_path, best_d = None, math.inf
    for combo in itertools.combinations(range(1, T), N):
        path = np.ones(T, dtype=bool)
        path[list(combo)] = False
        d = score(path)
        if d < best_d:
            best_path, best_d = path, d
    return best_path, best_d


def path_distance(task: SearchTask, path) -> float:
    return _Scorer(task)(path)
