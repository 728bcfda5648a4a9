"""Skip-error identities and bounds, trace series and path statistics."""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .controller import PSNR_CAP, RunReport, psnr, roll_out, run_baseline
from .denoisers import GmmModel, gmm_epsilon, gmm_lipschitz_bound
from .latent import DiffWindow, LatentState, NormKind, Trajectory, latent_norm, third_diff
from .schedulers import SchedulerPlan

__all__ = [
    "ErrorBoundReport", "ContingencyTable2x2", "one_step_skip_error_exact", "h_coefficient",
    "k_step_error_bound", "bound_inputs", "error_bound_report", "skip_run_error", "accumulation_curve",
    "third_order_relation_trace", "build_contingency", "chi2_2x2", "psnr", "PSNR_CAP",
    "path_histogram", "write_histogram_csv",
]


def one_step_skip_error_exact(plan: SchedulerPlan, i: int, eps_prev, eps_curr,
                              kind: NormKind = NormKind.L2) -> float:
    """Exact error of reusing ``eps_prev`` in place of ``eps_curr`` on the update leaving step ``i``."""
    _, g = plan.coeffs(i)
    diff = np.asarray(eps_prev, dtype=np.float64) - np.asarray(eps_curr, dtype=np.float64)
    return latent_norm(g * diff, kind)


def h_coefficient(plan: SchedulerPlan, n: int, p: int) -> float:
    """``g(n) * prod_{j=1}^{p-1} f(n - j)``; ``p = 1`` is just ``g(n)``."""
    out = abs(float(plan.g[n]))
    for j in range(1, p):
        out *= abs(float(plan.f[n - j]))
    return out


def k_step_error_bound(plan: SchedulerPlan, dx_norms: Sequence[float], dt_abs: Sequence[float],
                       L: float, i: int, k: int, L_t: Optional[float] = None) -> float:
    """Bound on ||x_{i-k} - x_{i-k}^ori|| after k skips that all reuse eps(x_{i+1}).

    ``dx_norms[l-1]`` is ``||Δx_{i-l+1}||`` and ``dt_abs[l-1]`` is
    ``|t_{i-l+1} - t_{i-l+2}|`` on the full-step run, for l = 1..k.  Unrolling
    ``e_{i-m} <= f(i-m) e_{i-m+1} + g(i-m) ||eps(x_{i+1}) - eps(x_{i-m+1})||``
    and telescoping the prediction gap along the full-step run gives

        sum_{m=1}^{k} h^{k-m+1}(i-m) * sum_{l=1}^{m} (L ||Δx_{i-l+1}|| + L_t |Δt_{i-l+1}|).
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if len(dx_norms) < k or len(dt_abs) < k:
        raise ValueError(f"need {k} measured differences, got {len(dx_norms)} and {len(dt_abs)}")
    if i - k < 0 or i > plan.T:
        raise ValueError(f"cannot skip {k} steps from step {i} on a {plan.T}-step plan")
    if L_t is None:
        L_t = L
    links = np.cumsum([L * dx_norms[l] + L_t * dt_abs[l] for l in range(k)])
    return float(sum(h_coefficient(plan, i - m, k - m + 1) * links[m - 1] for m in range(1, k + 1)))


def _skip_path(T: int, i: int, k: int) -> np.ndarray:
    """Rows leaving steps i, i-1, ..., i-k+1 reuse the prediction made at step i+1."""
    path = np.ones(T, dtype=bool)
    for step in range(i - k + 1, i + 1):
        path[T - step] = False
    return path


def skip_run_error(plan: SchedulerPlan, denoiser, x_T: LatentState, i: int, k: int,
                   seed: int = 0, reference: Optional[Trajectory] = None,
                   kind: NormKind = NormKind.L2) -> float:
    """Measured ||x_{i-k} - x_{i-k}^ori|| from paired runs."""
    if not (1 <= i - k + 1 and i + 1 <= plan.T):
        raise ValueError(f"skip window {i}..{i - k + 1} needs an evaluated step above it")
    if reference is None:
        reference, _ = run_baseline(plan, denoiser.spawn(), x_T, seed)
    path = _skip_path(plan.T, i, k)
    skipped = roll_out(plan, denoiser.spawn(), x_T, seed, lambda j: bool(path[j]))
    row = plan.T - (i - k)
    return latent_norm(skipped.latents[row] - reference.latents[row], kind)


def bound_inputs(plan: SchedulerPlan, model: GmmModel, reference: Trajectory, i: int, k: int,
                 inflate: float = 2.0):
    """Measured differences and constants for :func:`k_step_error_bound`.

    ``L`` is the certified spatial bound, maximised over the levels the
    telescoped links are evaluated at.  ``L_t`` is the largest finite-difference
    slope ``||eps(x_a, t_{a+1}) - eps(x_a, t_a)|| / |Δt|`` over the same links,
    inflated by ``inflate``.
    """
    T = plan.T
    t = plan.t
    dx, dt, Ls, slopes = [], [], [], []
    for l in range(1, k + 1):
        a = i - l + 1
        x_a = reference.latents[T - a]
        x_a1 = reference.latents[T - a - 1]
        dx.append(latent_norm(x_a - x_a1))
        dt.append(abs(float(t[a] - t[a + 1])))
        Ls.append(gmm_lipschitz_bound(model, plan.level(a + 1)))
        gap = latent_norm(gmm_epsilon(model, x_a, plan.level(a + 1)) - gmm_epsilon(model, x_a, plan.level(a)))
        slopes.append(gap / dt[-1] if dt[-1] > 0 else 0.0)
    return dx, dt, max(Ls), inflate * max(slopes)


@dataclass
class ErrorBoundReport:
    step: int
    k: int
    measured: float
    exact_one_step: Optional[float]
    bound: float

    @property
    def holds(self) -> bool:
        return self.measured <= self.bound


def error_bound_report(plan: SchedulerPlan, model: GmmModel, x_T: LatentState, i: int, k: int,
                       seed: int = 0) -> ErrorBoundReport:
    from .denoisers import GmmDenoiser

    den = GmmDenoiser(model)
    ref, _ = run_baseline(plan, den.spawn(), x_T, seed)
    measured = skip_run_error(plan, den, x_T, i, k, seed, reference=ref)
    dx, dt, L, L_t = bound_inputs(plan, model, ref, i, k)
    exact = None
    if k == 1:
        T = plan.T
        exact = one_step_skip_error_exact(plan, i, ref.noises[T - i - 1], ref.noises[T - i])
    return ErrorBoundReport(i, k, measured, exact, k_step_error_bound(plan, dx, dt, L, i, k, L_t))


def accumulation_curve(plan: SchedulerPlan, denoiser, x_T: LatentState, path, seed: int = 0,
                       kind: NormKind = NormKind.L2) -> list[tuple[int, float]]:
    """Per-latent (step index, ||x^skip - x^ori||) along a fixed skip path."""
    path = np.asarray(path, dtype=bool)
    if path.shape != (plan.T,) or not path[0]:
        raise ValueError("path must have length T and evaluate the first step")
    ref, _ = run_baseline(plan, denoiser.spawn(), x_T, seed)
    skipped = roll_out(plan, denoiser.spawn(), x_T, seed, lambda j: bool(path[j]))
    T = plan.T
    return [(T - r, latent_norm(skipped.latents[r] - ref.latents[r], kind)) for r in range(T + 1)]


def third_order_relation_trace(traj: Trajectory, kind: NormKind = NormKind.L2,
                               tail_fraction: float = 1.0 / 3.0):
    """Aligned series (step, ||Δε||, ||Δ³x||, ||Δ³x|| / ||Δx||) and their tail correlation.

    Row for step ``i - 1`` pairs ``Δε^i = eps(x_i) - eps(x_{i+1})`` with the
    third difference ending at ``x_{i-1}``.  The Pearson correlation between
    the first two columns is taken over the last ``tail_fraction`` of rows;
    NaN when either column is constant there.
    """
    if not np.all(traj.evaluated):
        raise ValueError("relation trace is defined on full-step trajectories only")
    T = traj.num_steps
    rows = []
    window = DiffWindow(traj.latents[:3])
    for j in range(2, T):
        window.push(traj.latents[j + 1])
        d_eps = latent_norm(traj.noises[j] - traj.noises[j - 1], kind)
        d3 = latent_norm(third_diff(window), kind)
        d1 = latent_norm(window.latest_diff(), kind)
        rows.append((T - j - 1, d_eps, d3, d3 / d1 if d1 > 0 else float("nan")))
    n_tail = max(2, int(math.ceil(len(rows) * tail_fraction)))
    tail = np.array([(r[1], r[2]) for r in rows[-n_tail:]])
    if tail.shape[0] < 2 or np.ptp(tail[:, 0]) == 0 or np.ptp(tail[:, 1]) == 0:
        corr = float("nan")
    else:
        corr = float(np.corrcoef(tail[:, 0], tail[:, 1])[0, 1])
    return rows, corr


@dataclass
class ContingencyTable2x2:
    """Rows: estimated (skip, eval).  Columns: oracle (skip, eval)."""

    counts: np.ndarray
    row_labels: tuple = ("est_skip", "est_eval")
    col_labels: tuple = ("oracle_skip", "oracle_eval")

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.shape != (2, 2) or np.any(c < 0):
            raise ValueError("contingency table must be 2x2 with nonnegative counts")
        if c.sum() == 0:
            raise ValueError("contingency table is empty")
        self.counts = c

    def expected(self) -> np.ndarray:
        c = self.counts.astype(np.float64)
        return np.outer(c.sum(axis=1), c.sum(axis=0)) / c.sum()


def build_contingency(estimated, oracle) -> ContingencyTable2x2:
    est = np.asarray(estimated, dtype=bool)
    orc = np.asarray(oracle, dtype=bool)
    if est.shape != orc.shape:
        raise ValueError(f"path lengths differ: {est.size} vs {orc.size}")
    if (~est).sum() != (~orc).sum():
        raise ValueError(f"skip counts differ: {(~est).sum()} vs {(~orc).sum()}")
    counts = np.zeros((2, 2), dtype=np.int64)
    for e, o in zip(est, orc):
        counts[int(e), int(o)] += 1
    return ContingencyTable2x2(counts)


def chi2_2x2(table: ContingencyTable2x2) -> tuple[float, float]:
    """Pearson chi-square with one degree of freedom, no continuity correction."""
    c = table.counts
    if np.any(c.sum(axis=0) == 0) or np.any(c.sum(axis=1) == 0):
        raise ValueError("a row or column total is zero; re-bin before testing")
    exp = table.expected()
    chi2 = float(np.sum((c - exp) ** 2 / exp))
    # survival function of chi2(1)
    p = math.erfc(math.sqrt(chi2 / 2.0))
    return chi2, min(1.0, max(0.0, p))


def path_histogram(reports: Iterable[RunReport]) -> dict[int, int]:
    counts = Counter(r.eval_count for r in reports)
    if not counts:
        raise ValueError("no reports to histogram")
    return dict(sorted(counts.items()))


def write_histogram_csv(hist: dict[int, int], path, comment: Optional[str] = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(["eval_count", "frequency"])
        for k, v in hist.items():
            w.writerow([k, v])
