"""Experiment drivers behind the CLI subcommands."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .analysis import (
    build_contingency,
    chi2_2x2,
    path_histogram,
    write_histogram_csv,
)
from .config import RunConfig, derive_seed
from .controller import RunReport, psnr, run_adaptive, run_baseline
from .denoisers import GmmDenoiser
from .latent import LatentState, NormKind, Trajectory, latent_norm, path_from_string, path_to_string
from .schedulers import SchedulerPlan, apply_update, initial_latent, injected_noise
from .search import SearchTask, brute_force_search, greedy_search

log = logging.getLogger(__name__)


def write_csv(path, header: Sequence[str], rows, cfg: Optional[RunConfig] = None) -> None:
    with open(path, "w", newline="") as fh:
        if cfg is not None:
            fh.write(f"# config_sha256={cfg.digest()}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return str(v)


def setup(cfg: RunConfig, seed: Optional[int] = None):
    seed = cfg.seed if seed is None else seed
    plan = cfg.plan()
    return plan, GmmDenoiser(cfg.model), initial_latent(plan, seed, cfg.dim), seed


@dataclass
class SampleResult:
    baseline: Trajectory
    adaptive: Trajectory
    report: RunReport


def sample(cfg: RunConfig, seed: Optional[int] = None) -> SampleResult:
    plan, den, x_T, seed = setup(cfg, seed)
    base, _ = run_baseline(plan, den.spawn(), x_T, seed)
    handle = den.spawn()
    traj, report = run_adaptive(plan, handle, x_T, cfg.controller(), seed, reference=base)
    assert handle.eval_counter == report.eval_count
    return SampleResult(base, traj, report)


TRACE_HEADER = ["row", "step_index", "evaluated", "dx_norm", "d3x_norm", "ratio", "next_evaluate"]


def write_sample(result: SampleResult, cfg: RunConfig, out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "baseline.jsonl", out / "adaptive.jsonl", out / "report.json", out / "trace.csv"]
    result.baseline.to_jsonl(paths[0])
    result.adaptive.to_jsonl(paths[1])
    paths[2].write_text(result.report.to_json() + "\n")
    rows = ([_fmt(r[k]) for k in TRACE_HEADER] for r in result.adaptive.meta["trace"])
    write_csv(paths[3], TRACE_HEADER, rows, cfg)
    return paths


def oracle_rows(cfg: RunConfig, n_values: Sequence[int], brute_force: bool = False,
                distance: NormKind = NormKind.L1) -> list[dict]:
    """Greedy paths for every requested N, one greedy pass up to max(N)."""
    plan, den, x_T, seed = setup(cfg)
    n_max = max(n_values)
    task = SearchTask(plan, den, x_T, n_max, distance, seed)
    _, history = greedy_search(task, return_history=True)
    rows = []
    for n in sorted(set(n_values)):
        path, d = history[n]
        row = {"N": n, "path": path_to_string(path), "distance": float(d)}
        if brute_force:
            bpath, bd = brute_force_search(SearchTask(plan, den, x_T, n, distance, seed))
            row.update(bf_path=path_to_string(bpath), bf_distance=float(bd))
        rows.append(row)
    return rows


def estimated_paths(cfg: RunConfig, n_values: Sequence[int], deltas: Optional[Sequence[float]] = None,
                    refine: int = 40) -> dict[int, str]:
    """Third-order paths without the C_max cap, matched to target skip counts by refining δ.

    A coarse δ grid is scanned first; counts it jumps over are bisected between the
    straddling thresholds. Counts no threshold produces are left out.
    """
    plan, den, x_T, seed = setup(cfg)
    base, _ = run_baseline(plan, den.spawn(), x_T, seed)
    if deltas is None:
        deltas = np.concatenate([[0.0], np.geomspace(1e-4, 1e2, 400)])

    def run(d):
        _, rep = run_adaptive(plan, den.spawn(), x_T, cfg.controller(delta=float(d), c_max=None),
                              seed, reference=base)
        return plan.T - rep.eval_count, rep.skip_path

    found: dict[int, str] = {}
    scanned = []
    for d in sorted(deltas):
        n, path = run(d)
        found.setdefault(n, path)
        scanned.append((float(d), n))
    for target in n_values:
        if target in found:
            continue
        brackets = [(a, b) for (a, na), (b, nb) in zip(scanned, scanned[1:]) if na < target < nb]
        for lo, hi in brackets:
            for _ in range(refine):
                mid = 0.5 * (lo + hi)
                n, path = run(mid)
                found.setdefault(n, path)
                if n == target:
                    break
                lo, hi = (mid, hi) if n < target else (lo, mid)
            if target in found:
                break
    return {n: found[n] for n in n_values if n in found}


def stats_from_files(estimated_file, oracle_file) -> dict:
    """Per-N chi-square between estimated and oracle paths with equal skip counts."""
    est = {int(r["N"]): r["path"] for r in read_csv(estimated_file)}
    orc = {int(r["N"]): r["path"] for r in read_csv(oracle_file)}
    problems = []
    for n, p in sorted(orc.items()):
        if n not in est:
            problems.append(f"N={n}: no estimated path")
        elif p.count("S") != n or est[n].count("S") != n:
            problems.append(f"N={n}: skip counts oracle={p.count('S')} estimated={est[n].count('S')}")
        elif len(p) != len(est[n]):
            problems.append(f"N={n}: path lengths {len(est[n])} vs {len(p)}")
    if problems:
        raise ValueError("unmatched path pairs:\n  " + "\n  ".join(problems))
    series = []
    for n in sorted(orc):
        table = build_contingency(path_from_string(est[n]), path_from_string(orc[n]))
        entry = {"N": n, "dof": 1, "table": table.counts.tolist()}
        try:
            entry["chi2"], entry["p"] = chi2_2x2(table)
        except ValueError as exc:
            entry.update(chi2=None, p=None, note=str(exc))
        series.append(entry)
    return {"series": series}


def _sweep_one(args):
    cfg, delta, c_max, seed_index = args
    seed = derive_seed(cfg.seed, seed_index)
    plan, den, x_T, _ = setup(cfg, seed)
    base, _ = run_baseline(plan, den.spawn(), x_T, seed)
    traj, rep = run_adaptive(plan, den.spawn(), x_T, cfg.controller(delta=delta, c_max=c_max), seed,
                             reference=base)
    return {"delta": delta, "c_max": c_max, "seed_index": seed_index, "seed": seed, "report": rep}


def sweep(cfg: RunConfig, deltas: Sequence[float], c_maxes: Sequence[int], n_seeds: int,
          jobs: int = 1) -> list[dict]:
    if not deltas or not c_maxes or n_seeds < 1:
        raise ValueError("sweep grids must be nonempty")
    tasks = [(cfg, float(d), int(c), s) for d in deltas for c in c_maxes for s in range(n_seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_one, tasks))
    else:
        results = [_sweep_one(t) for t in tasks]
    results.sort(key=lambda r: (r["delta"], r["c_max"], r["seed_index"]))
    return results


SWEEP_HEADER = ["delta", "c_max", "seed_index", "seed", "eval_count", "skip_count", "speedup",
                "rms_err", "l1_err", "psnr", "skip_path"]
SUMMARY_HEADER = ["delta", "c_max", "runs", "mean_eval_count", "mean_speedup", "mean_rms_err", "mean_psnr"]


def sweep_rows(results: list[dict]):
    for r in results:
        rep = r["report"]
        yield [_fmt(r["delta"]), r["c_max"], r["seed_index"], r["seed"], rep.eval_count,
               len(rep.skip_path) - rep.eval_count, _fmt(rep.speedup), _fmt(rep.rms_err),
               _fmt(rep.l1_err), _fmt(rep.psnr), rep.skip_path]


def sweep_summary(results: list[dict]) -> list[list]:
    cells: dict = {}
    for r in results:
        cells.setdefault((r["delta"], r["c_max"]), []).append(r["report"])
    out = []
    for (d, c), reps in sorted(cells.items()):
        out.append([_fmt(d), c, len(reps),
                    _fmt(float(np.mean([x.eval_count for x in reps]))),
                    _fmt(float(np.mean([x.speedup for x in reps]))),
                    _fmt(float(np.mean([x.rms_err for x in reps]))),
                    _fmt(float(np.mean([x.psnr for x in reps])))])
    return out


def write_sweep(results: list[dict], cfg: RunConfig, out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "sweep.csv", out / "sweep_summary.csv", out / "histogram.csv"]
    write_csv(paths[0], SWEEP_HEADER, sweep_rows(results), cfg)
    write_csv(paths[1], SUMMARY_HEADER, sweep_summary(results), cfg)
    write_histogram_csv(path_histogram(r["report"] for r in results), paths[2],
                        comment=f"config_sha256={cfg.digest()}")
    return paths


def roll_out_skip_both(plan: SchedulerPlan, denoiser, x_T: LatentState, path, seed: int = 0
                       ) -> Trajectory:
    """Skipped rows leave the latent untouched: neither prediction nor update happens."""
    path = np.asarray(path, dtype=bool)
    T, dim = plan.T, x_T.dim
    latents = np.empty((T + 1, dim))
    noises = np.zeros((T, dim))
    latents[0] = x_T.values
    x = x_T.values
    for j in range(T):
        i = T - j
        if path[j]:
            eps = denoiser.predict(x, plan, i)
            x = apply_update(plan, i, x, eps, injected_noise(plan, seed, i, dim)).values
            noises[j] = eps
        latents[j + 1] = x
    return Trajectory(latents, noises, path)


COMPARE_HEADER = ["variant", "description", "eval_count", "l1_err", "rms_err", "psnr"]


def compare_strategies(cfg: RunConfig, seed: Optional[int] = None) -> list[dict]:
    """Four update strategies scored against the full-step run.

    (a) full run, (b) adaptive: reuse noise but always update, (c) a T//2-step
    run, (d) skip both prediction and update wherever (b) skipped.
    """
    plan, den, x_T, seed = setup(cfg, seed)
    full, _ = run_baseline(plan, den.spawn(), x_T, seed)
    ref = full.final
    adapt, rep_b = run_adaptive(plan, den.spawn(), x_T, cfg.controller(), seed, reference=full)
    half_T = plan.T // 2
    if plan.T % 2:
        log.warning("odd T = %d: the half-step variant uses %d steps", plan.T, half_T)
    half_plan = cfg.plan(half_T)
    half, _ = run_baseline(half_plan, den.spawn(), LatentState(x_T.values, half_T), seed)
    both = roll_out_skip_both(plan, den.spawn(), x_T, adapt.evaluated, seed)

    def score(name, desc, evals, x0):
        d = x0 - ref
        return {"variant": name, "description": desc, "eval_count": int(evals),
                "l1_err": latent_norm(d, NormKind.L1), "rms_err": latent_norm(d, NormKind.L2),
                "psnr": psnr(ref, x0)}

    return [
        score("a", "full-step baseline", plan.T, ref),
        score("b", "skip prediction, keep update", rep_b.eval_count, adapt.final),
        score("c", f"{half_T}-step baseline", half_T, half.final),
        score("d", "skip prediction and update", int(adapt.evaluated.sum()), both.final),
    ]
