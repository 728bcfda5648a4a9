"""Command-line front end: ``skipdiff {sample,oracle,sweep,stats,compare}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiments as ex
from .config import OUT_ENV, ConfigError, load_config

log = logging.getLogger("skipdiff")

DEFAULT_DELTAS = (0.001, 0.005, 0.01, 0.05, 0.1)
DEFAULT_CMAXES = (2, 4, 6)


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _n_values(args) -> list[int]:
    ns = list(args.n or [])
    if args.n_range:
        lo, _, hi = args.n_range.partition(":")
        ns.extend(range(int(lo), int(hi) + 1))
    if not ns:
        raise ConfigError("give --n and/or --n-range")
    return sorted(set(ns))


def _out_dir(cfg) -> Path:
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def _config(args, **extra):
    return load_config(args.config, seed=args.seed, out=args.out, **extra)


def cmd_sample(args) -> list[Path]:
    cfg = _config(args, delta=args.delta, c_max=args.c_max)
    out = _out_dir(cfg)
    result = ex.sample(cfg)
    paths = ex.write_sample(result, cfg, out)
    r = result.report
    print(f"evals {r.eval_count}/{len(r.skip_path)}  speedup {r.speedup:.3f}  "
          f"rms {r.rms_err:.3e}  psnr {r.psnr:.2f} dB  path {r.skip_path}")
    if args.plot:
        from .plotting import plot_trace

        paths.append(plot_trace(result.adaptive.meta["trace"], r.skip_path, out / "trace.png"))
    return paths


def cmd_oracle(args) -> list[Path]:
    cfg = _config(args)
    ns = _n_values(args)
    out = _out_dir(cfg)
    est_rows = []
    if args.estimated:
        found = ex.estimated_paths(cfg, ns)
        missing = [n for n in ns if n not in found]
        if missing:
            log.warning("no threshold reproduces skip counts %s; dropped from both files", missing)
        ns = [n for n in ns if n in found]
        if not ns:
            raise ValueError("no requested skip count is reachable by the third-order criterion")
        est_rows = [{"N": n, "path": found[n]} for n in ns]
    rows = ex.oracle_rows(cfg, ns, brute_force=args.brute_force)
    header = ["N", "path", "distance"] + (["bf_path", "bf_distance"] if args.brute_force else [])
    paths = [out / "oracle.csv"]
    ex.write_csv(paths[0], header, ([ex._fmt(r[k]) for k in header] for r in rows), cfg)
    if est_rows:
        paths.append(out / "estimated.csv")
        ex.write_csv(paths[-1], ["N", "path"], ([r["N"], r["path"]] for r in est_rows), cfg)
    for r in rows:
        line = f"N={r['N']:3d}  d={r['distance']:.6e}  {r['path']}"
        if args.brute_force:
            line += f"  bf_d={r['bf_distance']:.6e}"
        print(line)
    if args.plot:
        from .plotting import plot_paths

        paths.append(plot_paths(rows, out / "oracle.png", title="greedy skip paths"))
        if est_rows:
            paths.append(plot_paths(est_rows, out / "estimated.png", title="third-order skip paths"))
    return paths


def cmd_sweep(args) -> list[Path]:
    cfg = _config(args)
    out = _out_dir(cfg)
    results = ex.sweep(cfg, args.deltas, args.c_maxes, args.seeds, args.jobs)
    paths = ex.write_sweep(results, cfg, out)
    summary = ex.sweep_summary(results)
    for d, c, n, evals, speed, err, _ in summary:
        print(f"delta={d:<8} c_max={c}  runs={n}  evals={float(evals):6.2f}  "
              f"speedup={float(speed):.3f}  rms={float(err):.3e}")
    if args.plot:
        from .analysis import path_histogram
        from .plotting import plot_histogram, plot_sweep

        paths.append(plot_sweep(summary, out / "sweep.png"))
        paths.append(plot_histogram(path_histogram(r["report"] for r in results), out / "histogram.png"))
    return paths


def cmd_stats(args) -> list[Path]:
    result = ex.stats_from_files(args.estimated, args.oracle)
    out = Path(args.out) if args.out else Path(args.oracle).parent
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "stats.json"]
    paths[0].write_text(json.dumps(result, indent=2) + "\n")
    for s in result["series"]:
        if s["chi2"] is None:
            print(f"N={s['N']:3d}  {s['note']}")
        else:
            print(f"N={s['N']:3d}  chi2={s['chi2']:.4f}  p={s['p']:.4g}")
    if args.plot:
        from .plotting import plot_stats

        paths.append(plot_stats(result["series"], out / "stats.png"))
    return paths


def cmd_compare(args) -> list[Path]:
    cfg = _config(args)
    out = _out_dir(cfg)
    rows = ex.compare_strategies(cfg)
    paths = [out / "compare.csv"]
    ex.write_csv(paths[0], ex.COMPARE_HEADER,
                 ([ex._fmt(r[k]) for k in ex.COMPARE_HEADER] for r in rows), cfg)
    for r in rows:
        print(f"({r['variant']}) {r['description']:<30} evals={r['eval_count']:3d}  "
              f"rms={r['rms_err']:.3e}  psnr={r['psnr']:.2f}")
    if args.plot:
        from .plotting import plot_compare

        paths.append(plot_compare(rows, out / "compare.png"))
    return paths


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides the file)")
    common.add_argument("--out", help=f"output directory (overrides ${OUT_ENV} and the file)")
    common.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    common.add_argument("--plot", action="store_true", help="also render PNG figures (needs matplotlib)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="skipdiff", description="Third-order skip criterion for diffusion sampling.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", parents=[common], help="baseline plus adaptive run")
    s.add_argument("--delta", type=float)
    s.add_argument("--c-max", type=int, help="consecutive-skip cap")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("oracle", parents=[common], help="greedy skip paths per target skip count")
    s.add_argument("--n", type=int, action="append", help="target skip count (repeatable)")
    s.add_argument("--n-range", help="inclusive range LO:HI")
    s.add_argument("--brute-force", action="store_true", help="add the exhaustive optimum")
    s.add_argument("--estimated", action="store_true",
                   help="also write uncapped third-order paths with matching skip counts")
    s.set_defaults(func=cmd_oracle)

    s = sub.add_parser("sweep", parents=[common], help="grid over delta, c_max and seeds")
    s.add_argument("--deltas", type=_floats, default=list(DEFAULT_DELTAS))
    s.add_argument("--c-maxes", type=_ints, default=list(DEFAULT_CMAXES))
    s.add_argument("--seeds", type=int, default=10, help="runs per grid cell")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("stats", parents=[common], help="chi-square of estimated vs oracle paths")
    s.add_argument("--estimated", required=True, type=Path)
    s.add_argument("--oracle", required=True, type=Path)
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("compare", parents=[common], help="four update strategies")
    s.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return 2
    try:
        paths = args.func(args)
    except (ConfigError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for path in paths:
        log.info("wrote %s", path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
