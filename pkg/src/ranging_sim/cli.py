"""Command-line interface.

Subcommands: calibrate (threshold and SINR operating points), validate
(configuration self-checks), gne (per-instance equilibrium analysis), run
(a single synchronization session with a JSONL trace), and sweep (figure
reproduction to CSV plus a JSON sidecar). Data goes to stdout or files
under --outdir; diagnostics go to stderr. The master seed comes from
--seed, falling back to the RANGING_SIM_SEED environment variable, then 0.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import experiments, game, sync
from .configfile import load_params
from .feedback import resolution
from .netmodel import sample_deployment, sample_instance_channels

_SEED_ENV = "RANGING_SIM_SEED"


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="configuration file (key = value lines)")
    parser.add_argument("--seed", type=int, default=None,
                        help=f"master seed (fallback: ${_SEED_ENV}, then 0)")
    parser.add_argument("--outdir", default=".", help="output directory")
    parser.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                        help="worker threads for Monte Carlo trials")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override one config key")


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(_SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ValueError(f"${_SEED_ENV}={env!r} is not an integer") from None
    return 0


def _load(args):
    return load_params(args.config, args.overrides)


def _int_list(text: str) -> tuple:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _float_list(text: str) -> tuple:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _b_list(text: str) -> tuple:
    out = []
    for x in text.split(","):
        x = x.strip()
        if not x:
            continue
        out.append(float("inf") if x.lower() in ("inf", "infinity") else int(x))
    return tuple(out)


def cmd_calibrate(args) -> int:
    params = _load(args)
    config = params.system
    curve = game.detection_curve(config)
    qos = game.qos_from_config(config)
    gtilde = game.gamma_tilde(curve)
    gdot = game.gamma_dot(curve)
    gstar = game.gamma_star(curve, qos.gamma_req)
    kmax = game.max_contenders(config.V, gstar)
    lines = [
        f"lambda            = {config.lam:.6f}",
        f"pfa_target        = {config.pfa_target:g}",
        f"gamma_req         = {qos.gamma_req:.6f} ({10 * math.log10(qos.gamma_req):+.4f} dB)",
        f"gamma_dot         = {gdot:.6f} ({10 * math.log10(gdot):+.4f} dB)",
        f"gamma_tilde       = {gtilde:.6f} ({10 * math.log10(gtilde):+.4f} dB)",
        f"gamma_star        = {gstar:.6f} ({10 * math.log10(gstar):+.4f} dB)",
        f"K_max             = {kmax}",
        f"grid              = [{params.grid.p_min_db:g}, {params.grid.p_max_db:g}] dB, "
        f"step {params.grid.delta_db:g} dB, Q = {params.grid.Q}",
        f"feedback          = B {params.quantizer.B}, step {resolution(params.quantizer):.6f} dB",
        f"Pd(gamma_star)    = {game.detection_probability(gstar, curve):.6f}",
    ]
    print("\n".join(lines))
    return 0


def cmd_validate(args) -> int:
    params = _load(args)
    config = params.system
    failures = []

    def check(name: str, fn) -> None:
        try:
            fn()
            print(f"ok    {name}")
        except Exception as exc:  # report and continue
            failures.append(name)
            print(f"FAIL  {name}: {exc}")

    def grid_check():
        grid = params.grid
        back = np.diff(10.0 * np.log10(grid.levels))
        if not np.allclose(back, grid.delta_db, atol=1e-9):
            raise ValueError("grid spacing drifts from delta_db")

    def quantizer_check():
        from .feedback import decode, encode
        spec = params.quantizer
        step = resolution(spec)
        for b in range(spec.n_levels):
            gamma = spec.gamma_min + 10.0 ** (step * b / 10.0)
            if encode(min(gamma, spec.gamma_max), spec) > spec.n_levels - 1:
                raise ValueError("encode escaped the index range")
        decode(spec.n_levels - 1, spec)

    def beta_check():
        a, b = config.M * (config.V - 1), config.M
        x = 0.5
        n = a + b - 1
        exact = sum(math.comb(n, j) * x ** j * (1 - x) ** (n - j)
                    for j in range(a, n + 1))
        got = game.incomplete_beta(x, a, b)
        if exact == 0.0 or abs(got - exact) > 1e-10 * max(exact, 1e-300):
            raise ValueError(f"incomplete beta mismatch: {got} vs {exact}")

    def qos_check():
        qos = game.qos_from_config(config)
        direct = 3.0 * config.N ** 2 / (
            2.0 * config.M * math.pi ** 2 * (config.V ** 2 - 1) * config.rho)
        if abs(qos.gamma_req - direct) > 1e-12 * direct:
            raise ValueError("SINR floor arithmetic mismatch")

    check("power grid spacing", grid_check)
    check("quantizer round trip", quantizer_check)
    check("incomplete beta backend", beta_check)
    check("required-SINR arithmetic", qos_check)
    if failures:
        print(f"{len(failures)} check(s) failed", file=sys.stderr)
        return 1
    print("all checks passed")
    return 0


def cmd_gne(args) -> int:
    params = _load(args)
    config = params.system
    seed = _resolve_seed(args)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    delta = args.delta_db if args.delta_db is not None else params.grid.delta_db
    from .netmodel import build_power_grid
    grid = build_power_grid(params.grid.p_min_db, params.grid.p_max_db, delta)
    need = grid.Q ** args.K
    budget = args.budget if args.budget is not None else max(1e7, min(
        float(need), experiments.MAX_ENUM_PROFILES))

    trials_out = []
    counts, nmses, welfare_ratios = [], [], []
    for t in range(args.trials):
        rng = experiments.trial_rng(seed, 0, 0, 0, t)
        deployment = sample_deployment(config, args.K, rng)
        channels = sample_instance_channels(config, deployment, rng)
        alphas = np.array([ch.alpha for ch in channels])
        instance = game.instance_from_config(config, grid, alphas)
        profiles = game.enumerate_gne(instance, budget=budget)
        entry = {
            "trial": t,
            "count": len(profiles),
            "profiles_db": [[float(10 * np.log10(p)) for p in prof]
                            for prof in profiles],
        }
        counts.append(len(profiles))
        if profiles:
            least = game.smallest_gne(profiles)
            p_c = game.continuous_gne(instance)
            entry["least_db"] = [float(10 * np.log10(p)) for p in least]
            entry["welfare_least"] = game.social_welfare(least, instance)
            entry["welfare_continuous"] = game.social_welfare(p_c, instance)
            entry["nmse"] = game.nmse(p_c, least)
            nmses.append(entry["nmse"])
            welfare_ratios.append(entry["welfare_least"]
                                  / entry["welfare_continuous"])
        trials_out.append(entry)

    summary = {
        "K": args.K,
        "delta_db": delta,
        "Q": grid.Q,
        "seed": seed,
        "trials": args.trials,
        "count_mean": float(np.mean(counts)) if counts else None,
        "nmse_mean": float(np.mean(nmses)) if nmses else None,
        "welfare_ratio_mean": float(np.mean(welfare_ratios))
        if welfare_ratios else None,
        "instances": trials_out,
    }
    out_path = outdir / f"gne_K{args.K}.json"
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(f"K = {args.K}, Q = {grid.Q}, trials = {args.trials}: "
          f"mean |E| = {summary['count_mean']:.4g}, "
          f"mean NMSE = {summary['nmse_mean']:.4g}, "
          f"mean welfare ratio = {summary['welfare_ratio_mean']:.4g}")
    print(f"wrote {out_path}")
    return 0


def cmd_run(args) -> int:
    params = _load(args)
    config = params.system
    seed = _resolve_seed(args)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    b_bits = None
    if args.b_bits is not None:
        b_bits = float("inf") if args.b_bits.lower() in ("inf", "infinity") \
            else int(args.b_bits)
    kind = sync.AlgorithmKind(args.algorithm, b_bits=b_bits,
                              beb_cmax=params.beb_cmax)
    rng = experiments.trial_rng(seed, 0, 0, 0, 0)
    deployment = sample_deployment(config, args.K, rng)
    channels = sample_instance_channels(config, deployment, rng)
    trace = sync.run_session(params, deployment, channels, kind, rng)
    records = experiments.trace_to_records(trace)
    out_path = outdir / f"trace_{args.algorithm}.jsonl"
    with open(out_path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    metrics = sync.session_metrics(trace)
    for rec in records:
        n_exit = rec["n_exit"]
        status = f"exit at frame {n_exit}" if n_exit is not None else "censored"
        print(f"st {rec['k']}: {status}, theta {rec['theta_true']} -> "
              f"{rec['theta_hat']}, p_avg "
              + (f"{rec['p_avg_db']:.2f} dB" if rec['p_avg_db'] is not None
                 else "n/a"))
    print(f"session: frames = {trace.frames_elapsed}, "
          f"used = {metrics['used']}, censored = {metrics['censored']}, "
          f"bits/frame = {trace.bits_per_frame}")
    print(f"wrote {out_path}")
    return 0


def cmd_sweep(args) -> int:
    params = _load(args)
    seed = _resolve_seed(args)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    spec = experiments.SweepSpec(
        figure_id=args.figure,
        params=params,
        seed=seed,
        trials=args.trials,
        K_list=_int_list(args.K_list) if args.K_list else None,
        delta_list=_float_list(args.delta_list) if args.delta_list else None,
        b_list=_b_list(args.b_list) if args.b_list else None,
        algorithms=tuple(args.algorithms.split(",")) if args.algorithms else None,
        d1_list=_float_list(args.d1_list) if args.d1_list else None,
        jobs=max(1, args.jobs),
        budget=args.budget,
        max_frames=args.max_frames,
    )
    result = experiments.run_figure(spec)
    csv_path = outdir / f"{args.figure}.csv"
    experiments.emit_csv(result, csv_path)
    experiments.write_sidecar(result, csv_path, params,
                              extra={"jobs": spec.jobs})
    print(f"wrote {csv_path} ({len(result.rows)} rows) and "
          f"{csv_path}.meta.json")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ranging-sim",
        description="Contention-based ranging and synchronization simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="print thresholds and SINR targets")
    _add_common(p)
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("validate", help="run configuration self-checks")
    _add_common(p)
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("gne", help="enumerate equilibria on random instances")
    _add_common(p)
    p.add_argument("--K", type=int, required=True, help="number of stations")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--delta-db", type=float, default=None,
                   help="grid step override (dB)")
    p.add_argument("--budget", type=float, default=None,
                   help="enumeration budget (profiles)")
    p.set_defaults(fn=cmd_gne)

    p = sub.add_parser("run", help="run one session and write its trace")
    _add_common(p)
    p.add_argument("--algorithm", choices=sync.ALGORITHMS, required=True)
    p.add_argument("--K", type=int, default=5)
    p.add_argument("--b-bits", default=None,
                   help="feedback bits for dlf_brsa (int or 'inf')")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("sweep", help="reproduce a figure as CSV + sidecar")
    _add_common(p)
    p.add_argument("--figure", choices=experiments.FIGURE_IDS, required=True)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--K-list", default=None, help="comma-separated K values")
    p.add_argument("--delta-list", default=None,
                   help="comma-separated grid steps (dB)")
    p.add_argument("--b-list", default=None,
                   help="comma-separated feedback bit widths (int or 'inf')")
    p.add_argument("--algorithms", default=None,
                   help="comma-separated algorithm names")
    p.add_argument("--d1-list", default=None,
                   help="comma-separated d1/R fractions")
    p.add_argument("--budget", type=float, default=None,
                   help="enumeration budget (profiles)")
    p.add_argument("--max-frames", type=int, default=None)
    p.set_defaults(fn=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, game.GameError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
