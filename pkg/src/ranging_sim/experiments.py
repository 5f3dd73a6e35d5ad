"""Monte Carlo harness: figure sweeps, aggregation, and file emission.

Every sweep is driven by per-trial random streams derived from
(master seed, figure code, sweep point, variant, trial), so results are
byte-identical regardless of worker count. Instances are shared where it
sharpens comparisons: GNE figures reuse one deployment per trial across
all (K, grid) points (stations nested by prefix), and session figures
reuse one deployment per (point, trial) across algorithm variants.
"""
from __future__ import annotations

import csv
import json
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__, game, netmodel, sync
from .configfile import SimParams, params_to_dict
from .netmodel import build_power_grid, sample_deployment, sample_instance_channels

FIGURE_IDS = (
    "nmse_vs_K", "welfare_vs_K", "power_vs_K", "iters_vs_K",
    "power_vs_d", "time_vs_d", "mse_vs_d", "gne_counts",
)

# Stable stream codes; the three distance figures share one code (and the
# two vs-K session figures share another) so they are views of identical
# simulated sessions.
_FIG_CODE = {
    "nmse_vs_K": 1,
    "welfare_vs_K": 2,
    "power_vs_K": 3,
    "iters_vs_K": 3,
    "power_vs_d": 5,
    "time_vs_d": 5,
    "mse_vs_d": 5,
    "gne_counts": 8,
}

_DEFAULT_TRIALS = {
    "nmse_vs_K": 500, "welfare_vs_K": 500, "gne_counts": 500,
    "power_vs_K": 1000, "iters_vs_K": 1000,
    "power_vs_d": 1000, "time_vs_d": 1000, "mse_vs_d": 1000,
}

# Hard ceiling on exhaustive enumeration work per instance.
MAX_ENUM_PROFILES = 5e7


@dataclass(frozen=True)
class SweepSpec:
    """What to sweep; None fields fall back to per-figure defaults."""

    figure_id: str
    params: SimParams
    seed: int = 0
    trials: int | None = None
    K_list: tuple | None = None
    delta_list: tuple | None = None
    b_list: tuple | None = None
    algorithms: tuple | None = None
    d1_list: tuple | None = None
    jobs: int = 1
    budget: float | None = None
    max_frames: int | None = None

    def __post_init__(self):
        if self.figure_id not in FIGURE_IDS:
            raise ValueError(f"unknown figure {self.figure_id!r}; expected one "
                             f"of {FIGURE_IDS}")


@dataclass
class SweepResult:
    figure_id: str
    columns: list
    rows: list
    meta: dict = field(default_factory=dict)


def trial_rng(seed: int, fig_code: int, point: int, variant: int,
              trial: int) -> np.random.Generator:
    """Independent, reproducible stream for one unit of Monte Carlo work."""
    ss = np.random.SeedSequence([seed, fig_code, point, variant, trial])
    return np.random.Generator(np.random.PCG64(ss))


def _map_trials(fn, trials: int, jobs: int) -> list:
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, range(trials)))
    return [fn(t) for t in range(trials)]


def _mean_std(values: list) -> tuple:
    if not values:
        return None, None
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std(ddof=1)) if len(arr) > 1 else 0.0


# ---------------------------------------------------------------- GNE sweeps


def _gne_grid_plan(params, K_list, delta_list, budget):
    """Per (K, delta): the grid to enumerate on and the selection method.

    Enumeration is used whenever Q^K fits the budget (defaulting to the
    larger of 1e7 and the point's own need, capped by MAX_ENUM_PROFILES);
    otherwise the least equilibrium is reached by the monotone best-response
    iteration from the all-minimum profile, which converges to the same
    profile whenever enumeration is feasible.
    """
    plan = {}
    for delta in delta_list:
        grid = build_power_grid(params.grid.p_min_db, params.grid.p_max_db, delta)
        for K in K_list:
            need = grid.Q ** K
            cap = budget if budget is not None else max(1e7, min(
                float(need), MAX_ENUM_PROFILES))
            selector = "enumeration" if need <= cap else "br_dynamic"
            plan[(K, delta)] = (grid, selector, cap)
    return plan


def _least_equilibrium(instance, selector, cap):
    """(profile or None, flags) least GNE by the planned selection method."""
    flags = {"dropped": 0, "no_least": 0, "nonconverged": 0}
    if selector == "enumeration":
        profiles = game.enumerate_gne(instance, budget=cap)
        if not profiles:
            flags["dropped"] = 1
            return None, flags
        try:
            return game.smallest_gne(profiles), flags
        except game.GameError:
            flags["no_least"] = 1
            best = max(profiles,
                       key=lambda p: game.social_welfare(p, instance))
            return best, flags
    profile, _, converged = game.best_response_dynamic(instance, max_steps=500)
    if not converged:
        flags["nonconverged"] = 1
        return None, flags
    return profile, flags


def _run_gne_value_figure(spec: SweepSpec, metric: str) -> SweepResult:
    params = spec.params
    config = params.system
    K_list = tuple(spec.K_list or (2, 3, 4, 5))
    delta_list = tuple(spec.delta_list or (0.5, 1.0, 2.0))
    trials = spec.trials or _DEFAULT_TRIALS[spec.figure_id]
    fig = _FIG_CODE[spec.figure_id]
    curve = game.detection_curve(config)
    qos = game.qos_from_config(config)
    gstar = game.gamma_star(curve, qos.gamma_req)
    for K in K_list:
        if not game.existence_condition(K, config.V, gstar):
            raise ValueError(f"K = {K} violates the existence condition "
                             f"gamma_star (K-1) < V")
    plan = _gne_grid_plan(params, K_list, delta_list, spec.budget)
    K_max = max(K_list)

    def one_trial(t: int) -> dict:
        rng = trial_rng(spec.seed, fig, 0, 0, t)
        deployment = sample_deployment(config, K_max, rng)
        channels = sample_instance_channels(config, deployment, rng)
        alphas = np.array([ch.alpha for ch in channels])
        out = {}
        for (K, delta), (grid, selector, cap) in plan.items():
            instance = game.instance_from_config(config, grid, alphas[:K])
            clamped = 0
            with warnings.catch_warnings():
                warnings.simplefilter("error", RuntimeWarning)
                try:
                    p_c = game.continuous_gne(instance)
                except RuntimeWarning:
                    clamped = 1
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore", RuntimeWarning)
                        p_c = game.continuous_gne(instance)
            p_d, flags = _least_equilibrium(instance, selector, cap)
            if p_d is None:
                out[(K, delta)] = (None, clamped, flags)
                continue
            if metric == "nmse":
                value = game.nmse(p_c, p_d)
            else:
                value = (game.social_welfare(p_d, instance)
                         / game.social_welfare(p_c, instance))
            out[(K, delta)] = (value, clamped, flags)
        return out

    per_trial = _map_trials(one_trial, trials, spec.jobs)

    name = "nmse" if metric == "nmse" else "welfare_ratio"
    columns = ["K", "delta_db", "selector", "trials", "used", "dropped",
               "clamped", f"{name}_mean", f"{name}_std"]
    rows = []
    for delta in delta_list:
        for K in K_list:
            grid, selector, cap = plan[(K, delta)]
            vals, clamped, dropped = [], 0, 0
            for res in per_trial:
                value, cl, flags = res[(K, delta)]
                clamped += cl
                if value is None:
                    dropped += 1
                else:
                    vals.append(value)
            mean, std = _mean_std(vals)
            rows.append((K, float(delta), selector, trials, len(vals),
                         dropped, clamped, mean, std))
    meta = {"plan": {f"K={K},delta={d}": sel
                     for (K, d), (_, sel, _) in plan.items()}}
    return SweepResult(spec.figure_id, columns, rows, meta)


def run_fig_nmse(spec: SweepSpec) -> SweepResult:
    """Distance between the discrete least GNE and the continuous GNE."""
    return _run_gne_value_figure(spec, "nmse")


def run_fig_welfare(spec: SweepSpec) -> SweepResult:
    """Welfare of the discrete least GNE relative to the continuous GNE."""
    return _run_gne_value_figure(spec, "welfare")


def run_fig_gne_counts(spec: SweepSpec) -> SweepResult:
    """Mean number of equilibria per instance.

    Counting requires exhaustive enumeration, so points whose profile space
    exceeds the enumeration ceiling are re-run on the coarsest standard grid
    that fits (flagged in the delta_db/substituted columns) and points that
    still do not fit produce gap rows.
    """
    params = spec.params
    config = params.system
    K_list = tuple(spec.K_list or (2, 3, 4, 5))
    base_delta = float(spec.delta_list[0]) if spec.delta_list else 1.0
    trials = spec.trials or _DEFAULT_TRIALS[spec.figure_id]
    fig = _FIG_CODE[spec.figure_id]
    K_max = max(K_list)

    plan = {}
    for K in K_list:
        chosen = None
        for delta in (base_delta, 2.0, 2.5, 5.0):
            try:
                grid = build_power_grid(params.grid.p_min_db,
                                        params.grid.p_max_db, delta)
            except ValueError:
                continue
            if grid.Q ** K <= MAX_ENUM_PROFILES:
                chosen = (grid, delta, delta != base_delta)
                break
        plan[K] = chosen  # None: no feasible grid, gap row

    def one_trial(t: int) -> dict:
        rng = trial_rng(spec.seed, fig, 0, 0, t)
        deployment = sample_deployment(config, K_max, rng)
        channels = sample_instance_channels(config, deployment, rng)
        alphas = np.array([ch.alpha for ch in channels])
        out = {}
        for K, entry in plan.items():
            if entry is None:
                continue
            grid, _, _ = entry
            instance = game.instance_from_config(config, grid, alphas[:K])
            profiles = game.enumerate_gne(instance, budget=MAX_ENUM_PROFILES)
            no_least = 0
            if profiles:
                try:
                    game.smallest_gne(profiles)
                except game.GameError:
                    no_least = 1
            out[K] = (len(profiles), no_least)
        return out

    per_trial = _map_trials(one_trial, trials, spec.jobs)

    columns = ["K", "delta_db", "Q", "substituted", "trials", "count_mean",
               "count_std", "count_min", "count_max", "no_least_element"]
    rows = []
    for K in K_list:
        entry = plan[K]
        if entry is None:
            rows.append((K, None, None, 1, trials, None, None, None, None,
                         None))
            continue
        grid, delta, substituted = entry
        counts = [res[K][0] for res in per_trial]
        no_least = sum(res[K][1] for res in per_trial)
        mean, std = _mean_std(counts)
        rows.append((K, float(delta), grid.Q, int(substituted), trials, mean,
                     std, int(min(counts)), int(max(counts)), no_least))
    return SweepResult(spec.figure_id, columns, rows,
                       {"base_delta_db": base_delta})


# ------------------------------------------------------------ session sweeps


def _variant_list(spec: SweepSpec) -> list:
    """(label, AlgorithmKind) pairs for the vs-K session figures."""
    b_list = spec.b_list if spec.b_list is not None else (1, 2, 3, 8,
                                                          float("inf"))
    variants = []
    for b in b_list:
        label = "dlf_binf" if b == float("inf") else f"dlf_b{int(b)}"
        variants.append((label, sync.AlgorithmKind("dlf_brsa", b_bits=b)))
    for name in (spec.algorithms if spec.algorithms is not None else ("brsa",)):
        variants.append((name, sync.AlgorithmKind(
            name, beb_cmax=spec.params.beb_cmax)))
    return variants


def _aggregate_sessions(metrics_by_trial: list) -> dict:
    """Combine per-trial session metrics into point-level aggregates."""
    used = sum(m["used"] for m in metrics_by_trial)
    censored = sum(m["censored"] for m in metrics_by_trial)
    p_lin = [m["p_avg_lin"] for m in metrics_by_trial
             if m["p_avg_lin"] is not None]
    e_lin = [m["energy_lin"] for m in metrics_by_trial
             if m["energy_lin"] is not None]
    n_exit = [m["n_exit_mean"] for m in metrics_by_trial
              if m["n_exit_mean"] is not None]
    times = [m["time_mean_s"] for m in metrics_by_trial
             if m["time_mean_s"] is not None]
    mses = [m["mse_theta"] for m in metrics_by_trial
            if m["mse_theta"] is not None]
    p_lin_mean, p_lin_std = _mean_std(p_lin)
    e_lin_mean, _ = _mean_std(e_lin)
    n_mean, n_std = _mean_std(n_exit)
    t_mean, t_std = _mean_std(times)
    mse_mean, _ = _mean_std(mses)
    return {
        "used": used, "censored": censored,
        "p_avg_lin_mean": p_lin_mean, "p_avg_lin_std": p_lin_std,
        "p_avg_db": None if p_lin_mean is None
        else float(10.0 * np.log10(p_lin_mean)),
        "energy_db": None if e_lin_mean is None
        else float(10.0 * np.log10(e_lin_mean)),
        "n_exit_mean": n_mean, "n_exit_std": n_std,
        "time_mean_s": t_mean, "time_std_s": t_std,
        "mse_theta": mse_mean,
        "rmse_theta": None if mse_mean is None else float(np.sqrt(mse_mean)),
    }


def _run_session_sweep(spec: SweepSpec, points: list, point_kind: str,
                       variants: list) -> dict:
    """Sessions for every (point, variant); returns point -> label -> agg.

    point_kind 'K' sweeps the station count; 'd1' pins station 0 at the
    given fraction of the cell radius with spec.K_list[0] stations total
    and aggregates over station 0 only.
    """
    params = spec.params
    config = params.system
    fig = _FIG_CODE[spec.figure_id]
    trials = spec.trials or _DEFAULT_TRIALS[spec.figure_id]
    out: dict = {}
    for p_idx, point in enumerate(points):
        if point_kind == "K":
            K = int(point)
            d_fixed = None
            st_sel = None
        else:
            K = int(spec.K_list[0]) if spec.K_list else 5
            d_fixed = {0: float(point) * config.R}
            st_sel = [0]

        def one_trial(t: int, p_idx=p_idx, K=K, d_fixed=d_fixed,
                      st_sel=st_sel) -> list:
            inst_rng = trial_rng(spec.seed, fig, p_idx + 1, 0, t)
            deployment = sample_deployment(config, K, inst_rng,
                                           d_fixed=d_fixed)
            channels = sample_instance_channels(config, deployment, inst_rng)
            results = []
            for v_idx, (label, kind) in enumerate(variants):
                rng = trial_rng(spec.seed, fig, p_idx + 1, v_idx + 1, t)
                trace = sync.run_session(params, deployment, channels, kind,
                                         rng, max_frames=spec.max_frames)
                results.append(sync.session_metrics(trace, st_indices=st_sel))
            return results

        per_trial = _map_trials(one_trial, trials, spec.jobs)
        out[point] = {
            label: _aggregate_sessions([res[v_idx] for res in per_trial])
            for v_idx, (label, _) in enumerate(variants)
        }
    return out


def run_fig_power_vs_k(spec: SweepSpec) -> SweepResult:
    """Average transmit power until exit vs station count, per variant."""
    K_list = list(spec.K_list or (2, 3, 4, 5, 6, 7, 8))
    variants = _variant_list(spec)
    data = _run_session_sweep(spec, K_list, "K", variants)
    trials = spec.trials or _DEFAULT_TRIALS[spec.figure_id]
    columns = ["K", "variant", "trials", "used", "censored", "p_avg_db",
               "p_avg_lin_mean", "p_avg_lin_std", "energy_db"]
    rows = [
        (K, label, trials, agg["used"], agg["censored"], agg["p_avg_db"],
         agg["p_avg_lin_mean"], agg["p_avg_lin_std"], agg["energy_db"])
        for K in K_list for label, agg in data[K].items()
    ]
    return SweepResult(spec.figure_id, columns, rows)


def run_fig_iters_vs_k(spec: SweepSpec) -> SweepResult:
    """Frames needed to exit vs station count, per variant."""
    K_list = list(spec.K_list or (2, 3, 4, 5, 6, 7, 8))
    variants = _variant_list(spec)
    data = _run_session_sweep(spec, K_list, "K", variants)
    trials = spec.trials or _DEFAULT_TRIALS[spec.figure_id]
    columns = ["K", "variant", "trials", "used", "censored", "n_exit_mean",
               "n_exit_std", "time_mean_s"]
    rows = [
        (K, label, trials, agg["used"], agg["censored"], agg["n_exit_mean"],
         agg["n_exit_std"], agg["time_mean_s"])
        for K in K_list for label, agg in data[K].items()
    ]
    return SweepResult(spec.figure_id, columns, rows)


def _distance_variants(spec: SweepSpec) -> list:
    names = spec.algorithms if spec.algorithms is not None \
        else ("dlf_brsa", "dsa", "beb_dsa")
    out = []
    for name in names:
        kind = sync.AlgorithmKind(name, beb_cmax=spec.params.beb_cmax)
        out.append((name, kind))
    return out


def _run_distance_figure(spec: SweepSpec):
    d1_list = list(spec.d1_list or tuple(np.round(np.arange(1, 11) * 0.1, 1)))
    variants = _distance_variants(spec)
    data = _run_session_sweep(spec, d1_list, "d1", variants)
    return d1_list, variants, data


def run_fig_power_vs_d(spec: SweepSpec) -> SweepResult:
    """Average transmit power of the pinned station vs its distance."""
    d1_list, variants, data = _run_distance_figure(spec)
    trials = spec.trials or _DEFAULT_TRIALS[spec.figure_id]
    columns = ["d1_over_R", "algorithm", "trials", "used", "censored",
               "p_avg_db", "p_avg_lin_mean", "p_avg_lin_std", "energy_db"]
    rows = [
        (float(d), label, trials, agg["used"], agg["censored"],
         agg["p_avg_db"], agg["p_avg_lin_mean"], agg["p_avg_lin_std"],
         agg["energy_db"])
        for d in d1_list for label, agg in data[d].items()
    ]
    return SweepResult(spec.figure_id, columns, rows)


def run_fig_time_vs_d(spec: SweepSpec) -> SweepResult:
    """Time to synchronize the pinned station vs its distance."""
    d1_list, variants, data = _run_distance_figure(spec)
    trials = spec.trials or _DEFAULT_TRIALS[spec.figure_id]
    columns = ["d1_over_R", "algorithm", "trials", "used", "censored",
               "n_exit_mean", "time_mean_s", "time_std_s"]
    rows = [
        (float(d), label, trials, agg["used"], agg["censored"],
         agg["n_exit_mean"], agg["time_mean_s"], agg["time_std_s"])
        for d in d1_list for label, agg in data[d].items()
    ]
    return SweepResult(spec.figure_id, columns, rows)


def run_fig_mse_vs_d(spec: SweepSpec) -> SweepResult:
    """Timing MSE of the pinned station at exit vs its distance."""
    d1_list, variants, data = _run_distance_figure(spec)
    trials = spec.trials or _DEFAULT_TRIALS[spec.figure_id]
    columns = ["d1_over_R", "algorithm", "trials", "used", "censored",
               "mse_theta", "rmse_theta"]
    rows = [
        (float(d), label, trials, agg["used"], agg["censored"],
         agg["mse_theta"], agg["rmse_theta"])
        for d in d1_list for label, agg in data[d].items()
    ]
    return SweepResult(spec.figure_id, columns, rows)


_RUNNERS = {
    "nmse_vs_K": run_fig_nmse,
    "welfare_vs_K": run_fig_welfare,
    "gne_counts": run_fig_gne_counts,
    "power_vs_K": run_fig_power_vs_k,
    "iters_vs_K": run_fig_iters_vs_k,
    "power_vs_d": run_fig_power_vs_d,
    "time_vs_d": run_fig_time_vs_d,
    "mse_vs_d": run_fig_mse_vs_d,
}


def run_figure(spec: SweepSpec) -> SweepResult:
    """Dispatch a sweep to its figure runner."""
    started = time.monotonic()
    result = _RUNNERS[spec.figure_id](spec)
    result.meta.setdefault("wall_time_s", time.monotonic() - started)
    result.meta["seed"] = spec.seed
    result.meta["trials"] = spec.trials or _DEFAULT_TRIALS[spec.figure_id]
    return result


# ------------------------------------------------------------------ emission


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def emit_csv(result: SweepResult, path) -> None:
    """Write the sweep rows as UTF-8, LF-terminated CSV.

    Floats are rendered with repr (shortest round-trip form), so a fixed
    seed yields a byte-identical file; an empty result still gets its
    header line.
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(result.columns)
        for row in result.rows:
            writer.writerow([_format_cell(v) for v in row])


def read_csv(path) -> tuple:
    """Round-trip reader for emitted CSVs: (columns, rows of strings)."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        columns = next(reader)
        return columns, [tuple(row) for row in reader]


def write_sidecar(result: SweepResult, csv_path, params: SimParams,
                  extra: dict | None = None) -> None:
    """JSON metadata sidecar next to the CSV (not itself byte-deterministic:
    it records wall time and library versions)."""
    meta = {
        "figure_id": result.figure_id,
        "columns": result.columns,
        "config": params_to_dict(params),
        "package_version": __version__,
        "numpy_version": np.__version__,
        **result.meta,
    }
    if extra:
        meta.update(extra)
    with open(str(csv_path) + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def trace_to_records(trace: sync.SessionTrace, trial: int = 0) -> list:
    """Flatten a session trace into one JSON-ready record per station."""
    records = []
    for k in range(trace.K):
        history = trace.power_history[k]
        p_avg_db = None
        if history:
            p_avg_db = float(10.0 * np.log10(np.mean(history)))
        records.append({
            "trial": trial,
            "k": k,
            "algorithm": trace.algorithm,
            "n_exit": trace.n_exit[k],
            "p_avg_db": p_avg_db,
            "theta_true": trace.theta_true[k],
            "theta_hat": trace.theta_hat[k],
            "sq_err": trace.sq_err[k],
            "powers": [float(10.0 * np.log10(p)) for p in history],
        })
    return records
