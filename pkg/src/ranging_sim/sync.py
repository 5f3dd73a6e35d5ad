"""Contention-based synchronization sessions.

K stations repeat ranging frames until the base station detects them with
adequate SINR (exit) or the frame budget runs out (censoring). Four power
updates are supported: the limited-feedback best-response algorithm
(dlf_brsa), its unquantized best-response benchmark (brsa), deterministic
power stepping (dsa), and stepping with binary exponential backoff
(beb_dsa). The base station scans every code each frame; detections of
codes without an active owner are counted as false alarms.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import feedback as fb
from . import game, phy
from .netmodel import ChannelRealization, Deployment, PowerGrid

ALGORITHMS = ("dlf_brsa", "brsa", "dsa", "beb_dsa")


@dataclass(frozen=True)
class AlgorithmKind:
    """Algorithm selector with its variant parameters.

    b_bits applies only to dlf_brsa: a positive int selects a B-bit
    quantizer, float('inf') the unquantized benchmark, None the configured
    default. beb_cmax caps the backoff exponent of beb_dsa.
    """

    name: str
    b_bits: float | None = None
    beb_cmax: int = 6

    def __post_init__(self):
        if self.name not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.name!r}; expected one of "
                             f"{ALGORITHMS}")
        if self.b_bits is not None:
            if self.name != "dlf_brsa":
                raise ValueError("b_bits is only meaningful for dlf_brsa")
            if not (self.b_bits == float("inf")
                    or (float(self.b_bits).is_integer() and self.b_bits >= 1)):
                raise ValueError("b_bits must be a positive integer or inf")
        if self.beb_cmax < 0:
            raise ValueError("beb_cmax must be nonnegative")


@dataclass
class STRuntime:
    """Mutable per-station state while a session runs."""

    power: float
    power_idx: int | None
    theta: int
    code_id: int
    exited: bool = False
    n_exit: int | None = None  # frames used to exit (1-based count)
    theta_hat: float | None = None
    sq_err: float | None = None
    backoff_remaining: int = 0
    beb_rounds: int = 0
    power_history: list = field(default_factory=list)
    mu_history: list = field(default_factory=list)


@dataclass
class SessionTrace:
    """Complete record of one synchronization session."""

    algorithm: str
    K: int
    tf: float
    frames_elapsed: int
    bits_per_frame: int | None
    feedback_bits: int
    false_alarms: int
    fa_opportunities: int
    theta_true: list
    n_exit: list
    theta_hat: list
    sq_err: list
    power_history: list
    mu_history: list


def _exit_now(detected: bool, mu: float, gamma_req_val: float) -> bool:
    return bool(detected) and mu > gamma_req_val


def dlf_brsa_update(st: STRuntime, msg: fb.FeedbackMessage, qspec: fb.QuantizerSpec,
                    grid: PowerGrid, curve: game.DetectionCurve, qos: game.QoS,
                    add_floor_offset: bool = False):
    """Decode the message and apply the limited-feedback best response."""
    mu = fb.decode(msg.index, qspec, add_floor_offset)
    return dlf_step(st, msg.detected, mu, grid, curve, qos)


def dlf_step(st: STRuntime, detected: bool, mu: float, grid: PowerGrid,
             curve: game.DetectionCurve, qos: game.QoS):
    """Best response against the SINR value mu attributed to the last frame.

    Exits when detected with mu above the QoS floor. Otherwise the station
    models its SINR slope as mu / p and plays the grid best response to it;
    a nonpositive mu carries no slope information and holds the power.
    Returns the new power, or None on exit.
    """
    st.mu_history.append(mu)
    if _exit_now(detected, mu, qos.gamma_req):
        st.exited = True
        return None
    if mu <= 0.0:
        return st.power
    t = mu * grid.p_min / st.power
    idx = int(game._br_indices(np.array([t]), grid, curve, qos.gamma_req)[0])
    st.power_idx = idx
    st.power = float(grid.levels[idx])
    return st.power


def brsa_update(st: STRuntime, detected: bool, gamma_hat: float,
                gamma_star_val: float, grid: PowerGrid, qos: game.QoS):
    """Unquantized benchmark: rescale power toward the SINR target.

    p <- clamp(gamma_star * p / gamma_hat) on the continuous span of the
    grid; a nonpositive estimate holds the power. Exit rule as in
    dlf_step but on the exact estimate.
    """
    st.mu_history.append(gamma_hat)
    if _exit_now(detected, gamma_hat, qos.gamma_req):
        st.exited = True
        return None
    if gamma_hat <= 0.0:
        return st.power
    st.power = float(min(max(gamma_star_val * st.power / gamma_hat,
                             grid.p_min), grid.p_max))
    st.power_idx = None
    return st.power


def dsa_update(st: STRuntime, msg: fb.FeedbackMessage, qspec: fb.QuantizerSpec,
               grid: PowerGrid, qos: game.QoS):
    """Deterministic stepping: one grid step up per frame until exit."""
    mu = fb.decode(msg.index, qspec)
    st.mu_history.append(mu)
    if _exit_now(msg.detected, mu, qos.gamma_req):
        st.exited = True
        return None
    st.power_idx = min(st.power_idx + 1, grid.Q - 1)
    st.power = float(grid.levels[st.power_idx])
    return st.power


def beb_dsa_update(st: STRuntime, msg: fb.FeedbackMessage, qspec: fb.QuantizerSpec,
                   grid: PowerGrid, qos: game.QoS, rng: np.random.Generator,
                   cmax: int = 6):
    """Stepping with binary exponential backoff on the power increases.

    The station transmits every frame; backoff only delays power steps.
    After the c-th step a geometric number of frames with mean
    2^min(c, cmax) must elapse before the next step (the first step is
    immediate).
    """
    mu = fb.decode(msg.index, qspec)
    st.mu_history.append(mu)
    if _exit_now(msg.detected, mu, qos.gamma_req):
        st.exited = True
        return None
    if st.backoff_remaining > 0:
        st.backoff_remaining -= 1
        return st.power
    st.power_idx = min(st.power_idx + 1, grid.Q - 1)
    st.power = float(grid.levels[st.power_idx])
    c = st.beb_rounds
    n_e = 1 if c == 0 else int(rng.geometric(1.0 / 2 ** min(c, cmax)))
    st.beb_rounds += 1
    st.backoff_remaining = n_e - 1
    return st.power


def run_session(params, deployment: Deployment,
                channels: list[ChannelRealization], algorithm: AlgorithmKind,
                rng: np.random.Generator,
                max_frames: int | None = None) -> SessionTrace:
    """Simulate one synchronization session.

    Draw order is fixed (codebook, then delays, then per-frame noise and
    backoff draws in ascending station order), so a given rng state fully
    determines the trace.
    """
    config = params.system
    grid = params.grid
    K = deployment.K
    if max_frames is None:
        max_frames = params.max_frames
    csize = params.codebook_size if params.codebook_size > 0 else K
    if csize < K:
        raise ValueError("codebook must hold at least one code per station")
    curve = game.detection_curve(config)
    qos = game.qos_from_config(config)
    gstar = game.gamma_star(curve, qos.gamma_req)

    codebook = phy.sample_codebook(csize, config.M * config.V, rng)
    thetas = rng.integers(0, config.theta_max, size=K, endpoint=True)

    if algorithm.name == "dlf_brsa" and algorithm.b_bits is not None \
            and np.isfinite(algorithm.b_bits):
        qspec = fb.QuantizerSpec(int(algorithm.b_bits),
                                 params.quantizer.gamma_min,
                                 params.quantizer.gamma_max)
    else:
        qspec = params.quantizer
    unquantized = (algorithm.name == "brsa"
                   or (algorithm.name == "dlf_brsa"
                       and algorithm.b_bits == float("inf")))
    bits_per_frame = None if unquantized else fb.message_bits(qspec) * csize

    stations = [
        STRuntime(power=grid.p_min, power_idx=0, theta=int(thetas[k]), code_id=k)
        for k in range(K)
    ]

    frames = 0
    false_alarms = 0
    fa_opportunities = 0
    for n in range(max_frames):
        active = [k for k in range(K) if not stations[k].exited]
        if not active:
            break
        frames = n + 1
        powers = np.array([stations[k].power for k in active])
        for k in active:
            stations[k].power_history.append(stations[k].power)
        obs = phy.synthesize_tiles(
            config, codebook.codes[active], powers,
            [channels[k] for k in active],
            np.array([stations[k].theta for k in active]), rng)
        energy = phy.total_energy(obs)
        stats, th_hats = phy.scan_codebook(obs, codebook.codes,
                                           config.theta_max, config.N)
        detected = stats / energy >= config.lam
        active_codes = {stations[k].code_id for k in active}
        for c in range(csize):
            if c not in active_codes:
                fa_opportunities += 1
                if detected[c]:
                    false_alarms += 1
        for k in active:
            st = stations[k]
            c = st.code_id
            det = bool(detected[c])
            denom = energy - stats[c]
            gamma_hat = float("inf") if denom <= 0.0 \
                else float((config.V * stats[c] - energy) / denom)
            if algorithm.name == "dlf_brsa":
                if unquantized:
                    dlf_step(st, det, gamma_hat, grid, curve, qos)
                else:
                    msg = fb.FeedbackMessage(det, fb.encode(gamma_hat, qspec))
                    dlf_brsa_update(st, msg, qspec, grid, curve, qos,
                                    params.add_floor_offset)
            elif algorithm.name == "brsa":
                brsa_update(st, det, gamma_hat, gstar, grid, qos)
            elif algorithm.name == "dsa":
                msg = fb.FeedbackMessage(det, fb.encode(gamma_hat, qspec))
                dsa_update(st, msg, qspec, grid, qos)
            else:
                msg = fb.FeedbackMessage(det, fb.encode(gamma_hat, qspec))
                beb_dsa_update(st, msg, qspec, grid, qos, rng,
                               cmax=algorithm.beb_cmax)
            if st.exited and st.n_exit is None:
                st.n_exit = n + 1
                st.theta_hat = float(th_hats[c])
                st.sq_err = (float(th_hats[c]) - st.theta) ** 2

    return SessionTrace(
        algorithm=algorithm.name,
        K=K,
        tf=config.Tf,
        frames_elapsed=frames,
        bits_per_frame=bits_per_frame,
        feedback_bits=0 if bits_per_frame is None else bits_per_frame * frames,
        false_alarms=false_alarms,
        fa_opportunities=fa_opportunities,
        theta_true=[st.theta for st in stations],
        n_exit=[st.n_exit for st in stations],
        theta_hat=[st.theta_hat for st in stations],
        sq_err=[st.sq_err for st in stations],
        power_history=[st.power_history for st in stations],
        mu_history=[st.mu_history for st in stations],
    )


def session_metrics(trace: SessionTrace, st_indices=None) -> dict:
    """Aggregate a trace: average transmit power (dB over the linear mean of
    per-station averages), total transmitted energy (sum of per-frame powers,
    frame time normalized out), frames to exit, wall time to exit, timing MSE.

    Censored stations are excluded from the averages and counted; with no
    exits the averages are None.
    """
    sel = list(range(trace.K)) if st_indices is None else list(st_indices)
    exited = [k for k in sel if trace.n_exit[k] is not None]
    censored = len(sel) - len(exited)
    out = {
        "used": len(exited),
        "censored": censored,
        "p_avg_db": None,
        "p_avg_lin": None,
        "energy_lin": None,
        "energy_db": None,
        "n_exit_mean": None,
        "time_mean_s": None,
        "mse_theta": None,
    }
    if not exited:
        return out
    p_lin = np.array([np.mean(trace.power_history[k]) for k in exited])
    e_lin = np.array([np.sum(trace.power_history[k]) for k in exited])
    n_exit = np.array([trace.n_exit[k] for k in exited], dtype=float)
    sq = np.array([trace.sq_err[k] for k in exited], dtype=float)
    out["p_avg_lin"] = float(p_lin.mean())
    out["p_avg_db"] = float(10.0 * np.log10(p_lin.mean()))
    out["energy_lin"] = float(e_lin.mean())
    out["energy_db"] = float(10.0 * np.log10(e_lin.mean()))
    out["n_exit_mean"] = float(n_exit.mean())
    out["time_mean_s"] = float(n_exit.mean() * trace.tf)
    out["mse_theta"] = float(sq.mean())
    return out
