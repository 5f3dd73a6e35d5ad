"""Noncooperative power-control game on the shared ranging channel.

Detection-probability curve of the code-domain GLRT, the SINR thresholds
that shape best responses (required, inflection, tangent), utilities of the
energy-efficiency game, discrete best responses, exhaustive generalized
Nash equilibrium enumeration, and the continuous-relaxation equilibrium.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import optimize, special

from .netmodel import PowerGrid, SystemConfig


class GameError(RuntimeError):
    pass


class BudgetExceeded(GameError):
    """Profile space too large for exhaustive enumeration."""

    def __init__(self, Q: int, K: int, budget: float):
        super().__init__(
            f"enumeration over Q^K = {Q}^{K} = {Q ** K:.3g} profiles exceeds "
            f"the budget {budget:.3g}; reduce the grid, reduce K, or raise "
            f"the budget"
        )
        self.Q = Q
        self.K = K
        self.budget = budget


def incomplete_beta(x, a: int, b: int):
    """Regularized incomplete beta function I_x(a, b) for integer a, b >= 1."""
    if a < 1 or b < 1:
        raise ValueError("a and b must be positive integers")
    xa = np.asarray(x, dtype=float)
    if np.any((xa < 0.0) | (xa > 1.0)):
        raise ValueError("x must lie in [0, 1]")
    out = special.betainc(a, b, xa)
    return float(out) if np.isscalar(x) else out


@dataclass(frozen=True)
class DetectionCurve:
    """Detection probability of the GLRT as a function of post-despreading SINR.

    M tiles, V subcarriers per tile, threshold lam on the normalized
    statistic. The curve is I_x(a, b) with a = M(V-1), b = M and
    x(gamma) = (1+gamma)(1-lam) / (1+(1-lam)gamma).
    """

    M: int
    V: int
    lam: float

    def __post_init__(self):
        if self.M < 1 or self.V < 2:
            raise ValueError("need M >= 1 and V >= 2")
        if not 0.0 < self.lam < 1.0:
            raise ValueError("lam must lie in (0, 1)")

    @property
    def a(self) -> int:
        return self.M * (self.V - 1)

    @property
    def b(self) -> int:
        return self.M


def detection_curve(config: SystemConfig) -> DetectionCurve:
    return DetectionCurve(M=config.M, V=config.V, lam=config.lam)


def _beta_arg(gamma, s: float):
    """x(gamma) and 1 - x(gamma) in cancellation-free form, s = 1 - lam."""
    g = np.asarray(gamma, dtype=float)
    denom = 1.0 + s * g
    with np.errstate(invalid="ignore"):
        x = s * (1.0 + g) / denom
        one_minus_x = (1.0 - s) / denom
    x = np.where(np.isinf(g), 1.0, x)
    one_minus_x = np.where(np.isinf(g), 0.0, one_minus_x)
    return x, one_minus_x


def detection_probability(gamma, curve: DetectionCurve):
    """Probability of detecting an active code at SINR gamma (vectorized)."""
    g = np.asarray(gamma, dtype=float)
    if np.any(g < 0.0):
        raise ValueError("gamma must be nonnegative")
    x, _ = _beta_arg(g, 1.0 - curve.lam)
    out = special.betainc(curve.a, curve.b, np.clip(x, 0.0, 1.0))
    return float(out) if np.isscalar(gamma) else out


def _log_beta_pdf(gamma, curve: DetectionCurve):
    """log of the Beta(a, b) density evaluated at x(gamma); -inf at gamma=inf."""
    s = 1.0 - curve.lam
    g = np.asarray(gamma, dtype=float)
    finite = np.isfinite(g)
    g = np.where(finite, g, 1.0)
    denom = 1.0 + s * g
    a, b = curve.a, curve.b
    ln_b = special.gammaln(a) + special.gammaln(b) - special.gammaln(a + b)
    ln_x = math.log(s) + np.log1p(g) - np.log(denom)
    ln_1mx = math.log(1.0 - s) - np.log(denom)
    return np.where(finite, (a - 1) * ln_x + (b - 1) * ln_1mx - ln_b, -np.inf)


def detection_probability_deriv(gamma, curve: DetectionCurve):
    """d/dgamma of the detection probability, in closed form (vectorized)."""
    g = np.asarray(gamma, dtype=float)
    if np.any(g < 0.0):
        raise ValueError("gamma must be nonnegative")
    s = 1.0 - curve.lam
    denom = 1.0 + s * g
    x_prime = s * (1.0 - s) / denom ** 2
    out = np.exp(_log_beta_pdf(g, curve)) * x_prime
    out = np.where(np.isinf(g), 0.0, out)
    return float(out) if np.isscalar(gamma) else out


def detection_probability_second_deriv(gamma, curve: DetectionCurve):
    """d^2/dgamma^2 of the detection probability, in closed form."""
    g = np.asarray(gamma, dtype=float)
    if np.any(g < 0.0):
        raise ValueError("gamma must be nonnegative")
    s = 1.0 - curve.lam
    a, b = curve.a, curve.b
    denom = 1.0 + s * g
    x, one_minus_x = _beta_arg(g, s)
    x_prime = s * (1.0 - s) / denom ** 2
    pdf = np.exp(_log_beta_pdf(g, curve))
    # d/dgamma [pdf(x(g)) * x'(g)] with pdf'(x) = pdf * ((a-1)/x - (b-1)/(1-x))
    with np.errstate(divide="ignore", invalid="ignore"):
        shape = (a - 1) / x - (b - 1) / one_minus_x
        x_second = -2.0 * s * x_prime / denom
        out = pdf * (shape * x_prime ** 2 + x_second)
    out = np.where(np.isinf(g), 0.0, out)
    return float(out) if np.isscalar(gamma) else out


def calibrate_threshold(pfa_target: float, M: int, V: int) -> float:
    """Threshold lam such that the noise-only acceptance rate equals pfa_target.

    Under noise only the normalized statistic follows a Beta(M(V-1), M) law
    in 1 - ratio, so the false-alarm rate at threshold lam is
    I_{1-lam}(M(V-1), M); this inverts that relation.
    """
    if not 0.0 < pfa_target < 1.0:
        raise ValueError("pfa_target must lie in (0, 1)")
    a, b = M * (V - 1), M

    def fa_gap(lam: float) -> float:
        return special.betainc(a, b, 1.0 - lam) - pfa_target

    return float(optimize.brentq(fa_gap, 1e-12, 1.0 - 1e-12, xtol=1e-15, rtol=1e-15))


def gamma_req(N: int, M: int, V: int, rho: float) -> float:
    """Smallest post-despreading SINR meeting the timing-variance budget rho.

    3 N^2 / (2 M pi^2 (V^2 - 1) rho). Requires V >= 2 and rho > 0.
    """
    if N <= 0 or M <= 0:
        raise ValueError("N and M must be positive")
    if V < 2:
        raise ValueError("V must be at least 2 (V^2 - 1 must be positive)")
    if rho <= 0.0:
        raise ValueError("rho must be positive")
    return 3.0 * N ** 2 / (2.0 * M * math.pi ** 2 * (V ** 2 - 1) * rho)


@lru_cache(maxsize=None)
def gamma_dot(curve: DetectionCurve) -> float:
    """Inflection point of the detection curve (second derivative zero)."""
    s = 1.0 - curve.lam
    a, b = curve.a, curve.b

    # sign of the second derivative equals the sign of
    # shape(x) * x'(gamma) - 2 s / (1 + s gamma), the pdf factor being positive
    def f(g: float) -> float:
        x, one_minus_x = _beta_arg(g, s)
        denom = 1.0 + s * g
        x_prime = s * (1.0 - s) / denom ** 2
        shape = (a - 1) / float(x) - (b - 1) / float(one_minus_x)
        return shape * x_prime - 2.0 * s / denom

    lo, hi = 1e-9, 10.0
    while f(hi) > 0.0:
        hi *= 10.0
        if hi > 1e12:
            raise GameError("no inflection point found")
    return float(optimize.brentq(f, lo, hi, xtol=1e-14, rtol=1e-14))


@lru_cache(maxsize=None)
def gamma_tilde(curve: DetectionCurve) -> float:
    """Tangency SINR: the root of gamma * Pd'(gamma) = Pd(gamma) beyond the
    inflection point.

    At this SINR the ray from the origin is tangent to the detection curve,
    so it maximizes Pd(gamma) / gamma; it is the interference-independent
    best-response target of the continuous game.
    """

    def h(g: float) -> float:
        return g * detection_probability_deriv(g, curve) - detection_probability(
            g, curve
        )

    lo = gamma_dot(curve)
    if h(lo) <= 0.0:
        raise GameError("detection curve has no tangency beyond the inflection")
    hi = max(10.0, 10.0 * lo)
    while h(hi) >= 0.0:
        hi *= 10.0
        if hi > 1e12:
            raise GameError("no tangency point found")
    return float(optimize.brentq(h, lo, hi, xtol=1e-14, rtol=1e-14))


def gamma_star(curve: DetectionCurve, gamma_req_val: float) -> float:
    """Equilibrium SINR target: max of the QoS floor and the tangency SINR."""
    if gamma_req_val <= 0.0:
        raise ValueError("gamma_req_val must be positive")
    return max(gamma_req_val, gamma_tilde(curve))


def max_contenders(V: int, gamma_star_val: float) -> int:
    """Largest K with gamma_star (K - 1) < V: floor(1 + V / gamma_star)."""
    if gamma_star_val <= 0.0:
        raise ValueError("gamma_star_val must be positive")
    kmax = math.floor(1.0 + V / gamma_star_val)
    if gamma_star_val * (kmax - 1) >= V:  # exact-boundary floor correction
        kmax -= 1
    return kmax


def existence_condition(K: int, V: int, gamma_star_val: float) -> bool:
    """Strict feasibility of a common SINR target gamma_star for K users."""
    return gamma_star_val * (K - 1) < V


@dataclass(frozen=True)
class QoS:
    """Timing-accuracy requirement translated to a SINR floor."""

    mse_max: float
    bias2: float
    rho: float
    gamma_req: float


def qos_from_config(config: SystemConfig) -> QoS:
    rho = config.rho
    return QoS(
        mse_max=config.mse_max,
        bias2=config.bias2,
        rho=rho,
        gamma_req=gamma_req(config.N, config.M, config.V, rho),
    )


@dataclass(frozen=True, eq=False)
class GameInstance:
    """One realization of the power-control game.

    alphas are the mean-square tile gains of the K stations; every station
    shares the grid, the detection curve, and the QoS floor.
    """

    grid: PowerGrid
    alphas: np.ndarray
    sigma2: float
    curve: DetectionCurve
    qos: QoS
    T: float = 1.0

    @property
    def K(self) -> int:
        return len(self.alphas)


def instance_from_config(config: SystemConfig, grid: PowerGrid,
                         alphas: np.ndarray) -> GameInstance:
    return GameInstance(
        grid=grid,
        alphas=np.asarray(alphas, dtype=float),
        sigma2=config.sigma2,
        curve=detection_curve(config),
        qos=qos_from_config(config),
        T=config.T,
    )


def nu_of(k: int, powers: np.ndarray, instance: GameInstance) -> float:
    """Slope of station k's SINR in its own power, given the others' powers."""
    p = np.asarray(powers, dtype=float)
    interference = float(instance.alphas @ p) - instance.alphas[k] * p[k]
    return instance.curve.V * instance.alphas[k] / (instance.sigma2 + interference)


def nu_vector(powers: np.ndarray, instance: GameInstance) -> np.ndarray:
    p = np.asarray(powers, dtype=float)
    total = instance.alphas @ p
    interference = total - instance.alphas * p
    return instance.curve.V * instance.alphas / (instance.sigma2 + interference)


def sinr(k: int, powers: np.ndarray, instance: GameInstance) -> float:
    return nu_of(k, powers, instance) * float(powers[k])


def utility(k: int, powers: np.ndarray, instance: GameInstance) -> float:
    """Detection probability per unit of energy for station k."""
    g = sinr(k, powers, instance)
    return detection_probability(g, instance.curve) / (float(powers[k]) * instance.T)


def _nu_from_others(k: int, others: np.ndarray, instance: GameInstance) -> float:
    others = np.asarray(others, dtype=float)
    if len(others) != instance.K - 1:
        raise ValueError("others must hold the K-1 opponent powers")
    alphas_others = np.delete(instance.alphas, k)
    interference = float(alphas_others @ others)
    return instance.curve.V * instance.alphas[k] / (instance.sigma2 + interference)


def feasible_set(k: int, others: np.ndarray, instance: GameInstance) -> np.ndarray:
    """Grid levels meeting the SINR floor against the given opponent powers."""
    nu = _nu_from_others(k, others, instance)
    levels = instance.grid.levels
    return levels[nu * levels >= instance.qos.gamma_req]


def _br_indices(t_vals: np.ndarray, grid: PowerGrid, curve: DetectionCurve,
                gamma_req_val: float) -> np.ndarray:
    """Best-response grid index for each t = nu * p_min (vectorized).

    The best response depends on the opponents only through t: the SINR at
    level q is t * levels[q] / p_min, so the feasible set is
    {q : t * ratio_q >= gamma_req} and the utility ranking is
    Pd(t * ratio_q) / levels[q]. Infeasible stations fall back to the
    unconstrained utility argmax. Ties resolve to the smallest level.
    """
    t = np.atleast_1d(np.asarray(t_vals, dtype=float))
    ratios = grid.levels / grid.levels[0]
    gam = t[:, None] * ratios[None, :]
    u = detection_probability(gam, curve) / grid.levels[None, :]
    feas = gam >= gamma_req_val
    masked = np.where(feas, u, -np.inf)
    idx = np.where(feas.any(axis=1), masked.argmax(axis=1), u.argmax(axis=1))
    return idx


def best_response_index(k: int, others: np.ndarray, instance: GameInstance) -> int:
    nu = _nu_from_others(k, others, instance)
    t = nu * instance.grid.p_min
    return int(_br_indices(np.array([t]), instance.grid, instance.curve,
                           instance.qos.gamma_req)[0])


def best_response(k: int, others: np.ndarray, instance: GameInstance) -> float:
    """Utility-maximizing grid level for station k against the others."""
    return float(instance.grid.levels[best_response_index(k, others, instance)])


def best_response_dynamic(instance: GameInstance, start: np.ndarray | None = None,
                          max_steps: int = 200):
    """Simultaneous best-response iteration from the given profile.

    Starting from the all-p_min profile the iterates increase monotonically
    and converge to the least equilibrium of the instance. Returns
    (profile, steps, converged).
    """
    levels = instance.grid.levels
    p = np.full(instance.K, instance.grid.p_min) if start is None \
        else np.asarray(start, dtype=float).copy()
    for step in range(1, max_steps + 1):
        nus = nu_vector(p, instance)
        t = nus * instance.grid.p_min
        idx = _br_indices(t, instance.grid, instance.curve, instance.qos.gamma_req)
        new_p = levels[idx]
        if np.array_equal(new_p, p):
            return p, step - 1, True
        p = new_p
    return p, max_steps, False


# Staircase of the best-response index as a function of t = nu * p_min,
# cached per (grid, curve, gamma_req); shared by all stations.
_STAIRCASE_CACHE: dict = {}
_T_LO, _T_HI = 1e-12, 1e9
_DENSE_PER_DECADE = 400


def _staircase(grid: PowerGrid, curve: DetectionCurve, gamma_req_val: float):
    key = (grid.p_min_db, grid.p_max_db, grid.delta_db, grid.Q,
           curve.M, curve.V, curve.lam, gamma_req_val)
    hit = _STAIRCASE_CACHE.get(key)
    if hit is not None:
        return hit

    decades = math.log10(_T_HI / _T_LO)
    n_dense = int(decades * _DENSE_PER_DECADE) + 1
    t_dense = np.logspace(math.log10(_T_LO), math.log10(_T_HI), n_dense)
    idx_dense = _br_indices(t_dense, grid, curve, gamma_req_val)

    def idx_at(t: float) -> int:
        return int(_br_indices(np.array([t]), grid, curve, gamma_req_val)[0])

    edges = []
    seg_idx = [int(idx_dense[0])]
    for i in np.nonzero(np.diff(idx_dense) != 0)[0]:
        lo, hi = float(t_dense[i]), float(t_dense[i + 1])
        lo_idx = int(idx_dense[i])
        while hi / lo > 1.0 + 1e-12:
            mid = math.sqrt(lo * hi)
            if idx_at(mid) == lo_idx:
                lo = mid
            else:
                hi = mid
        edges.append(hi)
        seg_idx.append(idx_at(hi))
    out = (np.asarray(edges), np.asarray(seg_idx, dtype=np.int64))
    _STAIRCASE_CACHE[key] = out
    return out


def _staircase_pieces(grid, curve, gamma_req_val):
    """Per grid index q, the list of (t_lo, t_hi] intervals where q is the
    best response; t_lo = 0 and t_hi = inf mark the open ends."""
    edges, seg_idx = _staircase(grid, curve, gamma_req_val)
    bounds = np.concatenate(([0.0], edges, [np.inf]))
    pieces: list[list[tuple[float, float]]] = [[] for _ in range(grid.Q)]
    for r, q in enumerate(seg_idx):
        pieces[int(q)].append((bounds[r], bounds[r + 1]))
    return pieces


def enumerate_gne(instance: GameInstance, budget: float = 1e7) -> list[np.ndarray]:
    """All pure generalized Nash equilibria of the instance, lexicographically
    ordered by grid index.

    The profile space is screened with interval conditions derived from the
    shared best-response staircase in t = nu * p_min, then every surviving
    candidate is verified against the direct best response of each station,
    so the returned set is exact for the verified candidates.
    """
    K, Q = instance.K, instance.grid.Q
    if Q ** K > budget:
        raise BudgetExceeded(Q, K, budget)
    levels = instance.grid.levels
    alphas = instance.alphas
    sigma2 = instance.sigma2
    V = instance.curve.V
    greq = instance.qos.gamma_req
    pieces = _staircase_pieces(instance.grid, instance.curve, greq)
    p_min = instance.grid.p_min

    # S-interval bounds per station and grid index: t_k = V a_k p_min /
    # (sigma2 + S - a_k levels[q]) in (t_lo, t_hi]  <=>  S in [lo, hi).
    max_pieces = max(len(pl) for pl in pieces)
    los = np.full((K, Q, max_pieces), np.inf)
    his = np.full((K, Q, max_pieces), -np.inf)
    for k in range(K):
        scale = V * alphas[k] * p_min
        for q in range(Q):
            own = alphas[k] * levels[q]
            for j, (t_lo, t_hi) in enumerate(pieces[q]):
                lo = own - sigma2 + (scale / t_hi if np.isfinite(t_hi) else 0.0)
                hi = own - sigma2 + (scale / t_lo if t_lo > 0.0 else np.inf)
                los[k, q, j] = lo
                his[k, q, j] = hi

    if K == 1:
        S_rest = np.zeros(1)
        rest_shape: tuple = ()
    else:
        rest_shape = (Q,) * (K - 1)
        S_rest = np.zeros(rest_shape)
        for k in range(1, K):
            shape = [1] * (K - 1)
            shape[k - 1] = Q
            S_rest = S_rest + (alphas[k] * levels).reshape(shape)

    w0 = alphas[0] * levels
    rest_size = int(np.prod(rest_shape)) if rest_shape else 1
    chunk = max(1, int(2e6 // max(rest_size, 1)))
    candidates = []
    for c0 in range(0, Q, chunk):
        c1 = min(Q, c0 + chunk)
        S = w0[c0:c1].reshape((c1 - c0,) + (1,) * (K - 1)) + S_rest
        ok = np.ones(S.shape, dtype=bool)
        for k in range(K):
            if k == 0:
                qshape = (c1 - c0,) + (1,) * (K - 1) + (max_pieces,)
                lo_k = los[0, c0:c1].reshape(qshape)
                hi_k = his[0, c0:c1].reshape(qshape)
            else:
                qshape = [1] * K + [max_pieces]
                qshape[k] = Q
                lo_k = los[k].reshape(qshape)
                hi_k = his[k].reshape(qshape)
            cond = ((S[..., None] >= lo_k) & (S[..., None] < hi_k)).any(axis=-1)
            ok &= cond
            if not ok.any():
                break
        for pos in np.argwhere(ok):
            qvec = pos.copy()
            qvec[0] += c0
            candidates.append(qvec)

    result = []
    for qvec in candidates:
        p = levels[qvec]
        if all(best_response_index(k, np.delete(p, k), instance) == qvec[k]
               for k in range(K)):
            result.append(p)
    return result


def smallest_gne(profiles: list[np.ndarray]) -> np.ndarray:
    """Least element of an equilibrium set (componentwise minimum).

    Raises GameError if the set is empty or has no least element.
    """
    if not profiles:
        raise GameError("equilibrium set is empty")
    stacked = np.stack(profiles)
    low = stacked.min(axis=0)
    for p in profiles:
        if np.array_equal(p, low):
            return p.copy()
    raise GameError("equilibrium set has no least element")


def continuous_gne(instance: GameInstance) -> np.ndarray:
    """Equilibrium of the continuous-power relaxation.

    Every station hits the common SINR target gamma_star, which yields
    p_k = gamma_star sigma2 / (alpha_k (V - (K-1) gamma_star)). Levels
    landing outside the grid span are clamped with a warning.
    """
    gstar = gamma_star(instance.curve, instance.qos.gamma_req)
    K, V = instance.K, instance.curve.V
    if not existence_condition(K, V, gstar):
        raise GameError(
            f"no continuous equilibrium: gamma_star (K-1) = {gstar * (K - 1):.4g} "
            f">= V = {V}"
        )
    p = gstar * instance.sigma2 / (instance.alphas * (V - (K - 1) * gstar))
    lo, hi = instance.grid.p_min, instance.grid.p_max
    if np.any(p < lo) or np.any(p > hi):
        warnings.warn("continuous equilibrium clamped to the grid span",
                      RuntimeWarning, stacklevel=2)
        p = np.clip(p, lo, hi)
    return p


def social_welfare(powers: np.ndarray, instance: GameInstance) -> float:
    """Sum of station utilities at the profile."""
    return float(sum(utility(k, powers, instance) for k in range(instance.K)))


def nmse(p_ref: np.ndarray, p_hat: np.ndarray) -> float:
    """Normalized squared distance ||p_hat - p_ref||^2 / ||p_ref||^2."""
    ref = np.asarray(p_ref, dtype=float)
    hat = np.asarray(p_hat, dtype=float)
    denom = float(ref @ ref)
    if denom <= 0.0:
        raise ValueError("reference profile must be nonzero")
    diff = hat - ref
    return float(diff @ diff) / denom


def supermodularity_check(instance: GameInstance, powers: np.ndarray,
                          k: int, l: int) -> float:
    """Cross-partial of u_k in (p_k, p_l), in closed form.

    d2 u_k / dp_k dp_l = -gamma^2 Pd''(gamma) alpha_l /
    ((sigma2 + I_k) p_k^2 T); nonnegative wherever the detection curve is
    concave, i.e. for gamma >= gamma_dot.
    """
    if k == l:
        raise ValueError("k and l must differ")
    p = np.asarray(powers, dtype=float)
    g = sinr(k, p, instance)
    interference = float(instance.alphas @ p) - instance.alphas[k] * p[k]
    second = detection_probability_second_deriv(g, instance.curve)
    return float(
        -(g ** 2) * second * instance.alphas[l]
        / ((instance.sigma2 + interference) * p[k] ** 2 * instance.T)
    )
