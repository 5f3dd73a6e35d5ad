"""Tile-domain signal synthesis and the code-domain GLRT receiver.

The base station observes M tiles of V subcarriers on which every active
station superimposes its spreading code, delayed by its round-trip time.
Detection, timing estimation (round-trip delay in samples), and SINR
estimation all derive from the same per-code GLRT statistic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .netmodel import ChannelRealization, SystemConfig


@dataclass(frozen=True, eq=False)
class CodeBook:
    """Unit-modulus spreading codes, one row of length M*V per code."""

    codes: np.ndarray  # complex, shape (size, M*V)

    @property
    def size(self) -> int:
        return self.codes.shape[0]


def sample_codebook(size: int, length: int, rng: np.random.Generator) -> CodeBook:
    """Draw pairwise-distinct random QPSK codes."""
    if size <= 0 or length <= 0:
        raise ValueError("size and length must be positive")
    symbols = rng.integers(0, 4, size=(size, length))
    codes = np.exp(0.5j * np.pi * symbols)
    if len({row.tobytes() for row in symbols}) != size:
        raise ValueError("codebook draw produced duplicate codes")
    return CodeBook(codes=codes)


def steering_vector(theta: float, V: int, N: int) -> np.ndarray:
    """Within-tile phase ramp of a round-trip delay of theta samples."""
    v = np.arange(V)
    return np.exp(-2j * np.pi * v * theta / N)


def synthesize_tiles(config: SystemConfig, codes: np.ndarray,
                     powers: np.ndarray, channels: list[ChannelRealization],
                     thetas: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One frame of the M x V tile observation.

    Superimposes every listed station (code row, transmit power, channel,
    round-trip delay) and adds complex white noise of per-entry power
    sigma2. The delay acts as a phase ramp across each tile; constant
    per-tile phase offsets are absorbed in the channel gains.
    """
    M, V = config.M, config.V
    K = len(powers)
    X = np.zeros((M, V), dtype=complex)
    if K:
        code3 = np.asarray(codes).reshape(K, M, V)
        ramps = np.exp(
            -2j * np.pi * np.outer(np.asarray(thetas, float), np.arange(V)) / config.N
        )
        gains = np.stack([ch.tile_gains for ch in channels])
        X = np.einsum("k,kmv,kv,km->mv", np.sqrt(np.asarray(powers, float)),
                      code3, ramps, gains)
    noise = rng.standard_normal((M, V)) + 1j * rng.standard_normal((M, V))
    return X + np.sqrt(config.sigma2 / 2.0) * noise


def total_energy(obs: np.ndarray) -> float:
    """Energy of the tile observation, summed over all M*V entries."""
    return float(np.sum(np.abs(obs) ** 2))


def glrt_statistic(obs: np.ndarray, code: np.ndarray, theta: float, N: int) -> float:
    """GLRT statistic of one code at a hypothesized delay.

    (1/V) sum_m |a(theta)^H diag(code_m)^H X(m)|^2; the per-tile inner
    product despreads the code and coherently combines the tile with the
    delay's phase ramp.
    """
    M, V = obs.shape
    y = np.conj(code).reshape(M, V) * obs
    a = steering_vector(theta, V, N)
    z = y @ np.conj(a)
    return float(np.sum(np.abs(z) ** 2) / V)


def scan_codebook(obs: np.ndarray, codes: np.ndarray, theta_max: int,
                  N: int) -> tuple[np.ndarray, np.ndarray]:
    """GLRT statistic maximized over the delay grid, for every code at once.

    Returns (stat, theta_hat), each of length len(codes); ties on the delay
    grid resolve to the smallest delay.
    """
    M, V = obs.shape
    C = codes.shape[0]
    thetas = np.arange(theta_max + 1)
    A = np.exp(2j * np.pi * np.outer(thetas, np.arange(V)) / N)  # conj ramps
    Y = np.conj(codes).reshape(C, M, V) * obs[None, :, :]
    Z = np.einsum("tv,cmv->cmt", A, Y)
    lam_all = np.sum(np.abs(Z) ** 2, axis=1) / V  # (C, theta)
    pos = lam_all.argmax(axis=1)
    return lam_all[np.arange(C), pos], thetas[pos].astype(float)


def estimate_timing(obs: np.ndarray, code: np.ndarray, theta_max: int,
                    N: int) -> tuple[int, float]:
    """Exhaustive delay search for one code: (theta_hat, statistic)."""
    stat, th = scan_codebook(obs, np.asarray(code)[None, :], theta_max, N)
    return int(th[0]), float(stat[0])


def glrt_detect(obs: np.ndarray, code: np.ndarray, theta_hat: float,
                lam: float, N: int) -> bool:
    """Threshold test on the energy-normalized GLRT statistic.

    The ratio statistic / total energy lies in [0, 1]; a zero-energy
    observation never detects.
    """
    energy = total_energy(obs)
    if energy <= 0.0:
        return False
    return glrt_statistic(obs, code, theta_hat, N) / energy >= lam


def estimate_sinr(obs: np.ndarray, code: np.ndarray, theta_hat: float,
                  N: int) -> float:
    """Post-despreading SINR estimate from the GLRT statistic.

    gamma_hat = (V stat - energy) / (energy - stat); a nonpositive
    denominator (all energy captured by the code subspace) returns +inf.
    """
    M, V = obs.shape
    stat = glrt_statistic(obs, code, theta_hat, N)
    energy = total_energy(obs)
    denom = energy - stat
    if denom <= 0.0:
        return float("inf")
    return (V * stat - energy) / denom
