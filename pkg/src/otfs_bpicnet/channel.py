"""Delay-Doppler multipath channels and the effective DD-domain model.

The time-domain channel after CP removal is

    H = sum_i h_i * Pi^{l_i} * Delta(k_i)

with ``Pi`` the identity with columns circularly shifted left by one (a
one-sample cyclic delay) and ``Delta(k) = diag(exp(j 2 pi k n / (KL)))``.
The receiver sees ``H_eff = (F_K kron I_L) H (F_K^H kron I_L)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import (
    Constellation,
    SystemConfig,
    RealModel,
    make_constellation,
    random_symbols,
    snr_db_to_sigma2,
    to_real_model,
    unvec,
    vec,
)
from .errors import ConfigError, InputError


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    gains: np.ndarray  # complex, (P,)
    delays: np.ndarray  # int, (P,)
    dopplers: np.ndarray  # int, (P,)

    @property
    def P(self) -> int:
        return len(self.gains)

    def tau(self, cfg: SystemConfig) -> np.ndarray:
        return self.delays * cfg.T_s / cfg.L

    def nu(self, cfg: SystemConfig) -> np.ndarray:
        return self.dopplers * cfg.delta_f / cfg.K

    @classmethod
    def single_path(cls, h=1.0 + 0j, l=0, k=0) -> "ChannelRealization":
        return cls(np.array([h], dtype=complex), np.array([l]), np.array([k]))


@dataclass(frozen=True, eq=False)
class EffectiveChannel:
    H_time: np.ndarray
    H_eff: np.ndarray


def sample_channel(cfg: SystemConfig, P: int, rng: np.random.Generator) -> ChannelRealization:
    """Draw ``P`` paths on distinct (delay, Doppler) bins, first path at zero delay.

    Gains are circularly-symmetric complex Gaussian with variance ``1/P`` so the
    expected total channel power is one.
    """
    if not 1 <= P <= cfg.max_paths:
        raise ConfigError(
            f"P={P} outside [1, (2*k_max+1)*l_max={cfg.max_paths}] for this grid"
        )
    n_dopp = 2 * cfg.k_max + 1
    # bins are indexed l * n_dopp + (k + k_max); bins [0, n_dopp) have l = 0
    first = rng.integers(0, n_dopp)
    rest = np.delete(np.arange((cfg.l_max + 1) * n_dopp), first)
    bins = np.concatenate([[first], rng.choice(rest, size=P - 1, replace=False)])
    delays = bins // n_dopp
    dopplers = bins % n_dopp - cfg.k_max
    gains = (rng.standard_normal(P) + 1j * rng.standard_normal(P)) * np.sqrt(0.5 / P)
    return ChannelRealization(gains, delays.astype(int), dopplers.astype(int))


def build_time_channel(r: ChannelRealization, cfg: SystemConfig) -> np.ndarray:
    N = cfg.KL
    n = np.arange(N)
    H = np.zeros((N, N), dtype=complex)
    for h, l, k in zip(r.gains, r.delays, r.dopplers):
        np.add.at(H, ((n + l) % N, n), h * np.exp(2j * np.pi * k * n / N))
    return H


@lru_cache(maxsize=32)
def dft_matrix(N: int) -> np.ndarray:
    """Unitary DFT, entry (p, q) = exp(-j 2 pi p q / N) / sqrt(N)."""
    p = np.arange(N)
    F = np.exp(-2j * np.pi * np.outer(p, p) / N) / np.sqrt(N)
    F.setflags(write=False)
    return F


@lru_cache(maxsize=32)
def _dd_transform(K: int, L: int) -> np.ndarray:
    A = np.kron(dft_matrix(K), np.eye(L))
    A.setflags(write=False)
    return A


def build_effective_channel(H_time, cfg: SystemConfig) -> EffectiveChannel:
    H_time = np.asarray(H_time, dtype=complex)
    N = cfg.KL
    if H_time.shape[-2:] != (N, N):
        raise InputError(f"time channel must be {N}x{N}, got {H_time.shape}")
    A = _dd_transform(cfg.K, cfg.L)
    return EffectiveChannel(H_time=H_time, H_eff=A @ H_time @ A.conj().T)


def transmit(x, ec: EffectiveChannel, sigma2: float, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x, dtype=complex)
    if sigma2 < 0:
        raise InputError("sigma2 must be non-negative")
    y = ec.H_eff @ x
    if sigma2 > 0:
        w = rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)
        y = y + np.sqrt(sigma2 / 2.0) * w
    return y


# ---------------------------------------------------------------------------
# Explicit transmitter / receiver chains (rectangular pulses)
# ---------------------------------------------------------------------------


def otfs_modulate(X) -> np.ndarray:
    """DD grid (L x K) -> time-domain frame via ISFFT and Heisenberg transform."""
    X = np.asarray(X, dtype=complex)
    L, K = X.shape
    F_L, F_K = dft_matrix(L), dft_matrix(K)
    tf = F_L @ X @ F_K.conj().T
    return vec(F_L.conj().T @ tf)


def otfs_demodulate(r, L: int, K: int) -> np.ndarray:
    """Time-domain frame -> DD-domain vector via Wigner transform and SFFT."""
    R = unvec(np.asarray(r, dtype=complex), L, K)
    F_L, F_K = dft_matrix(L), dft_matrix(K)
    tf = F_L @ R
    return vec(F_L.conj().T @ tf @ F_K)


# ---------------------------------------------------------------------------
# Frame generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Frame:
    realization: ChannelRealization
    channel: EffectiveChannel
    x: np.ndarray
    y: np.ndarray
    sigma2: float
    snr_db: float


def simulate_frame(
    cfg: SystemConfig,
    P: int,
    snr_db: float,
    rng: np.random.Generator,
    constellation: Constellation | None = None,
    realization: ChannelRealization | None = None,
) -> Frame:
    """One DD frame: channel, random symbols and noisy observation.

    Draw order from ``rng`` is fixed (channel, symbols, noise) so a frame is
    reproducible from its generator state.
    """
    c = constellation or make_constellation(cfg.mod_order)
    r = realization if realization is not None else sample_channel(cfg, P, rng)
    ec = build_effective_channel(build_time_channel(r, cfg), cfg)
    x = random_symbols(rng, cfg.KL, c)
    sigma2 = float(snr_db_to_sigma2(snr_db))
    y = transmit(x, ec, sigma2, rng)
    return Frame(r, ec, x, y, sigma2, float(snr_db))


def stack_frames(frames) -> RealModel:
    """Stack frames into one batched real-valued model."""
    Hc = np.stack([f.channel.H_eff for f in frames])
    yc = np.stack([f.y for f in frames])
    xc = np.stack([f.x for f in frames])
    s2 = np.array([f.sigma2 for f in frames])
    return to_real_model(Hc, yc, s2, x_true=xc)


def frame_rng(seed: int, *indices: int) -> np.random.Generator:
    """Independent generator for the frame addressed by ``(seed, *indices)``."""
    return np.random.default_rng([seed, *indices])


# ---------------------------------------------------------------------------
# Channel dump
# ---------------------------------------------------------------------------

DUMP_FIELDS = ("seed", "P", "re_h", "im_h", "l", "k")


def write_channel_dump(path, records) -> None:
    """``records`` is an iterable of ``(seed, ChannelRealization)``; one row per path."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DUMP_FIELDS)
        for seed, r in records:
            for h, l, k in zip(r.gains, r.delays, r.dopplers):
                w.writerow([seed, r.P, repr(float(h.real)), repr(float(h.imag)), int(l), int(k)])


def read_channel_dump(path) -> list:
    out = []
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    i = 0
    while i < len(rows):
        P = int(rows[i]["P"])
        chunk = rows[i : i + P]
        gains = np.array([float(r["re_h"]) + 1j * float(r["im_h"]) for r in chunk])
        r = ChannelRealization(
            gains,
            np.array([int(r["l"]) for r in chunk]),
            np.array([int(r["k"]) for r in chunk]),
        )
        out.append((int(chunk[0]["seed"]), r))
        i += P
    return out
