"""System configuration, QAM constellations and the real-valued linear model.

Conventions used everywhere downstream:

* DD grids are ``L x K`` (delay rows, Doppler columns) and are vectorized
  column-wise, so grid entry ``(l, k)`` sits at index ``l + L*k``.
* A complex vector ``x`` of length ``N`` embeds as ``[Re(x); Im(x)]`` of
  length ``2N`` and a complex matrix as ``[[Re, -Im], [Im, Re]]``.
* ``sigma2`` is always the noise variance per *complex* dimension. Each real
  dimension of the embedded model carries ``sigma2 / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigError, InputError

SUPPORTED_ORDERS = (4, 16, 64)


@dataclass(frozen=True)
class SystemConfig:
    """OTFS grid, waveform and detector-depth parameters.

    Defaults follow the evaluation setup: 7 subframes, 12 subcarriers,
    15 kHz spacing, 10 GHz carrier, 4-QAM and a 10-layer detector.
    """

    K: int = 7
    L: int = 12
    delta_f: float = 15e3
    f_c: float = 10e9
    k_max: int = 3
    l_max: int = 11
    mod_order: int = 4
    T: int = 10

    def __post_init__(self):
        if self.K < 1 or self.L < 1:
            raise ConfigError(f"K and L must be >= 1, got K={self.K}, L={self.L}")
        if not 0 <= self.l_max <= self.L - 1:
            raise ConfigError(f"l_max must lie in [0, L-1={self.L - 1}], got {self.l_max}")
        if not 0 <= self.k_max <= self.K // 2:
            raise ConfigError(f"k_max must lie in [0, floor(K/2)={self.K // 2}], got {self.k_max}")
        root = int(round(np.sqrt(self.mod_order)))
        if self.mod_order < 4 or root * root != self.mod_order:
            raise ConfigError(f"mod_order must be a square >= 4, got {self.mod_order}")
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        if self.delta_f <= 0:
            raise ConfigError("delta_f must be positive")

    @property
    def T_s(self) -> float:
        return 1.0 / self.delta_f

    @property
    def N_cp(self) -> int:
        return self.l_max

    @property
    def KL(self) -> int:
        return self.K * self.L

    @property
    def max_paths(self) -> int:
        return (2 * self.k_max + 1) * self.l_max

    @property
    def frame_duration(self) -> float:
        """Frame length in seconds including the single frame-level CP."""
        return self.K * self.T_s + self.N_cp * self.T_s / self.L

    def with_(self, **changes) -> "SystemConfig":
        fields = {**self.__dict__, **changes}
        return SystemConfig(**fields)


def snr_db_to_sigma2(snr_db):
    """Noise variance for unit symbol energy and unit total channel power."""
    return 10.0 ** (-np.asarray(snr_db, dtype=float) / 10.0)


# ---------------------------------------------------------------------------
# Constellations
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Constellation:
    """Gray-mapped square QAM with unit average energy.

    ``points[i]`` is the symbol carrying bit label ``i``; label bits are read
    MSB first, the first half selecting the in-phase level and the second
    half the quadrature level.
    """

    points: np.ndarray
    real_alphabet: np.ndarray
    bits_per_symbol: int

    @property
    def order(self) -> int:
        return len(self.points)


def _gray(n: int) -> np.ndarray:
    i = np.arange(n)
    return i ^ (i >> 1)


@lru_cache(maxsize=None)
def make_constellation(mod_order: int) -> Constellation:
    if mod_order not in SUPPORTED_ORDERS:
        raise ConfigError(f"unsupported modulation order {mod_order}; use one of {SUPPORTED_ORDERS}")
    bps = int(np.log2(mod_order))
    half = bps // 2
    m = 1 << half
    # level_of[g] = PAM amplitude whose Gray code is g
    level_of = np.empty(m)
    level_of[_gray(m)] = 2.0 * np.arange(m) - (m - 1)
    labels = np.arange(mod_order)
    i_bits, q_bits = labels >> half, labels & (m - 1)
    scale = np.sqrt(2.0 * (mod_order - 1) / 3.0)
    levels = level_of / scale
    points = levels[i_bits] + 1j * levels[q_bits]
    points.setflags(write=False)
    alphabet = np.sort(levels)
    alphabet.setflags(write=False)
    return Constellation(points=points, real_alphabet=alphabet, bits_per_symbol=bps)


def map_bits(bits, c: Constellation) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int64).ravel()
    if bits.size % c.bits_per_symbol:
        raise InputError(
            f"bit count {bits.size} is not a multiple of bits_per_symbol={c.bits_per_symbol}"
        )
    if bits.size == 0:
        return np.zeros(0, dtype=complex)
    weights = 1 << np.arange(c.bits_per_symbol - 1, -1, -1)
    labels = bits.reshape(-1, c.bits_per_symbol) @ weights
    return c.points[labels]


def nearest_labels(symbols, c: Constellation) -> np.ndarray:
    """Label of the nearest constellation point; ties go to the lower label."""
    symbols = np.asarray(symbols, dtype=complex)
    d = np.abs(symbols[..., None] - c.points) ** 2
    return np.argmin(d, axis=-1)


def demap_bits(symbols, c: Constellation) -> np.ndarray:
    labels = nearest_labels(np.asarray(symbols).ravel(), c)
    shifts = np.arange(c.bits_per_symbol - 1, -1, -1)
    return ((labels[:, None] >> shifts) & 1).ravel()


def random_symbols(rng: np.random.Generator, shape, c: Constellation) -> np.ndarray:
    return c.points[rng.integers(0, c.order, size=shape)]


# ---------------------------------------------------------------------------
# Vectorization
# ---------------------------------------------------------------------------


def vec(X) -> np.ndarray:
    X = np.asarray(X)
    if X.ndim != 2:
        raise InputError(f"vec expects a 2-D matrix, got shape {X.shape}")
    return X.reshape(-1, order="F")


def unvec(x, L: int, K: int) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 1 or x.size != L * K:
        raise InputError(f"cannot reshape vector of shape {x.shape} into {L}x{K}")
    return x.reshape(L, K, order="F")


# ---------------------------------------------------------------------------
# Real-valued model
# ---------------------------------------------------------------------------


def complex_to_real(x) -> np.ndarray:
    x = np.asarray(x)
    return np.concatenate([x.real, x.imag], axis=-1)


def real_to_complex(x) -> np.ndarray:
    x = np.asarray(x)
    n = x.shape[-1] // 2
    return x[..., :n] + 1j * x[..., n:]


def complex_matrix_to_real(Hc) -> np.ndarray:
    Hc = np.asarray(Hc)
    top = np.concatenate([Hc.real, -Hc.imag], axis=-1)
    bottom = np.concatenate([Hc.imag, Hc.real], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


@dataclass(frozen=True, eq=False)
class RealModel:
    """Real-valued detection problem ``y = H x + w``.

    Arrays may carry leading batch axes (``H`` of shape ``(..., n, n)``,
    ``y`` of shape ``(..., n)``), in which case every frame in the stack is
    detected independently.
    """

    H: np.ndarray
    y: np.ndarray
    sigma2: float | np.ndarray
    x_true: np.ndarray | None = field(default=None)

    @property
    def n(self) -> int:
        return self.H.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return self.H.shape[:-2]

    @property
    def noise_var(self):
        """Noise variance per real dimension."""
        return np.asarray(self.sigma2, dtype=float) / 2.0

    def __len__(self):
        return self.H.shape[0] if self.H.ndim > 2 else 1

    def __getitem__(self, idx):
        if self.H.ndim == 2:
            raise TypeError("unbatched RealModel is not indexable")
        s2 = np.asarray(self.sigma2)
        return RealModel(
            H=self.H[idx],
            y=self.y[idx],
            sigma2=s2[idx] if s2.ndim else s2,
            x_true=None if self.x_true is None else self.x_true[idx],
        )


def to_real_model(Hc, yc, sigma2, x_true=None) -> RealModel:
    Hc = np.asarray(Hc, dtype=complex)
    yc = np.asarray(yc, dtype=complex)
    if Hc.ndim < 2 or Hc.shape[-1] != Hc.shape[-2]:
        raise InputError(f"channel matrix must be square, got shape {Hc.shape}")
    if yc.shape != Hc.shape[:-1]:
        raise InputError(f"received vector shape {yc.shape} does not match channel {Hc.shape}")
    xr = None
    if x_true is not None:
        x_true = np.asarray(x_true)
        xr = complex_to_real(x_true) if np.iscomplexobj(x_true) else x_true.astype(float)
        if xr.shape != yc.shape[:-1] + (2 * yc.shape[-1],):
            raise InputError(f"x_true shape {x_true.shape} does not match {yc.shape}")
    return RealModel(
        H=complex_matrix_to_real(Hc),
        y=complex_to_real(yc),
        sigma2=sigma2,
        x_true=xr,
    )
