"""Unfolded Bayesian parallel-interference-cancellation detector.

Every layer runs three stages over the real-valued model:

* symbol observation: a matched-filter PIC step that turns the previous
  estimates into a per-symbol Gaussian (mean ``mu``, variance ``Sigma``),
  scaled by the trainable ``theta1`` / ``theta2``;
* symbol estimation: posterior mean and variance of each real symbol over
  the PAM alphabet given that Gaussian;
* decision-statistic combining: a convex blend of the previous and current
  estimates weighted by matched-filter residual energies, the current one
  scaled by ``theta3``.

With every theta equal to one the layers reduce to classical BPIC.

All routines accept batched models (leading axes on ``H`` and ``y``). Only
the Gram matrix ``H^T H`` and ``H^T y`` are needed after initialization, since
``h_q^T (y - H x) = (H^T y)_q - (H^T H x)_q``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import Constellation, RealModel, complex_to_real, nearest_labels, real_to_complex
from .errors import CapacityError, ConfigError, InputError, NumericalError

VAR_FLOOR = 1e-13
ML_MAX_SYMBOLS = 8
ML_MAX_CANDIDATES = 10**6


@dataclass(frozen=True, eq=False)
class DetectorParams:
    theta1: np.ndarray
    theta2: np.ndarray
    theta3: np.ndarray

    def __post_init__(self):
        for name in ("theta1", "theta2", "theta3"):
            arr = np.array(getattr(self, name), dtype=float).ravel()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not len(self.theta1) == len(self.theta2) == len(self.theta3) >= 1:
            raise ConfigError("theta1, theta2, theta3 must share one length T >= 1")
        if not np.all(np.isfinite(np.concatenate([self.theta1, self.theta2, self.theta3]))):
            raise ConfigError("detector parameters must be finite")
        if np.any(self.theta2 <= 0) or np.any(self.theta3 <= 0):
            raise ConfigError("theta2 and theta3 must be strictly positive")

    @property
    def T(self) -> int:
        return len(self.theta1)

    @classmethod
    def ones(cls, T: int) -> "DetectorParams":
        return cls(np.ones(T), np.ones(T), np.ones(T))

    @classmethod
    def from_vector(cls, theta) -> "DetectorParams":
        theta = np.asarray(theta, dtype=float)
        T = theta.size // 3
        return cls(theta[:T], theta[T : 2 * T], theta[2 * T :])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.theta1, self.theta2, self.theta3])

    def truncated(self, T: int) -> "DetectorParams":
        return DetectorParams(self.theta1[:T], self.theta2[:T], self.theta3[:T])


@dataclass(frozen=True, eq=False)
class LayerState:
    """Quantities carried out of one layer.

    ``x_hat``/``v`` are the combined outputs fed to the next layer and ``e`` the
    weighted residual energies of the estimation-stage output. ``mu``,
    ``Sigma``, ``x_bse``, ``v_bse`` and ``rho`` are diagnostics, None at t=0.
    """

    x_hat: np.ndarray
    v: np.ndarray
    e: np.ndarray
    mu: np.ndarray | None = None
    Sigma: np.ndarray | None = None
    rho: np.ndarray | None = None
    x_bse: np.ndarray | None = None
    v_bse: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class GramStats:
    """Sufficient statistics of a (batched) real model for the layer updates."""

    G: np.ndarray  # H^T H
    z: np.ndarray  # H^T y
    g: np.ndarray  # diag(G) = ||h_q||^2
    G2_off: np.ndarray  # G**2 with zeroed diagonal
    sigma2: np.ndarray  # per complex dimension, shape batch_shape
    noise_var: np.ndarray  # per real dimension, broadcastable against z

    @classmethod
    def from_model(cls, m: RealModel) -> "GramStats":
        H = np.asarray(m.H, dtype=float)
        G = np.swapaxes(H, -1, -2) @ H
        z = np.einsum("...ji,...j->...i", H, np.asarray(m.y, dtype=float))
        g = np.diagonal(G, axis1=-2, axis2=-1).copy()
        if np.any(g <= 0):
            raise NumericalError("channel matrix has an all-zero column")
        G2_off = G**2
        idx = np.arange(G.shape[-1])
        G2_off[..., idx, idx] = 0.0
        sigma2 = np.asarray(m.sigma2, dtype=float)
        return cls(G, z, g, G2_off, sigma2, (sigma2 / 2.0)[..., None])

    def mf_residual(self, x_hat):
        """``h_q^T (y - H x_hat)`` for every q."""
        return self.z - np.einsum("...ij,...j->...i", self.G, x_hat)


def _stats(m) -> GramStats:
    return m if isinstance(m, GramStats) else GramStats.from_model(m)


def mmse_init(m: RealModel) -> np.ndarray:
    """Solve ``(H^T H + sigma2 I) x = H^T y`` by Cholesky for each frame."""
    st = _stats(m)
    n = st.G.shape[-1]
    A = st.G + st.sigma2[..., None, None] * np.eye(n)
    A2 = A.reshape(-1, n, n)
    b2 = st.z.reshape(-1, n)
    out = np.empty_like(b2)
    eps = np.finfo(float).eps
    for i in range(A2.shape[0]):
        try:
            factor = scipy.linalg.cho_factor(A2[i])
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"MMSE system is singular: {exc}") from exc
        d = np.abs(np.diag(factor[0]))
        if d.min() ** 2 < n * eps * d.max() ** 2:
            raise NumericalError("MMSE system is numerically singular")
        out[i] = scipy.linalg.cho_solve(factor, b2[i])
    return out.reshape(st.z.shape)


def bso(prev: LayerState, m, theta1: float, theta2: float):
    """Matched-filter PIC observation: returns ``(mu, Sigma)``."""
    if theta2 <= 0:
        raise ConfigError("theta2 must be positive")
    st = _stats(m)
    mu = prev.x_hat + theta1 * st.mf_residual(prev.x_hat) / st.g
    interference = np.einsum("...ij,...j->...i", st.G2_off, prev.v)
    Sigma = theta2 * (interference + st.g * st.noise_var) / st.g**2
    return mu, np.maximum(Sigma, VAR_FLOOR)


def bse_posterior(mu, Sigma, alphabet) -> np.ndarray:
    """Normalized posterior masses over ``alphabet``, trailing axis."""
    a = np.asarray(alphabet, dtype=float)
    logits = -((a - mu[..., None]) ** 2) / (2.0 * Sigma[..., None])
    logits -= logits.max(axis=-1, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=-1, keepdims=True)


def bse(mu, Sigma, alphabet):
    """Posterior mean and variance of each real symbol: ``(x_hat, v)``."""
    mu = np.asarray(mu, dtype=float)
    Sigma = np.maximum(np.asarray(Sigma, dtype=float), VAR_FLOOR)
    a = np.asarray(alphabet, dtype=float)
    p = bse_posterior(mu, Sigma, a)
    x_hat = p @ a
    v = np.maximum(p @ a**2 - x_hat**2, VAR_FLOOR)
    return x_hat, v


def combining_weight(e_prev, e_curr) -> np.ndarray:
    den = e_prev + e_curr
    safe = np.where(den > 0, den, 1.0)
    return np.where(den > 0, e_prev / safe, 0.5)


def dsc(prev: LayerState, curr: LayerState, m, theta3: float) -> LayerState:
    """Blend ``curr`` (fresh estimation output) with ``prev`` by residual energy."""
    if theta3 <= 0:
        raise ConfigError("theta3 must be positive")
    st = _stats(m)
    e = theta3 * st.mf_residual(curr.x_hat) ** 2
    rho = combining_weight(prev.e, e)
    x_hat = (1.0 - rho) * prev.x_hat + rho * curr.x_hat
    v = (1.0 - rho) * prev.v + rho * curr.v
    return LayerState(
        x_hat=x_hat, v=v, e=e, mu=curr.mu, Sigma=curr.Sigma, rho=rho,
        x_bse=curr.x_hat, v_bse=curr.v,
    )


def initial_state(m) -> LayerState:
    """MMSE estimate, unit variances and unweighted residual energies."""
    st = _stats(m)
    x0 = mmse_init(st)
    return LayerState(x_hat=x0, v=np.ones_like(x0), e=st.mf_residual(x0) ** 2)


def detect(m: RealModel, params: DetectorParams, alphabet) -> tuple[np.ndarray, list[LayerState]]:
    """Run initialization and ``params.T`` layers.

    Returns the final estimate and the trace ``[state_0, ..., state_T]`` where
    ``state_t.x_hat`` is the layer-``t`` output (``state_0`` is the MMSE start).
    """
    st = _stats(m)
    state = initial_state(st)
    trace = [state]
    for t in range(params.T):
        mu, Sigma = bso(state, st, params.theta1[t], params.theta2[t])
        x_bse, v_bse = bse(mu, Sigma, alphabet)
        curr = LayerState(x_hat=x_bse, v=v_bse, e=state.e, mu=mu, Sigma=Sigma)
        state = dsc(state, curr, st, params.theta3[t])
        trace.append(state)
    return state.x_hat, trace


# ---------------------------------------------------------------------------
# Decisions and exhaustive search
# ---------------------------------------------------------------------------


def hard_labels(x_hat, c: Constellation) -> np.ndarray:
    return nearest_labels(real_to_complex(np.asarray(x_hat, dtype=float)), c)


def hard_decision(x_hat, c: Constellation) -> np.ndarray:
    """Nearest complex constellation point for each (Re, Im) pair."""
    x_hat = np.asarray(x_hat, dtype=float)
    if x_hat.shape[-1] % 2:
        raise InputError("real estimate vector must have even length")
    return c.points[hard_labels(x_hat, c)]


def _candidate_labels(n_sym: int, order: int) -> np.ndarray:
    return np.array(list(itertools.product(range(order), repeat=n_sym)), dtype=np.int64)


def ml_oracle_labels(m: RealModel, c: Constellation) -> np.ndarray:
    n_sym = m.n // 2
    if n_sym > ML_MAX_SYMBOLS or c.order**n_sym > ML_MAX_CANDIDATES:
        raise CapacityError(
            f"exhaustive search over {c.order}^{n_sym} candidates exceeds the "
            f"{ML_MAX_CANDIDATES} limit (or more than {ML_MAX_SYMBOLS} symbols)"
        )
    labels = _candidate_labels(n_sym, c.order)
    cand = complex_to_real(c.points[labels])  # (Ncand, n)
    H = np.asarray(m.H, dtype=float).reshape(-1, m.n, m.n)
    y = np.asarray(m.y, dtype=float).reshape(-1, m.n)
    chunk = max(1, 4_000_000 // (len(cand) * m.n))
    best = np.empty(len(H), dtype=np.int64)
    for s in range(0, len(H), chunk):
        Hc = np.einsum("bij,cj->bci", H[s : s + chunk], cand)
        r = np.sum((y[s : s + chunk, None, :] - Hc) ** 2, axis=-1)
        best[s : s + chunk] = np.argmin(r, axis=-1)
    return labels[best].reshape(m.batch_shape + (n_sym,))


def ml_oracle(m: RealModel, c: Constellation) -> np.ndarray:
    """Exhaustive minimum-distance detection; ties keep the first candidate."""
    return c.points[ml_oracle_labels(m, c)]
