"""Training harness for the per-layer detector parameters.

Forward passes used for optimization run in torch (float64) so that Adam can
use autograd gradients; ``loss`` and ``numerical_grad`` evaluate the numpy
detector instead and serve as the independent check on those gradients.
The MMSE start does not depend on the parameters, so it is computed once per
batch in numpy and handed to torch as a constant.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .channel import frame_rng, simulate_frame, stack_frames
from .core import RealModel, SystemConfig, make_constellation
from .detector import VAR_FLOOR, DetectorParams, GramStats, detect, initial_state
from .errors import ConfigError, FormatError, NumericalError, TrainingError

log = logging.getLogger(__name__)

THETA_FLOOR = 1e-6
_VAL_STREAM = 0x7A11D  # seed-stream tag for validation frames


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    batches_per_epoch: int = 40
    batch_size: int = 256
    lr: float = 1e-4
    p_range: tuple[int, int] = (6, 14)
    snr_range_db: tuple[float, float] = (10.0, 20.0)
    val_size: int = 5000
    seed: int = 0
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    min_lr: float = 1e-6

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.batches_per_epoch < 1:
            raise ConfigError("epochs, batches_per_epoch and batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not 0 < self.plateau_factor < 1:
            raise ConfigError("plateau_factor must lie in (0, 1)")
        if self.p_range[0] < 1 or self.p_range[0] > self.p_range[1]:
            raise ConfigError(f"invalid p_range {self.p_range}")
        if self.snr_range_db[0] > self.snr_range_db[1]:
            raise ConfigError(f"invalid snr_range_db {self.snr_range_db}")
        if self.val_size < 1:
            raise ConfigError("val_size must be >= 1")

    def digest(self, cfg: SystemConfig) -> str:
        blob = json.dumps({"system": asdict(cfg), "train": asdict(self)}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class TrainSample:
    model: RealModel
    P: int
    snr_db: float


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------


def _check_paths(cfg: SystemConfig, tc: TrainConfig):
    if tc.p_range[1] > cfg.max_paths:
        raise ConfigError(f"p_range {tc.p_range} exceeds channel capacity {cfg.max_paths}")


def generate_batch(cfg: SystemConfig, tc: TrainConfig, rng: np.random.Generator) -> list[TrainSample]:
    """One training batch: a single path count, per-sample uniform SNR."""
    _check_paths(cfg, tc)
    c = make_constellation(cfg.mod_order)
    P = int(rng.integers(tc.p_range[0], tc.p_range[1] + 1))
    snrs = rng.uniform(*tc.snr_range_db, size=tc.batch_size)
    out = []
    for snr in snrs:
        f = simulate_frame(cfg, P, float(snr), rng, c)
        out.append(TrainSample(stack_frames([f])[0], P, float(snr)))
    return out


def batch_rng(tc: TrainConfig, epoch: int, index: int) -> np.random.Generator:
    return frame_rng(tc.seed, epoch, index)


def _validation_samples(cfg: SystemConfig, tc: TrainConfig) -> list[TrainSample]:
    _check_paths(cfg, tc)
    c = make_constellation(cfg.mod_order)
    rng = frame_rng(tc.seed, _VAL_STREAM)
    out = []
    for _ in range(tc.val_size):
        P = int(rng.integers(tc.p_range[0], tc.p_range[1] + 1))
        snr = float(rng.uniform(*tc.snr_range_db))
        out.append(TrainSample(stack_frames([simulate_frame(cfg, P, snr, rng, c)])[0], P, snr))
    return out


def stack_samples(batch) -> RealModel:
    return RealModel(
        H=np.stack([s.model.H for s in batch]),
        y=np.stack([s.model.y for s in batch]),
        sigma2=np.array([float(s.model.sigma2) for s in batch]),
        x_true=np.stack([s.model.x_true for s in batch]),
    )


def _as_model(batch) -> RealModel:
    return batch if isinstance(batch, RealModel) else stack_samples(batch)


# ---------------------------------------------------------------------------
# Loss and gradients
# ---------------------------------------------------------------------------


def loss(batch, params: DetectorParams, alphabet=None) -> float:
    """Squared error of the final-layer estimate summed over symbols, averaged over samples."""
    m = _as_model(batch)
    if m.H.ndim == 2:
        m = RealModel(m.H[None], m.y[None], np.atleast_1d(m.sigma2), m.x_true[None])
    if len(m) == 0:
        raise ConfigError("empty batch")
    if alphabet is None:
        alphabet = _infer_alphabet(m.x_true)
    x_hat, _ = detect(m, params, alphabet)
    return float(np.sum((m.x_true - x_hat) ** 2) / len(m))


def _infer_alphabet(x_true) -> np.ndarray:
    amp = np.max(np.abs(x_true))
    for order in (4, 16, 64):
        a = make_constellation(order).real_alphabet
        if np.isclose(a.max(), amp):
            return a
    raise ConfigError("cannot infer the real alphabet from x_true; pass it explicitly")


@dataclass(eq=False)
class TorchBatch:
    """Parameter-independent tensors for the differentiable forward pass."""

    G: torch.Tensor
    z: torch.Tensor
    g: torch.Tensor
    noise_var: torch.Tensor
    x0: torch.Tensor
    e0: torch.Tensor
    x_true: torch.Tensor
    alphabet: torch.Tensor

    @classmethod
    def from_model(cls, m: RealModel, alphabet) -> "TorchBatch":
        st = GramStats.from_model(m)
        s0 = initial_state(st)
        t = lambda a: torch.tensor(np.array(a, dtype=float))  # noqa: E731
        return cls(
            G=t(st.G), z=t(st.z), g=t(st.g), noise_var=t(st.noise_var),
            x0=t(s0.x_hat), e0=t(s0.e), x_true=t(m.x_true), alphabet=t(alphabet),
        )

    def __len__(self):
        return self.z.shape[0]


def torch_forward(tb: TorchBatch, theta: torch.Tensor, layers: int | None = None):
    """Final estimate for ``theta`` of shape (3, T); mirrors ``detector.detect``."""
    T = theta.shape[1] if layers is None else layers
    G, z, g, a = tb.G, tb.z, tb.g, tb.alphabet
    G2_off = G * G
    G2_off = G2_off - torch.diag_embed(torch.diagonal(G2_off, dim1=-2, dim2=-1))
    x, v, e_prev = tb.x0, torch.ones_like(tb.x0), tb.e0
    for t in range(T):
        r = z - torch.einsum("bij,bj->bi", G, x)
        mu = x + theta[0, t] * r / g
        interference = torch.einsum("bij,bj->bi", G2_off, v)
        Sigma = torch.clamp(theta[1, t] * (interference + g * tb.noise_var) / g**2, min=VAR_FLOOR)
        p = torch.softmax(-((a - mu[..., None]) ** 2) / (2.0 * Sigma[..., None]), dim=-1)
        xb = p @ a
        vb = torch.clamp(p @ a**2 - xb**2, min=VAR_FLOOR)
        e = theta[2, t] * (z - torch.einsum("bij,bj->bi", G, xb)) ** 2
        den = e_prev + e
        rho = torch.where(den > 0, e_prev / torch.where(den > 0, den, torch.ones_like(den)), 0.5)
        x = (1.0 - rho) * x + rho * xb
        v = (1.0 - rho) * v + rho * vb
        e_prev = e
    return x


def torch_loss(tb: TorchBatch, theta: torch.Tensor) -> torch.Tensor:
    x = torch_forward(tb, theta)
    return torch.sum((tb.x_true - x) ** 2) / len(tb)


def _theta_tensor(params: DetectorParams, requires_grad=False) -> torch.Tensor:
    arr = np.stack([params.theta1, params.theta2, params.theta3])
    return torch.tensor(arr, dtype=torch.float64, requires_grad=requires_grad)


def grad(batch, params: DetectorParams, alphabet=None) -> np.ndarray:
    """Autograd gradient of ``loss`` ordered as (theta1[:], theta2[:], theta3[:])."""
    m = _as_model(batch)
    if alphabet is None:
        alphabet = _infer_alphabet(m.x_true)
    tb = batch if isinstance(batch, TorchBatch) else TorchBatch.from_model(m, alphabet)
    theta = _theta_tensor(params, requires_grad=True)
    value = torch_loss(tb, theta)
    value.backward()
    out = theta.grad.detach().numpy().ravel().copy()
    if not np.all(np.isfinite(out)):
        raise NumericalError("non-finite gradient")
    return out


def numerical_grad(batch, params: DetectorParams, step: float = 1e-5, order: int = 4, alphabet=None):
    """Central finite differences of the numpy ``loss``.

    ``order=2`` is the plain two-point stencil; ``order=4`` uses the
    (-2h, -h, +h, +2h) stencil, whose truncation error stays below roundoff
    at ``step=1e-5`` even where the unfolded loss is sharply curved.
    """
    m = _as_model(batch)
    if alphabet is None:
        alphabet = _infer_alphabet(m.x_true)
    if order == 2:
        stencil = ((1, 0.5), (-1, -0.5))
    elif order == 4:
        stencil = ((2, -1 / 12), (1, 2 / 3), (-1, -2 / 3), (-2, 1 / 12))
    else:
        raise ConfigError("order must be 2 or 4")
    theta = params.as_vector()
    out = np.zeros_like(theta)
    for i in range(theta.size):
        for k, w in stencil:
            shifted = theta.copy()
            shifted[i] += k * step
            out[i] += w * loss(m, DetectorParams.from_vector(shifted), alphabet)
    return out / step


def gradient_relative_error(analytic, numeric, loss_value, step=1e-5):
    """Per-component relative error with the denominator floored at FD resolution.

    A component smaller than ``1e4 * eps * |loss| / step`` cannot be resolved
    to four digits by differencing, so such components are compared on that
    absolute scale instead.
    """
    floor = 1e4 * np.finfo(float).eps * max(abs(loss_value), 1.0) / step
    den = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / den


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------


class PlateauScheduler:
    """Scale the step size by ``factor`` after ``patience`` epochs without improvement."""

    def __init__(self, lr, factor, patience, min_lr=0.0):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, metric: float) -> float:
        if metric < self.best:
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.bad_epochs = 0
        return self.lr


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    best_val_loss: float


@dataclass
class TrainResult:
    params: DetectorParams
    log: list[EpochRecord] = field(default_factory=list)
    init_val_loss: float = math.nan
    best_epoch: int = 0


def _val_batches(cfg, tc, alphabet, chunk=256) -> list[TorchBatch]:
    samples = _validation_samples(cfg, tc)
    return [
        TorchBatch.from_model(stack_samples(samples[i : i + chunk]), alphabet)
        for i in range(0, len(samples), chunk)
    ]


def _evaluate(batches, theta) -> float:
    with torch.no_grad():
        total = sum(float(torch_loss(b, theta)) * len(b) for b in batches)
    return total / sum(len(b) for b in batches)


def train(cfg: SystemConfig, tc: TrainConfig, progress=None) -> TrainResult:
    """Adam on all 3T parameters from the all-ones start; keeps the best-validation checkpoint."""
    alphabet = make_constellation(cfg.mod_order).real_alphabet
    val = _val_batches(cfg, tc, alphabet)
    theta = _theta_tensor(DetectorParams.ones(cfg.T), requires_grad=True)
    opt = torch.optim.Adam([theta], lr=tc.lr)
    sched = PlateauScheduler(tc.lr, tc.plateau_factor, tc.plateau_patience, tc.min_lr)

    init_val = _evaluate(val, theta)
    best_val, best_theta, best_epoch = init_val, theta.detach().clone(), 0
    result = TrainResult(params=DetectorParams.ones(cfg.T), init_val_loss=init_val)

    for epoch in range(1, tc.epochs + 1):
        train_losses = []
        for b in range(tc.batches_per_epoch):
            samples = generate_batch(cfg, tc, batch_rng(tc, epoch, b))
            tb = TorchBatch.from_model(stack_samples(samples), alphabet)
            opt.zero_grad()
            value = torch_loss(tb, theta)
            value.backward()
            if not torch.all(torch.isfinite(theta.grad)):
                raise TrainingError(f"non-finite gradient at epoch {epoch}, batch {b}", result.log)
            opt.step()
            with torch.no_grad():
                theta[1:].clamp_(min=THETA_FLOOR)
            train_losses.append(float(value.detach()))

        val_loss = _evaluate(val, theta)
        if not math.isfinite(val_loss):
            raise TrainingError(f"validation loss is not finite at epoch {epoch}", result.log)
        if val_loss < best_val:
            best_val, best_theta, best_epoch = val_loss, theta.detach().clone(), epoch
        rec = EpochRecord(epoch, float(np.mean(train_losses)), val_loss, sched.lr, best_val)
        result.log.append(rec)
        new_lr = sched.step(val_loss)
        for group in opt.param_groups:
            group["lr"] = new_lr
        log.info("epoch %d train %.5f val %.5f lr %.2e", epoch, rec.train_loss, val_loss, rec.lr)
        if progress is not None:
            progress(rec)

    bt = best_theta.numpy()
    result.params = DetectorParams(bt[0], bt[1], bt[2])
    result.best_epoch = best_epoch
    return result


def write_log_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for r in records:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.lr)])


# ---------------------------------------------------------------------------
# Parameter files
# ---------------------------------------------------------------------------


def save_params(params: DetectorParams, path, metadata: dict | None = None) -> None:
    doc = {
        "T": params.T,
        "theta1": params.theta1.tolist(),
        "theta2": params.theta2.tolist(),
        "theta3": params.theta3.tolist(),
        "metadata": metadata or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)


def load_params(path, T: int | None = None) -> DetectorParams:
    """Read a parameter file; ``T`` (if given) must match the stored layer count."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: top level must be an object")
    if not isinstance(doc.get("T"), int) or doc["T"] < 1:
        raise FormatError(f"{path}: field 'T' must be a positive integer")
    arrays = {}
    for name in ("theta1", "theta2", "theta3"):
        val = doc.get(name)
        if not isinstance(val, list) or not all(isinstance(x, (int, float)) for x in val):
            raise FormatError(f"{path}: field '{name}' must be a list of numbers")
        if len(val) != doc["T"]:
            raise FormatError(f"{path}: field '{name}' has {len(val)} entries, expected T={doc['T']}")
        arrays[name] = np.array(val, dtype=float)
    for name in ("theta2", "theta3"):
        if np.any(arrays[name] <= 0):
            raise FormatError(f"{path}: field '{name}' must be strictly positive")
    if T is not None and doc["T"] != T:
        raise FormatError(f"{path}: field 'T'={doc['T']} does not match detector layer count {T}")
    return DetectorParams(**arrays)
