"""Full-batch training: conjugate gradient, one-step secant, adaptive gradient
descent with momentum; validation-based early stopping with best-snapshot
return; per-epoch MSE recording.

All methods minimize the raw-unit MSE on the training set.  The validation
set only steers stopping and snapshot selection; the test set is recorded for
reporting and never influences any decision.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import math
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .dataset import SampleSet
from .neuralnet import (
    NetworkParams,
    Normalizer,
    TransferKind,
    gradient,
    hidden_features,
    loss_mse,
)


class TrainMethod(enum.Enum):
    CG = "cg"
    OSS = "oss"
    GDX = "gdx"


class StopReason(enum.Enum):
    VALIDATION_STOP = "ValidationStop"
    MIN_STEP = "MinStep"
    MIN_GRADIENT = "MinGradient"
    MAX_EPOCHS = "MaxEpochs"


class NonFiniteLossError(RuntimeError):
    """Training diverged to a non-finite loss."""


class ConfigMismatchError(RuntimeError):
    """Network, normalizer, and sample sets are dimensionally incompatible."""


class MinStepError(RuntimeError):
    """Line search collapsed below the configured step floor."""


@dataclasses.dataclass
class TrainConfig:
    method: TrainMethod = TrainMethod.CG
    max_epochs: int = 10000
    patience: int = 6
    min_gradient: float = 1e-7
    min_step: float = 1e-12
    momentum: float = 0.9
    lr_initial: float = 0.01
    lr_up: float = 1.05
    lr_down: float = 0.7
    err_ratio: float = 1.04

    def __post_init__(self):
        if isinstance(self.method, str):
            self.method = TrainMethod(self.method)
        # max_epochs = 0 is the documented zero-budget case
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be non-negative")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if min(self.min_gradient, self.min_step, self.lr_initial, self.lr_up, self.lr_down, self.err_ratio) <= 0:
            raise ValueError("rates and floors must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")


@dataclasses.dataclass
class TrainRecord:
    mse_train: List[float]
    mse_valid: List[float]
    mse_test: List[float]
    stop_reason: StopReason
    best_epoch: int

    @property
    def elapsed_epochs(self) -> int:
        return len(self.mse_train)


def pack(net: NetworkParams) -> np.ndarray:
    """Flatten all layer weights and biases into one vector."""
    parts = []
    for w, b in zip(net.weights, net.biases):
        parts.append(w.ravel())
        parts.append(b)
    return np.concatenate(parts)


def unpack_into(net: NetworkParams, vec: np.ndarray) -> None:
    """Write a flat vector back into the network arrays, in pack order."""
    pos = 0
    for w, b in zip(net.weights, net.biases):
        w.flat[:] = vec[pos : pos + w.size]
        pos += w.size
        b[:] = vec[pos : pos + b.size]
        pos += b.size
    if pos != vec.size:
        raise ValueError(f"vector has {vec.size} entries, network needs {pos}")


@dataclasses.dataclass
class OptState:
    """Mutable state threaded through step_cg / step_oss / step_gdx."""

    loss_fn: Callable[[np.ndarray], float]
    grad_fn: Callable[[np.ndarray], np.ndarray]
    cfg: TrainConfig
    w: np.ndarray
    loss: float
    grad: np.ndarray
    direction: Optional[np.ndarray] = None
    grad_prev: Optional[np.ndarray] = None
    step_prev: Optional[np.ndarray] = None
    slope_prev: float = 0.0
    alpha_prev: float = 0.0
    lr: float = 0.0
    velocity: Optional[np.ndarray] = None
    iters: int = 0


def make_state(
    loss_fn: Callable[[np.ndarray], float],
    grad_fn: Callable[[np.ndarray], np.ndarray],
    w0: np.ndarray,
    cfg: TrainConfig,
) -> OptState:
    w0 = np.asarray(w0, dtype=np.float64).copy()
    return OptState(
        loss_fn=loss_fn,
        grad_fn=grad_fn,
        cfg=cfg,
        w=w0,
        loss=float(loss_fn(w0)),
        grad=np.asarray(grad_fn(w0), dtype=np.float64),
        lr=cfg.lr_initial,
        velocity=np.zeros_like(w0),
    )


def _line_search(
    loss_fn: Callable[[np.ndarray], float],
    w: np.ndarray,
    d: np.ndarray,
    loss0: float,
    slope0: float,
    min_step: float,
    alpha0: float,
) -> Tuple[float, float]:
    """Backtracking with quadratic interpolation under the Armijo condition.

    Returns (alpha, loss at alpha).  Raises MinStepError when the step
    collapses below min_step.  On an accepted trial one interpolation step
    refines toward the 1-D minimum, which is exact for quadratic objectives.
    """
    c1 = 1e-4
    alpha = max(alpha0, min_step)
    for _ in range(60):
        f1 = float(loss_fn(w + alpha * d))
        armijo = f1 <= loss0 + c1 * alpha * slope0
        if math.isfinite(f1) and armijo:
            denom = 2.0 * (f1 - loss0 - slope0 * alpha)
            if denom > 0.0:
                aq = -slope0 * alpha * alpha / denom
                if math.isfinite(aq) and 0.1 * alpha <= aq <= 10.0 * alpha and aq != alpha:
                    fq = float(loss_fn(w + aq * d))
                    if math.isfinite(fq) and fq < f1 and fq <= loss0 + c1 * aq * slope0:
                        return aq, fq
            return alpha, f1
        denom = 2.0 * (f1 - loss0 - slope0 * alpha)
        if math.isfinite(denom) and denom > 0.0:
            trial = -slope0 * alpha * alpha / denom
        else:
            trial = 0.5 * alpha
        alpha = float(np.clip(trial, 0.1 * alpha, 0.5 * alpha))
        if alpha < min_step:
            raise MinStepError(f"line-search step {alpha:.3e} below floor {min_step:.3e}")
    raise MinStepError("line search exhausted its evaluation budget")


def _descend(state: OptState, d: np.ndarray) -> None:
    """Shared line-search descent used by CG and OSS."""
    g = state.grad
    slope = float(d @ g)
    if slope >= 0.0:
        d = -g
        slope = float(d @ g)
    if slope == 0.0:
        raise MinStepError("zero gradient: no descent direction")
    if state.alpha_prev > 0.0 and state.slope_prev < 0.0:
        # warm start scaled so the first trial matches the previous decrease
        alpha0 = state.alpha_prev * min(10.0, max(0.1, state.slope_prev / slope))
    else:
        alpha0 = 1.0 / max(1.0, float(np.max(np.abs(g))))
    alpha, f_new = _line_search(state.loss_fn, state.w, d, state.loss, slope, state.cfg.min_step, alpha0)
    step = alpha * d
    state.w = state.w + step
    state.step_prev = step
    state.grad_prev = g
    state.direction = d
    state.slope_prev = slope
    state.alpha_prev = alpha
    state.loss = f_new
    state.grad = np.asarray(state.grad_fn(state.w), dtype=np.float64)
    state.iters += 1


def step_cg(state: OptState) -> OptState:
    """Polak-Ribiere conjugate gradient step with periodic restarts."""
    g = state.grad
    restart = state.direction is None or state.iters % g.size == 0
    if restart:
        d = -g
    else:
        gp = state.grad_prev
        beta = max(0.0, float(g @ (g - gp)) / float(gp @ gp))
        d = -g + beta * state.direction
    _descend(state, d)
    return state


def step_oss(state: OptState) -> OptState:
    """One-step secant step: memoryless quasi-Newton from the last step."""
    g = state.grad
    if state.step_prev is None or state.grad_prev is None:
        d = -g
    else:
        s = state.step_prev
        y = g - state.grad_prev
        sy = float(s @ y)
        if abs(sy) < 1e-300:
            d = -g
        else:
            b_c = float(s @ g) / sy
            a_c = -(1.0 + float(y @ y) / sy) * b_c + float(y @ g) / sy
            d = -g + a_c * s + b_c * y
    _descend(state, d)
    return state


def step_gdx(state: OptState) -> OptState:
    """Gradient descent with momentum and adaptive learning rate.

    A candidate whose loss exceeds err_ratio times the current loss is
    rejected: weights stay, the rate shrinks, momentum resets.  Accepted
    candidates that decrease the loss grow the rate.
    """
    cfg = state.cfg
    dw = cfg.momentum * state.velocity - (1.0 - cfg.momentum) * state.lr * state.grad
    w_try = state.w + dw
    f_new = float(state.loss_fn(w_try))
    if not math.isfinite(f_new) or f_new > cfg.err_ratio * state.loss:
        state.lr *= cfg.lr_down
        state.velocity = np.zeros_like(state.w)
    else:
        state.w = w_try
        state.velocity = dw
        if f_new < state.loss:
            state.lr *= cfg.lr_up
        state.loss = f_new
        state.grad = np.asarray(state.grad_fn(state.w), dtype=np.float64)
    state.iters += 1
    return state


_STEPPERS = {
    TrainMethod.CG: step_cg,
    TrainMethod.OSS: step_oss,
    TrainMethod.GDX: step_gdx,
}


def early_stop_check(valid_history: Sequence[float], patience: int) -> bool:
    """True when the trailing streak of epochs above the running best
    validation MSE has reached `patience`.  A new best or a tie resets it."""
    best = math.inf
    streak = 0
    for v in valid_history:
        if v < best:
            best = v
            streak = 0
        elif v > best:
            streak += 1
        else:
            streak = 0
    return streak >= patience


def _check_compatible(
    net: NetworkParams,
    train_set: SampleSet,
    valid_set: SampleSet,
    test_set: Optional[SampleSet],
) -> None:
    sets = [s for s in (train_set, valid_set, test_set) if s is not None]
    q, m = train_set.q, train_set.grid.m
    for s in sets:
        if s.q != q or s.grid.m != m:
            raise ConfigMismatchError(f"{s.role} set has q={s.q}, m={s.grid.m}; expected q={q}, m={m}")
        if (s.grid.t0, s.grid.tf) != (train_set.grid.t0, train_set.grid.tf):
            raise ConfigMismatchError(f"{s.role} set grid span differs from the training grid")
    if net.sizes[0] != q or net.sizes[-1] != m:
        raise ConfigMismatchError(
            f"network maps {net.sizes[0]} -> {net.sizes[-1]}, data needs {q} -> {m}"
        )


def train(
    net: NetworkParams,
    norm: Normalizer,
    train_set: SampleSet,
    valid_set: SampleSet,
    test_set: Optional[SampleSet],
    cfg: TrainConfig,
) -> Tuple[NetworkParams, TrainRecord]:
    """Run the configured method full-batch and return the weights of the
    epoch with the lowest validation MSE (the initial weights count as epoch 0).

    With hard-limit hidden layers every hidden gradient is identically zero,
    so the hidden activations are precomputed once and only the output layer
    is optimized; the iterates match full-space optimization exactly in real
    arithmetic (hidden weights never move) and to rounding in floats, where
    reduction order over the shorter weight vector differs.
    """
    _check_compatible(net, train_set, valid_set, test_set)

    elm = net.hidden_transfer is TransferKind.HARDLIM and net.n_layers >= 2
    if elm:
        feats = {
            "train": hidden_features(net, norm, train_set.params),
            "valid": hidden_features(net, norm, valid_set.params),
            "test": hidden_features(net, norm, test_set.params) if test_set is not None else None,
        }
        work = NetworkParams(
            [net.weights[-1].copy()], [net.biases[-1].copy()], TransferKind.PURELIN
        )
        n_hidden = net.sizes[-2]
        work_norm = Normalizer(
            -np.ones(n_hidden), np.ones(n_hidden), norm.out_min, norm.out_max
        )
        inputs = {
            "train": feats["train"],
            "valid": feats["valid"],
            "test": feats["test"],
        }
    else:
        work = net.copy()
        work_norm = norm
        inputs = {
            "train": train_set.params,
            "valid": valid_set.params,
            "test": test_set.params if test_set is not None else None,
        }
    targets = {
        "train": train_set.targets,
        "valid": valid_set.targets,
        "test": test_set.targets if test_set is not None else None,
    }

    def mse_at(w: np.ndarray, key: str) -> float:
        unpack_into(work, w)
        return loss_mse(work, work_norm, inputs[key], targets[key])

    def loss_fn(w: np.ndarray) -> float:
        return mse_at(w, "train")

    def grad_fn(w: np.ndarray) -> np.ndarray:
        unpack_into(work, w)
        g = gradient(work, work_norm, inputs["train"], targets["train"])
        return pack(NetworkParams(g.weights, g.biases, work.hidden_transfer))

    w0 = pack(work)
    if not (math.isfinite(loss_fn(w0)) and math.isfinite(mse_at(w0, "valid"))):
        raise NonFiniteLossError("initial loss is not finite")
    state = make_state(loss_fn, grad_fn, w0, cfg)
    valid0 = mse_at(state.w, "valid")

    best_valid = valid0
    best_w = state.w.copy()
    best_epoch = 0
    streak = 0
    stop = StopReason.MAX_EPOCHS
    mse_train: List[float] = []
    mse_valid: List[float] = []
    mse_test: List[float] = []
    stepper = _STEPPERS[cfg.method]

    for epoch in range(1, cfg.max_epochs + 1):
        if float(np.max(np.abs(state.grad))) < cfg.min_gradient:
            stop = StopReason.MIN_GRADIENT
            break
        try:
            stepper(state)
        except MinStepError:
            stop = StopReason.MIN_STEP
            break
        v = mse_at(state.w, "valid")
        te = mse_at(state.w, "test") if targets["test"] is not None else math.nan
        if not (math.isfinite(state.loss) and math.isfinite(v)):
            raise NonFiniteLossError(f"non-finite loss at epoch {epoch}")
        mse_train.append(state.loss)
        mse_valid.append(v)
        mse_test.append(te)
        # streak semantics match early_stop_check over [epoch-0 value] + record
        if v < best_valid:
            best_valid = v
            best_w = state.w.copy()
            best_epoch = epoch
            streak = 0
        elif v > best_valid:
            streak += 1
        else:
            streak = 0
        if streak >= cfg.patience:
            stop = StopReason.VALIDATION_STOP
            break

    record = TrainRecord(mse_train, mse_valid, mse_test, stop, best_epoch)
    unpack_into(work, best_w)
    if elm:
        result = net.copy()
        result.weights[-1][:] = work.weights[0]
        result.biases[-1][:] = work.biases[0]
    else:
        result = work.copy()
    return result, record


def write_training_log(record: TrainRecord, path: Union[str, Path]) -> None:
    """CSV log: one row per epoch, stop reason and best epoch as a footer."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mse_train", "mse_valid", "mse_test"])
        for i in range(record.elapsed_epochs):
            writer.writerow(
                [i + 1, repr(record.mse_train[i]), repr(record.mse_valid[i]), repr(record.mse_test[i])]
            )
        fh.write(f"# stop_reason,{record.stop_reason.value}\n")
        fh.write(f"# best_epoch,{record.best_epoch}\n")
