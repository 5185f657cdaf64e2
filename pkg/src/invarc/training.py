"""Training recipe: multi-step rollout loss with harmonic step weights,
AdamW with cosine annealing and global gradient clipping, plus the three
soft-constraint baselines (unconstrained, penalty, PINNs-style).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import nets
from .constructions.base import FieldModel, rollout_model
from .errors import ConfigError, DivergenceError
from .integrator import Trajectory, rk4_step

BASELINE_KINDS = ("none", "penalty", "pinns")  # "none" = plain unconstrained NODE


@dataclass
class TrainConfig:
    n_steps: int = 4
    lr: float = 1e-3
    weight_decay: float = 1e-5
    epochs: int = 300
    clip_norm: float = 1.0
    seed: int = 0
    baseline: str | None = None  # None = compiled model; else a BASELINE_KINDS entry
    batch_size: int = 64
    window_stride: int = 1
    lambda_penalty: float = 10.0
    lambda_pinns: float = 10.0

    def __post_init__(self):
        for name in ("n_steps", "lr", "weight_decay", "epochs", "clip_norm", "batch_size", "window_stride"):
            if getattr(self, name) <= 0 and name != "weight_decay":
                raise ConfigError(f"TrainConfig.{name} must be positive")
        if self.weight_decay < 0:
            raise ConfigError("TrainConfig.weight_decay must be nonnegative")
        if self.baseline is not None and self.baseline not in BASELINE_KINDS:
            raise ConfigError(f"baseline must be one of {BASELINE_KINDS}")


class UnconstrainedField(FieldModel):
    """Vanilla neural-ODE baseline: dx/dt = net(x) with no structure."""

    name = "unconstrained"
    kind = "unconstrained"

    def __init__(self, n: int, net: nets.MlpConfig | None = None):
        self.state_dim = n
        self.net = net or nets.MlpConfig(n, n)

    def param_entries(self):
        return nets.mlp_param_entries("net", self.net)

    def init_params(self, store, rng):
        nets.init_mlp(store, "net", self.net, rng)

    def rhs(self, params, s, t):
        return nets.mlp_forward(self.net, params, "net", s)


# ---------------------------------------------------------------------------
# losses


def _window_predictions(model: FieldModel, params, window, h: float, t0):
    """Chained RK4 predictions over a batch of windows.

    Returns (preds, good): preds[k] is the physical prediction after k+1
    steps; `good` masks rows that stayed finite (diverged rows are replaced
    by a safe constant so NaNs cannot leak into other rows' gradients).
    """
    window = np.asarray(window, dtype=float)
    if window.ndim == 2:
        window = window[None]
    batch, length, _ = window.shape
    s = model.embed(params, window[:, 0])
    good = np.ones(batch, dtype=bool)
    t = np.asarray(t0, dtype=float) if np.ndim(t0) else float(t0)
    preds = []
    for k in range(1, length):
        s = rk4_step(lambda p, y, tt: model.rhs(p, y, tt), params, s, t, h, check=False)
        finite = np.isfinite(ad.value(s)).all(axis=-1)
        if not finite.all():
            good &= finite
            s = ad.where(finite[:, None], s, 1.0)
        preds.append(model.recover(params, s))
        t = t + h
    return window, preds, good


def _harmonic_mse(window, preds, good):
    total = None
    for k, pred in enumerate(preds, start=1):
        err = pred - window[:, k]
        sq = ad.sum_(err * err, axis=-1) * (1.0 / k)
        total = sq if total is None else total + sq
    total = ad.where(good, total, 0.0 * total)
    n_good = max(int(good.sum()), 1)
    return ad.sum_(total) * (1.0 / (len(preds) * n_good)), int(good.size - good.sum())


def multistep_loss(model: FieldModel, params, window, h: float, t0=0.0):
    """(1/n) sum_k (1/k) |pred_{t+k} - u_{t+k}|^2, mean over the batch.

    Returns (loss, n_skipped) where skipped rows diverged mid-rollout.
    """
    window, preds, good = _window_predictions(model, params, window, h, t0)
    return _harmonic_mse(window, preds, good)


def penalty_loss(model: FieldModel, params, window, h: float, lam: float, violation_fn, t0=0.0):
    """multistep_loss + lam * mean constraint violation over predicted states."""
    window, preds, good = _window_predictions(model, params, window, h, t0)
    base, skipped = _harmonic_mse(window, preds, good)
    if lam == 0.0:
        return base, skipped
    total = None
    for pred in preds:
        v = violation_fn(pred, window[:, 0])
        v = ad.where(good, v, 0.0 * v)
        total = v if total is None else total + v
    n_good = max(int(good.sum()), 1)
    mean_viol = ad.sum_(total) * (1.0 / (len(preds) * n_good))
    return base + lam * mean_viol, skipped


def pinns_loss(model: FieldModel, params, window, h: float, invariants, lam: float = 10.0, t0=0.0):
    """multistep_loss + physics-informed penalties from analytic invariants.

    Conserved quantities penalize squared drift from their window-start
    value; monotone ones penalize the squared hinge of the wrong-direction
    increment.
    """
    window, preds, good = _window_predictions(model, params, window, h, t0)
    base, skipped = _harmonic_mse(window, preds, good)
    if not invariants or lam == 0.0:
        return base, skipped
    n_good = max(int(good.sum()), 1)
    total = None
    for q in invariants:
        q0 = np.asarray(q(window[:, 0]), dtype=float)
        prev = q0
        for pred in preds:
            qk = q(pred)
            if q.kind == "conserved":
                term = (qk - q0) ** 2
            elif q.kind == "nondecreasing":
                term = ad.relu(prev - qk) ** 2
            else:  # nonincreasing
                term = ad.relu(qk - prev) ** 2
            term = ad.where(good, term, 0.0 * term)
            total = term if total is None else total + term
            prev = qk
    mean_pen = ad.sum_(total) * (1.0 / (len(preds) * n_good))
    return base + lam * mean_pen, skipped


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamWState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamWState":
        return cls(m=np.zeros(n), v=np.zeros(n), step=0)


def clip_gradient(grad: np.ndarray, clip_norm: float) -> np.ndarray:
    norm = float(np.linalg.norm(grad))
    if norm > clip_norm:
        return grad * (clip_norm / norm)
    return grad


def adamw_step(values, grad, state: AdamWState, lr: float, weight_decay: float,
               beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> np.ndarray:
    state.step += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    mhat = state.m / (1.0 - beta1**state.step)
    vhat = state.v / (1.0 - beta2**state.step)
    return values - lr * (mhat / (np.sqrt(vhat) + eps) + weight_decay * values)


def cosine_lr(base_lr: float, epoch: int, total_epochs: int) -> float:
    return 0.5 * base_lr * (1.0 + np.cos(np.pi * epoch / total_epochs))


# ---------------------------------------------------------------------------
# training driver


@dataclass
class TrainResult:
    store: nets.ParamStore
    loss_curve: list
    logs: list
    optimizer: AdamWState
    next_epoch: int


def extract_windows(dataset: list[Trajectory], n_steps: int, stride: int = 1):
    """All contiguous length-(n_steps+1) slices of every trajectory."""
    windows, t0s = [], []
    h = None
    for traj in dataset:
        steps = np.diff(traj.times)
        h_traj = float(steps[0])
        if h is None:
            h = h_traj
        elif abs(h - h_traj) > 1e-12 * max(1.0, abs(h)):
            raise ConfigError("all trajectories must share one grid spacing")
        last = traj.states.shape[0] - n_steps - 1
        for start in range(0, last + 1, stride):
            windows.append(traj.states[start : start + n_steps + 1])
            t0s.append(traj.times[start])
    if not windows:
        raise ConfigError("dataset too short for the requested window length")
    return np.stack(windows), np.asarray(t0s), h


def make_loss_fn(model: FieldModel, cfg: TrainConfig, violation_fn=None, invariants=None):
    """Loss selector for the configured baseline kind."""
    if cfg.baseline == "penalty":
        if violation_fn is None:
            raise ConfigError("penalty baseline needs a violation function")
        return lambda p, w, h, t0: penalty_loss(model, p, w, h, cfg.lambda_penalty, violation_fn, t0)
    if cfg.baseline == "pinns":
        if not invariants:
            raise ConfigError("pinns baseline needs analytic invariants")
        return lambda p, w, h, t0: pinns_loss(model, p, w, h, invariants, cfg.lambda_pinns, t0)
    return lambda p, w, h, t0: multistep_loss(model, p, w, h, t0)


def train(model: FieldModel, dataset: list[Trajectory], cfg: TrainConfig,
          store: nets.ParamStore | None = None, violation_fn=None, invariants=None,
          optimizer: AdamWState | None = None, start_epoch: int = 0,
          stop_epoch: int | None = None, log_cb=None) -> TrainResult:
    """AdamW + cosine annealing over shuffled window batches.

    Deterministic given (cfg.seed, start state): per-epoch shuffles derive
    from (seed, epoch), so a run stopped at `stop_epoch` and resumed from its
    checkpoint bit-continues. The cosine schedule always spans cfg.epochs.
    """
    store = store if store is not None else model.new_params(cfg.seed)
    windows, t0s, h = extract_windows(dataset, cfg.n_steps, cfg.window_stride)
    loss_fn = make_loss_fn(model, cfg, violation_fn, invariants)
    opt = optimizer if optimizer is not None else AdamWState.zeros(store.size)
    losses, logs = [], []
    n_windows = windows.shape[0]
    last_epoch = cfg.epochs if stop_epoch is None else min(stop_epoch, cfg.epochs)
    for epoch in range(start_epoch, last_epoch):
        lr = cosine_lr(cfg.lr, epoch, cfg.epochs)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n_windows)
        epoch_loss = 0.0
        epoch_skipped = 0
        n_batches = 0
        for lo in range(0, n_windows, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            tape = ad.Tape()
            flat = tape.leaf(store.values)
            params = nets.BoundParams(store, flat)
            loss, skipped = loss_fn(params, windows[idx], h, t0s[idx])
            epoch_skipped += skipped
            loss_val = float(ad.value(loss))
            if not np.isfinite(loss_val):
                raise DivergenceError(f"NaN loss at epoch {epoch}, batch {n_batches}")
            grad = clip_gradient(ad.grad(loss, flat), cfg.clip_norm)
            store.values = adamw_step(store.values, grad, opt, lr, cfg.weight_decay)
            epoch_loss += loss_val
            n_batches += 1
        if epoch_skipped > 0.01 * n_windows:
            raise DivergenceError(
                f"{epoch_skipped}/{n_windows} windows diverged in epoch {epoch}"
            )
        if epoch_skipped:
            warnings.warn(f"skipped {epoch_skipped} diverged windows in epoch {epoch}")
        mean_loss = epoch_loss / max(n_batches, 1)
        losses.append(mean_loss)
        record = {
            "epoch": epoch,
            "lr": float(lr),
            "loss": mean_loss,
            "skipped": int(epoch_skipped),
        }
        if violation_fn is not None:
            probe = rollout_model(model, nets.bind(store), windows[0, 0], h, cfg.n_steps, t0=float(t0s[0]))
            viol = violation_fn(probe.states, probe.states[:1])
            record["violation"] = float(np.mean(np.asarray(ad.value(viol))))
        logs.append(record)
        if log_cb:
            log_cb(record)
    return TrainResult(store=store, loss_curve=losses, logs=logs, optimizer=opt, next_epoch=last_epoch)


def save_train_state(directory, result: TrainResult) -> None:
    directory = Path(directory)
    result.store.save(directory)
    np.savetxt(directory / "adamw_m.txt", result.optimizer.m)
    np.savetxt(directory / "adamw_v.txt", result.optimizer.v)
    with open(directory / "optim.json", "w") as fh:
        json.dump({"step": result.optimizer.step, "next_epoch": result.next_epoch}, fh)


def load_train_state(directory, store: nets.ParamStore) -> tuple[AdamWState, int]:
    directory = Path(directory)
    store.load_values(directory)
    state = AdamWState(
        m=np.loadtxt(directory / "adamw_m.txt", ndmin=1),
        v=np.loadtxt(directory / "adamw_v.txt", ndmin=1),
    )
    with open(directory / "optim.json") as fh:
        meta = json.load(fh)
    state.step = int(meta["step"])
    return state, int(meta["next_epoch"])
