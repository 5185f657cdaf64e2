"""Fixed-step classical RK4 integration, differentiable end to end.

The step and rollout functions accept plain numpy states (fast path) or taped
Tensors (training path); `field(params, x, t)` must follow the same rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import value
from .errors import DimensionError, DivergenceError

STAGE_NAMES = ("k1", "k2", "k3", "k4")


def rk4_step(field, params, x, t, h, check: bool = True):
    """One classical RK4 step of size h > 0."""
    if h <= 0:
        raise DimensionError(f"step size must be positive, got {h}")
    half = 0.5 * h
    k1 = field(params, x, t)
    k2 = field(params, x + half * k1, t + half)
    k3 = field(params, x + half * k2, t + half)
    k4 = field(params, x + h * k3, t + h)
    if check:
        for name, k in zip(STAGE_NAMES, (k1, k2, k3, k4)):
            if not np.all(np.isfinite(value(k))):
                raise DivergenceError("non-finite field value", where=f"stage {name}")
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass
class Trajectory:
    """A uniformly spaced sample path plus optional per-point diagnostics."""

    times: np.ndarray
    states: np.ndarray
    diagnostics: dict | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.times.ndim != 1 or self.states.shape[0] != self.times.shape[0]:
            raise DimensionError("trajectory times/states shape mismatch")
        if self.times.size > 1:
            steps = np.diff(self.times)
            if np.any(steps <= 0):
                raise DimensionError("trajectory times must be strictly increasing")
            if np.max(np.abs(steps - steps[0])) > 1e-9 * max(abs(steps[0]), 1e-30):
                raise DimensionError("trajectory grid must be uniformly spaced")

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def to_csv(self, path, state_names=None) -> None:
        names = list(state_names) if state_names else [f"x{i}" for i in range(self.dim)]
        if len(names) != self.dim:
            raise DimensionError("state name count does not match dimension")
        diag_names = list(self.diagnostics) if self.diagnostics else []
        with open(path, "w") as fh:
            fh.write(",".join(["t"] + names + diag_names) + "\n")
            for i, t in enumerate(self.times):
                row = [f"{t:.17g}"] + [f"{v:.17g}" for v in self.states[i]]
                row += [f"{self.diagnostics[d][i]:.17g}" for d in diag_names]
                fh.write(",".join(row) + "\n")

    @staticmethod
    def from_csv(path, dim: int | None = None) -> "Trajectory":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        ncols = len(header)
        dim = ncols - 1 if dim is None else dim
        diag = None
        if ncols > 1 + dim:
            diag = {header[1 + dim + j]: data[:, 1 + dim + j] for j in range(ncols - 1 - dim)}
        return Trajectory(times=data[:, 0], states=data[:, 1 : 1 + dim], diagnostics=diag)


def rollout(field, params, x0, h, n_steps: int, diag=None, t0: float = 0.0) -> Trajectory:
    """Repeated rk4_step from x0; optional diag(t, x) -> dict at every grid point."""
    if n_steps < 1:
        raise DimensionError("rollout needs n_steps >= 1")
    x = np.asarray(x0, dtype=float)
    times = t0 + h * np.arange(n_steps + 1)
    states = np.empty((n_steps + 1,) + x.shape)
    states[0] = x
    rows = [diag(times[0], x)] if diag else None
    for k in range(n_steps):
        try:
            x = rk4_step(field, params, x, times[k], h)
        except DivergenceError as err:
            raise DivergenceError(str(err), where=f"step {k}") from err
        states[k + 1] = x
        if diag:
            rows.append(diag(times[k + 1], x))
    diagnostics = None
    if rows:
        diagnostics = {k: np.array([r[k] for r in rows]) for k in rows[0]}
    return Trajectory(times=times, states=states, diagnostics=diagnostics)
