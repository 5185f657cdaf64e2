"""Common interface for compiled vector-field models.

A model evolves a working state s (which may differ from the physical state x
by an embedding such as the square-root map or a learned coordinate change)
and reports invariant residuals along trajectories.
"""

from __future__ import annotations

import numpy as np

from .. import nets
from ..integrator import Trajectory, rk4_step


class FieldModel:
    """Base class; subclasses define the working-coordinate field."""

    name = "field"
    state_dim: int

    def param_entries(self) -> list[tuple[str, tuple]]:
        raise NotImplementedError

    def init_params(self, store: nets.ParamStore, rng: np.random.Generator) -> None:
        raise NotImplementedError

    def new_params(self, seed: int) -> nets.ParamStore:
        store = nets.ParamStore(self.param_entries())
        self.init_params(store, np.random.default_rng(seed))
        return store

    # physical <-> working coordinates (identity unless overridden)
    def embed(self, params, x):
        return x

    def recover(self, params, s):
        return s

    def rhs(self, params, s, t):
        raise NotImplementedError

    def residual_reference(self, params, s0) -> dict:
        """Values captured at the start of a rollout for drift measurements."""
        return {}

    def residual_series(self, params, states, ref: dict) -> dict:
        """Named invariant diagnostics over a (T, n) working-state series."""
        return {}


def rollout_model(
    model: FieldModel,
    params: nets.BoundParams,
    x0: np.ndarray,
    h: float,
    n_steps: int,
    t0: float = 0.0,
    with_diagnostics: bool = False,
) -> Trajectory:
    """Integrate a model from a physical state, reporting physical states.

    Integration happens in the model's working coordinates; recovery and
    diagnostics run batched over the whole grid afterwards.
    """
    x0 = np.asarray(x0, dtype=float)
    s = np.asarray(nets.ad.value(model.embed(params, x0)), dtype=float)
    times = t0 + h * np.arange(n_steps + 1)
    work = np.empty((n_steps + 1, s.shape[-1]))
    work[0] = s
    for k in range(n_steps):
        s = rk4_step(lambda p, y, tt: model.rhs(p, y, tt), params, s, times[k], h)
        work[k + 1] = s
    states = np.asarray(nets.ad.value(model.recover(params, work)), dtype=float)
    diagnostics = None
    if with_diagnostics:
        ref = model.residual_reference(params, work[0])
        diagnostics = {
            k: np.asarray(v, dtype=float)
            for k, v in model.residual_series(params, work, ref).items()
        }
    return Trajectory(times=times, states=states, diagnostics=diagnostics)
