"""Evaluation metrics: windowed MSE splits, constraint violations, the
time-averaged deviation integral, and improvement factors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DimensionError
from .integrator import Trajectory


def mse_split(pred: Trajectory, truth: Trajectory, t_train_end: float) -> tuple[float, float, float]:
    """Mean squared state error over the training window (t <= t_train_end),
    the extrapolation window, and the full grid."""
    if pred.times.shape != truth.times.shape or not np.allclose(pred.times, truth.times):
        raise DimensionError("mse_split needs identical time grids")
    err = np.sum((pred.states - truth.states) ** 2, axis=-1)
    in_train = pred.times <= t_train_end
    mse = lambda mask: float(err[mask].mean()) if np.any(mask) else 0.0
    return mse(in_train), mse(~in_train), float(err.mean())


def deviation(q_pred, q_theory, grid) -> float:
    """(1/T) * integral |Q(t) - Q_theory(t)| dt by the trapezoid rule."""
    q_pred = np.asarray(q_pred, dtype=float)
    q_theory = np.asarray(q_theory, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if q_pred.shape != grid.shape or q_theory.shape not in (grid.shape, ()):
        raise DimensionError("deviation needs series on the evaluation grid")
    gap = np.abs(q_pred - q_theory)
    span = grid[-1] - grid[0]
    if span <= 0:
        raise DimensionError("deviation needs an increasing grid")
    return float(np.trapezoid(gap, grid) / span)


# ---------------------------------------------------------------------------
# per-kind constraint violations (differentiable where a penalty needs them)


def _violation_simplex(x, payload, ref):
    gap = ad.absval(ad.sum_(x, axis=-1) - 1.0)
    neg = ad.sum_(ad.relu(-x), axis=-1)
    return gap + neg


def _violation_cone(x, payload, ref):
    space = x[..., 1:]
    norm = ad.sqrt(ad.sum_(space * space, axis=-1) + 1e-300)
    return ad.relu(norm - x[..., 0])


def _violation_stoich(x, payload, ref):
    m = np.asarray(payload["M"], dtype=float)
    mc = ad.matvec(m, x)
    err = mc - ref
    return ad.sqrt(ad.sum_(err * err, axis=-1) + 1e-300)


def _violation_com(x, payload, ref):
    masses = np.asarray(payload["masses"], dtype=float)
    d = int(payload["space_dim"])
    n = masses.shape[0]
    lead = ad.value(x).shape[:-1]
    r = ad.reshape(x[..., : n * d], lead + (n, d))
    v = ad.reshape(x[..., n * d :], lead + (n, d))
    mcol = masses[:, None]
    ref_r, ref_v = ref
    pr = ad.sum_(mcol * r, axis=-2) - ref_r
    pv = ad.sum_(mcol * v, axis=-2) - ref_v
    return ad.sqrt(ad.sum_(pr * pr, axis=-1) + 1e-300) + ad.sqrt(
        ad.sum_(pv * pv, axis=-1) + 1e-300
    )


def _violation_psd(x, payload, ref):
    n = int(payload["matrix_dim"])
    ell = ad.tril_from_flat(np.asarray(ad.value(x), dtype=float), n)
    p = ell @ np.swapaxes(ell, -1, -2)
    eig = np.linalg.eigvalsh(p)
    return np.maximum(-eig[..., 0], 0.0)


_VIOLATIONS = {
    "simplex": _violation_simplex,
    "lorentz_cone": _violation_cone,
    "stoichiometric": _violation_stoich,
    "center_of_mass": _violation_com,
    "psd": _violation_psd,
}


def violation(kind: str, x, payload: dict | None = None, ref=None):
    """Nonnegative constraint residual of states x for one invariant kind.

    `payload` carries kind-specific constants (M, masses, dims); `ref` holds
    conserved reference values captured at the initial state where needed.
    """
    if kind not in _VIOLATIONS:
        raise ConfigError(f"no pointwise violation defined for kind {kind!r}")
    return _VIOLATIONS[kind](x, payload or {}, ref)


def violation_reference(kind: str, x0, payload: dict | None = None):
    """Reference values for violation() captured from the initial state."""
    payload = payload or {}
    x0 = np.asarray(x0, dtype=float)
    if kind == "stoichiometric":
        return x0 @ np.asarray(payload["M"], dtype=float).T
    if kind == "center_of_mass":
        masses = np.asarray(payload["masses"], dtype=float)
        d = int(payload["space_dim"])
        n = masses.shape[0]
        r = x0[..., : n * d].reshape(x0.shape[:-1] + (n, d))
        v = x0[..., n * d :].reshape(x0.shape[:-1] + (n, d))
        return (masses[:, None] * r).sum(-2), (masses[:, None] * v).sum(-2)
    return None


def improvement_factor(baseline_value: float, ours_value: float) -> float:
    """Ratio of the best baseline metric to ours (>1 means we improve)."""
    if ours_value < 0 or baseline_value < 0:
        raise ConfigError("improvement_factor needs nonnegative metrics")
    if ours_value == 0.0:
        return float("inf") if baseline_value > 0 else 1.0
    return baseline_value / ours_value


def format_improvement_factor(baseline_value: float, ours_value: float) -> str:
    """Table convention: a dash when ours is not the best value."""
    if ours_value > baseline_value:
        return "---"
    factor = improvement_factor(baseline_value, ours_value)
    return f"{factor:.3g}x"


# ---------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    """Metrics for one evaluation horizon."""

    mse_train: float
    mse_extrap: float
    mse_total: float
    violations: dict = field(default_factory=dict)
    deviations: dict = field(default_factory=dict)
    improvement_factors: dict = field(default_factory=dict)

    def __post_init__(self):
        for v in (self.mse_train, self.mse_extrap, self.mse_total):
            if v < 0:
                raise ConfigError("MSE values must be nonnegative")


def report_to_text(meta: dict, horizons: dict[int, EvalReport]) -> str:
    """Stable-ordered structured text for a set of horizon reports."""
    lines = [f"{k} = {meta[k]}" for k in sorted(meta)]
    for mult in sorted(horizons):
        rep = horizons[mult]
        lines.append(f"[horizon {mult}]")
        lines.append(f"mse_train = {rep.mse_train:.17g}")
        lines.append(f"mse_extrap = {rep.mse_extrap:.17g}")
        lines.append(f"mse_total = {rep.mse_total:.17g}")
        for name in sorted(rep.violations):
            lines.append(f"violation.{name} = {rep.violations[name]:.17g}")
        for name in sorted(rep.deviations):
            lines.append(f"deviation.{name} = {rep.deviations[name]:.17g}")
        for name in sorted(rep.improvement_factors):
            lines.append(f"improvement_factor.{name} = {rep.improvement_factors[name]:.17g}")
    return "\n".join(lines) + "\n"


def report_from_text(text: str) -> tuple[dict, dict[int, EvalReport]]:
    meta: dict = {}
    horizons: dict[int, EvalReport] = {}
    current: dict | None = None

    def close(cur):
        if cur is not None:
            mult = cur.pop("mult")
            horizons[mult] = EvalReport(**cur)

    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("[horizon "):
            close(current)
            current = {
                "mult": int(line[len("[horizon ") : -1]),
                "mse_train": 0.0,
                "mse_extrap": 0.0,
                "mse_total": 0.0,
                "violations": {},
                "deviations": {},
                "improvement_factors": {},
            }
            continue
        key, _, value = line.partition(" = ")
        if current is None:
            meta[key] = value
        elif key.startswith("violation."):
            current["violations"][key.split(".", 1)[1]] = float(value)
        elif key.startswith("deviation."):
            current["deviations"][key.split(".", 1)[1]] = float(value)
        elif key.startswith("improvement_factor."):
            current["improvement_factors"][key.split(".", 1)[1]] = float(value)
        else:
            current[key] = float(value)
    close(current)
    return meta, horizons
