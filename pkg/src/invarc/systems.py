"""Ground-truth dynamics, parameters, initial-condition samplers, and analytic
invariants for the eleven catalog systems used for data generation and
deviation metrics.

Paper-stated parameters are used where given; rate constants, payoff
matrices, and IC distributions the paper leaves open use the documented
defaults below (see also the dataset manifest, which records all of them).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DomainError
from .integrator import Trajectory, rollout


def _safe_log(x, floor: float = 1e-12):
    """log clamped below at `floor` (subgradient 0 past the clamp)."""
    return ad.log(ad.relu(x - floor) + floor)


@dataclass(frozen=True)
class InvariantQ:
    """One analytic invariant: conserved, nondecreasing, or nonincreasing."""

    name: str
    kind: str  # "conserved" | "nondecreasing" | "nonincreasing"
    fn: object  # callable state -> scalar (batched over leading axes)

    def __call__(self, x):
        return self.fn(x)


@dataclass(frozen=True)
class CatalogSystem:
    id: str
    dim: int
    state_names: tuple
    t_end: float
    points: int
    oversample: int
    params: dict
    rhs: object  # callable (x, t) -> xdot, plain numpy
    invariants: tuple
    ic_sampler: object  # callable rng -> x0
    desk_n_traj: int = 100

    @property
    def h(self) -> float:
        return self.t_end / (self.points - 1)

    def invariant(self, name: str) -> InvariantQ:
        for q in self.invariants:
            if q.name == name:
                return q
        raise ConfigError(f"system {self.id!r} has no invariant {name!r}")


# ---------------------------------------------------------------------------
# (i) SIR


def _sir_rhs(x, t, beta=0.4, gamma=0.1):
    s, i, _ = x[..., 0], x[..., 1], x[..., 2]
    return np.stack([-beta * s * i, beta * s * i - gamma * i, gamma * i], axis=-1)


def _sir_ic(rng):
    s0 = rng.uniform(0.7, 0.95)
    i0 = (1.0 - s0) * rng.uniform(0.3, 1.0)
    return np.array([s0, i0, 1.0 - s0 - i0])


SIR = CatalogSystem(
    id="sir",
    dim=3,
    state_names=("S", "I", "R"),
    t_end=10.0,
    points=200,
    oversample=16,
    params={"beta": 0.4, "gamma": 0.1},
    rhs=_sir_rhs,
    invariants=(InvariantQ("total", "conserved", lambda x: ad.sum_(x, axis=-1)),),
    ic_sampler=_sir_ic,
)


# ---------------------------------------------------------------------------
# (ii) six-species chemical network: CO, H2O, CO2, H2, O2, CH4

CHEM_M = np.array(
    [
        [1, 0, 1, 0, 0, 1],  # C
        [0, 2, 0, 2, 0, 4],  # H
        [1, 1, 2, 0, 2, 0],  # O
    ],
    dtype=float,
)

# reaction rows (species changes): water-gas shift, CO combustion, inactive SMR
CHEM_N = np.array(
    [
        [-1, -1, 1, 1, 0, 0],
        [-2, 0, 2, 0, -1, 0],
        [1, -1, 0, 3, 0, -1],
    ],
    dtype=float,
)


def _chem_rhs(x, t, kf=1.0, kr=0.5):
    co, h2o, co2, h2, o2, _ch4 = (x[..., i] for i in range(6))
    r1 = kf * co * h2o - kr * co2 * h2
    r2 = kf * co**2 * o2 - kr * co2**2
    r3 = np.zeros_like(r1)  # steam-methane reforming channel inactive
    rates = np.stack([r1, r2, r3], axis=-1)
    return rates @ CHEM_N


def _elem_invariants(m: np.ndarray, symbols) -> tuple:
    out = []
    for row, sym in zip(m, symbols):
        out.append(
            InvariantQ(
                f"elem_{sym}", "conserved",
                lambda x, r=row: ad.sum_(x * r, axis=-1),
            )
        )
    return tuple(out)


CHEMICAL = CatalogSystem(
    id="chemical",
    dim=6,
    state_names=("CO", "H2O", "CO2", "H2", "O2", "CH4"),
    t_end=10.0,
    points=200,
    oversample=16,
    params={"k_forward": 1.0, "k_reverse": 0.5, "smr_rate": 0.0},
    rhs=_chem_rhs,
    invariants=_elem_invariants(CHEM_M, ("C", "H", "O")),
    ic_sampler=lambda rng: rng.uniform(0.2, 1.0, 6),
)


# ---------------------------------------------------------------------------
# (iii) NOx network: NO, O2, NO2, N2O4, N2O3

NOX_M = np.array(
    [
        [1, 0, 1, 2, 2],  # N
        [1, 2, 2, 4, 3],  # O
    ],
    dtype=float,
)

NOX_N = np.array(
    [
        [-2, -1, 2, 0, 0],
        [0, 0, -2, 1, 0],
        [-1, 0, -1, 0, 1],
    ],
    dtype=float,
)


def _nox_rhs(x, t, k1=1.0, k2=1.0, k3=1.0, alpha=1.0, big_k2=1.0, kb=0.5):
    no, o2, no2, n2o4, n2o3 = (x[..., i] for i in range(5))
    if np.any(n2o3 < 0):
        raise DomainError("NOx kinetics need c_N2O3 >= 0 for the fractional power")
    r1 = k1 * no**2 * o2 / (1.0 + alpha * no2) ** 2 - kb * np.expm1(no2)
    r2 = k2 * no2**2 / (1.0 + (no2 / big_k2) ** 2) - kb * n2o4
    r3 = k3 * no * no2 - kb * n2o3**0.8
    rates = np.stack([r1, r2, r3], axis=-1)
    return rates @ NOX_N


NOX = CatalogSystem(
    id="nox",
    dim=5,
    state_names=("NO", "O2", "NO2", "N2O4", "N2O3"),
    t_end=10.0,
    points=200,
    oversample=16,
    params={"k1": 1.0, "k2": 1.0, "k3": 1.0, "alpha": 1.0, "K2": 1.0, "k_back": 0.5},
    rhs=_nox_rhs,
    invariants=_elem_invariants(NOX_M, ("N", "O")),
    ic_sampler=lambda rng: rng.uniform(0.3, 1.0, 5),
)


# ---------------------------------------------------------------------------
# (iv) Lorentz cone spiral (boundary spiral, t = |x|)


def _spiral_rhs(x, t, alpha=0.08, omega=0.4):
    tt, x1, x2 = x[..., 0], x[..., 1], x[..., 2]
    return np.stack(
        [alpha * tt, alpha * x1 - omega * x2, omega * x1 + alpha * x2], axis=-1
    )


def _spiral_ic(rng):
    r0 = rng.uniform(0.5, 1.5)
    th = rng.uniform(0.0, 2.0 * np.pi)
    return np.array([r0, r0 * np.cos(th), r0 * np.sin(th)])


def _cone_gap(x):
    space = x[..., 1:]
    return x[..., 0] - ad.sqrt(ad.sum_(space * space, axis=-1) + 1e-300)


LORENTZ_SPIRAL = CatalogSystem(
    id="lorentz_spiral",
    dim=3,
    state_names=("t", "x1", "x2"),
    t_end=10.0,
    points=500,
    oversample=8,
    params={"alpha": 0.08, "omega": 0.4},
    rhs=_spiral_rhs,
    invariants=(InvariantQ("cone_gap", "conserved", _cone_gap),),
    ic_sampler=_spiral_ic,
)


# ---------------------------------------------------------------------------
# (v) coupled radial-angular dynamics on the cone boundary


def _radial_angular_rhs(x, t, alpha=1.0, big_k=5.0, beta=0.8, omega=1.0, gamma=0.5, n_ang=3):
    x1, x2 = x[..., 1], x[..., 2]
    r = np.hypot(x1, x2)
    if np.any(r <= 1e-12):
        raise DomainError("radial-angular dynamics undefined at r = 0")
    theta = np.arctan2(x2, x1)
    rdot = alpha * r * (1.0 - r / big_k) + beta * r * np.cos(n_ang * theta)
    thdot = omega + gamma / r**2
    x1dot = rdot * np.cos(theta) - r * np.sin(theta) * thdot
    x2dot = rdot * np.sin(theta) + r * np.cos(theta) * thdot
    return np.stack([rdot, x1dot, x2dot], axis=-1)


def _radial_angular_ic(rng):
    r0 = rng.uniform(1.0, 3.0)
    th = rng.uniform(0.0, 2.0 * np.pi)
    return np.array([r0, r0 * np.cos(th), r0 * np.sin(th)])


RADIAL_ANGULAR = CatalogSystem(
    id="radial_angular",
    dim=3,
    state_names=("t", "x1", "x2"),
    t_end=10.0,
    points=500,
    oversample=8,
    params={"alpha": 1.0, "K": 5.0, "beta": 0.8, "omega": 1.0, "gamma": 0.5, "n_ang": 3},
    rhs=_radial_angular_rhs,
    invariants=(InvariantQ("cone_gap", "conserved", _cone_gap),),
    ic_sampler=_radial_angular_ic,
)


# ---------------------------------------------------------------------------
# (vi) replicator-mutator, N = 5

REPL_N = 5
REPL_MU = 0.15
REPL_SPEED = 10.0
# circulant payoff from first row (0, 1, -1, -1, 1); mutation mixes uniformly
REPL_B = np.array([[[0, 1, -1, -1, 1][(j - i) % 5] for j in range(5)] for i in range(5)], dtype=float)
REPL_Q = (1.0 - REPL_MU) * np.eye(5) + (REPL_MU / 4.0) * (np.ones((5, 5)) - np.eye(5))


def _replicator_rhs(x, t):
    fitness = x @ REPL_B.T  # (Bx)_j per row
    y = x * fitness
    mean_fit = np.sum(x * fitness, axis=-1, keepdims=True)
    return REPL_SPEED * (y @ REPL_Q - mean_fit * x)


REPLICATOR = CatalogSystem(
    id="replicator",
    dim=5,
    state_names=tuple(f"x{i+1}" for i in range(5)),
    t_end=10.0,
    points=200,
    oversample=32,
    params={"mu": REPL_MU, "speed": REPL_SPEED, "payoff_first_row": [0, 1, -1, -1, 1]},
    rhs=_replicator_rhs,
    invariants=(InvariantQ("total", "conserved", lambda x: ad.sum_(x, axis=-1)),),
    ic_sampler=lambda rng: rng.dirichlet(np.ones(5)),
)


# ---------------------------------------------------------------------------
# (vii) Lotka-Volterra

LV_ALPHA, LV_BETA, LV_DELTA, LV_GAMMA = 1.0, 0.5, 0.5, 0.5


def _lv_rhs(x, t):
    xx, yy = x[..., 0], x[..., 1]
    return np.stack(
        [LV_ALPHA * xx - LV_BETA * xx * yy, LV_DELTA * xx * yy - LV_GAMMA * yy], axis=-1
    )


def _lv_hamiltonian(x):
    xx = x[..., 0]
    yy = x[..., 1]
    return LV_DELTA * xx - LV_GAMMA * _safe_log(xx) + LV_BETA * yy - LV_ALPHA * _safe_log(yy)


LOTKA_VOLTERRA = CatalogSystem(
    id="lotka_volterra",
    dim=2,
    state_names=("x", "y"),
    t_end=30.0,
    points=1000,
    oversample=8,
    params={"alpha": LV_ALPHA, "beta": LV_BETA, "delta": LV_DELTA, "gamma_lv": LV_GAMMA},
    rhs=_lv_rhs,
    invariants=(InvariantQ("energy", "conserved", _lv_hamiltonian),),
    ic_sampler=lambda rng: rng.uniform(1.2, 2.5, 2),
    desk_n_traj=1,
)


# ---------------------------------------------------------------------------
# (viii) damped harmonic oscillator

DHO_GAMMA, DHO_OMEGA = 0.15, 1.0


def _damped_rhs(x, t):
    q, p = x[..., 0], x[..., 1]
    return np.stack([p, -DHO_OMEGA**2 * q - DHO_GAMMA * p], axis=-1)


def _osc_ic(rng):
    amp = rng.uniform(0.8, 1.6)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    return np.array([amp * np.cos(phase), amp * np.sin(phase)])


DAMPED_OSC = CatalogSystem(
    id="damped_oscillator",
    dim=2,
    state_names=("q", "p"),
    t_end=30.0,
    points=1000,
    oversample=8,
    params={"gamma": DHO_GAMMA, "omega": DHO_OMEGA},
    rhs=_damped_rhs,
    invariants=(
        InvariantQ(
            "energy", "nonincreasing",
            lambda x: 0.5 * (x[..., 1] * x[..., 1] + DHO_OMEGA**2 * x[..., 0] * x[..., 0]),
        ),
    ),
    ic_sampler=_osc_ic,
    desk_n_traj=1,
)


# ---------------------------------------------------------------------------
# (ix) thermomechanical system

TM_GAMMA, TM_OMEGA, TM_CV = 0.15, 1.0, 1.0


def _thermo_rhs(x, t):
    q, p = x[..., 0], x[..., 1]
    return np.stack(
        [p, -TM_OMEGA**2 * q - TM_GAMMA * p, TM_GAMMA * p * p / TM_CV], axis=-1
    )


def _thermo_ic(rng):
    q, p = _osc_ic(rng)
    return np.array([q, p, rng.uniform(0.5, 1.0)])


THERMOMECH = CatalogSystem(
    id="thermomechanical",
    dim=3,
    state_names=("q", "p", "theta"),
    t_end=30.0,
    points=1000,
    oversample=8,
    params={"gamma": TM_GAMMA, "omega": TM_OMEGA, "C_v": TM_CV},
    rhs=_thermo_rhs,
    invariants=(
        InvariantQ(
            "energy", "conserved",
            lambda x: 0.5 * x[..., 1] * x[..., 1]
            + 0.5 * TM_OMEGA**2 * x[..., 0] * x[..., 0]
            + TM_CV * x[..., 2],
        ),
        InvariantQ("entropy", "nondecreasing", lambda x: TM_CV * _safe_log(x[..., 2])),
    ),
    ic_sampler=_thermo_ic,
    desk_n_traj=1,
)


# ---------------------------------------------------------------------------
# (x) extended pendulum (state-dependent Poisson structure)


def _pendulum_grad_k(u, v, r):
    return np.stack(
        [u + r - 3.0 * u * u - v * v, np.sin(v) - 2.0 * u * v, u + 0.0 * r], axis=-1
    )


def _pendulum_rhs(x, t):
    u, v, r = x[..., 0], x[..., 1], x[..., 2]
    gk = _pendulum_grad_k(u, v, r)
    ku, kv, kr = gk[..., 0], gk[..., 1], gk[..., 2]
    return np.stack(
        [
            -kv - 2.0 * v * kr,
            ku + 2.0 * u * kr,
            2.0 * v * ku - 2.0 * u * kv,
        ],
        axis=-1,
    )


def _pendulum_energy(x):
    u = x[..., 0]
    v = x[..., 1]
    r = x[..., 2]
    return 0.5 * u * u - ad.cos(v) + u * r - u * u * u - u * v * v


def _pendulum_ic(rng):
    u = rng.uniform(-1.0, 1.0)
    v = rng.uniform(-1.5, 1.5)
    c = rng.uniform(-0.3, 0.3)
    return np.array([u, v, u * u + v * v + c])


EXT_PENDULUM = CatalogSystem(
    id="extended_pendulum",
    dim=3,
    state_names=("u", "v", "r"),
    t_end=30.0,
    points=1000,
    oversample=8,
    params={},
    rhs=_pendulum_rhs,
    invariants=(
        InvariantQ("energy", "conserved", _pendulum_energy),
        InvariantQ(
            "casimir", "conserved",
            lambda x: x[..., 2] - x[..., 0] * x[..., 0] - x[..., 1] * x[..., 1],
        ),
    ),
    ic_sampler=_pendulum_ic,
    desk_n_traj=1,
)


# ---------------------------------------------------------------------------
# (xi) equal-mass two-body problem


def _twobody_rhs(x, t):
    r1 = x[..., (0, 2)]
    r2 = x[..., (1, 3)]
    dvec = r2 - r1
    d3 = np.maximum(np.linalg.norm(dvec, axis=-1, keepdims=True), 1e-12) ** 3
    a1 = dvec / d3
    out = np.empty_like(x)
    out[..., 0] = x[..., 4]
    out[..., 1] = x[..., 5]
    out[..., 2] = x[..., 6]
    out[..., 3] = x[..., 7]
    out[..., 4] = a1[..., 0]
    out[..., 5] = -a1[..., 0]
    out[..., 6] = a1[..., 1]
    out[..., 7] = -a1[..., 1]
    return out


def _twobody_energy(x):
    v2 = ad.sum_(x[..., 4:] * x[..., 4:], axis=-1)
    dx = x[..., 1] - x[..., 0]
    dy = x[..., 3] - x[..., 2]
    d = ad.sqrt(dx * dx + dy * dy + 1e-300)
    return 0.5 * v2 - 1.0 / d


def _twobody_angmom(x):
    return ad.sum_(x[..., 0:2] * x[..., 6:8] - x[..., 2:4] * x[..., 4:6], axis=-1)


def _twobody_ic(rng):
    d = rng.uniform(1.0, 1.4)
    th = rng.uniform(0.0, 2.0 * np.pi)
    ux, uy = np.cos(th), np.sin(th)
    # perpendicular direction; near-circular relative orbit, equal masses
    px, py = -uy, ux
    vrel = np.sqrt(2.0 / d) * rng.uniform(0.95, 1.05)
    x1, y1 = -0.5 * d * ux, -0.5 * d * uy
    x2, y2 = 0.5 * d * ux, 0.5 * d * uy
    vx1, vy1 = -0.5 * vrel * px, -0.5 * vrel * py
    vx2, vy2 = 0.5 * vrel * px, 0.5 * vrel * py
    return np.array([x1, x2, y1, y2, vx1, vx2, vy1, vy2])


TWO_BODY = CatalogSystem(
    id="two_body",
    dim=8,
    state_names=("x1", "x2", "y1", "y2", "vx1", "vx2", "vy1", "vy2"),
    t_end=20.0,
    points=200,
    oversample=64,
    params={"G": 1.0, "m1": 1.0, "m2": 1.0},
    rhs=_twobody_rhs,
    invariants=(
        InvariantQ("energy", "conserved", _twobody_energy),
        InvariantQ("px", "conserved", lambda x: x[..., 4] + x[..., 5]),
        InvariantQ("py", "conserved", lambda x: x[..., 6] + x[..., 7]),
        InvariantQ("angmom", "conserved", _twobody_angmom),
    ),
    ic_sampler=_twobody_ic,
    desk_n_traj=40,
)


SYSTEMS: dict[str, CatalogSystem] = {
    s.id: s
    for s in (
        SIR, CHEMICAL, NOX, LORENTZ_SPIRAL, RADIAL_ANGULAR, REPLICATOR,
        LOTKA_VOLTERRA, DAMPED_OSC, THERMOMECH, EXT_PENDULUM, TWO_BODY,
    )
}


def get_system(system_id: str) -> CatalogSystem:
    try:
        return SYSTEMS[system_id]
    except KeyError:
        raise ConfigError(f"unknown catalog system {system_id!r}") from None


def eval_true_rhs(system_id: str, x, t: float = 0.0) -> np.ndarray:
    return get_system(system_id).rhs(np.asarray(x, dtype=float), t)


def analytic_invariant(system_id: str, name: str, x):
    return get_system(system_id).invariant(name)(np.asarray(x, dtype=float))


def sample_ic(system_id: str, rng: np.random.Generator) -> np.ndarray:
    return get_system(system_id).ic_sampler(rng)


def true_trajectory(system_id: str, x0, t_end: float, points: int, oversample: int | None = None) -> Trajectory:
    """Fine-step RK4 reference subsampled onto the data grid."""
    sys = get_system(system_id)
    oversample = oversample or sys.oversample
    n_data = points - 1
    h_fine = t_end / (n_data * oversample)
    fine = rollout(lambda p, x, t: sys.rhs(x, t), None, np.asarray(x0, dtype=float), h_fine, n_data * oversample)
    return Trajectory(times=fine.times[::oversample], states=fine.states[::oversample])


def generate_dataset(
    system_id: str,
    n_traj: int,
    t_end: float | None = None,
    points: int | None = None,
    seed: int = 0,
    quality_gate: float = 1e-8,
    threads: int = 1,
) -> tuple[list[Trajectory], dict]:
    """Seeded trajectories on the data grid plus a reproducibility manifest.

    Every conserved invariant is checked to drift less than `quality_gate`
    along each generated trajectory. Results are deterministic for any
    thread count (per-trajectory derived seeds, ordered collection).
    """
    sys = get_system(system_id)
    t_end = sys.t_end if t_end is None else t_end
    points = sys.points if points is None else points
    seeds = np.random.SeedSequence(seed).spawn(n_traj)

    def one(s):
        rng = np.random.default_rng(s)
        return true_trajectory(system_id, sys.ic_sampler(rng), t_end, points)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            trajectories = list(pool.map(one, seeds))
    else:
        trajectories = [one(s) for s in seeds]
    for traj in trajectories:
        for q in sys.invariants:
            if q.kind != "conserved":
                continue
            series = np.asarray(q(traj.states))
            drift = np.max(np.abs(series - series[0]))
            if drift > quality_gate:
                raise ConfigError(
                    f"data-quality gate: {system_id}.{q.name} drifts {drift:.3e} > {quality_gate:.0e}"
                )
    manifest = {
        "system": system_id,
        "seed": seed,
        "n_traj": n_traj,
        "t_end": t_end,
        "points": points,
        "oversample": sys.oversample,
        "params": sys.params,
        "state_names": list(sys.state_names),
    }
    return trajectories, manifest


def save_dataset(directory, trajectories: list[Trajectory], manifest: dict) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    names = manifest["state_names"]
    for i, traj in enumerate(trajectories):
        traj.to_csv(directory / f"traj_{i:04d}.csv", state_names=names)


def load_dataset(directory) -> tuple[list[Trajectory], dict]:
    directory = Path(directory)
    with open(directory / "manifest.json") as fh:
        manifest = json.load(fh)
    dim = len(manifest["state_names"])
    trajectories = [
        Trajectory.from_csv(p, dim=dim) for p in sorted(directory.glob("traj_*.csv"))
    ]
    return trajectories, manifest
