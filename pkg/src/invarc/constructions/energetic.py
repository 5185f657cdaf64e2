"""Structure-preserving fields for the energetic/thermodynamic family:
latent canonical (Poisson), port-Hamiltonian, GENERIC, and first-integral
manifold projection.

Latent-family models integrate in latent coordinates z = g(u) = (q, p, c) and
map back through the inverse coordinate net, so the canonical structure of
the latent field is never distorted by Jacobian inversions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from .. import nets
from ..errors import ConditioningError, ConfigError
from .base import FieldModel


def _j0_apply(g, d: int, k: int):
    """Apply the canonical matrix: (gq, gp, gc) -> (gp, -gq, 0)."""
    gq = g[..., :d]
    gp = g[..., d : 2 * d]
    parts = [gp, -gq]
    if k > 0:
        parts.append(0.0 * g[..., 2 * d :])
    return ad.concat(parts, axis=-1)


class PoissonModel(FieldModel):
    """dz/dt = J0 grad K(z) in latent coordinates learned by a coupling INN."""

    name = "hamiltonian"
    kind = "hamiltonian"

    def __init__(self, d: int, k: int, inn: nets.InnConfig | None = None, k_net: nets.MlpConfig | None = None):
        if d < 1 or k < 0:
            raise ConfigError("need d >= 1 canonical pairs and k >= 0 Casimir coordinates")
        self.d, self.k = d, k
        n = 2 * d + k
        self.state_dim = n
        self.inn = inn if inn is not None else nets.InnConfig(dim=n)
        if self.inn.dim != n:
            raise ConfigError("INN dimension must match the state dimension")
        self.k_net = k_net or nets.MlpConfig(n, 1)

    def param_entries(self):
        return nets.inn_param_entries("inn", self.inn) + nets.mlp_param_entries("k_net", self.k_net)

    def init_params(self, store, rng):
        nets.init_inn(store, "inn", self.inn, rng)
        nets.init_mlp(store, "k_net", self.k_net, rng)

    def embed(self, params, x):
        return nets.inn_forward(self.inn, params, "inn", x)

    def recover(self, params, s):
        return nets.inn_inverse(self.inn, params, "inn", s)

    def energy_and_grad(self, params, z):
        return nets.mlp_value_and_input_grad(self.k_net, params, "k_net", z)

    def rhs(self, params, s, t):
        _, gk = self.energy_and_grad(params, s)
        return _j0_apply(gk, self.d, self.k)

    def energy_series(self, params, states):
        return np.asarray(nets.mlp_forward(self.k_net, params, "k_net", np.asarray(states)))[..., 0]

    def residual_reference(self, params, s0):
        ref = {"K": float(self.energy_series(params, s0[None])[0])}
        if self.k:
            ref["c"] = np.asarray(s0)[..., 2 * self.d :].copy()
        return ref

    def residual_series(self, params, states, ref):
        out = {"K_drift": np.abs(self.energy_series(params, states) - ref["K"])}
        if self.k:
            out["c_drift"] = np.max(np.abs(np.asarray(states)[..., 2 * self.d :] - ref["c"]), axis=-1)
        return out


def poisson_latent_field(model: PoissonModel, params, z):
    return model.rhs(params, z, 0.0)


def poisson_physical_field(model: PoissonModel, params, u, cond_limit: float = 1e8):
    """Induced physical field (dg/du)^{-1} J0 grad K(g(u)) at a single state."""
    u = np.asarray(u, dtype=float)
    jac = ad.jacobian(lambda ut: nets.inn_forward(model.inn, params, "inn", ut), u)
    if np.linalg.cond(jac) > cond_limit:
        raise ConditioningError("coordinate-map Jacobian is numerically singular")
    z = ad.value(model.embed(params, u))
    return np.linalg.solve(jac, np.asarray(model.rhs(params, z, 0.0)))


def induced_poisson_matrix(model: PoissonModel, params, u):
    """J(u) = (dz/du)^{-1} J0 (dz/du)^{-T}; skew by the transformation law."""
    u = np.asarray(u, dtype=float)
    jac = ad.jacobian(lambda ut: nets.inn_forward(model.inn, params, "inn", ut), u)
    inv = np.linalg.inv(jac)
    d, k = model.d, model.k
    j0 = np.zeros((model.state_dim, model.state_dim))
    j0[:d, d : 2 * d] = np.eye(d)
    j0[d : 2 * d, :d] = -np.eye(d)
    return inv @ j0 @ inv.T


class PortHamiltonianModel(PoissonModel):
    """dz/dt = [J0 - L(z)L(z)^T] grad K(z); energy non-increasing pointwise."""

    name = "port_hamiltonian"
    kind = "port_hamiltonian"

    def __init__(self, d, k, inn=None, k_net=None, l_net: nets.MlpConfig | None = None):
        super().__init__(d, k, inn, k_net)
        n = self.state_dim
        self.l_net = l_net or nets.MlpConfig(n, nets.tril_dim(n), init_sigma=0.01)

    def param_entries(self):
        return super().param_entries() + nets.mlp_param_entries("l_net", self.l_net)

    def init_params(self, store, rng):
        super().init_params(store, rng)
        nets.init_mlp(store, "l_net", self.l_net, rng)

    def dissipation_factor(self, params, z):
        return nets.tril_factor_forward(self.l_net, params, "l_net", z, self.state_dim)

    def rhs(self, params, s, t):
        _, gk = self.energy_and_grad(params, s)
        ell = self.dissipation_factor(params, s)
        w = ad.matvec(ad.transpose_last2(ell), gk)
        return _j0_apply(gk, self.d, self.k) - ad.matvec(ell, w)

    def residual_series(self, params, states, ref):
        return {"K": self.energy_series(params, states)}

    def residual_reference(self, params, s0):
        return {"K": float(self.energy_series(params, s0[None])[0])}


def ph_latent_field(model: PortHamiltonianModel, params, z):
    return model.rhs(params, z, 0.0)


class GenericModel(PoissonModel):
    """dz/dt = J0 grad K + M_z grad S with Casimir-dependent entropy and
    dissipation projected onto constant-energy surfaces."""

    name = "generic"
    kind = "generic"

    def __init__(self, d, k, inn=None, k_net=None, s_net: nets.MlpConfig | None = None,
                 m_net: nets.MlpConfig | None = None, eps_pk: float = 1e-8):
        if k < 1:
            raise ConfigError("GENERIC needs at least one Casimir coordinate for the entropy")
        super().__init__(d, k, inn, k_net)
        n = self.state_dim
        if eps_pk <= 0:
            raise ConfigError("eps_pk must be positive")
        self.eps_pk = eps_pk
        self.s_net = s_net or nets.MlpConfig(k, 1)
        self.m_net = m_net or nets.MlpConfig(n, nets.tril_dim(n), init_sigma=0.01)

    def param_entries(self):
        return (
            super().param_entries()
            + nets.mlp_param_entries("s_net", self.s_net)
            + nets.mlp_param_entries("m_net", self.m_net)
        )

    def init_params(self, store, rng):
        super().init_params(store, rng)
        nets.init_mlp(store, "s_net", self.s_net, rng)
        nets.init_mlp(store, "m_net", self.m_net, rng)

    def entropy_and_grad(self, params, z):
        """S(z) = S~(c); the gradient is zero on the (q, p) block by construction."""
        c = z[..., 2 * self.d :]
        sval, gc = nets.mlp_value_and_input_grad(self.s_net, params, "s_net", c)
        zero_qp = 0.0 * z[..., : 2 * self.d]
        return sval, ad.concat([zero_qp, gc], axis=-1)

    def _project_k(self, gk, w):
        """Apply P_K = I - gK gK^T / (|gK|^2 + eps) to w."""
        denom = ad.sum_(gk * gk, axis=-1, keepdims=True) + self.eps_pk
        coef = ad.sum_(gk * w, axis=-1, keepdims=True) / denom
        return w - gk * coef

    def rhs(self, params, s, t):
        _, gk = self.energy_and_grad(params, s)
        _, gs = self.entropy_and_grad(params, s)
        ell = nets.tril_factor_forward(self.m_net, params, "m_net", s, self.state_dim)
        v = self._project_k(gk, gs)
        v = ad.matvec(ell, ad.matvec(ad.transpose_last2(ell), v))
        v = self._project_k(gk, v)
        return _j0_apply(gk, self.d, self.k) + v

    def residual_reference(self, params, s0):
        kval, _ = self.energy_and_grad(params, np.asarray(s0)[None])
        return {"K": float(np.asarray(kval)[0])}

    def residual_series(self, params, states, ref):
        z = np.asarray(states)
        kval, gk = self.energy_and_grad(params, z)
        sval, gs = self.entropy_and_grad(params, z)
        gk, gs = np.asarray(gk), np.asarray(gs)
        deg_j = np.max(np.abs(np.asarray(_j0_apply(gs, self.d, self.k))), axis=-1)
        ell = np.asarray(nets.tril_factor_forward(self.m_net, params, "m_net", z, self.state_dim))

        def m_hat(v):
            w = np.einsum("...ji,...j->...i", ell, v)
            return np.einsum("...ij,...j->...i", ell, w)

        v = np.asarray(self._project_k(gk, gk))
        deg_m = np.max(np.abs(np.asarray(self._project_k(gk, m_hat(v)))), axis=-1)
        pgs = np.asarray(self._project_k(gk, gs))
        prod = np.sum(np.einsum("...ji,...j->...i", ell, pgs) ** 2, axis=-1)
        return {
            "K_drift": np.abs(np.asarray(kval) - ref["K"]),
            "S": np.asarray(sval),
            "deg_J0_gradS": deg_j,
            "deg_Mz_gradK": deg_m,
            "entropy_production": prod,
        }


def generic_latent_field(model: GenericModel, params, z):
    return model.rhs(params, z, 0.0)


# ---------------------------------------------------------------------------
# first integrals


@dataclass(frozen=True)
class KnownIntegral:
    """Analytic first integral supplied to the projection as a gradient row."""

    name: str
    dim: int
    grad: object  # constant array or callable state -> row
    value: object | None = None  # optional callable state -> scalar

    def grad_rows(self, s):
        if callable(self.grad):
            return self.grad(s)
        sv = ad.value(s)
        return np.broadcast_to(np.asarray(self.grad, dtype=float), sv.shape).copy()


def _twobody_angmom_grad(s):
    x = s[..., 0:2]
    y = s[..., 2:4]
    vx = s[..., 4:6]
    vy = s[..., 6:8]
    return ad.concat([vy, -vx, -y, x], axis=-1)


def _twobody_angmom_value(s):
    return ad.sum_(s[..., 0:2] * s[..., 6:8] - s[..., 2:4] * s[..., 4:6], axis=-1)


KNOWN_GRADIENTS: dict[str, KnownIntegral] = {
    "px": KnownIntegral(
        "px", 8, np.array([0, 0, 0, 0, 1, 1, 0, 0], dtype=float),
        value=lambda s: s[..., 4] + s[..., 5],
    ),
    "py": KnownIntegral(
        "py", 8, np.array([0, 0, 0, 0, 0, 0, 1, 1], dtype=float),
        value=lambda s: s[..., 6] + s[..., 7],
    ),
    "angmom": KnownIntegral("angmom", 8, _twobody_angmom_grad, value=_twobody_angmom_value),
}


class FirstIntegralModel(FieldModel):
    """du/dt = (I - P(u)) f(u) with P the tangent projector of all constraint
    rows (known analytic gradients plus gradients of learned scalar nets)."""

    name = "first_integral"
    kind = "first_integral"

    def __init__(self, n: int, base_net: nets.MlpConfig | None = None,
                 n_learned: int = 0, learned_net: nets.MlpConfig | None = None,
                 known: list[KnownIntegral] | None = None, pinv_tol: float = 1e-10):
        self.state_dim = n
        self.base_net = base_net or nets.MlpConfig(n, n)
        self.n_learned = n_learned
        self.learned_net = learned_net or nets.MlpConfig(n, 1)
        self.known = list(known or [])
        for entry in self.known:
            if entry.dim != n:
                raise ConfigError(f"known integral {entry.name!r} has dim {entry.dim}, state has {n}")
        if self.n_learned + len(self.known) == 0:
            raise ConfigError("first_integral needs at least one constraint")
        self.pinv_tol = pinv_tol
        self._warned_zero_row = False

    def param_entries(self):
        entries = nets.mlp_param_entries("base", self.base_net)
        for i in range(self.n_learned):
            entries.extend(nets.mlp_param_entries(f"v{i}", self.learned_net))
        return entries

    def init_params(self, store, rng):
        nets.init_mlp(store, "base", self.base_net, rng)
        for i in range(self.n_learned):
            nets.init_mlp(store, f"v{i}", self.learned_net, rng)

    def constraint_rows(self, params, s):
        """Stacked gradient rows (..., m, n) of every constraint."""
        lead = ad.value(s).shape[:-1]
        rows = []
        for entry in self.known:
            row = entry.grad_rows(s)
            rows.append(ad.reshape(row, lead + (1, self.state_dim)))
        for i in range(self.n_learned):
            _, g = nets.mlp_value_and_input_grad(self.learned_net, params, f"v{i}", s)
            rows.append(ad.reshape(g, lead + (1, self.state_dim)))
        stacked = ad.concat(rows, axis=-2) if len(rows) > 1 else rows[0]
        norms = np.linalg.norm(ad.value(stacked), axis=-1)
        if not self._warned_zero_row and np.any(norms == 0.0):
            warnings.warn("constraint gradient row is exactly zero; dropped by the pseudo-inverse")
            self._warned_zero_row = True
        return stacked

    def integral_values(self, params, s):
        """Named values of every constraint that has an evaluable form."""
        out = {}
        for entry in self.known:
            if entry.value is not None:
                out[entry.name] = entry.value(s)
        for i in range(self.n_learned):
            val, _ = nets.mlp_value_and_input_grad(self.learned_net, params, f"v{i}", s)
            out[f"v{i}"] = val
        return out

    def rhs(self, params, s, t):
        f = nets.mlp_forward(self.base_net, params, "base", s)
        rows = self.constraint_rows(params, s)
        gram = ad.matmul(rows, ad.transpose_last2(rows))
        ginv = ad.pinv_psym(gram, tol=self.pinv_tol)
        y = ad.matvec(ginv, ad.matvec(rows, f))
        return f - ad.matvec(ad.transpose_last2(rows), y)

    def residual_reference(self, params, s0):
        vals = self.integral_values(params, np.asarray(s0)[None])
        return {k: float(np.asarray(v)[0]) for k, v in vals.items()}

    def residual_series(self, params, states, ref):
        vals = self.integral_values(params, np.asarray(states))
        return {f"{k}_drift": np.abs(np.asarray(v) - ref[k]) for k, v in vals.items()}


def first_integral_field(model: FirstIntegralModel, params, u):
    return model.rhs(params, u, 0.0)
