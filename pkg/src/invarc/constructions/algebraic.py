"""Structure-preserving fields for the geometric/algebraic invariant family:
simplex, Lorentz cone, PSD cone, center of mass, and stoichiometry.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from .. import linalg, nets
from ..errors import ConfigError, ContractError, ViabilityError
from .base import FieldModel

# ---------------------------------------------------------------------------
# simplex


def simplex_embed(x, sum_tol: float = 1e-3, neg_tol: float = 1e-9, eps: float = 1e-12):
    """Map simplex coordinates to unit-sphere amplitudes u_i = sqrt(max(x_i, eps))."""
    x = np.asarray(x, dtype=float)
    sums = x.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > sum_tol):
        raise ContractError(f"simplex coordinates sum to {sums} (tolerance {sum_tol})")
    if np.any(x < -neg_tol):
        raise ContractError("negative simplex coordinate beyond tolerance")
    u = np.sqrt(np.maximum(x, eps))
    return u / np.linalg.norm(u, axis=-1, keepdims=True)


class SimplexField(FieldModel):
    """du/dt = A(u) u with A the skew part of a matrix-valued net output.

    The physical state x = u^2 then keeps sum(x) = 1 and x_i >= 0 along the flow.
    """

    name = "simplex"
    kind = "simplex"

    def __init__(self, n: int, net: nets.MlpConfig | None = None):
        self.state_dim = n
        self.net = net or nets.MlpConfig(n, n * n)
        if self.net.in_dim != n or self.net.out_dim != n * n:
            raise ConfigError("simplex net must map n -> n*n")

    def param_entries(self):
        return nets.mlp_param_entries("net", self.net)

    def init_params(self, store, rng):
        nets.init_mlp(store, "net", self.net, rng)

    def embed(self, params, x):
        return simplex_embed(ad.value(x))

    def recover(self, params, s):
        return s * s

    def rhs(self, params, s, t):
        n = self.state_dim
        flat = nets.mlp_forward(self.net, params, "net", s)
        lead = ad.value(flat).shape[:-1]
        f = ad.reshape(flat, lead + (n, n))
        a = (f - ad.transpose_last2(f)) * 0.5
        return ad.matvec(a, s)

    def residual_series(self, params, states, ref):
        x = np.asarray(states) ** 2
        return {
            "sum_err": np.abs(x.sum(-1) - 1.0),
            "min_coord": x.min(-1),
            "norm_err": np.abs(np.linalg.norm(np.asarray(states), axis=-1) - 1.0),
        }


def simplex_field_eval(model: SimplexField, params, u):
    """Evaluate the sphere-tangent field at u (thin wrapper over rhs)."""
    return model.rhs(params, u, 0.0)


# ---------------------------------------------------------------------------
# Lorentz cone

VIABILITY_SLACK = 1e-3  # relative; real escape, not integrator stage jitter
TANGENCY_SHARPNESS = 40.0  # kappa in psi(g) = softplus(kappa g)/kappa
BARRIER_TIME = 0.01  # tau: allowed boundary-approach rate phi' >= -phi/tau


def lorentz_project(z, v, tol: float = 1e-9, check: bool = True):
    """Project v onto the tangent cone of L^{n+1} at z.

    Away from the boundary/apex the vector passes through unchanged and on
    the boundary the Case-2 formula applies (both to ~1e-10 or better). The
    switch between them is smoothed: the corrected normal velocity is
    psi(gap + phi/tau) with psi(g) = softplus(kappa g)/kappa >= 0, so the
    field stays smooth for RK4 and satisfies phi' >= -phi/tau, which makes
    boundary drift self-correcting instead of accumulating.

    Raises ViabilityError when z sits outside the cone beyond VIABILITY_SLACK.
    """
    zv = ad.value(z)
    tt_v = zv[..., 0]
    xx_v = zv[..., 1:]
    xnorm_v = np.linalg.norm(xx_v, axis=-1)
    znorm_v = np.linalg.norm(zv, axis=-1)
    scale = 1.0 + znorm_v
    phi_v = tt_v - xnorm_v
    if check and np.any(phi_v < -VIABILITY_SLACK * scale):
        worst = float(np.min(phi_v / scale))
        raise ViabilityError(f"state outside Lorentz cone (relative depth {worst:.3e})")

    a = v[..., :1]
    b = v[..., 1:]
    xx = z[..., 1:]

    # smoothed boundary/interior treatment
    xnorm = ad.sqrt(ad.sum_(xx * xx, axis=-1, keepdims=True) + 1e-300)
    u = xx / xnorm
    phi = z[..., :1] - xnorm
    gap = a - ad.sum_(u * b, axis=-1, keepdims=True)
    shifted = gap + phi * (1.0 / BARRIER_TIME)
    psi = ad.softplus(TANGENCY_SHARPNESS * shifted) * (1.0 / TANGENCY_SHARPNESS)
    lam = 0.5 * (shifted - psi)  # 0 in the interior, -> gap/2 on the boundary
    # beyond the smoothing band the correction is below one ulp; make it an
    # exact zero so interior vectors pass through bitwise unchanged
    passthrough = ad.value(shifted) * TANGENCY_SHARPNESS > 60.0
    lam = ad.where(passthrough, 0.0 * lam, lam)
    bd_t = a - lam
    bd_x = b + lam * u

    # apex case: exact three-way split on beta = |b| vs a
    apex = znorm_v <= tol * scale
    beta = ad.sqrt(ad.sum_(b * b, axis=-1, keepdims=True) + 1e-300)
    beta_v = ad.value(beta)[..., 0]
    a_v = ad.value(a)[..., 0]
    in_cone = (beta_v <= a_v)[..., None]
    anti = (beta_v <= -a_v)[..., None]
    mid_t = 0.5 * (a + beta)
    mid_x = (mid_t / beta) * b
    ap_t = ad.where(in_cone, a, ad.where(anti, 0.0 * a, mid_t))
    ap_x = ad.where(in_cone, b, ad.where(anti, 0.0 * b, mid_x))

    am = apex[..., None]
    out_t = ad.where(am, ap_t, bd_t)
    out_x = ad.where(am, ap_x, bd_x)
    return ad.concat([out_t, out_x], axis=-1)


class LorentzField(FieldModel):
    """dz/dt = project(base_net(z)) so the flow never points out of the cone."""

    name = "lorentz_cone"
    kind = "lorentz_cone"

    def __init__(self, n_space: int, net: nets.MlpConfig | None = None, boundary_tol: float = 1e-9):
        self.state_dim = n_space + 1
        self.boundary_tol = boundary_tol
        self.net = net or nets.MlpConfig(self.state_dim, self.state_dim)

    def param_entries(self):
        return nets.mlp_param_entries("net", self.net)

    def init_params(self, store, rng):
        nets.init_mlp(store, "net", self.net, rng)

    def rhs(self, params, s, t):
        raw = nets.mlp_forward(self.net, params, "net", s)
        taped = isinstance(s, ad.Tensor) or isinstance(raw, ad.Tensor)
        return lorentz_project(s, raw, tol=self.boundary_tol, check=not taped)

    def residual_series(self, params, states, ref):
        sv = np.asarray(states)
        viol = np.linalg.norm(sv[..., 1:], axis=-1) - sv[..., 0]
        return {"cone_violation": np.maximum(viol, 0.0)}


# ---------------------------------------------------------------------------
# PSD cone


def psd_reconstruct(L):
    """P = L L^T; symmetric PSD for any square L."""
    return ad.matmul(L, ad.transpose_last2(L))


def psd_field_eval(model: "PsdField", params, l_flat):
    """Time derivative of the packed triangle coordinates."""
    return model.rhs(params, l_flat, 0.0)


class PsdField(FieldModel):
    """Unconstrained flow on packed lower-triangle coordinates of L; P = LL^T."""

    name = "psd"
    kind = "psd"

    def __init__(self, n: int, net: nets.MlpConfig | None = None):
        self.matrix_dim = n
        self.state_dim = nets.tril_dim(n)
        self.net = net or nets.MlpConfig(self.state_dim, self.state_dim)

    def param_entries(self):
        return nets.mlp_param_entries("net", self.net)

    def init_params(self, store, rng):
        nets.init_mlp(store, "net", self.net, rng)

    def rhs(self, params, s, t):
        return nets.mlp_forward(self.net, params, "net", s)

    def reconstruct(self, s):
        return psd_reconstruct(ad.tril_from_flat(s, self.matrix_dim))

    def residual_series(self, params, states, ref):
        p = np.asarray(ad.value(self.reconstruct(np.asarray(states))))
        eig = np.linalg.eigvalsh(p)
        return {
            "min_eig": eig[..., 0],
            "sym_err": np.max(np.abs(p - np.swapaxes(p, -1, -2)), axis=(-2, -1)),
        }


# ---------------------------------------------------------------------------
# center of mass


class ComField(FieldModel):
    """N-body field with mass-weighted mean subtraction on both blocks."""

    name = "center_of_mass"
    kind = "center_of_mass"

    def __init__(self, masses, space_dim: int, net: nets.MlpConfig | None = None):
        self.masses = np.asarray(masses, dtype=float)
        if np.any(self.masses <= 0):
            raise ConfigError("masses must be positive")
        self.n_bodies = self.masses.shape[0]
        self.space_dim = space_dim
        nd = self.n_bodies * space_dim
        self.state_dim = 2 * nd
        self.net = net or nets.MlpConfig(2 * nd, nd)
        self._mcol = self.masses[:, None]
        self._mtot = float(self.masses.sum())

    def param_entries(self):
        return nets.mlp_param_entries("net", self.net)

    def init_params(self, store, rng):
        nets.init_mlp(store, "net", self.net, rng)

    def _weighted_mean(self, block):
        return ad.sum_(self._mcol * block, axis=-2, keepdims=True) * (1.0 / self._mtot)

    def rhs(self, params, s, t):
        nd = self.n_bodies * self.space_dim
        lead = ad.value(s).shape[:-1]
        body = (self.n_bodies, self.space_dim)
        v = ad.reshape(s[..., nd:], lead + body)
        acc = ad.reshape(nets.mlp_forward(self.net, params, "net", s), lead + body)
        rdot = v - self._weighted_mean(v)
        vdot = acc - self._weighted_mean(acc)
        return ad.concat(
            [ad.reshape(rdot, lead + (nd,)), ad.reshape(vdot, lead + (nd,))], axis=-1
        )

    def _weighted_sums(self, states):
        nd = self.n_bodies * self.space_dim
        sv = np.asarray(states)
        body = sv.shape[:-1] + (self.n_bodies, self.space_dim)
        r = sv[..., :nd].reshape(body)
        v = sv[..., nd:].reshape(body)
        return (self._mcol * r).sum(-2), (self._mcol * v).sum(-2)

    def residual_reference(self, params, s0):
        mr, mv = self._weighted_sums(s0)
        return {"mr": mr, "mv": mv}

    def residual_series(self, params, states, ref):
        mr, mv = self._weighted_sums(states)
        return {
            "com_pos_drift": np.max(np.abs(mr - ref["mr"]), axis=-1),
            "com_mom_drift": np.max(np.abs(mv - ref["mv"]), axis=-1),
        }


def com_field_eval(model: ComField, params, r, v):
    """Evaluate (rdot, vdot) from stacked position/velocity blocks."""
    s = ad.concat([ad.reshape(r, (-1,)), ad.reshape(v, (-1,))], axis=-1)
    out = model.rhs(params, s, 0.0)
    nd = model.n_bodies * model.space_dim
    shape = (model.n_bodies, model.space_dim)
    return ad.reshape(out[..., :nd], shape), ad.reshape(out[..., nd:], shape)


# ---------------------------------------------------------------------------
# stoichiometry


class StoichField(FieldModel):
    """dc/dt = B r(c, t) with B an exact null-space basis of the molecular matrix."""

    name = "stoichiometric"
    kind = "stoichiometric"

    def __init__(self, molecular_matrix, net: nets.MlpConfig | None = None):
        self.M = np.asarray(molecular_matrix, dtype=float)
        self.B = linalg.nullspace_basis(self.M)
        n = self.M.shape[1]
        k = self.B.shape[1]
        if k == 0:
            raise ConfigError("no admissible dynamics: the molecular matrix has a trivial null space")
        self.state_dim = n
        self.n_rates = k
        self.net = net or nets.MlpConfig(n + 1, k)
        if self.net.in_dim != n + 1 or self.net.out_dim != k:
            raise ConfigError("rate net must map (c, t) -> k")

    def param_entries(self):
        return nets.mlp_param_entries("rate", self.net)

    def init_params(self, store, rng):
        nets.init_mlp(store, "rate", self.net, rng)

    def rhs(self, params, s, t):
        rates = nets.mlp_forward(self.net, params, "rate", s, t=t)
        return ad.matvec(self.B, rates)

    def residual_reference(self, params, s0):
        return {"mc": np.asarray(s0) @ self.M.T}

    def residual_series(self, params, states, ref):
        mc = np.asarray(states) @ self.M.T
        return {"elem_drift": np.max(np.abs(mc - ref["mc"]), axis=-1)}


def stoich_field_eval(model: StoichField, params, c, t):
    return model.rhs(params, c, t)
