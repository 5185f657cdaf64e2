import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from invarc import constructions as C
from invarc import nets
from invarc.constructions.base import rollout_model
from invarc.constructions.energetic import (
    KnownIntegral,
    generic_latent_field,
    induced_poisson_matrix,
    ph_latent_field,
    poisson_latent_field,
    poisson_physical_field,
)
from invarc.errors import ConfigError


def fresh(model, seed=0, jitter=0.0):
    store = model.new_params(seed)
    if jitter:
        store.values = store.values + np.random.default_rng(seed + 7).standard_normal(store.size) * jitter
    return store, nets.bind(store)


class TestPoisson:
    def test_free_particle_hamiltonian(self):
        # K = 0.5 p^2 built by hand: w0 picks p, squaring via output layer is
        # impossible in one linear layer, so check against the generic shuffle
        # with an explicit gradient instead.
        m = C.PoissonModel(d=1, k=1, inn=nets.InnConfig(dim=3, n_blocks=0))
        store, p = fresh(m)
        z = np.array([0.3, 1.7, -0.4])
        _, gk = m.energy_and_grad(p, z)
        zdot = np.asarray(poisson_latent_field(m, p, z))
        gk = np.asarray(gk)
        assert zdot[0] == gk[1]      # qdot = dK/dp
        assert zdot[1] == -gk[0]     # pdot = -dK/dq
        assert zdot[2] == 0.0        # Casimir block hard-zeroed

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_energy_orthogonality(self, seed):
        m = C.PoissonModel(d=2, k=1, inn=nets.InnConfig(dim=5, n_blocks=0))
        store, p = fresh(m, seed=seed, jitter=0.2)
        z = np.random.default_rng(seed).standard_normal(5)
        _, gk = m.energy_and_grad(p, z)
        zdot = np.asarray(poisson_latent_field(m, p, z))
        assert abs(float(np.asarray(gk) @ zdot)) <= 1e-12 * max(np.linalg.norm(zdot), 1e-30)

    def test_casimir_exactly_constant_along_rollout(self):
        m = C.PoissonModel(d=1, k=1)
        store, p = fresh(m, seed=3)
        traj = rollout_model(m, p, np.array([0.4, -0.2, 0.8]), h=0.03, n_steps=500, with_diagnostics=True)
        assert traj.diagnostics["c_drift"].max() == 0.0

    def test_energy_drift_bound(self):
        worst = 0.0
        for seed in range(5):
            m = C.PoissonModel(d=1, k=1)
            store, p = fresh(m, seed=seed)
            x0 = np.random.default_rng(seed).uniform(-1, 1, 3)
            traj = rollout_model(m, p, x0, h=0.03, n_steps=1000, with_diagnostics=True)
            worst = max(worst, traj.diagnostics["K_drift"].max())
        assert worst <= 1e-7

    def test_identity_inn_physical_equals_latent(self):
        m = C.PoissonModel(d=1, k=1, inn=nets.InnConfig(dim=3, n_blocks=0))
        store, p = fresh(m, seed=1)
        z = np.array([0.2, 0.5, -0.1])
        assert np.max(np.abs(poisson_physical_field(m, p, z) - np.asarray(m.rhs(p, z, 0.0)))) == 0.0

    def test_latent_energy_constant_in_physical_composition(self):
        m = C.PoissonModel(d=1, k=0)
        store, p = fresh(m, seed=2)
        u0 = np.array([1.4, 0.6])
        traj = rollout_model(m, p, u0, h=0.03, n_steps=500, with_diagnostics=True)
        # H(u) = K(g(u)) along the mapped-back trajectory
        z_series = np.asarray(m.embed(p, traj.states))
        k_series, _ = m.energy_and_grad(p, z_series)
        k_series = np.asarray(k_series)
        assert np.max(np.abs(k_series - k_series[0])) <= 1e-7

    def test_singular_jacobian_reports_conditioning(self):
        from invarc.errors import ConditioningError

        m = C.PoissonModel(d=1, k=0)
        store, p = fresh(m, seed=4)
        with pytest.raises(ConditioningError):
            poisson_physical_field(m, p, np.array([0.5, -0.2]), cond_limit=0.5)

    def test_induced_poisson_matrix_skew(self):
        m = C.PoissonModel(d=1, k=1)
        store, p = fresh(m, seed=5, jitter=0.1)
        rng = np.random.default_rng(0)
        for _ in range(3):
            j = induced_poisson_matrix(m, p, rng.uniform(-1, 1, 3))
            assert np.max(np.abs(j + j.T)) <= 1e-10


class TestPortHamiltonian:
    def test_zero_dissipation_reduces_to_poisson(self):
        m = C.PortHamiltonianModel(d=1, k=0)
        store, p = fresh(m, seed=1)
        for name in store.slices:
            if name.startswith("l_net."):
                store.set_view(name, np.zeros(store.shapes[name]))
        z = np.array([0.7, -0.3])
        ref = C.PoissonModel(d=1, k=0, inn=m.inn, k_net=m.k_net)
        zdot = np.asarray(ph_latent_field(m, p, z))
        want = np.asarray(ref.rhs(p, z, 0.0))
        assert np.array_equal(zdot, want)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_power_balance(self, seed):
        m = C.PortHamiltonianModel(d=1, k=1)
        store, p = fresh(m, seed=seed, jitter=0.1)
        z = np.random.default_rng(seed).standard_normal(3)
        _, gk = m.energy_and_grad(p, z)
        gk = np.asarray(gk)
        zdot = np.asarray(ph_latent_field(m, p, z))
        ell = np.asarray(m.dissipation_factor(p, z))
        expected = -np.sum((ell.T @ gk) ** 2)
        assert float(gk @ zdot) <= 1e-12
        assert abs(float(gk @ zdot) - expected) <= 1e-10 * max(abs(expected), 1.0)

    def test_energy_monotone_along_trajectory(self):
        m = C.PortHamiltonianModel(d=1, k=0)
        store, p = fresh(m, seed=2)
        traj = rollout_model(m, p, np.array([0.9, -0.4]), h=0.03, n_steps=1000, with_diagnostics=True)
        k = traj.diagnostics["K"]
        assert np.max(np.diff(k)) <= 1e-8  # per-step slack


class TestGeneric:
    def test_entropy_gradient_in_j0_nullspace(self):
        m = C.GenericModel(d=1, k=1)
        store, p = fresh(m, seed=0, jitter=0.2)
        z = np.array([0.3, -0.6, 0.9])
        _, gs = m.entropy_and_grad(p, z)
        gs = np.asarray(gs)
        assert gs[0] == 0.0 and gs[1] == 0.0
        from invarc.constructions.energetic import _j0_apply

        assert np.max(np.abs(np.asarray(_j0_apply(gs, 1, 1)))) == 0.0

    def test_needs_casimir_coordinate(self):
        with pytest.raises(ConfigError):
            C.GenericModel(d=1, k=0)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_pointwise_rates(self, seed):
        m = C.GenericModel(d=1, k=1)
        store, p = fresh(m, seed=seed)
        z = np.random.default_rng(seed).standard_normal(3)
        _, gk = m.energy_and_grad(p, z)
        _, gs = m.entropy_and_grad(p, z)
        gk, gs = np.asarray(gk), np.asarray(gs)
        zdot = np.asarray(generic_latent_field(m, p, z))
        assert abs(float(gk @ zdot)) <= 1e-6  # eps-bounded energy rate
        assert float(gs @ zdot) >= -1e-12  # entropy production PSD form

    def test_degeneracy_residuals_along_rollout(self):
        m = C.GenericModel(d=1, k=1)
        store, p = fresh(m, seed=4)
        traj = rollout_model(m, p, np.array([0.5, 0.1, 0.7]), h=0.03, n_steps=500, with_diagnostics=True)
        d = traj.diagnostics
        eps = m.eps_pk
        assert d["deg_J0_gradS"].max() == 0.0
        assert d["deg_Mz_gradK"].max() <= np.sqrt(eps)  # loose structural bound
        assert np.min(np.diff(d["S"])) >= -1e-8
        assert d["K_drift"].max() <= 1e-6


def constant_grad(vec):
    vec = np.asarray(vec, dtype=float)
    return KnownIntegral("const", vec.shape[0], vec, value=lambda s: np.sum(np.asarray(s) * vec, -1))


class TestFirstIntegral:
    def radius_integral(self):
        return KnownIntegral(
            "r2", 2, lambda s: 2.0 * s, value=lambda s: np.sum(np.asarray(s) ** 2, -1)
        )

    def zeroed_base(self, m, bias):
        store = m.new_params(0)
        for name in list(store.slices):
            if name.startswith("base.w"):
                store.set_view(name, np.zeros(store.shapes[name]))
            if name.startswith("base.b"):
                store.set_view(name, np.zeros(store.shapes[name]))
        store.set_view("base.b2", np.asarray(bias, dtype=float))
        return store

    def test_radial_component_removed(self):
        m = C.FirstIntegralModel(2, known=[self.radius_integral()])
        store = self.zeroed_base(m, [1.0, 1.0])
        udot = np.asarray(m.rhs(nets.bind(store), np.array([1.0, 0.0]), 0.0))
        assert np.max(np.abs(udot - np.array([0.0, 1.0]))) <= 1e-12

    def test_tangent_field_unchanged(self):
        m = C.FirstIntegralModel(2, known=[self.radius_integral()])
        store = self.zeroed_base(m, [0.0, 2.0])  # already tangent at (1, 0)
        udot = np.asarray(m.rhs(nets.bind(store), np.array([1.0, 0.0]), 0.0))
        assert np.max(np.abs(udot - np.array([0.0, 2.0]))) <= 1e-12

    def test_duplicate_constraint_same_field(self):
        m1 = C.FirstIntegralModel(2, known=[self.radius_integral()])
        m2 = C.FirstIntegralModel(
            2,
            known=[
                self.radius_integral(),
                KnownIntegral("r2_twice", 2, lambda s: 4.0 * s),
            ],
        )
        s1 = self.zeroed_base(m1, [1.0, 1.0])
        s2 = self.zeroed_base(m2, [1.0, 1.0])
        u = np.array([1.0, 0.0])
        a = np.asarray(m1.rhs(nets.bind(s1), u, 0.0))
        b = np.asarray(m2.rhs(nets.bind(s2), u, 0.0))
        assert np.max(np.abs(a - b)) <= 1e-10

    def test_projector_idempotent_and_symmetric(self):
        m = C.FirstIntegralModel(
            4, n_learned=2, known=[constant_grad([1.0, 1.0, 0.0, 0.0])]
        )
        store, p = fresh(m, seed=6, jitter=0.1)
        rng = np.random.default_rng(1)
        for _ in range(5):
            u = rng.standard_normal(4)
            rows = np.asarray(m.constraint_rows(p, u))
            gram = rows @ rows.T
            ginv = np.asarray(nets.ad.pinv_psym(gram))
            proj = rows.T @ ginv @ rows
            assert np.max(np.abs(proj @ proj - proj)) <= 1e-9
            assert np.max(np.abs(proj - proj.T)) <= 1e-12

    def test_all_constraints_conserved_along_rollout(self):
        m = C.FirstIntegralModel(
            8, n_learned=2, known=[C.KNOWN_GRADIENTS["px"], C.KNOWN_GRADIENTS["py"]]
        )
        store, p = fresh(m, seed=7, jitter=0.1)
        x0 = np.random.default_rng(2).standard_normal(8) * 0.5
        traj = rollout_model(m, p, x0, h=0.02, n_steps=1000, with_diagnostics=True)
        for name, series in traj.diagnostics.items():
            assert series.max() <= 1e-7, name

    def test_tangency_of_every_row(self):
        m = C.FirstIntegralModel(
            8, n_learned=1, known=[C.KNOWN_GRADIENTS["px"], C.KNOWN_GRADIENTS["angmom"]]
        )
        store, p = fresh(m, seed=8, jitter=0.2)
        rng = np.random.default_rng(3)
        for _ in range(5):
            u = rng.standard_normal(8)
            f_base = np.asarray(nets.mlp_forward(m.base_net, p, "base", u))
            udot = np.asarray(m.rhs(p, u, 0.0))
            rows = np.asarray(m.constraint_rows(p, u))
            assert np.max(np.abs(rows @ udot)) <= 1e-10 * max(np.linalg.norm(f_base), 1e-30)

    def test_zero_row_warns_and_projection_survives(self):
        m = C.FirstIntegralModel(2, known=[constant_grad([0.0, 0.0]), constant_grad([0.0, 1.0])])
        store, p = fresh(m, seed=9)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            udot = np.asarray(m.rhs(p, np.array([1.0, 0.0]), 0.0))
        assert any("zero" in str(w.message) for w in caught)
        assert np.all(np.isfinite(udot))
        assert abs(udot[1]) <= 1e-12  # the live constraint still projects

    def test_needs_at_least_one_constraint(self):
        with pytest.raises(ConfigError):
            C.FirstIntegralModel(3, n_learned=0, known=[])

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            C.FirstIntegralModel(3, known=[C.KNOWN_GRADIENTS["px"]])
