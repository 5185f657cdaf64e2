import numpy as np
import pytest

from invarc import autodiff as ad
from invarc.errors import DimensionError, DivergenceError
from invarc.integrator import Trajectory, rk4_step, rollout
from invarc.systems import SYSTEMS, true_trajectory


class TestRk4Step:
    def test_zero_field_is_identity(self):
        x = np.array([1.0, -2.0])
        out = rk4_step(lambda p, y, t: 0.0 * y, None, x, 0.0, 0.1)
        assert np.array_equal(out, x)

    def test_exponential_taylor_factor(self):
        h = 0.3
        out = rk4_step(lambda p, y, t: y, None, np.asarray(1.0), 0.0, h)
        want = 1 + h + h**2 / 2 + h**3 / 6 + h**4 / 24
        assert abs(float(out) - want) <= 1e-15

    def test_harmonic_oscillator_local_error_order_h5(self):
        def field(p, y, t):
            return np.array([y[1], -y[0]])

        x0 = np.array([1.0, 0.0])
        sol_errs = []
        for h in (0.01, 0.005):
            out = np.asarray(rk4_step(field, None, x0, 0.0, h))
            exact = np.array([np.cos(h), -np.sin(h)])
            sol_errs.append(np.max(np.abs(out - exact)))
            # energy change after one step is within the O(h^5) local error
            e0 = 0.5 * np.sum(x0**2)
            assert abs(0.5 * np.sum(out**2) - e0) <= h**5
        # halving h cuts the local solution error by ~2^5
        assert sol_errs[0] / sol_errs[1] == pytest.approx(32, rel=0.3)

    def test_nonpositive_step_rejected(self):
        with pytest.raises(DimensionError):
            rk4_step(lambda p, y, t: y, None, np.ones(2), 0.0, 0.0)

    def test_divergence_reports_stage(self):
        def field(p, y, t):
            return y * np.inf

        with pytest.raises(DivergenceError) as err:
            rk4_step(field, None, np.ones(2), 0.0, 0.1)
        assert "stage" in str(err.value)


class TestRollout:
    def test_single_step_reduces_to_rk4(self):
        field = lambda p, y, t: -0.5 * y
        x0 = np.array([2.0])
        traj = rollout(field, None, x0, 0.1, 1)
        step = rk4_step(field, None, x0, 0.0, 0.1)
        assert np.array_equal(traj.states[1], step)

    def test_grid_uniform_and_starts_at_x0(self):
        traj = rollout(lambda p, y, t: 0 * y, None, np.array([1.0]), 0.25, 8)
        assert np.allclose(np.diff(traj.times), 0.25)
        assert traj.states[0] == 1.0

    def test_divergence_carries_step_index(self):
        def field(p, y, t):
            return y * (np.inf if t > 0.45 else 1.0)

        with pytest.raises(DivergenceError) as err:
            rollout(field, None, np.ones(1), 0.1, 10)
        assert "step" in str(err.value)

    def test_diag_rows_on_every_grid_point(self):
        traj = rollout(
            lambda p, y, t: 0 * y, None, np.array([1.0, 2.0]), 0.1, 5,
            diag=lambda t, x: {"sum": float(np.sum(x))},
        )
        assert traj.diagnostics["sum"].shape == (6,)
        assert np.allclose(traj.diagnostics["sum"], 3.0)

    def test_fine_grid_oracle_sir(self):
        sys = SYSTEMS["sir"]
        x0 = np.array([0.9, 0.1, 0.0])
        coarse = rollout(lambda p, x, t: sys.rhs(x, t), None, x0, 0.05, 200)
        fine = rollout(lambda p, x, t: sys.rhs(x, t), None, x0, 1e-4, 100000)
        assert np.max(np.abs(coarse.states[-1] - fine.states[-1])) <= 1e-6

    @pytest.mark.parametrize("system_id", ["sir", "lotka_volterra"])
    def test_global_order_four(self, system_id):
        sys = SYSTEMS[system_id]
        rng = np.random.default_rng(1)
        x0 = sys.ic_sampler(rng)
        t_end = 2.0
        ref = true_trajectory(system_id, x0, t_end, 3, oversample=512).states[-1]
        errs = []
        for n in (50, 100):
            traj = rollout(lambda p, x, t: sys.rhs(x, t), None, x0, t_end / n, n)
            errs.append(np.max(np.abs(traj.states[-1] - ref)))
        ratio = errs[0] / errs[1]
        assert 12 <= ratio <= 20

    def test_gradient_through_rollout_matches_fd(self):
        w = np.random.default_rng(5).standard_normal((2, 2)) * 0.4

        def loss_of(theta):
            field = lambda p, y, t: ad.matvec(w, y) * theta
            traj_end = np.array([1.0, -1.0])
            y = traj_end
            for _ in range(50):
                y = rk4_step(field, None, y, 0.0, 0.02)
            return ad.sum_(y * y)

        rep = ad.gradient_check(loss_of, np.asarray(0.8), h=1e-5, tol=1e-4)
        assert rep.ok, rep.max_rel_err


class TestTrajectory:
    def test_nonuniform_times_rejected(self):
        with pytest.raises(DimensionError):
            Trajectory(times=np.array([0.0, 0.1, 0.05]), states=np.zeros((3, 1)))

    def test_csv_roundtrip_with_diagnostics(self, tmp_path):
        traj = Trajectory(
            times=np.linspace(0, 1, 5),
            states=np.random.default_rng(0).standard_normal((5, 2)),
            diagnostics={"q": np.arange(5.0)},
        )
        path = tmp_path / "t.csv"
        traj.to_csv(path, state_names=("a", "b"))
        back = Trajectory.from_csv(path, dim=2)
        assert np.array_equal(back.times, traj.times)
        assert np.array_equal(back.states, traj.states)
        assert np.array_equal(back.diagnostics["q"], traj.diagnostics["q"])

    def test_csv_full_precision(self, tmp_path):
        value = 1.0 / 3.0 + 1e-16
        traj = Trajectory(times=np.array([0.0, 1.0]), states=np.array([[value], [value]]))
        traj.to_csv(tmp_path / "t.csv")
        back = Trajectory.from_csv(tmp_path / "t.csv", dim=1)
        assert back.states[0, 0] == value
