"""Acceptance suite: each test implements one gate criterion at its stated
tolerance and prints one pass/fail line.

The training-based criteria run at desk scale (hundreds of trajectories,
300 epochs) and take several minutes each; the whole module stays within the
stated runtime caps on a desktop-class core.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from invarc import autodiff as ad
from invarc import compiler, linalg, metrics, nets, systems, training
from invarc.constructions import lorentz_project
from invarc.constructions.base import rollout_model
from invarc.integrator import rollout

SPEC_DIR = Path(__file__).parent.parent / "specs"
GOLDEN_DIR = Path(__file__).parent / "golden"


def _announce(num: int, ok: bool, detail: str):
    status = "PASS" if ok else "FAIL"
    print(f"[acceptance] criterion {num}: {status} ({detail})")
    assert ok, f"criterion {num}: {detail}"


def build(stem: str, seed: int):
    ir = compiler.lower(compiler.parse_spec((SPEC_DIR / f"{stem}.ivc").read_text()))
    cf = compiler.build_model(ir, seed)
    return cf, ir


def train_run(stem: str, seed: int, baseline=None, epochs=300, n_traj=None,
              batch_size=256, window_stride=3, t_end=None, points=None):
    """Desk-scale training mirroring the CLI pipeline; returns model + params."""
    spec = compiler.parse_spec((SPEC_DIR / f"{stem}.ivc").read_text())
    ir = compiler.lower(spec)
    sys_def = systems.get_system(spec.reference)
    dataset, _ = systems.generate_dataset(
        spec.reference, n_traj or sys_def.desk_n_traj, t_end=t_end, points=points, seed=seed
    )
    cfg = training.TrainConfig(
        epochs=epochs, seed=seed, baseline=baseline,
        batch_size=batch_size, window_stride=window_stride,
    )
    if baseline is None:
        cf = compiler.build_model(ir, seed + 1)
        model, store = cf.model, cf.store
    else:
        model = training.UnconstrainedField(
            ir.dims["n"], net=nets.MlpConfig(ir.dims["n"], ir.dims["n"]))
        store = model.new_params(seed + 1)
    from invarc.cli import make_violation_fn

    violation_fn = make_violation_fn(ir)
    result = training.train(
        model, dataset, cfg, store=store,
        violation_fn=violation_fn if baseline == "penalty" else None,
        invariants=sys_def.invariants if baseline == "pinns" else None,
    )
    return model, result.store, sys_def, ir, dataset


def heldout_ics(sys_def, n, seed):
    rng = np.random.default_rng(seed)
    return [sys_def.ic_sampler(rng) for _ in range(n)]


def mean_violation(model, store, ir, sys_def, ics, mult=2):
    from invarc.cli import _violation_payload

    payload = _violation_payload(ir)
    params = nets.bind(store)
    n_steps = (sys_def.points - 1) * mult
    vals = []
    for x0 in ics:
        traj = rollout_model(model, params, x0, sys_def.h, n_steps)
        ref = metrics.violation_reference(ir.kind if payload is not None else "", x0, payload)
        vals.append(float(np.mean(np.asarray(metrics.violation(ir.kind, traj.states, payload, ref)))))
    return float(np.mean(vals))


def element_deviation(model, store, sys_def, ics, mult=2):
    params = nets.bind(store)
    n_steps = (sys_def.points - 1) * mult
    per_ic = []
    for x0 in ics:
        traj = rollout_model(model, params, x0, sys_def.h, n_steps)
        devs = []
        for q in sys_def.invariants:
            series = np.asarray(q(traj.states))
            theory = float(np.asarray(q(x0)))
            devs.append(metrics.deviation(series, np.full_like(series, theory), traj.times))
        per_ic.append(np.mean(devs))
    return float(np.mean(per_ic))


class TestCriterion1UntrainedInvariance:
    SETUPS = {
        "sir": dict(h=0.01, ic=lambda rng: rng.dirichlet(np.ones(3))),
        "nox": dict(h=0.01, ic=lambda rng: rng.uniform(0.3, 1.0, 5)),
        "lorentz_spiral": dict(
            h=0.02,
            ic=lambda rng: (lambda r, th: np.array([r, r * np.cos(th), r * np.sin(th)]))(
                rng.uniform(0.5, 1.5), rng.uniform(0.0, 2.0 * np.pi)
            ),
        ),
        "psd_cov": dict(h=0.02, ic=lambda rng: rng.standard_normal(3)),
        "com_bodies": dict(h=0.02, ic=lambda rng: rng.standard_normal(8)),
        "extended_pendulum": dict(h=0.03, ic=lambda rng: rng.uniform(-1.0, 1.0, 3)),
        "damped_oscillator": dict(h=0.03, ic=lambda rng: rng.uniform(-1.0, 1.0, 2)),
        "thermomechanical": dict(h=0.03, ic=lambda rng: rng.uniform(-1.0, 1.0, 3)),
        "two_body": dict(h=0.02, ic=lambda rng: rng.standard_normal(8) * 0.5),
    }

    def _check(self, kind, traj):
        d = traj.diagnostics
        if kind == "simplex":
            assert d["sum_err"].max() <= 1e-9
            assert traj.states.min() >= 0.0
        elif kind == "stoichiometric":
            assert d["elem_drift"].max() <= 1e-10
        elif kind == "lorentz_cone":
            assert d["cone_violation"].max() <= 1e-7
        elif kind == "psd":
            assert d["min_eig"].min() >= -1e-10
        elif kind == "center_of_mass":
            assert d["com_pos_drift"].max() <= 1e-10
            assert d["com_mom_drift"].max() <= 1e-10
        elif kind == "hamiltonian":
            assert d["K_drift"].max() <= 1e-7
            assert d["c_drift"].max() == 0.0
        elif kind == "port_hamiltonian":
            assert np.max(np.diff(d["K"])) <= 1e-8
        elif kind == "generic":
            assert d["K_drift"].max() <= 1e-6
            assert np.min(np.diff(d["S"])) >= -1e-8
            assert d["deg_J0_gradS"].max() == 0.0
            assert d["deg_Mz_gradK"].max() <= 1e-4
        elif kind == "first_integral":
            for name, series in d.items():
                assert series.max() <= 1e-7, name

    def test_untrained_invariance_all_nine_kinds(self):
        t0 = time.time()
        for stem, setup in self.SETUPS.items():
            cf0, ir = build(stem, 0)
            for seed in range(20):
                cf = compiler.build_model(ir, seed)
                rng = np.random.default_rng(1000 + seed)
                traj = rollout_model(
                    cf.model, nets.bind(cf.store), setup["ic"](rng), setup["h"], 1000,
                    with_diagnostics=True,
                )
                self._check(ir.kind, traj)
        elapsed = time.time() - t0
        _announce(1, elapsed < 120.0, f"9 kinds x 20 models x 1000 steps in {elapsed:.0f}s")


class TestCriterion2SimplexViolationGap:
    def test_sir_violation_gap(self):
        t0 = time.time()
        ours_model, ours_store, sys_def, ir, _ = train_run("sir", seed=0)
        base_model, base_store, _, _, _ = train_run("sir", seed=0, baseline="none")
        ics = heldout_ics(sys_def, 20, seed=777)
        ours = mean_violation(ours_model, ours_store, ir, sys_def, ics)
        base = mean_violation(base_model, base_store, ir, sys_def, ics)
        elapsed = time.time() - t0
        ok = ours <= 1e-5 and base > 1e-3 and elapsed < 900
        _announce(2, ok, f"compiled {ours:.2e} vs unconstrained {base:.2e} in {elapsed:.0f}s")


class TestCriterion3NoxElementConservation:
    def test_nox_element_conservation(self):
        t0 = time.time()
        spec = compiler.parse_spec((SPEC_DIR / "nox.ivc").read_text())
        ir = compiler.lower(spec)
        sys_def = systems.get_system("nox")
        ics = heldout_ics(sys_def, 10, seed=778)

        cf0 = compiler.build_model(ir, 1)
        dev_epoch0 = element_deviation(cf0.model, cf0.store, sys_def, ics)

        ours_model, ours_store, _, _, _ = train_run("nox", seed=0)
        dev_trained = element_deviation(ours_model, ours_store, sys_def, ics)

        pen_model, pen_store, _, _, _ = train_run("nox", seed=0, baseline="penalty")
        dev_penalty = element_deviation(pen_model, pen_store, sys_def, ics)

        elapsed = time.time() - t0
        ok = dev_epoch0 <= 1e-5 and dev_trained <= 1e-5 and dev_penalty >= 1e-4 and elapsed < 1200
        _announce(
            3, ok,
            f"compiled epoch0 {dev_epoch0:.2e} / trained {dev_trained:.2e}, "
            f"penalty {dev_penalty:.2e} in {elapsed:.0f}s",
        )


class TestCriterion4LongHorizonOrdering:
    def _energy_deviation(self, model, store, sys_def, x0, mult):
        params = nets.bind(store)
        n_steps = (sys_def.points - 1) * mult
        traj = rollout_model(model, params, x0, sys_def.h, n_steps)
        truth = systems.true_trajectory("lotka_volterra", x0, sys_def.t_end * mult, n_steps + 1)
        q = sys_def.invariant("energy")
        series = np.asarray(q(traj.states))
        theory = float(np.asarray(q(truth.states[0])))
        return metrics.deviation(series, np.full_like(series, theory), traj.times)

    def test_lv_energy_deviation_ordering(self):
        t0 = time.time()
        ours_model, ours_store, sys_def, ir, dataset = train_run(
            "lotka_volterra", seed=0, window_stride=1
        )
        base_model, base_store, _, _, _ = train_run(
            "lotka_volterra", seed=0, baseline="none", window_stride=1
        )
        x0 = dataset[0].states[0]
        ours = {m: self._energy_deviation(ours_model, ours_store, sys_def, x0, m) for m in (2, 5, 10)}
        base = {m: self._energy_deviation(base_model, base_store, sys_def, x0, m) for m in (2, 5, 10)}
        elapsed = time.time() - t0
        ok = (
            ours[10] < base[10]
            and base[2] < base[5] < base[10]
            and ours[10] <= 3.0 * ours[2]
            and elapsed < 1200
        )
        _announce(
            4, ok,
            f"ours {ours[2]:.2e}/{ours[5]:.2e}/{ours[10]:.2e} vs "
            f"unconstrained {base[2]:.2e}/{base[5]:.2e}/{base[10]:.2e} in {elapsed:.0f}s",
        )


class TestCriterion5Composability:
    def _momentum_deviation(self, model, store, sys_def, ics, mult=2):
        params = nets.bind(store)
        n_steps = (sys_def.points - 1) * mult
        devs = []
        for x0 in ics:
            traj = rollout_model(model, params, x0, sys_def.h, n_steps)
            for name in ("px", "py"):
                series = np.asarray(sys_def.invariant(name)(traj.states))
                devs.append(metrics.deviation(series, np.zeros_like(series), traj.times))
        return float(np.mean(devs))

    def _learned_drift(self, model, store, sys_def, ics, mult=2):
        params = nets.bind(store)
        n_steps = (sys_def.points - 1) * mult
        worst = 0.0
        for x0 in ics:
            traj = rollout_model(model, params, x0, sys_def.h, n_steps, with_diagnostics=True)
            for name in ("v0_drift", "v1_drift"):
                worst = max(worst, float(traj.diagnostics[name].max()))
        return worst

    def test_two_body_known_plus_learned(self):
        t0 = time.time()
        spec = compiler.parse_spec((SPEC_DIR / "two_body.ivc").read_text())
        ir = compiler.lower(spec)
        sys_def = systems.get_system("two_body")
        ics = heldout_ics(sys_def, 5, seed=779)

        cf0 = compiler.build_model(ir, 2)
        mom_epoch0 = self._momentum_deviation(cf0.model, cf0.store, sys_def, ics)

        model, store, _, _, _ = train_run("two_body", seed=0)
        mom_trained = self._momentum_deviation(model, store, sys_def, ics)
        learned = self._learned_drift(model, store, sys_def, ics)

        elapsed = time.time() - t0
        ok = mom_epoch0 <= 1e-6 and mom_trained <= 1e-6 and learned <= 1e-4 and elapsed < 1200
        _announce(
            5, ok,
            f"momentum dev untrained {mom_epoch0:.2e} / trained {mom_trained:.2e}, "
            f"learned-integral drift {learned:.2e} in {elapsed:.0f}s",
        )


class TestCriterion6NumericalSuites:
    def test_numerical_correctness(self):
        t0 = time.time()
        rng = np.random.default_rng(0)

        # reverse mode vs central differences, 100 cases per primitive
        ops = [ad.silu, ad.softplus, ad.tanh, ad.sigmoid, ad.exp, ad.sin, ad.cos]
        for op in ops:
            for _ in range(100):
                x = rng.uniform(-2.0, 2.0, 4)
                rep = ad.gradient_check(lambda t: ad.sum_(op(t)), x, h=1e-5, tol=1e-5)
                assert rep.ok, op.__name__
        for _ in range(100):
            w = rng.standard_normal((4, 3))
            rep = ad.gradient_check(
                lambda t: ad.sum_(ad.matmul(ad.reshape(t, (2, 4)), w) ** 2.0),
                rng.standard_normal(8), h=1e-5, tol=1e-5,
            )
            assert rep.ok

        # gradient through a 50-step rollout
        from invarc.integrator import rk4_step

        w = rng.standard_normal((2, 2)) * 0.4

        def rollout_loss(theta):
            y = np.array([1.0, -1.0])
            for _ in range(50):
                y = rk4_step(lambda p, u, t: theta * ad.matvec(w, u), None, y, 0.0, 0.02)
            return ad.sum_(y * y)

        rep = ad.gradient_check(rollout_loss, np.asarray(0.8), h=1e-5, tol=1e-4)
        assert rep.ok

        # RK4 order on a catalog system
        sys_def = systems.get_system("sir")
        x0 = np.array([0.8, 0.15, 0.05])
        ref = systems.true_trajectory("sir", x0, 2.0, 3, oversample=512).states[-1]
        errs = [
            np.max(np.abs(rollout(lambda p, x, t: sys_def.rhs(x, t), None, x0, 2.0 / n, n).states[-1] - ref))
            for n in (50, 100)
        ]
        ratio = errs[0] / errs[1]
        assert 12 <= ratio <= 20

        # INN round trip at arbitrary bounded params
        cfg = nets.InnConfig(dim=3, n_blocks=8, mixing_seed=3)
        store = nets.ParamStore(nets.inn_param_entries("g", cfg))
        store.values = rng.standard_normal(store.size) * 0.25
        u = rng.standard_normal((100, 3))
        z = nets.inn_forward(cfg, nets.bind(store), "g", u)
        assert np.max(np.abs(nets.inn_inverse(cfg, nets.bind(store), "g", z) - u)) <= 1e-6

        # Penrose conditions
        for _ in range(50):
            a = rng.standard_normal((4, 4))
            g = a @ a.T
            p = linalg.pinv_gram(g)
            scale = max(np.max(np.abs(g)), 1.0)
            assert np.max(np.abs(g @ p @ g - g)) <= 1e-9 * scale
            assert np.max(np.abs(p @ g @ p - p)) <= 1e-9 * max(np.max(np.abs(p)), 1.0)
            assert np.max(np.abs((g @ p).T - g @ p)) <= 1e-9 * scale
            assert np.max(np.abs((p @ g).T - p @ g)) <= 1e-9 * scale

        # Lorentz tangency on 1e4 pairs covering interior/boundary/apex
        n = 10_000
        kinds = rng.integers(0, 3, size=n)
        x = rng.uniform(-1, 1, size=(n, 2))
        r = np.linalg.norm(x, axis=1)
        z = np.zeros((n, 3))
        z[:, 1:] = x
        z[:, 0] = np.where(kinds == 0, r * rng.uniform(1.5, 3.0, n), r)
        z[kinds == 2] = 0.0
        v = rng.standard_normal((n, 3)) * 2.0
        out = np.asarray(lorentz_project(z, v))
        bnd = kinds == 1
        u_dir = z[bnd, 1:] / np.linalg.norm(z[bnd, 1:], axis=1, keepdims=True)
        assert (out[bnd, 0] - np.sum(u_dir * out[bnd, 1:], axis=1)).min() >= -1e-12
        ap = out[kinds == 2]
        assert np.all(ap[:, 0] >= np.linalg.norm(ap[:, 1:], axis=1) - 1e-12)

        elapsed = time.time() - t0
        _announce(6, elapsed < 300, f"autodiff/RK4/INN/pinv/projection suites in {elapsed:.0f}s")


class TestCriterion7LossAndMetricOracles:
    def test_oracle_values(self):
        model = training.UnconstrainedField(4, net=nets.MlpConfig(4, 4, hidden_dim=4, n_layers=2))
        store = model.new_params(0)
        store.values[:] = 0.0
        window = np.zeros((5, 4))
        window[1:, 0] = 1.0
        loss, _ = training.multistep_loss(model, nets.bind(store), window, h=0.1)
        ok_loss = float(ad.value(loss)) == pytest.approx(25.0 / 48.0, abs=1e-15)

        grid = np.linspace(0.0, 1.0, 101)
        ok_dev = metrics.deviation(grid.copy(), np.zeros(101), grid) == pytest.approx(0.5, abs=1e-12)

        ok_if = round(metrics.improvement_factor(1.10e-4, 1.06e-6)) == 104
        _announce(7, ok_loss and ok_dev and ok_if, "multistep 25/48, deviation 0.5, IF 104")


class TestCriterion8CompilerConformance:
    CATALOG = (
        "sir", "chemical", "nox", "lorentz_spiral", "radial_angular", "replicator",
        "lotka_volterra", "damped_oscillator", "thermomechanical", "extended_pendulum",
        "two_body",
    )

    def test_golden_dumps_and_diagnostics(self, tmp_path, capsys):
        for stem in self.CATALOG:
            text = (SPEC_DIR / f"{stem}.ivc").read_text()
            dump1 = compiler.dump_ir(compiler.lower(compiler.parse_spec(text)))
            dump2 = compiler.dump_ir(compiler.lower(compiler.parse_spec(text)))
            golden = (GOLDEN_DIR / f"{stem}.ir.txt").read_text()
            assert dump1 == dump2 == golden, stem

        from invarc import cli

        bad = tmp_path / "bad.ivc"
        bad.write_text(
            "system s { state a, b, c ; reference none ; }\n"
            "invariant stoichiometric matrix [[1,0],[0,1]]\n"
        )
        code = cli.main(["compile", "--spec", str(bad)])
        err = capsys.readouterr().err
        ok = code == 2 and ":2:" in err
        _announce(8, ok, "11 golden dumps byte-stable; invalid spec exits 2 with line info")
