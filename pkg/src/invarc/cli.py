"""Command-line pipeline: compile, simulate, train, eval, report.

Every command is deterministic given its flags; all randomness derives from
the single --seed through named sub-seeds (data / init / eval). Exit codes:
0 ok, 1 usage or config error, 2 spec error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import compiler, metrics, nets, systems, training
from .constructions.base import rollout_model
from .errors import (
    ConfigError,
    DivergenceError,
    InvarcError,
    SpecError,
    ViabilityError,
)

EXIT_OK, EXIT_USAGE, EXIT_SPEC, EXIT_DIVERGED = 0, 1, 2, 3

# named sub-seed tags so dataset / init / held-out draws never collide
SEED_DATA, SEED_INIT, SEED_EVAL = 0xDA7A, 0x1217, 0xE7A1


def derive_seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


def threads_from_env() -> int:
    try:
        return max(1, int(os.environ.get("INVARC_THREADS", "1")))
    except ValueError:
        return 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we need 1
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _load_spec(path: str) -> tuple[compiler.SystemSpec, compiler.GeometricIR]:
    text = Path(path).read_text()
    spec = compiler.parse_spec(text)
    return spec, compiler.lower(spec)


def _print_spec_error(path: str, err: SpecError) -> None:
    for line, col, msg in err.errors:
        sys.stderr.write(f"{path}:{line}:{col}: error: {msg}\n")


# ---------------------------------------------------------------------------
# compile


def cmd_compile(args) -> int:
    try:
        _, ir = _load_spec(args.spec)
    except SpecError as err:
        _print_spec_error(args.spec, err)
        return EXIT_SPEC
    dump = compiler.dump_ir(ir)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ir.txt").write_text(dump)
    else:
        sys.stdout.write(dump)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def _default_ic(spec: compiler.SystemSpec, ir, seed: int) -> np.ndarray:
    if spec.reference:
        rng = np.random.default_rng(derive_seed(seed, SEED_EVAL))
        return systems.sample_ic(spec.reference, rng)
    if ir.kind == "psd":
        rng = np.random.default_rng(derive_seed(seed, SEED_EVAL))
        return rng.standard_normal(ir.dims["n"])
    if ir.kind == "center_of_mass":
        rng = np.random.default_rng(derive_seed(seed, SEED_EVAL))
        return rng.standard_normal(ir.dims["n"])
    raise ConfigError("no reference system: provide --ic")


def cmd_simulate(args) -> int:
    try:
        spec, ir = _load_spec(args.spec)
    except SpecError as err:
        _print_spec_error(args.spec, err)
        return EXIT_SPEC
    compiled = compiler.build_model(ir, derive_seed(args.seed, SEED_INIT))
    if args.ic:
        x0 = np.array([float(v) for v in args.ic.split(",")])
        if x0.shape[0] != ir.dims["n"]:
            raise ConfigError(f"--ic has {x0.shape[0]} values, state needs {ir.dims['n']}")
    else:
        x0 = _default_ic(spec, ir, args.seed)
    h = args.h if args.h else (systems.get_system(spec.reference).h if spec.reference else 0.01)
    params = nets.bind(compiled.store)
    traj = rollout_model(compiled.model, params, x0, h, args.steps, with_diagnostics=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traj.to_csv(out / "trajectory.csv", state_names=spec.state_names)
    print(f"wrote {out / 'trajectory.csv'} ({args.steps} steps, h={h:g})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def _violation_payload(ir) -> dict | None:
    if ir.kind == "stoichiometric":
        return {"M": np.asarray(ir.payload["matrix"], dtype=float)}
    if ir.kind == "center_of_mass":
        return {"masses": np.asarray(ir.payload["masses"]), "space_dim": ir.dims["space_dim"]}
    if ir.kind == "psd":
        return {"matrix_dim": ir.dims["matrix_dim"]}
    if ir.kind in ("simplex", "lorentz_cone"):
        return {}
    return None


def make_violation_fn(ir):
    payload = _violation_payload(ir)
    if payload is None:
        return None

    def fn(x, x0):
        ref = metrics.violation_reference(ir.kind, ad.value(x0), payload)
        return metrics.violation(ir.kind, x, payload, ref)

    return fn


def _build_train_model(ir, cfg: training.TrainConfig, seed: int):
    if cfg.baseline is None:
        compiled = compiler.build_model(ir, derive_seed(seed, SEED_INIT))
        return compiled.model, compiled.store
    model = training.UnconstrainedField(
        ir.dims["n"],
        net=nets.MlpConfig(
            ir.dims["n"], ir.dims["n"],
            hidden_dim=ir.net["hidden_dim"], n_layers=ir.net["n_layers"],
            activation=ir.net["activation"],
        ),
    )
    return model, model.new_params(derive_seed(seed, SEED_INIT))


def _prepare_dataset(args, spec) -> tuple[list, dict]:
    if args.data:
        return systems.load_dataset(args.data)
    if not spec.reference:
        raise ConfigError("spec has no reference system: provide --data DIR")
    sys_def = systems.get_system(spec.reference)
    n_traj = args.n_traj or sys_def.desk_n_traj
    trajs, manifest = systems.generate_dataset(
        spec.reference, n_traj, seed=derive_seed(args.seed, SEED_DATA), threads=threads_from_env()
    )
    return trajs, manifest


def cmd_train(args) -> int:
    try:
        spec, ir = _load_spec(args.spec)
    except SpecError as err:
        _print_spec_error(args.spec, err)
        return EXIT_SPEC
    cfg = training.TrainConfig(
        epochs=args.epochs,
        seed=args.seed,
        baseline=args.baseline,
        batch_size=args.batch_size,
        window_stride=args.window_stride,
    )
    dataset, manifest = _prepare_dataset(args, spec)
    model, store = _build_train_model(ir, cfg, args.seed)
    violation_fn = make_violation_fn(ir)
    invariants = systems.get_system(spec.reference).invariants if spec.reference else ()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    systems.save_dataset(out / "data", dataset, manifest)
    optimizer, start_epoch = None, 0
    if args.resume:
        optimizer, start_epoch = training.load_train_state(out / "checkpoint", store)
    log_path = out / "log.jsonl"
    mode = "a" if args.resume else "w"
    t_start = time.time()
    with open(log_path, mode) as log_fh:

        def log_cb(record):
            record = dict(record)
            record["elapsed_s"] = round(time.time() - t_start, 3)
            log_fh.write(json.dumps(record) + "\n")
            log_fh.flush()

        result = training.train(
            model, dataset, cfg, store=store,
            violation_fn=violation_fn, invariants=invariants,
            optimizer=optimizer, start_epoch=start_epoch,
            stop_epoch=args.stop_epoch, log_cb=log_cb,
        )
    training.save_train_state(out / "checkpoint", result)
    run_config = {
        "spec": str(args.spec),
        "system": spec.reference,
        "seed": args.seed,
        "baseline": cfg.baseline,
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "window_stride": cfg.window_stride,
        "n_traj": len(dataset),
    }
    (out / "config.json").write_text(json.dumps(run_config, indent=1, sort_keys=True))
    tail = f"final loss {result.loss_curve[-1]:.6g}" if result.loss_curve else "no epochs run"
    print(f"trained to epoch {result.next_epoch}/{cfg.epochs}; {tail}; wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def _deviation_series(sys_def, q, pred_states, truth_states):
    q_pred = np.asarray(q(pred_states), dtype=float)
    if q.kind == "conserved":
        q_theory = np.full_like(q_pred, float(np.asarray(q(truth_states[0]))))
    else:
        q_theory = np.asarray(q(truth_states), dtype=float)
    return q_pred, q_theory


def evaluate_run(run_dir, horizon_mults=(2, 5, 10), n_eval: int = 20):
    """Held-out evaluation of a trained run at several horizon multipliers."""
    run_dir = Path(run_dir)
    run_config = json.loads((run_dir / "config.json").read_text())
    spec, ir = _load_spec(run_config["spec"])
    cfg = training.TrainConfig(
        epochs=run_config["epochs"], seed=run_config["seed"], baseline=run_config["baseline"],
        batch_size=run_config["batch_size"], window_stride=run_config["window_stride"],
    )
    model, store = _build_train_model(ir, cfg, run_config["seed"])
    store.load_values(run_dir / "checkpoint")
    params = nets.bind(store)
    sys_def = systems.get_system(run_config["system"])
    h = sys_def.h
    n_train_steps = sys_def.points - 1
    rng = np.random.default_rng(derive_seed(run_config["seed"], SEED_EVAL))
    ics = [sys_def.ic_sampler(rng) for _ in range(n_eval)]
    payload = _violation_payload(ir)
    horizons: dict[int, metrics.EvalReport] = {}
    for mult in sorted(horizon_mults):
        n_steps = n_train_steps * mult
        mse_t = np.zeros(3)
        viol_sum: dict[str, float] = {}
        dev_sum: dict[str, float] = {}
        for x0 in ics:
            truth = systems.true_trajectory(run_config["system"], x0, sys_def.t_end * mult, n_steps + 1)
            pred = rollout_model(model, params, x0, h, n_steps)
            tr, ex, tot = metrics.mse_split(pred, truth, t_train_end=sys_def.t_end)
            mse_t += (tr, ex, tot)
            if payload is not None:
                ref = metrics.violation_reference(ir.kind, x0, payload)
                v = np.asarray(metrics.violation(ir.kind, pred.states, payload, ref))
                viol_sum[ir.kind] = viol_sum.get(ir.kind, 0.0) + float(v.mean())
            for q in sys_def.invariants:
                q_pred, q_theory = _deviation_series(sys_def, q, pred.states, truth.states)
                dev_sum[q.name] = dev_sum.get(q.name, 0.0) + metrics.deviation(q_pred, q_theory, pred.times)
        horizons[mult] = metrics.EvalReport(
            mse_train=float(mse_t[0] / n_eval),
            mse_extrap=float(mse_t[1] / n_eval),
            mse_total=float(mse_t[2] / n_eval),
            violations={k: v / n_eval for k, v in viol_sum.items()},
            deviations={k: v / n_eval for k, v in dev_sum.items()},
        )
    meta = {
        "system": run_config["system"],
        "model": "compiled" if run_config["baseline"] is None else run_config["baseline"],
        "seed": run_config["seed"],
        "n_eval": n_eval,
        "t_train_end": sys_def.t_end,
    }
    return meta, horizons


def cmd_eval(args) -> int:
    try:
        meta, horizons = evaluate_run(args.run, tuple(args.horizon_mult), args.n_eval)
    except SpecError as err:
        _print_spec_error("(spec)", err)
        return EXIT_SPEC
    out = Path(args.out) if args.out else Path(args.run)
    out.mkdir(parents=True, exist_ok=True)
    text = metrics.report_to_text(meta, horizons)
    (out / "report.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# report


def cmd_report(args) -> int:
    runs = []
    for run in args.eval_dirs:
        path = Path(run) / "report.txt"
        if not path.exists():
            raise ConfigError(f"missing report: {path}")
        meta, horizons = metrics.report_from_text(path.read_text())
        runs.append((meta.get("model", Path(run).name), meta, horizons))
    labels = [label for label, _, _ in runs]
    ours_idx = labels.index("compiled") if "compiled" in labels else None
    mults = sorted({m for _, _, hs in runs for m in hs})
    metric_names = ["mse_train", "mse_extrap", "mse_total"]
    extra = sorted({f"deviation.{k}" for _, _, hs in runs for rep in hs.values() for k in rep.deviations})
    extra += sorted({f"violation.{k}" for _, _, hs in runs for rep in hs.values() for k in rep.violations})
    lines = ["metric,horizon," + ",".join(labels) + ",IF"]

    def metric_value(horizons, mult, name):
        rep = horizons.get(mult)
        if rep is None:
            return None
        if name.startswith("deviation."):
            return rep.deviations.get(name.split(".", 1)[1])
        if name.startswith("violation."):
            return rep.violations.get(name.split(".", 1)[1])
        return getattr(rep, name)

    for name in metric_names + extra:
        for mult in mults:
            vals = [metric_value(hs, mult, name) for _, _, hs in runs]
            cells = ["" if v is None else f"{v:.6g}" for v in vals]
            if_cell = ""
            if ours_idx is not None and vals[ours_idx] is not None:
                baselines = [v for i, v in enumerate(vals) if i != ours_idx and v is not None]
                if baselines:
                    if_cell = metrics.format_improvement_factor(min(baselines), vals[ours_idx])
            lines.append(f"{name},{mult}," + ",".join(cells) + f",{if_cell}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> _Parser:
    parser = _Parser(prog="invarc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="parse + lower a spec and dump its IR")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_compile)

    p = sub.add_parser("simulate", help="compile, random-init, and roll out with diagnostics")
    p.add_argument("--spec", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--ic", default=None, help="comma-separated initial state")
    p.add_argument("--h", type=float, default=None)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("train", help="generate/load data and train one model")
    p.add_argument("--spec", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--stop-epoch", type=int, default=None,
                   help="pause after this epoch (cosine schedule still spans --epochs)")
    p.add_argument("--baseline", choices=training.BASELINE_KINDS, default=None,
                   help="omit to train the compiled model")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--window-stride", type=int, default=1)
    p.add_argument("--n-traj", type=int, default=None)
    p.add_argument("--data", default=None, help="load an existing dataset directory")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="held-out evaluation at horizon multipliers")
    p.add_argument("--run", required=True)
    p.add_argument("--horizon-mult", type=int, nargs="+", choices=(2, 5, 10), default=[2, 5, 10])
    p.add_argument("--n-eval", type=int, default=20)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("report", help="aggregate eval reports into a comparison CSV")
    p.add_argument("eval_dirs", nargs="+")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except SpecError as err:
        _print_spec_error("(spec)", err)
        return EXIT_SPEC
    except (DivergenceError, ViabilityError) as err:
        sys.stderr.write(f"numerical divergence: {err}\n")
        return EXIT_DIVERGED
    except InvarcError as err:
        sys.stderr.write(f"error: {err}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
