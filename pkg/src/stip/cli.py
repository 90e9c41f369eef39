"""Command-line harness: ``stip simulate | calibrate | sweep | uq | fisher``.

Every command is a deterministic function of the configuration and seed:
re-running it writes byte-identical files.
"""

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .analyze import predict_forward, predict_posterior_stgp, rem, summarize, verify_theorem_1, verify_theorem_2
from .calibrate import run_enk
from .config import load_config
from .dynamics import augment_second_order, estimate_gamma_obs, integrate, write_trajectory_csv
from .emulate import EmulatedPotential, fit_emulator_from_history, pooled_training_data
from .exceptions import StipError
from .io import format_float, write_csv_matrix, write_csv_rows, write_json
from .likelihood import MatrixNormalLikelihood
from .problems import build_problem
from .sample import run_chain

log = logging.getLogger("stip")

COMMANDS = ("simulate", "calibrate", "sweep", "uq", "fisher")


class ZeroPotential:
    """``Phi = 0`` with zero gradient; turns any sampler into a prior sampler."""

    def __call__(self, v):
        return 0.0

    def value_and_grad(self, v):
        return 0.0, np.zeros_like(np.asarray(v, dtype=float))


def problem_from_config(cfg, kind=None):
    o = cfg["observation"]
    lik = cfg.likelihood_params()
    if kind is not None:
        lik["kind"] = kind
    return build_problem(
        cfg["system"],
        truth=cfg["truth"],
        observation=cfg.observation(),
        likelihood=MatrixNormalLikelihood(**lik),
        prior=cfg.prior(),
        initial_state=o["initial_state"],
        noise_std=o["noise_std"],
        random_state=cfg["seed"],
    )


def calibrate_once(cfg, seed, kind=None, problem=None):
    """One EnK run; returns ``(problem, history, rem_mean, rem_median)``."""
    if problem is None:
        problem = problem_from_config(cfg, kind)
    c = cfg["calibration"]
    history = run_enk(
        c["method"], problem, c["J_ensemble"], c["N"], random_state=seed, **cfg.enk_params()
    )
    truth = np.asarray(cfg["truth"], dtype=float)
    r_mean = np.array([rem(u, truth) for u in history.physical_means(problem.prior)])
    r_med = np.array([rem(u, truth) for u in history.physical_medians(problem.prior)])
    return problem, history, r_mean, r_med


def _calibrate_task(args):
    data, kind, seed = args
    from .config import ExperimentConfig

    cfg = ExperimentConfig(data)
    _, history, r_mean, r_med = calibrate_once(cfg, seed, kind)
    return history, r_mean, r_med


def _pmap(fn, tasks, jobs):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def _kinds(args, cfg):
    if args.kinds:
        return [k.strip() for k in args.kinds.split(",") if k.strip()]
    return [cfg["likelihood"]["kind"]]


def cmd_simulate(cfg, args):
    out = cfg["output_dir"]
    problem = problem_from_config(cfg)
    Y = problem.observed
    write_trajectory_csv(os.path.join(out, "trajectory.csv"), Y)
    if Y.values.shape[0] == 3:
        A = augment_second_order(Y)
        write_trajectory_csv(os.path.join(out, "augmented.csv"), A)
    else:
        A = Y
    gamma = estimate_gamma_obs(A.values, jitter=cfg["likelihood"]["jitter"])
    labels = list(A.component_labels)
    write_csv_rows(
        os.path.join(out, "gamma_obs.csv"),
        ["row", *labels],
        ([labels[i], *map(float, gamma[i])] for i in range(len(labels))),
    )
    write_config(cfg, out)
    log.info("wrote simulated %s trajectory (%d x %d) to %s", cfg["system"], *Y.values.shape, out)
    return 0


def write_config(cfg, out):
    os.makedirs(out, exist_ok=True)
    from .io import atomic_write_text

    atomic_write_text(os.path.join(out, "config.json"), cfg.to_json())


def cmd_calibrate(cfg, args):
    out = os.path.join(cfg["output_dir"], "calibrate")
    kinds = _kinds(args, cfg)
    seeds = [cfg["seed"] + r for r in range(cfg["repeats"])]
    tasks = [(cfg.data, k, s) for k in kinds for s in seeds]
    results = _pmap(_calibrate_task, tasks, cfg["jobs"])
    summary = {}
    comparison = []
    i = 0
    for kind in kinds:
        rem_rows = []
        best = []
        prior = cfg.prior()
        for r, seed in enumerate(seeds):
            history, r_mean, r_med = results[i]
            i += 1
            d = os.path.join(out, kind, f"repeat_{r}")
            history.to_csv(
                os.path.join(d, "history.csv"),
                prior=prior,
                forward_path=os.path.join(d, "forward.csv"),
                metadata={"kind": kind, "repeat": r, "config": cfg.data},
            )
            rem_rows += [[r, n, float(a), float(b)] for n, (a, b) in enumerate(zip(r_mean, r_med))]
            b = int(np.argmin(r_mean))
            best.append(float(r_mean[b]))
            comparison.append([kind, r, seed, b, float(r_mean[b]), float(r_med[b]), float(r_mean[-1])])
            log.info("%s repeat %d: best REM %.4g at iteration %d", kind, r, r_mean[b], b)
        write_csv_rows(os.path.join(out, kind, "rem.csv"), ["repeat", "iter", "rem_mean", "rem_median"], rem_rows)
        summary[kind] = {"best_rem": best, "summary": summarize(best)}
    write_csv_rows(
        os.path.join(out, "comparison.csv"),
        ["model", "repeat", "seed", "best_iter", "best_rem", "best_rem_median", "final_rem"],
        comparison,
    )
    write_json(os.path.join(out, "summary.json"), summary)
    write_config(cfg, cfg["output_dir"])
    return 0


def _parse_values(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _sweep_task(args):
    data, axis, value, kind, seed = args
    from .config import ExperimentConfig

    cfg = ExperimentConfig(data)
    key = "calibration.J_ensemble" if axis == "J_ensemble" else f"observation.{axis}"
    cfg = cfg.replace(**{key: int(value) if axis == "J_ensemble" else float(value)})
    _, _, r_mean, r_med = calibrate_once(cfg, seed, kind)
    return float(r_mean.min()), float(r_med[int(np.argmin(r_mean))])


def cmd_sweep(cfg, args):
    out = os.path.join(cfg["output_dir"], "sweep")
    sw = cfg["sweep"]
    axis = args.axis or sw["axis"]
    values = _parse_values(args.values) if args.values else list(sw["values"])
    kinds = _kinds(args, cfg) if args.kinds else list(sw["kinds"])
    seeds = [cfg["seed"] + r for r in range(cfg["repeats"])]
    keys = [(v, k, r, s) for v in values for k in kinds for r, s in enumerate(seeds)]
    results = _pmap(_sweep_task, [(cfg.data, axis, v, k, s) for v, k, _, s in keys], cfg["jobs"])
    rows = [[float(v), k, r, res[0]] for (v, k, r, _), res in zip(keys, results)]
    write_csv_rows(os.path.join(out, "sweep.csv"), ["axis_value", "model", "repeat", "rem"], rows)
    agg = []
    for v in values:
        for k in kinds:
            vals = [row[3] for row in rows if row[0] == float(v) and row[1] == k]
            s = summarize(vals)
            agg.append([float(v), k, s["n"], s["mean"], s["median"], s["std"]])
    write_csv_rows(
        os.path.join(out, "summary.csv"), ["axis_value", "model", "n", "mean_rem", "median_rem", "std_rem"], agg
    )
    write_json(os.path.join(out, "sweep.json"), {"axis": axis, "values": values, "kinds": kinds, "seeds": seeds})
    write_config(cfg, cfg["output_dir"])
    return 0


def _best_particle(histories, likelihood):
    X, G = pooled_training_data(histories)
    phi = likelihood.data_potential(G)
    return X[int(np.argmin(phi))]


def uq_calibration_seeds(seed, runs):
    """Independent seeds of the pooled calibration runs behind one ``uq`` call."""
    return [np.random.SeedSequence([seed, k]) for k in range(runs)]


def run_uq(cfg, zero_potential=False):
    """Calibrate, emulate and sample; returns a dict of results.

    Several independent EKI/EKS runs are pooled: the STGP posterior has
    narrow separated basins and a single collapsed ensemble can settle in a
    spurious one.
    """
    seed = cfg["seed"]
    e = cfg["emulation"]
    ucfg = cfg.replace(**{"calibration.method": e["calibration_method"]})
    problem = problem_from_config(ucfg)
    histories, rems = [], []
    for s in uq_calibration_seeds(seed, e["calibration_runs"]):
        _, history, r_mean, _ = calibrate_once(ucfg, s, problem=problem)
        histories.append(history)
        rems.append(r_mean)
    emulator = fit_emulator_from_history(
        histories,
        likelihood=problem.likelihood,
        selection=e["selection"],
        lengthscales=e["lengthscales"],
        variance=e["variance"],
        nugget=e["nugget"],
        max_points=e["max_points"],
    )
    phi = ZeroPotential() if zero_potential else EmulatedPotential(emulator, problem.likelihood)
    v0 = np.zeros(problem.dim) if zero_potential else _best_particle(histories, problem.likelihood)
    s = cfg["sampling"]
    chain = run_chain(
        s["sampler"],
        phi,
        s["n_samples"],
        n_burnin=s["n_burnin"],
        adapt=s["adapt"],
        random_state=seed + 1,
        v0=v0,
        step=s["beta"],
    )
    return {"problem": problem, "histories": histories, "rem": np.concatenate(rems), "emulator": emulator, "chain": chain}


def posterior_summary(chain, prior, truth=None):
    U = chain.physical(prior)
    med = np.median(U, axis=0)
    out = {
        "median": med.tolist(),
        "q025": np.quantile(U, 0.025, axis=0).tolist(),
        "q975": np.quantile(U, 0.975, axis=0).tolist(),
        "mean": U.mean(axis=0).tolist(),
        "acceptance_rate": chain.acceptance_rate,
        "step": chain.step,
    }
    if truth is not None:
        out["rem_median"] = rem(med, truth)
        out["relative_error_median"] = (np.abs(med - truth) / np.abs(truth)).tolist()
    return out


def thin_samples(samples, n):
    idx = np.linspace(0, len(samples) - 1, min(n, len(samples))).round().astype(int)
    return samples[idx]


def cmd_uq(cfg, args):
    out = os.path.join(cfg["output_dir"], "uq")
    res = run_uq(cfg, zero_potential=args.zero_potential)
    problem, chain = res["problem"], res["chain"]
    truth = np.asarray(cfg["truth"], dtype=float)
    chain.to_csv(os.path.join(out, "chain.csv"), prior=problem.prior, config=cfg.data)
    res["emulator"].save(os.path.join(out, "emulator.json"))
    summary = posterior_summary(chain, problem.prior, truth)
    summary["param_names"] = list(problem.system.param_names)
    summary["calibration_best_rem"] = float(np.min(res["rem"]))
    write_json(os.path.join(out, "summary.json"), summary)

    p = cfg["prediction"]
    U = thin_samples(chain.physical(problem.prior), p["n_samples"])
    horizon = problem.config.extended(p["horizon_factor"])
    truth_traj = integrate(problem.system, truth, horizon).values
    pred = predict_forward(U, problem.system, horizon)
    pred.to_csv(os.path.join(out, "prediction.csv"), truth=truth_traj)
    lik = problem.likelihood
    if lik.kind in ("stgp", "static"):
        mean, var = predict_posterior_stgp(U, problem.system, horizon, lik)
        from .analyze import ForwardPrediction

        post = ForwardPrediction(horizon.times, mean, np.sqrt(var), pred.component_labels, pred.n_used, pred.n_dropped)
        post.to_csv(os.path.join(out, "prediction_posterior.csv"), truth=truth_traj)
    write_config(cfg, cfg["output_dir"])
    log.info("posterior medians %s (acceptance %.3f)", np.round(summary["median"], 4), chain.acceptance_rate)
    return 0


def cmd_fisher(cfg, args):
    out = os.path.join(cfg["output_dir"], "fisher")
    trials = cfg["fisher"]["trials"] if args.trials is None else args.trials
    tol = cfg["fisher"]["tol"]
    seed = cfg["seed"]
    rng = np.random.default_rng(seed)
    s1, s2 = rng.integers(2**63, size=2)
    report = {
        "trials": int(trials),
        "seed": seed,
        "violate_condition": bool(args.violate_condition),
        "theorem_1": verify_theorem_1(trials, int(s1), violate=args.violate_condition, tol=tol),
        "theorem_2": verify_theorem_2(trials, int(s2), violate=args.violate_condition, tol=tol),
    }
    write_json(os.path.join(out, "report.json"), report)
    failed = 0
    for name in ("theorem_1", "theorem_2"):
        r = report[name]
        if r["condition_met"]:
            failed += r["violations"]
            log.info("%s: %d trials, %d violations", name, trials, r["violations"])
        else:
            log.info("%s: condition not met; %d Loewner-order violations logged", name, r["violations"])
    return 1 if failed else 0


HANDLERS = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "sweep": cmd_sweep,
    "uq": cmd_uq,
    "fisher": cmd_fisher,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="stip", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="JSON experiment configuration")
    parser.add_argument("--system", help="benchmark whose defaults to start from")
    parser.add_argument("--seed", type=int, help="base seed; repeat r uses seed + r")
    parser.add_argument("--repeats", type=int, help="number of seeded repeats")
    parser.add_argument("--jobs", type=int, help="parallel worker processes")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="dotted config override")
    parser.add_argument("--kinds", help="comma-separated likelihood kinds to compare")
    parser.add_argument("--axis", help="sweep axis: t0, T or J_ensemble")
    parser.add_argument("--values", help="comma-separated sweep values")
    parser.add_argument("--trials", type=int, help="fisher: number of random instances")
    parser.add_argument("--violate-condition", action="store_true", help="fisher: break the eigenvalue conditions")
    parser.add_argument("--zero-potential", action="store_true", help="uq: sample with the potential set to zero")
    return parser


def main(argv=None):
    logging.basicConfig(
        level=os.environ.get("STIP_LOG", "WARNING").upper(), format="%(levelname)s %(name)s: %(message)s"
    )
    args = build_parser().parse_args(argv)
    overrides = list(args.set)
    for flag, key in (("seed", "seed"), ("repeats", "repeats"), ("jobs", "jobs"), ("out", "output_dir")):
        val = getattr(args, flag)
        if val is not None:
            overrides.append(f"{key}={val if flag != 'out' else _json_str(val)}")
    try:
        cfg = load_config(args.config, overrides, system=args.system)
        return HANDLERS[args.command](cfg, args)
    except StipError as err:
        print(f"stip: error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"stip: I/O error: {err}", file=sys.stderr)
        return 2


def _json_str(s):
    import json

    return json.dumps(s)


if __name__ == "__main__":
    sys.exit(main())
