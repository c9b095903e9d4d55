"""Command-line front end: train / sample / evaluate / oracle-check.

Configuration is one JSON file; every training default mirrors the
benchmark settings (lr 1e-4, batch 1024, buffer 30000, 1000 outer x 1000
inner steps, 100 EM steps, constant sigma=2.5), and --desk-scale divides
the outer steps, inner steps, and buffer by ten for laptop-size runs.
Run directories are self-contained: config copy, checkpoints, run log,
summary, and the exact mixture means used, so evaluation never needs
global state.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from typing import Optional

import numpy as np

from . import couplings as cpl
from . import evaluate as ev
from . import oracle, targets
from .errors import ConfigError, DivergenceError, DriftmatchError
from .model import PhiNet, load_checkpoint
from .schedules import Constant, schedule_from_config
from .trainer import (TrainConfig, init_state, outer_step,
                      save_train_checkpoint, simulate_forward)

CSV_ROW_LIMIT = 10_000
REPORT_SCHEMA = "driftmatch-report-v1"

_TRAIN_DEFAULTS = {
    "outer_steps": 1000, "grad_steps": 1000, "buffer_size": 30000,
    "batch_size": 1024, "em_steps": 100, "eta": 0.0, "lr": 1e-4,
    "clip": 1.0, "weight_decay": 0.0, "seed": 0, "t_cut": 1e-3,
    "hidden": 512, "blocks": 6, "n_freq": 64, "activation": "gelu",
    "checkpoint_interval": 100, "stratified_t": False, "reuse_fraction": 0.0,
}


def _workers_from_env() -> int:
    raw = os.environ.get("DRIFTMATCH_WORKERS", "1")
    try:
        workers = int(raw)
    except ValueError:
        raise ConfigError(f"DRIFTMATCH_WORKERS must be an integer, got {raw!r}")
    if workers < 1:
        raise ConfigError("DRIFTMATCH_WORKERS must be >= 1")
    return workers


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as err:
        raise ConfigError(
            f"config parse error at line {err.lineno}, column {err.colno}: {err.msg}")


def _cv_from_config(spec, schedule):
    if spec in (None, "gamma"):
        return cpl.FixedGamma()
    if spec == "learned":
        return cpl.Learned(PhiNet(schedule))
    if isinstance(spec, dict) and spec.get("kind") == "fixed":
        value = float(spec["value"])
        return cpl.FixedFunction(lambda t: np.full_like(np.asarray(t, dtype=np.float64), value))
    raise ConfigError(f"unknown control-variate spec {spec!r}")


def _coupling_from_config(spec, prior, target, schedule, target_cfg):
    name = spec if isinstance(spec, str) else (spec or {}).get("kind", "bms")
    if name == "bms":
        return cpl.BmsIndependent()
    if name == "as":
        return cpl.AsReverseConditional()
    if name == "sb":
        # The corrector is analytic only for the Gaussian pair; any other
        # target needs an injected corrector through the library API.
        if getattr(target, "name", None) != "gaussian" or prior.kind != "gaussian":
            raise ConfigError("the sb coupling is configurable only for a "
                              "gaussian prior/target pair (its corrector is "
                              "analytic); inject a corrector via the API otherwise")
        mu_T = np.broadcast_to(np.asarray(target_cfg.get("mean", 0.0),
                                          dtype=np.float64), (target.dim,))
        pair = oracle.GaussianPair(schedule, mu0=prior.mean, s0=prior.scale,
                                   muT=mu_T,
                                   sT=float(target_cfg.get("scale", 1.0)))
        return cpl.SbJoint(oracle.gaussian_sb_corrector(pair))
    raise ConfigError(f"unknown coupling {name!r} (expected bms, as, or sb)")


def build_experiment(cfg: dict):
    """Resolve a parsed config into live objects: (TrainConfig, extras)."""
    known = {"target", "prior", "schedule", "coupling", "cv", "train",
             "metrics", "out_dir", "name"}
    unknown = set(cfg) - known
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    if "target" not in cfg:
        raise ConfigError("config is missing the 'target' section")
    target = targets.target_from_config(cfg["target"])
    schedule = schedule_from_config(cfg.get("schedule",
                                            {"kind": "constant", "sigma": 2.5, "T": 1.0}))
    prior = targets.prior_from_config(cfg.get("prior", {"kind": "gaussian",
                                                        "mean": 0.0, "scale": 1.0}),
                                      dim=target.dim)
    coupling = _coupling_from_config(cfg.get("coupling", "bms"), prior, target,
                                     schedule, cfg["target"])
    cv = _cv_from_config(cfg.get("cv", "gamma"), schedule)

    train_cfg = dict(_TRAIN_DEFAULTS)
    extra = set(cfg.get("train", {})) - set(_TRAIN_DEFAULTS)
    if extra:
        raise ConfigError(f"unknown train fields: {sorted(extra)}")
    train_cfg.update(cfg.get("train", {}))
    tc = TrainConfig(schedule=schedule, prior=prior, target=target,
                     coupling=coupling, cv=cv, **train_cfg)
    extras = {"metrics": cfg.get("metrics", ["mode_tvd", "sliced_tvd"]),
              "out_dir": cfg.get("out_dir", "runs"),
              "name": cfg.get("name", "run"),
              "workers": _workers_from_env()}
    return tc, extras


def apply_desk_scale(cfg: dict) -> dict:
    train = dict(cfg.get("train", {}))
    for key in ("outer_steps", "grad_steps", "buffer_size"):
        base = train.get(key, _TRAIN_DEFAULTS[key])
        train[key] = max(1, base // 10)
    out = dict(cfg)
    out["train"] = train
    return out


# ---------------------------------------------------------------------------
# sample file I/O


def write_samples(path, samples: np.ndarray, seed: int):
    samples = np.asarray(samples, dtype=np.float64)
    n, d = samples.shape if samples.ndim == 2 else (0, 0)
    if n <= CSV_ROW_LIMIT:
        header = ",".join(f"x{i}" for i in range(d)) if d else "empty"
        np.savetxt(path, samples, delimiter=",", header=header, comments="")
    else:
        with open(path, "wb") as fh:
            fh.write(np.ascontiguousarray(samples, dtype="<f8").tobytes())
        with open(str(path) + ".json", "w") as fh:
            json.dump({"rows": int(n), "cols": int(d), "dtype": "<f8",
                       "order": "C", "seed": seed}, fh)


def read_samples(path) -> np.ndarray:
    sidecar = str(path) + ".json"
    if os.path.exists(sidecar):
        with open(sidecar) as fh:
            meta = json.load(fh)
        raw = np.fromfile(path, dtype="<f8")
        return raw.reshape(meta["rows"], meta["cols"]).astype(np.float64)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return np.asarray(data, dtype=np.float64)


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.desk_scale:
        cfg = apply_desk_scale(cfg)
    if args.seed is not None:
        cfg.setdefault("train", {})["seed"] = args.seed
    tc, extras = build_experiment(cfg)

    stamp = time.strftime("%Y%m%d-%H%M%S")
    out_base = args.out or extras["out_dir"]
    run_dir = os.path.join(out_base, f"{extras['name']}-{stamp}-s{tc.seed}")
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "config.json"), "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
    if isinstance(tc.target, targets.GmmTarget):
        np.save(os.path.join(run_dir, "gmm_means.npy"), tc.target.means)

    meta = {"prior": cfg.get("prior"), "target": cfg.get("target")}
    state = init_state(tc)
    interval = tc.checkpoint_interval
    status = 0
    try:
        while state.outer_index < tc.outer_steps:
            outer_step(state)
            if interval and state.outer_index % interval == 0:
                save_train_checkpoint(
                    state, os.path.join(run_dir, f"ckpt_{state.outer_index:05d}.dmck"),
                    meta=meta)
    except DivergenceError as err:
        print(f"training diverged: {err}", file=sys.stderr)
        status = 3
    save_train_checkpoint(state, os.path.join(run_dir, "final.dmck"), meta=meta)
    state.log.to_csv(os.path.join(run_dir, "runlog.csv"))
    summary = state.log.summary()
    summary.update({"run_dir": run_dir, "seed": tc.seed,
                    "skipped_targets": state.skipped_targets,
                    "diverged": bool(status)})
    with open(os.path.join(run_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    print(run_dir)
    return status


def _simulate_from_checkpoint(ckpt_path, n: int, seed: int):
    field, header, _ = load_checkpoint(ckpt_path)
    extra = header.get("extra", {})
    meta = extra.get("meta", {})
    if not meta.get("prior"):
        raise ConfigError("checkpoint has no embedded prior; pass --config")
    prior = targets.prior_from_config(meta["prior"], dim=field.dim)
    em_steps = extra.get("train", {}).get("em_steps", 100)
    t_cut = extra.get("train", {}).get("t_cut", field.t_cut)
    rng = np.random.default_rng(seed)
    _, xT = simulate_forward(field, prior, field.schedule, em_steps, n, rng,
                             t_cut=t_cut)
    return xT, meta


def cmd_sample(args) -> int:
    if args.n == 0:
        field, header, _ = load_checkpoint(args.checkpoint)
        write_samples(args.out, np.zeros((0, field.dim)), args.seed)
        return 0
    xT, _ = _simulate_from_checkpoint(args.checkpoint, args.n, args.seed)
    write_samples(args.out, xT, args.seed)
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    target = targets.target_from_config(cfg["target"])
    means_file = getattr(args, "means", None)
    if means_file:
        target = targets.gmm_from_means(np.load(means_file))
    metrics = args.metrics.split(",") if args.metrics else \
        cfg.get("metrics", ["mode_tvd", "sliced_tvd"])
    rng = np.random.default_rng(args.seed)

    if args.samples:
        model = read_samples(args.samples)
    elif args.checkpoint:
        model, _ = _simulate_from_checkpoint(args.checkpoint, args.n, args.seed)
    else:
        raise ConfigError("pass --samples or --checkpoint")

    reference = None
    if args.reference:
        reference = read_samples(args.reference)
    elif getattr(target, "exact_sampler", None) is not None:
        reference = target.exact_sampler(model.shape[0], rng)

    report = ev.MetricsReport(n_samples=model.shape[0], seed=args.seed)
    for metric in metrics:
        if metric == "mode_tvd":
            if not isinstance(target, targets.GmmTarget):
                raise ConfigError("mode_tvd needs a mixture target")
            report.mode_tvd = ev.mode_tvd(target, model)
        elif metric == "sliced_tvd":
            if reference is None:
                raise ConfigError("sliced_tvd needs a reference: pass --reference")
            report.sliced_tvd = ev.sliced_tvd(model, reference, seed=args.seed)
        elif metric == "w2":
            if reference is None:
                raise ConfigError("w2 needs a reference: pass --reference")
            m = min(len(model), len(reference), 4096)
            report.w2 = ev.wasserstein2(model[:m], reference[:m])
        elif metric == "energy_w2":
            if reference is None:
                raise ConfigError("energy_w2 needs a reference: pass --reference")
            m = min(len(model), len(reference))
            report.energy_w2 = ev.energy_w2(target, model[:m], reference[:m])
        else:
            raise ConfigError(f"unknown metric {metric!r}")

    payload = {"schema": REPORT_SCHEMA, "metrics": report.to_dict(),
               "n_samples": report.n_samples, "seed": report.seed,
               "target": cfg["target"]}
    out = args.out or "report.json"
    with open(out, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    base = os.path.splitext(out)[0]
    with open(base + ".csv", "w") as fh:
        fh.write("metric,value\n")
        for key, value in report.to_dict().items():
            if key in ("n_samples", "seed") or value is None:
                continue
            fh.write(f"{key},{value!r}\n")
    if "energy_w2" in metrics and reference is not None:
        _write_energy_histograms(base, target, model, reference)
    print(json.dumps(payload["metrics"]))
    return 0


def _write_energy_histograms(base, target, model, reference, bins: int = 50):
    em = -np.asarray(target.log_rho(model), dtype=np.float64)
    er = -np.asarray(target.log_rho(reference), dtype=np.float64)
    lo = min(em.min(), er.min())
    hi = max(em.max(), er.max())
    hm, edges = np.histogram(em, bins=bins, range=(lo, hi))
    hr, _ = np.histogram(er, bins=bins, range=(lo, hi))
    with open(base + "_energy_hist.csv", "w") as fh:
        fh.write("bin_left,bin_right,model,reference\n")
        for i in range(bins):
            fh.write(f"{edges[i]!r},{edges[i+1]!r},{hm[i]},{hr[i]}\n")


# ---------------------------------------------------------------------------
# oracle-check


def _check_score_decompositions(schedule) -> float:
    """Max residual of both transition-score decompositions."""
    from .reference import score_bridge, score_t_given_0, score_T_given_t
    rng = np.random.default_rng(7)
    n, d = 2000, 3
    x0 = rng.standard_normal((n, d))
    xT = rng.standard_normal((n, d))
    xt = rng.standard_normal((n, d))
    t = rng.uniform(0.05, 0.95 * schedule.T, size=n)
    g = schedule.gamma(t)[:, None]
    kT = schedule.kappa_T
    sb = score_bridge(schedule, x0, xT, xt, t)
    lhs_T = score_T_given_t(schedule, xt, xT, t)
    lhs_0 = score_t_given_0(schedule, x0, xt, t)
    r1 = lhs_T - ((xT - x0) / kT + g * sb)
    r2 = lhs_0 - ((1.0 - g) * sb - (xT - x0) / kT)
    return float(max(np.max(np.abs(r1)), np.max(np.abs(r2))))


def _check_nelson(schedule) -> float:
    pair = oracle.GaussianPair(schedule, mu0=np.array([1.0, -0.5]), s0=0.8,
                               muT=np.array([-2.0, 1.5]), sT=1.7)
    xs = np.linspace(-4.0, 4.0, 50)
    worst = 0.0
    for t in np.linspace(0.02, 0.98 * schedule.T, 50):
        x = np.stack([xs, -xs], axis=1)
        lhs = oracle.gaussian_optimal_drift(pair, x, float(t)) \
            + oracle.gaussian_backward_drift(pair, x, float(t))
        rhs = float(schedule.sigma(t)) * oracle.gaussian_marginal_score(pair, x, float(t))
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


def _check_as_sb_bitwise(schedule) -> float:
    prior = targets.DiracPrior(np.zeros(2))
    target = targets.gaussian_target(np.array([1.0, -1.0]), 1.3)
    rng = np.random.default_rng(3)
    xT = rng.standard_normal((256, 2))
    t = rng.uniform(0.1, 0.9, size=256)
    ref = cpl.reference_marginal_T(prior, schedule)

    def corrector(x):
        return (ref.mean - x) / ref.var

    a = cpl.xi_as(ref, target, schedule, xT, t)
    b = cpl.xi_sb(corrector, target, schedule, xT, t)
    return 0.0 if np.array_equal(a, b) else float(np.max(np.abs(a - b)))


def _check_cv_optimum(schedule) -> float:
    pair = oracle.GaussianPair(schedule, mu0=np.array([0.5]), s0=1.1,
                               muT=np.array([-1.0]), sT=0.6)
    js0, jsT = oracle.gaussian_independent_joint_scores(pair)
    rng = np.random.default_rng(11)
    n = 4000
    worst = 0.0
    for t in (0.25, 0.5, 0.75):
        x0 = pair.mu0 + pair.s0 * rng.standard_normal((n, 1))
        xT = pair.muT + pair.sT * rng.standard_normal((n, 1))
        from .reference import sample_bridge
        xt = sample_bridge(schedule, x0, xT, np.full(n, t), rng)
        c_star = cpl.optimal_scalar_cv(js0, jsT, schedule, x0, xT, xt, t)
        grid = np.linspace(0.001, 0.999, 999)
        best, best_var = None, np.inf
        g = float(schedule.gamma(t))
        k = float(schedule.kappa(t))
        g0 = js0(x0, xT) / (1.0 - g)
        gT = jsT(x0, xT) / g
        gv = (x0 - xt) / k
        for c in grid:
            xi = (1.0 - c) * g0 + c * gT - gv
            var = float(np.mean(np.sum((xi - xi.mean(axis=0)) ** 2, axis=1)))
            if var < best_var:
                best, best_var = c, var
        worst = max(worst, abs(c_star - best))
    return worst


def _check_damped_minimizer(schedule) -> float:
    """Closed-form η-regularized least squares vs α-mixed projection."""
    rng = np.random.default_rng(5)
    n, p = 400, 3
    feats = np.concatenate([np.ones((n, 1)), rng.standard_normal((n, p - 1))], axis=1)
    xi = rng.standard_normal(n)
    w_i = rng.standard_normal(p)
    gram = feats.T @ feats
    proj = np.linalg.solve(gram, feats.T @ xi)
    worst = 0.0
    for eta in (0.0, 1.0, 10.0):
        alpha = 1.0 / (1.0 + eta)
        w_min = np.linalg.solve((1.0 + eta) * gram,
                                feats.T @ xi + eta * gram @ w_i)
        w_mix = alpha * proj + (1.0 - alpha) * w_i
        worst = max(worst, float(np.max(np.abs(w_min - w_mix))))
    return worst


ORACLE_CHECKS = [
    ("score-decompositions", _check_score_decompositions, 1e-10),
    ("nelson-duality", _check_nelson, 1e-10),
    ("as-sb-bitwise", _check_as_sb_bitwise, 0.0),
    ("cv-optimum-vs-grid", _check_cv_optimum, 0.02),
    ("damped-minimizer", _check_damped_minimizer, 1e-6),
]


def oracle_check(schedule=None) -> list:
    """Run the identity suite; returns row dicts (name, value, tol, ok)."""
    s = schedule if schedule is not None else Constant(sigma=1.5, T=1.0)
    rows = []
    for name, fn, tol in ORACLE_CHECKS:
        value = fn(s)
        rows.append({"name": name, "value": value, "tol": tol,
                     "ok": bool(value <= tol)})
    return rows


def cmd_oracle_check(args) -> int:
    rows = oracle_check()
    width = max(len(r["name"]) for r in rows)
    failures = 0
    for r in rows:
        status = "PASS" if r["ok"] else "FAIL"
        failures += 0 if r["ok"] else 1
        print(f"{r['name']:<{width}}  {r['value']:.3e}  <= {r['tol']:.0e}  {status}")
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="driftmatch",
                                     description="fixed-point diffusion-matching sampler")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run the training loop from a config")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--out", default=None)
    p_train.add_argument("--desk-scale", action="store_true")
    p_train.set_defaults(fn=cmd_train)

    p_sample = sub.add_parser("sample", help="draw terminal samples from a checkpoint")
    p_sample.add_argument("--checkpoint", required=True)
    p_sample.add_argument("--n", type=int, required=True)
    p_sample.add_argument("--seed", type=int, default=0)
    p_sample.add_argument("--out", required=True)
    p_sample.set_defaults(fn=cmd_sample)

    p_eval = sub.add_parser("evaluate", help="compute metrics for a run")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--checkpoint", default=None)
    p_eval.add_argument("--samples", default=None)
    p_eval.add_argument("--reference", default=None)
    p_eval.add_argument("--means", default=None,
                        help="gmm_means.npy from the run directory")
    p_eval.add_argument("--metrics", default=None)
    p_eval.add_argument("--n", type=int, default=2000)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--out", default=None)
    p_eval.set_defaults(fn=cmd_evaluate)

    p_oracle = sub.add_parser("oracle-check", help="verify the closed-form identities")
    p_oracle.set_defaults(fn=cmd_oracle_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except DriftmatchError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
