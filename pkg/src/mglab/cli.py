"""Command-line harness: generate, solve, run, diagnose, measure complexity.

Exit codes: 0 success, 1 a numerical check failed, 2 configuration error.
Run directories are self-contained: the instance and function class actually
used are copied in canonically, so diagnostics can replay a run from its
directory alone.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import diagnostics as diag
from . import jsonio
from .function_class import FunctionClass, QFunction, build_closure_class, compute_kappa
from .game import MarkovPolicy, TabularMG
from .instances import gen_linear_mg, gen_random_tabular
from .oracle import solve_nash
from .selfplay import (
    EpisodeArtifact,
    HyperParams,
    RunArtifacts,
    default_hyperparams,
    run_selfplay,
    write_regret_csv,
)

log = logging.getLogger("mglab")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2

LEMMA_TOL = 1e-8


class ConfigError(Exception):
    pass


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="base RNG seed")
    p.add_argument("--out", default=".", help="output file or directory")
    p.add_argument("--strict", action="store_true",
                   help="turn hyperparameter warnings into errors")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mglab")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a benchmark instance")
    kind = g.add_mutually_exclusive_group(required=True)
    kind.add_argument("--tabular", action="store_true")
    kind.add_argument("--linear", action="store_true")
    g.add_argument("--H", type=int, required=True)
    g.add_argument("--states", type=int, required=True)
    g.add_argument("--actions", type=int, nargs=2, required=True, metavar=("A", "B"))
    g.add_argument("--d", type=int, help="feature dimension (linear only)")
    g.add_argument("--one-hot", action="store_true", help="identity features (linear)")
    g.add_argument("--sparsity", type=float, default=0.0)
    _common_flags(g)

    s = sub.add_parser("solve", help="exact equilibrium of an instance")
    s.add_argument("--instance", required=True)
    _common_flags(s)

    r = sub.add_parser("run", help="self-play run(s) over seeds")
    r.add_argument("--instance", required=True)
    r.add_argument("--class", dest="class_path", help="function-class JSON file")
    r.add_argument("--class-build", action="store_true",
                   help="build a closure class around the equilibrium instead")
    r.add_argument("--class-count", type=int, default=1,
                   help="number of perturbation seeds for --class-build")
    r.add_argument("--class-noise", type=float, default=0.3)
    r.add_argument("--class-depth", type=int, default=0)
    r.add_argument("--class-seed", type=int, default=0)
    r.add_argument("--T", type=int, required=True)
    r.add_argument("--hyper", choices=("auto", "manual"), default="auto")
    r.add_argument("--eta", type=float)
    r.add_argument("--lambda", dest="lam", type=float)
    r.add_argument("--seeds", type=int, nargs="+", help="run seeds (default: --seed)")
    r.add_argument("--no-artifacts", action="store_true")
    r.add_argument("--posterior-dump", action="store_true",
                   help="write the fully enumerated per-episode posteriors as CSV")
    r.add_argument("--workers", type=int, default=1)
    _common_flags(r)

    d = sub.add_parser("diag", help="diagnostics battery on a run or fresh probes")
    d.add_argument("--run", help="recorded run directory (seed subdirectory)")
    d.add_argument("--instance")
    d.add_argument("--class", dest="class_path")
    d.add_argument("--probes", type=int, default=50)
    _common_flags(d)

    k = sub.add_parser("kappa", help="prior-mass complexity of a class on an instance")
    k.add_argument("--instance", required=True)
    k.add_argument("--class", dest="class_path", required=True)
    k.add_argument("--epsilon", type=float, nargs="+", required=True)
    _common_flags(k)
    return ap


def cmd_gen(args) -> int:
    if args.H <= 0 or args.states <= 0 or min(args.actions) <= 0:
        raise ConfigError("dimensions must be positive")
    na, nb = args.actions
    if args.linear:
        if args.d is None:
            raise ConfigError("--linear requires --d")
        mg, spec = gen_linear_mg(args.H, args.states, na, nb, args.d,
                                 seed=args.seed, one_hot=args.one_hot)
    else:
        mg = gen_random_tabular(args.H, args.states, na, nb,
                                reward_sparsity=args.sparsity, seed=args.seed)
    out = args.out
    if os.path.isdir(out):
        out = os.path.join(out, "instance.json")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    jsonio.save_instance(out, mg)
    print(f"wrote {out}")
    if args.linear:
        sidecar = os.path.join(os.path.dirname(os.path.abspath(out)), "linear_spec.json")
        jsonio.save_linear_spec(sidecar, spec)
        print(f"wrote {sidecar}")
    return EXIT_OK


def cmd_solve(args) -> int:
    mg = jsonio.load_instance(args.instance)
    nash = solve_nash(mg)
    value = nash.value_at(mg.initial_state)
    os.makedirs(args.out, exist_ok=True)
    jsonio.write_json(os.path.join(args.out, "nash.json"), {
        "value_at_initial": value,
        "v_star": nash.v_star,
        "q_star": nash.q_star,
        "mu_star": nash.mu_star.probs,
        "nu_star": nash.nu_star.probs,
    })
    print(format(value, ".12g"))
    return EXIT_OK


def _build_class(mg: TabularMG, args) -> FunctionClass:
    nash = solve_nash(mg)
    beta = mg.horizon + 1.0
    rng = np.random.default_rng(args.class_seed)
    seeds = []
    for _ in range(args.class_count):
        scale = 1.0 - args.class_noise * rng.random(nash.q_star.shape)
        seeds.append(QFunction(layers=nash.q_star * scale, beta=beta))
    result = build_closure_class(mg, seeds, beta=beta, depth=args.class_depth,
                                 include_best_responses=True)
    log.info("built class sizes=%s completeness defect=%.3g",
             result.fc.sizes, result.defect)
    return result.fc


def _auto_hyperparams(mg, fc, T, seed):
    """Schedule from the measured class complexity and the linear bound.

    The complexity at eps = beta/T^2 is +inf whenever the class misses exact
    closure; the uniform-prior log-cardinality then stands in for it (logged,
    and recorded in run_meta).
    """
    beta = fc.beta
    d = mg.num_states * mg.num_a * mg.num_b
    dc = diag.dc_bound_linear(d, mg.horizon, T)
    eps = beta / T**2
    kres = compute_kappa(mg, fc, eps)
    kappa = kres.kappa
    fallback = not math.isfinite(kappa)
    if fallback:
        kappa = fc.log_size()
        log.info("kappa(%.3g) infinite (offender %s); using log class size %.4g",
                 eps, kres.offender, kappa)
    hp = default_hyperparams(beta, T, kappa, dc, seed=seed)
    meta = {"kappa_used": kappa, "kappa_fallback": fallback, "dc_used": dc,
            "kappa_epsilon": eps}
    return hp, meta


def _run_one_seed(instance_path, class_path, eta, lam, T, beta, seed, seed_dir,
                  strict, keep_artifacts, dump_posteriors=False):
    mg = jsonio.load_instance(instance_path)
    fc = jsonio.load_function_class(class_path)
    hp = HyperParams(eta=eta, lam=lam, T=T, beta=beta, seed=seed)
    os.makedirs(seed_dir, exist_ok=True)
    dump = os.path.join(seed_dir, "posterior.csv") if dump_posteriors else None
    records, artifacts = run_selfplay(mg, fc, hp, record_artifacts=keep_artifacts,
                                      strict=strict, posterior_dump=dump)
    write_regret_csv(records, os.path.join(seed_dir, "regret.csv"))
    if keep_artifacts:
        eps = [{
            "f": ep.f_indices,
            "g": ep.g_indices,
            "nu": np.argmax(ep.nu.probs, axis=2),
        } for ep in artifacts.episodes]
        jsonio.write_json(os.path.join(seed_dir, "artifacts.json"), {"episodes": eps})
    return [r.cum_regret for r in records]


def cmd_run(args) -> int:
    mg = jsonio.load_instance(args.instance)
    if args.class_path and args.class_build:
        raise ConfigError("--class and --class-build are mutually exclusive")
    if args.class_path:
        fc = jsonio.load_function_class(args.class_path)
    elif args.class_build:
        fc = _build_class(mg, args)
    else:
        raise ConfigError("one of --class or --class-build is required")
    if args.T <= 0:
        raise ConfigError("--T must be positive")
    seeds = args.seeds if args.seeds else [args.seed]
    if len(set(seeds)) != len(seeds):
        raise ConfigError("run seeds must be distinct")

    os.makedirs(args.out, exist_ok=True)
    instance_copy = os.path.join(args.out, "instance.json")
    class_copy = os.path.join(args.out, "class.json")
    jsonio.save_instance(instance_copy, mg)
    jsonio.save_function_class(class_copy, fc)

    auto_meta = {}
    if args.hyper == "auto":
        hp0, auto_meta = _auto_hyperparams(mg, fc, args.T, seeds[0])
        eta, lam = hp0.eta, hp0.lam
    else:
        if args.eta is None or args.lam is None:
            raise ConfigError("--hyper manual requires --eta and --lambda")
        eta, lam = args.eta, args.lam

    meta = {
        "command": "run",
        "instance_file": "instance.json",
        "class_file": "class.json",
        "instance_hash": jsonio.sha256_of(mg.to_dict()),
        "class_hash": jsonio.sha256_of(fc.to_dict()),
        "T": args.T,
        "eta": eta,
        "lambda": lam,
        "beta": fc.beta,
        "hyper_mode": args.hyper,
        "seeds": seeds,
        "artifacts": not args.no_artifacts,
    }
    meta.update(auto_meta)
    jsonio.write_json(os.path.join(args.out, "run_meta.json"), meta)

    jobs = [(instance_copy, class_copy, eta, lam, args.T, fc.beta, s,
             os.path.join(args.out, f"seed-{s}"), args.strict, not args.no_artifacts,
             args.posterior_dump)
            for s in seeds]
    if args.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            curves = list(pool.map(_run_one_seed, *zip(*jobs)))
    else:
        curves = [_run_one_seed(*job) for job in jobs]

    curves = np.asarray(curves)  # (n_seeds, T)
    mean = curves.mean(axis=0)
    stderr = (curves.std(axis=0, ddof=1) / math.sqrt(len(seeds))
              if len(seeds) > 1 else np.zeros(args.T))
    jsonio.write_json(os.path.join(args.out, "summary.json"), {
        "seeds": seeds,
        "T": args.T,
        "final_cum_regret": {f"seed-{s}": float(c[-1]) for s, c in zip(seeds, curves)},
        "mean_cum_regret": mean,
        "stderr_cum_regret": stderr,
    })
    print(f"mean final cumulative regret: {mean[-1]:.6g}")
    return EXIT_OK


def _load_run(run_dir):
    """Load one recorded seed directory (or a batch directory's first seed)."""
    run_dir = os.path.abspath(run_dir)
    if os.path.exists(os.path.join(run_dir, "run_meta.json")):
        batch = run_dir
        meta = jsonio.read_json(os.path.join(batch, "run_meta.json"))
        run_dir = os.path.join(batch, f"seed-{meta['seeds'][0]}")
    else:
        batch = os.path.dirname(run_dir)
        meta = jsonio.read_json(os.path.join(batch, "run_meta.json"))
    mg = jsonio.load_instance(os.path.join(batch, meta["instance_file"]))
    fc = jsonio.load_function_class(os.path.join(batch, meta["class_file"]))
    raw = jsonio.read_json(os.path.join(run_dir, "artifacts.json"))
    episodes = []
    for ep in raw["episodes"]:
        mu = fc.policy_from_indices(ep["f"])
        nu_cols = np.asarray(ep["nu"], dtype=int)
        nu = MarkovPolicy.pure(mg, "min", nu_cols)
        episodes.append(EpisodeArtifact(f_indices=ep["f"], g_indices=ep["g"],
                                        mu=mu, nu=nu))
    nash = solve_nash(mg)
    hp = HyperParams(eta=meta["eta"], lam=meta["lambda"], T=meta["T"],
                     beta=meta["beta"])
    return meta, RunArtifacts(mg=mg, fc=fc, hp=hp, nash=nash,
                              episodes=episodes, records=[])


def _diag_run(args) -> int:
    meta, artifacts = _load_run(args.run)
    mg, fc = artifacts.mg, artifacts.fc
    nash = artifacts.nash
    report = {"mode": "run", "checks": {}}

    # Value-decomposition checks replayed on every recorded episode. The
    # booster identity uses the stored executed nu, so any corruption of the
    # artifacts breaks the equality.
    worst_slack = math.inf
    worst_diff = 0.0
    for ep in artifacts.episodes:
        f = fc.member(ep.f_indices)
        g = fc.member(ep.g_indices)
        bound = diag.check_main_value_bound(mg, f, ep.nu, nash=nash)
        worst_slack = min(worst_slack, bound.slack)
        ident = diag.check_booster_value_identity(mg, f, g, mu=ep.mu, nu=ep.nu)
        worst_diff = max(worst_diff, ident.abs_diff)
    report["checks"]["main_value_bound"] = {
        "n": len(artifacts.episodes), "min_slack": worst_slack,
        "pass": worst_slack >= -LEMMA_TOL,
    }
    report["checks"]["booster_value_identity"] = {
        "n": len(artifacts.episodes), "max_abs_diff": worst_diff,
        "pass": worst_diff <= LEMMA_TOL,
    }

    trace = diag.dc_trace(artifacts)
    d = mg.num_states * mg.num_a * mg.num_b
    K = diag.dc_bound_linear(d, mg.horizon, len(artifacts.episodes))
    dc_result = diag.check_decoupling(trace, K)
    report["checks"]["decoupling"] = {
        "kind": "realized-trace dc check",
        "K": K,
        "d": d,
        "lhs_total": trace.lhs_total,
        "rhs_total": trace.rhs_total,
        "mu_grid": {str(mu): res for mu, res in dc_result.items()},
        "pass": all(res["ok"] for res in dc_result.values()),
    }

    os.makedirs(args.out, exist_ok=True)
    lines = ["t,h,lhs_term,rhs_inner"]
    T, H = trace.lhs_term.shape
    for t in range(T):
        for h in range(H):
            lines.append(f"{t + 1},{h + 1},"
                         f"{trace.lhs_term[t, h]:.12g},{trace.rhs_inner[t, h]:.12g}")
    with open(os.path.join(args.out, "diag.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")

    ok = all(c["pass"] for c in report["checks"].values())
    report["pass"] = ok
    jsonio.write_json(os.path.join(args.out, "lemma_report.json"), report)
    print(f"diagnostics: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def _diag_probes(args) -> int:
    if not args.instance or not args.class_path:
        raise ConfigError("probe mode needs --instance and --class")
    mg = jsonio.load_instance(args.instance)
    fc = jsonio.load_function_class(args.class_path)
    nash = solve_nash(mg)
    rng = np.random.default_rng(args.seed)
    n = args.probes
    report = {"mode": "probes", "checks": {}}

    def random_member():
        return fc.member([int(rng.integers(k)) for k in fc.sizes])

    def random_min_policy():
        raw = rng.random((mg.horizon, mg.num_states, mg.num_b))
        return MarkovPolicy(side="min", probs=raw / raw.sum(axis=2, keepdims=True))

    slacks = [diag.check_main_value_bound(mg, random_member(), random_min_policy(),
                                          nash=nash).slack for _ in range(n)]
    report["checks"]["main_value_bound"] = {
        "n": n, "min_slack": min(slacks), "pass": min(slacks) >= -LEMMA_TOL,
    }

    diffs = [diag.check_booster_value_identity(mg, random_member(), random_member())
             .abs_diff for _ in range(n)]
    report["checks"]["booster_value_identity"] = {
        "n": n, "max_abs_diff": max(diffs), "pass": max(diffs) <= LEMMA_TOL,
    }

    moment_fail = None
    for _ in range(n):
        f = random_member()
        h = int(rng.integers(mg.horizon))
        x = int(rng.integers(mg.num_states))
        a = int(rng.integers(mg.num_a))
        b = int(rng.integers(mg.num_b))
        try:
            diag.excess_loss_moments(mg, f, h, x, a, b)
        except diag.DiagnosticError as exc:
            moment_fail = str(exc)
            break
    report["checks"]["excess_loss_moments"] = {
        "n": n, "pass": moment_fail is None, "failure": moment_fail,
    }

    ell_ok = True
    for _ in range(10):
        dim = int(rng.integers(2, 6))
        vecs = rng.normal(size=(20, dim))
        vecs /= np.maximum(np.linalg.norm(vecs, axis=1, keepdims=True), 1.0)
        _, _, ok = diag.elliptical_potential_check(vecs, np.eye(dim))
        ell_ok &= ok
    report["checks"]["elliptical_potential"] = {"n": 10, "pass": bool(ell_ok)}

    ok = all(c["pass"] for c in report["checks"].values())
    report["pass"] = ok
    os.makedirs(args.out, exist_ok=True)
    jsonio.write_json(os.path.join(args.out, "lemma_report.json"), report)
    print(f"diagnostics: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_diag(args) -> int:
    if args.run:
        return _diag_run(args)
    return _diag_probes(args)


def cmd_kappa(args) -> int:
    mg = jsonio.load_instance(args.instance)
    fc = jsonio.load_function_class(args.class_path)
    rows = []
    for eps in args.epsilon:
        res = compute_kappa(mg, fc, eps)
        rows.append({
            "epsilon": eps,
            "kappa": res.kappa if math.isfinite(res.kappa) else "inf",
            "kappa1": res.kappa1 if math.isfinite(res.kappa1) else "inf",
            "offender": res.offender,
            "offender1": res.offender1,
        })
        print(f"epsilon={eps:.6g} kappa={res.kappa:.12g} kappa1={res.kappa1:.12g}")
    os.makedirs(args.out, exist_ok=True)
    jsonio.write_json(os.path.join(args.out, "kappa.json"), {"results": rows})
    return EXIT_OK


_COMMANDS = {
    "gen": cmd_gen,
    "solve": cmd_solve,
    "run": cmd_run,
    "diag": cmd_diag,
    "kappa": cmd_kappa,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
