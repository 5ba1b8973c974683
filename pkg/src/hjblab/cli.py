"""`lab` command line: every experiment behind one entry point.

Subcommands mirror the module boundaries.  Results are written atomically
(temp file + rename) with a reproducibility header carrying the package
version, the seed, and a hash of the resolved configuration; identical
command + seed yields a byte-identical payload.

Exit codes: 0 success, 1 validation error, 2 numerical/accuracy error,
3 inequality-suite failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile

import numpy as np

from . import __version__
from . import doubling as doubling_mod
from . import entropy as entropy_mod
from . import gauge as gauge_mod
from . import hjb as hjb_mod
from . import ksfilter as ks
from . import transport as transport_mod
from . import varcalc
from .errors import InvalidInput, LabError, SuiteFailure
from .measures import DiscreteMeasure


def _set_threads(args):
    n = os.environ.get("LAB_THREADS") or (str(args.threads) if args.threads else None)
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, n)


def _config_hash(payload: dict) -> str:
    semantic = {k: v for k, v in payload.items() if k not in ("out", "func", "format")}
    canon = json.dumps(semantic, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _emit(args, record: dict, config: dict):
    record = {
        "version": __version__,
        "seed": getattr(args, "seed", None),
        "config_hash": _config_hash(config),
        **record,
    }
    if getattr(args, "format", "json") == "json" or "csv" not in record:
        text = json.dumps(record, indent=2, default=_jsonable) + "\n"
    else:
        text = record["csv"]
    out = getattr(args, "out", None)
    if out:
        directory = os.path.dirname(os.path.abspath(out))
        fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, out)
    else:
        sys.stdout.write(text)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON-serializable: {type(obj)}")


def _load_measure(path: str) -> DiscreteMeasure:
    with open(path) as fh:
        return DiscreteMeasure.from_json(fh.read())


def _load_json(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _functional_from_config(cfg: dict) -> varcalc.MeasureFunctional:
    cyl = hjb_mod.cylindrical_from_config(cfg["cylindrical"])
    return varcalc.MeasureFunctional(
        cyl.value,
        name=cfg.get("name", cyl.name),
        bound=cfg.get("bound"),
        lip_w1=cfg.get("lip_w1"),
    )


# -- subcommand handlers -------------------------------------------------------

def _cmd_gauge_eval(args):
    mu = _load_measure(args.mu)
    nu = _load_measure(args.nu)
    cfg = gauge_mod.GaugeConfig(sigma=args.sigma, n_max=args.nmax, l_max=args.lmax, dim=mu.dim)
    gv = gauge_mod.gauge_value(mu, nu, cfg)
    record = {
        "G": gv.value,
        "tail_bound": gv.tail_bound,
        "a_sum": gv.a_sum,
        "per_shell": [{"n": n, "sum": s} for n, s in gv.per_shell],
    }
    _emit(args, record, vars(args))


def _cmd_gauge_derivs(args):
    mu = _load_measure(args.mu)
    nu = _load_measure(args.nu)
    cfg = gauge_mod.GaugeConfig(sigma=args.sigma, n_max=args.nmax, l_max=args.lmax, dim=mu.dim)
    pts = np.asarray(_load_json(args.points), dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    bundle = gauge_mod.gauge_derivatives(mu, nu, cfg, x_list=pts)
    record = {
        "points": pts,
        "first_var": bundle.first_var(pts),
        "lions": bundle.lions(pts),
        "second_var": bundle.second_var(pts, pts),
    }
    _emit(args, record, vars(args))


def _cmd_entropy_eval(args):
    mu = _load_measure(args.mu)
    report = entropy_mod.entropy_smoothed(mu, args.sigma)
    record = {
        "entropy": report.entropy,
        "entropy_tilde": report.entropy_tilde,
        "fisher": report.fisher,
        "quadrature_error_estimate": report.quadrature_error_estimate,
    }
    _emit(args, record, vars(args))


def _cmd_entropy_derivs(args):
    mu = _load_measure(args.mu)
    pts = np.asarray(_load_json(args.points), dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    bundle = entropy_mod.entropy_derivatives(mu, args.sigma, x_list=pts)
    record = {
        "points": pts,
        "first_var": bundle.first_var(pts),
        "lions": bundle.lions(pts),
        "second_var": bundle.second_var(pts, pts),
    }
    _emit(args, record, vars(args))


def _cmd_transport(args):
    mu = _load_measure(args.mu)
    nu = _load_measure(args.nu)
    if args.which == "w2sigma":
        dist = transport_mod.wasserstein_smoothed(
            mu, nu, sigma=args.sigma, n_mc=args.n_mc, seed=args.seed
        )
        _emit(args, {"distance": dist}, vars(args))
        return
    p = 1 if args.which == "w1" else 2
    dist, plan = transport_mod.wasserstein(mu, nu, p=p)
    record = {"distance": dist, "cost": plan.cost}
    if args.plan:
        record["csv"] = plan.to_csv()
    _emit(args, record, vars(args))


def _cmd_check_derivatives(args):
    mu = _load_measure(args.mu)
    nu = _load_measure(args.nu)
    steps = tuple(float(s) for s in args.steps.split(","))
    rows = []
    if args.target == "gauge":
        cfg = gauge_mod.default_config(dim=mu.dim, sigma=args.sigma)
        bundle = gauge_mod.gauge_derivatives(mu, nu, cfg)
        func = varcalc.MeasureFunctional(
            lambda m: gauge_mod.gauge_value(m, nu, cfg).value, name="gauge"
        )
    elif args.target == "entropy":
        bundle = entropy_mod.entropy_derivatives(mu, args.sigma)
        func = varcalc.MeasureFunctional(
            lambda m: entropy_mod.entropy_smoothed(m, args.sigma, tol=None).entropy,
            name="entropy",
        )
    else:
        cyl = hjb_mod.cylindrical_from_config(_load_json(args.cylindrical))
        bundle = cyl.bundle(mu)
        func = varcalc.MeasureFunctional(cyl.value, name=cyl.name)
    fd = varcalc.var_derivative_fd(func, mu, nu, steps=steps)
    analytic = float(
        nu.weights @ bundle.first_var(nu.points) - mu.weights @ bundle.first_var(mu.points)
    )
    err_fine = abs(fd.per_step[-1] - analytic)
    err_coarse = abs(fd.per_step[0] - analytic)
    order = (
        np.log(err_coarse / max(err_fine, 1e-300)) / np.log(steps[0] / steps[-1])
        if err_coarse > 0
        else float("nan")
    )
    rows.append(
        {
            "check": "first_var",
            "analytic": analytic,
            "fd": fd.slope,
            "richardson": fd.richardson,
            "abs_error": abs(fd.richardson - analytic),
            "observed_order": order,
            "pass": abs(fd.richardson - analytic) <= args.tol * max(1.0, abs(analytic)),
        }
    )
    record = {"target": args.target, "rows": rows, "all_pass": all(r["pass"] for r in rows)}
    _emit(args, record, vars(args))
    if not record["all_pass"]:
        raise SuiteFailure("derivative check failed")


def _cmd_filter_run(args):
    model = ks.model_from_config(_load_json(args.model))
    mu0 = _load_measure(args.mu0) if args.mu0 else ks.GaussianInitial.isotropic(
        np.zeros(model.dim_x), 0.25
    )
    policy = ks.constant_policy(np.zeros(model.dim_control))
    rng = np.random.default_rng(args.seed)
    xs, ys = ks.simulate_truth(model, mu0, policy, args.T, args.dt, rng)
    path = ks.ks_particle_filter(
        model, mu0, policy, ys, args.N, args.dt, np.random.default_rng(args.seed + 1),
        store_measures=False,
    )
    lines = ["t," + ",".join(f"mean{i}" for i in range(model.dim_x)) + ","
             + ",".join(f"var{i}" for i in range(model.dim_x)) + ","
             + ",".join(f"innov{i}" for i in range(model.dim_y))]
    oracle = None
    if args.oracle == "kalman" and model.linear is not None:
        m0 = getattr(mu0, "mean", None)
        m0 = m0 if m0 is not None else mu0.mean()
        p0 = getattr(mu0, "cov", None)
        if p0 is None:
            diff = mu0.points - m0[None, :]
            p0 = (mu0.weights[:, None, None] * np.einsum("nd,ne->nde", diff, diff)).sum(axis=0)
        oracle = ks.kalman_bucy(model, m0, p0, ys, args.dt)
        lines[0] += "," + ",".join(f"kalman_mean{i}" for i in range(model.dim_x))
    for k, t in enumerate(path.times):
        row = [f"{t:.6f}"]
        row += [f"{v:.8g}" for v in path.means[k]]
        row += [f"{v:.8g}" for v in path.variances[k]]
        row += [f"{v:.8g}" for v in path.innovation[k]]
        if oracle is not None:
            row += [f"{v:.8g}" for v in oracle[k].mean]
        lines.append(",".join(row))
    record = {"csv": "\n".join(lines) + "\n"}
    if oracle is not None:
        rmse = float(
            np.sqrt(np.mean((path.means - np.array([o.mean for o in oracle])) ** 2))
        )
        record["rmse_vs_kalman"] = rmse
    _emit(args, record, vars(args))


def _cmd_filter_ito(args):
    model = ks.model_from_config(_load_json(args.model))
    v = hjb_mod.cylindrical_from_config(_load_json(args.vfn))
    mu0 = _load_measure(args.mu0) if args.mu0 else ks.GaussianInitial.isotropic(
        np.zeros(model.dim_x), 0.25
    )
    residual, se = ks.ito_drift_check(
        model, np.zeros(model.dim_control), v, mu0, args.T, args.dt, args.N, args.paths, args.seed
    )
    record = {"residual": residual, "std_error": se, "within_3se": abs(residual) <= 3 * se}
    _emit(args, record, vars(args))


def _cmd_hjb_residual(args):
    model = ks.model_from_config(_load_json(args.model))
    mu = _load_measure(args.mu)
    ucfg = _load_json(args.u)
    cyl = hjb_mod.cylindrical_from_config(ucfg["cylindrical"])
    cost = _cost_from_config(ucfg.get("cost", {"kind": "linear-state"}))
    residual = hjb_mod.hjb_residual(model, cost, cyl.value(mu), cyl.bundle(mu), mu)
    _emit(args, {"residual": residual}, vars(args))


def _cost_from_config(cfg: dict) -> hjb_mod.RunningCost:
    kind = cfg.get("kind", "linear-state")
    if kind == "linear-state":
        return hjb_mod.RunningCost(
            ell=lambda x, g: x[:, 0], bound=float(cfg.get("bound", 10.0)), name="x"
        )
    if kind == "tanh-state":
        return hjb_mod.RunningCost(
            ell=lambda x, g: np.tanh(x[:, 0] + float(np.atleast_1d(g)[0])),
            bound=1.0,
            name="tanh",
        )
    raise InvalidInput(f"unknown cost kind {kind!r}")


def _cmd_hjb_value(args):
    model = ks.model_from_config(_load_json(args.model))
    mu0 = _load_measure(args.mu0) if args.mu0 else ks.GaussianInitial.isotropic(
        np.zeros(model.dim_x), 0.25
    )
    cost = _cost_from_config(_load_json(args.cost) if args.cost else {"kind": "tanh-state"})
    gamma = np.asarray(_load_json(args.policy), dtype=float) if args.policy else np.zeros(
        model.dim_control
    )
    est = hjb_mod.value_mc(
        model, cost, ks.constant_policy(gamma), mu0, args.T, args.dt, args.N, args.paths, args.seed
    )
    record = {
        "value": est.value,
        "std_error": est.std_error,
        "truncation_bias_bound": est.truncation_bias_bound,
    }
    _emit(args, record, vars(args))


def _cmd_hjb_dpp(args):
    model = ks.model_from_config(_load_json(args.model))
    mu0 = _load_measure(args.mu0) if args.mu0 else ks.GaussianInitial.isotropic(
        np.zeros(model.dim_x), 0.25
    )
    cost = _cost_from_config(_load_json(args.cost) if args.cost else {"kind": "tanh-state"})
    policies = [np.asarray(p, dtype=float) for p in _load_json(args.policies)]
    rep = hjb_mod.dpp_check(
        model, cost, policies, mu0, args.tau, args.T, args.dt, args.N, args.paths, args.seed
    )
    record = {
        "lhs": rep.lhs,
        "rhs": rep.rhs,
        "gap": rep.gap,
        "std_error": rep.std_error,
        "truncation_bias": rep.truncation_bias,
        "consistent": abs(rep.gap) <= 3 * rep.std_error + rep.truncation_bias,
    }
    _emit(args, record, vars(args))


def _cmd_doubling_sweep(args):
    u1 = _functional_from_config(_load_json(args.u1))
    u2 = _functional_from_config(_load_json(args.u2)) if args.u2 else u1
    family = _family_from_spec(args.family)
    cfg = gauge_mod.default_config(dim=family.dim, sigma=args.sigma)
    rows = doubling_mod.step1_diagnostics(
        u1,
        u2,
        args.sigma,
        cfg,
        [float(a) for a in args.alphas.split(",")],
        [float(b) for b in args.betas.split(",")],
        family,
        seed=args.seed,
        restarts=args.restarts,
    )
    header = sorted(rows[0].keys())
    csv_text = ",".join(header) + "\n"
    for row in rows:
        csv_text += ",".join(str(row[k]) for k in header) + "\n"
    _emit(args, {"rows": rows, "csv": csv_text}, vars(args))


def _family_from_spec(spec: str) -> doubling_mod.MeasureFamily:
    kind, _, param = spec.partition(":")
    if kind == "grid":
        return doubling_mod.grid_family(int(param or 41))
    if kind == "mixture":
        return doubling_mod.mixture_family(int(param or 3))
    raise InvalidInput(f"unknown family spec {spec!r}")


def _cmd_doubling_max(args):
    u1 = _functional_from_config(_load_json(args.u1))
    u2 = _functional_from_config(_load_json(args.u2)) if args.u2 else u1
    family = _family_from_spec(args.family)
    cfg = gauge_mod.default_config(dim=family.dim, sigma=args.sigma)
    problem = doubling_mod.DoublingProblem(u1, u2, args.alpha, args.beta, args.sigma, cfg)
    res = doubling_mod.maximize_phi(problem, family, restarts=args.restarts, seed=args.seed)
    record = {
        "value": res.value,
        "converged": res.converged,
        "stationarity": res.stationarity,
        "mu_bar": json.loads(res.mu_bar.to_json()),
        "mu_under": json.loads(res.mu_under.to_json()),
        "restarts": res.restarts,
    }
    _emit(args, record, vars(args))


def _cmd_doubling_suite(args):
    u1 = _functional_from_config(_load_json(args.u1))
    u2 = _functional_from_config(_load_json(args.u2)) if args.u2 else u1
    family = _family_from_spec(args.family)
    cfg = gauge_mod.default_config(dim=family.dim, sigma=args.sigma)
    problem = doubling_mod.DoublingProblem(u1, u2, args.alpha, args.beta, args.sigma, cfg)
    model = ks.model_from_config(_load_json(args.model))
    res = doubling_mod.maximize_phi(problem, family, restarts=args.restarts, seed=args.seed)
    report = doubling_mod.step_inequality_suite(
        problem, res.mu_bar, res.mu_under, model, raise_on_fail=False
    )
    _emit(args, report, vars(args))
    if not report["ok"]:
        raise SuiteFailure("inequality suite failed")


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lab", description=__doc__)
    parser.add_argument("--threads", type=int, default=None, help="cap numeric thread pools")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True, out=True):
        if seed:
            p.add_argument("--seed", type=int, default=0)
        if out:
            p.add_argument("--out", default=None)
            p.add_argument("--format", choices=["json", "csv"], default="json")

    g = sub.add_parser("gauge")
    gsub = g.add_subparsers(dest="sub", required=True)
    p = gsub.add_parser("eval")
    p.add_argument("--mu", required=True)
    p.add_argument("--nu", required=True)
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--nmax", type=int, default=6)
    p.add_argument("--lmax", type=int, default=6)
    common(p)
    p.set_defaults(func=_cmd_gauge_eval)
    p = gsub.add_parser("derivs")
    p.add_argument("--mu", required=True)
    p.add_argument("--nu", required=True)
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--nmax", type=int, default=6)
    p.add_argument("--lmax", type=int, default=6)
    p.add_argument("--points", required=True, help="JSON file with evaluation points")
    common(p)
    p.set_defaults(func=_cmd_gauge_derivs)

    e = sub.add_parser("entropy")
    esub = e.add_subparsers(dest="sub", required=True)
    p = esub.add_parser("eval")
    p.add_argument("--mu", required=True)
    p.add_argument("--sigma", type=float, default=0.5)
    common(p)
    p.set_defaults(func=_cmd_entropy_eval)
    p = esub.add_parser("derivs")
    p.add_argument("--mu", required=True)
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--points", required=True)
    common(p)
    p.set_defaults(func=_cmd_entropy_derivs)

    t = sub.add_parser("transport")
    tsub = t.add_subparsers(dest="sub", required=True)
    for which in ("w1", "w2", "w2sigma"):
        p = tsub.add_parser(which)
        p.add_argument("--mu", required=True)
        p.add_argument("--nu", required=True)
        if which == "w2sigma":
            p.add_argument("--sigma", type=float, default=0.5)
            p.add_argument("--n-mc", dest="n_mc", type=int, default=4000)
        else:
            p.add_argument("--plan", action="store_true")
        common(p)
        p.set_defaults(func=_cmd_transport, which=which)

    p = sub.add_parser("check-derivatives")
    p.add_argument("--target", choices=["gauge", "entropy", "cylindrical"], required=True)
    p.add_argument("--mu", required=True)
    p.add_argument("--nu", required=True)
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--cylindrical", default=None)
    p.add_argument("--steps", default="1e-2,5e-3,2.5e-3")
    p.add_argument("--tol", type=float, default=1e-4)
    common(p)
    p.set_defaults(func=_cmd_check_derivatives)

    f = sub.add_parser("filter")
    fsub = f.add_subparsers(dest="sub", required=True)
    p = fsub.add_parser("run")
    p.add_argument("--model", required=True)
    p.add_argument("--mu0", default=None)
    p.add_argument("--N", type=int, default=5000)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--oracle", choices=["none", "kalman"], default="none")
    common(p)
    p.set_defaults(func=_cmd_filter_run)
    p = fsub.add_parser("ito-check")
    p.add_argument("--model", required=True)
    p.add_argument("--vfn", required=True, help="JSON cylindrical function config")
    p.add_argument("--mu0", default=None)
    p.add_argument("--N", type=int, default=800)
    p.add_argument("--dt", type=float, default=5e-3)
    p.add_argument("--T", type=float, default=0.5)
    p.add_argument("--paths", type=int, default=200)
    common(p)
    p.set_defaults(func=_cmd_filter_ito)

    h = sub.add_parser("hjb")
    hsub = h.add_subparsers(dest="sub", required=True)
    p = hsub.add_parser("residual")
    p.add_argument("--model", required=True)
    p.add_argument("--u", required=True, help="JSON with cylindrical + cost config")
    p.add_argument("--mu", required=True)
    common(p)
    p.set_defaults(func=_cmd_hjb_residual)
    p = hsub.add_parser("value")
    p.add_argument("--model", required=True)
    p.add_argument("--policy", default=None)
    p.add_argument("--cost", default=None)
    p.add_argument("--mu0", default=None)
    p.add_argument("--T", type=float, default=8.0)
    p.add_argument("--dt", type=float, default=2e-3)
    p.add_argument("--N", type=int, default=500)
    p.add_argument("--paths", type=int, default=200)
    common(p)
    p.set_defaults(func=_cmd_hjb_value)
    p = hsub.add_parser("dpp")
    p.add_argument("--model", required=True)
    p.add_argument("--policies", required=True)
    p.add_argument("--cost", default=None)
    p.add_argument("--mu0", default=None)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--T", type=float, default=4.0)
    p.add_argument("--dt", type=float, default=4e-3)
    p.add_argument("--N", type=int, default=200)
    p.add_argument("--paths", type=int, default=400)
    common(p)
    p.set_defaults(func=_cmd_hjb_dpp)

    d = sub.add_parser("doubling")
    dsub = d.add_subparsers(dest="sub", required=True)
    p = dsub.add_parser("sweep")
    p.add_argument("--u1", required=True)
    p.add_argument("--u2", default=None)
    p.add_argument("--alphas", default="0.2,0.1,0.05,0.02")
    p.add_argument("--betas", default="0.1")
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--family", default="grid:41")
    p.add_argument("--restarts", type=int, default=6)
    common(p)
    p.set_defaults(func=_cmd_doubling_sweep)
    p = dsub.add_parser("max")
    p.add_argument("--u1", required=True)
    p.add_argument("--u2", default=None)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--family", default="grid:41")
    p.add_argument("--restarts", type=int, default=8)
    common(p)
    p.set_defaults(func=_cmd_doubling_max)
    p = dsub.add_parser("suite")
    p.add_argument("--u1", required=True)
    p.add_argument("--u2", default=None)
    p.add_argument("--model", required=True)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--family", default="grid:41")
    p.add_argument("--restarts", type=int, default=4)
    common(p)
    p.set_defaults(func=_cmd_doubling_suite)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _set_threads(args)
    try:
        args.func(args)
    except SuiteFailure as exc:
        print(f"suite failure: {exc}", file=sys.stderr)
        return 3
    except InvalidInput as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"invalid input: {exc!r}", file=sys.stderr)
        return 1
    except LabError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
