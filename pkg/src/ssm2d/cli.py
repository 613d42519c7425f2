"""Command-line interface: check, expand, correct, verify, sweep, backbone.

All commands load the model file, rescale it so the distinguished
eigenvalue is exactly ``-eps + i`` (the scale report is part of every
output), and interpret ``--eps`` on that normalized scale.  Outputs are
byte-deterministic for fixed inputs and seed: JSON artifacts use sorted
keys and shortest round-trip floats, CSV files use 17 significant
digits.

Exit codes: 0 success; 1 model validation or assumption failure (the
assumption report is printed); 2 numerical failure (resonance,
solvability, divergence); 3 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .errors import (InputOutputError, NumericalError, SsmError,
                     ValidationError)
from .expansion import expand, growth_phase_check
from .jets import EpsPoly, JetMode, NumericMode
from .model import load_model, normalize_model
from .spectral import analyze, check_assumptions
from .verify import backbone, eps_sweep, run_verification

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3


@dataclass
class RunConfig:
    command: str
    model: str
    options: dict = field(default_factory=dict)
    seed: int = 0
    threads: int | None = None
    version: str = __version__

    def as_dict(self):
        return asdict(self)


def _fmt(x):
    return f"{x:.17g}"


def _json_dump(obj, stream):
    json.dump(obj, stream, sort_keys=True, indent=2)
    stream.write("\n")


def _write_output(obj, out_path):
    if out_path in (None, "-"):
        _json_dump(obj, sys.stdout)
    else:
        with open(out_path, "w", encoding="utf-8") as fh:
            _json_dump(obj, fh)


def _write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) if isinstance(v, float) else str(v)
                              for v in row))
    text = "\n".join(lines) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _prepare(path, ell_hint=None, sigma_cap=16, res_margin=0.05,
             eps_grid=None):
    model = load_model(path)
    norm_model, scale = normalize_model(model, ell_hint)
    spec = analyze(norm_model, sigma_cap=sigma_cap)
    report = check_assumptions(norm_model, spec, eps_grid=eps_grid,
                               res_margin=res_margin)
    return model, norm_model, scale, spec, report


def _print_assumptions(report, scale, spec, stream=sys.stdout):
    stream.write(f"scale: time x {_fmt(scale.time_factor)}, "
                 f"eps x {_fmt(scale.eps_factor)} (mode index {scale.ell})\n")
    stream.write(f"spectral ratio = {_fmt(spec.aleph)}, "
                 f"smoothness order = {spec.sigma}\n")
    for c in report:
        mark = "pass" if c.passed else "FAIL"
        stream.write(f"  [{mark}] {c.name:20s} margin={_fmt(c.margin)}  "
                     f"{c.details}\n")
    stream.write("assumptions: "
                 + ("all pass\n" if report.passed else "FAILED\n"))


def _require_pass(report, scale, spec):
    if not report.passed:
        _print_assumptions(report, scale, spec, stream=sys.stderr)
        raise ValidationError("assumption checks failed")


def _scalar_json(x):
    if isinstance(x, EpsPoly):
        return [[c.real, c.imag] for c in x.coeffs]
    x = complex(x)
    return [x.real, x.imag]


def _expansion_json(exp, config, model):
    data = {
        "model_hash": model.content_hash(),
        "config": config.as_dict(),
        "order": exp.order,
        "split_order": exp.split_order,
        "mode": exp.eps_mode.describe(),
        "R": [_scalar_json(c) for c in exp.Rpoly],
        "T": [_scalar_json(c) for c in exp.Tpoly],
        "W": {},
    }
    for n in range(1, exp.order + 1):
        for idx in range(2 * n + 1):
            k = idx - n
            if (k - n) % 2 != 0:
                continue
            key = f"W[{n}][{k}]"
            data["W"][key] = [_scalar_json(v) for v in exp.W.coeffs[n][idx]]
    return data


# -- commands ----------------------------------------------------------------------


def cmd_check(args, config):
    eps_grid = [float(x) for x in args.eps_grid.split(",")] \
        if args.eps_grid else None
    model, norm_model, scale, spec, report = _prepare(
        args.model, args.ell, args.sigma_cap, args.res_margin, eps_grid)
    _print_assumptions(report, scale, spec)
    payload = {
        "model_hash": model.content_hash(),
        "config": config.as_dict(),
        "scale": scale.as_dict(),
        "aleph": spec.aleph,
        "sigma": spec.sigma,
        "eigenvalues": [{"alpha": a, "omega": w}
                        for a, w in spec.eigenvalues],
        "report": report.as_dict(),
    }
    if args.out:
        _write_output(payload, args.out)
    return EXIT_OK if report.passed else EXIT_VALIDATION


def cmd_expand(args, config):
    model, norm_model, scale, spec, report = _prepare(args.model, args.ell)
    _require_pass(report, scale, spec)
    mode = JetMode(args.jet_degree) if args.jet else NumericMode(args.eps)
    exp = expand(norm_model, spec, args.order, mode)
    gp = growth_phase_check(exp) if args.jet else None
    sys.stdout.write(f"expanded to order {exp.order} "
                     f"({exp.eps_mode.describe()})\n")
    sys.stdout.write("R coefficients: "
                     + " ".join(_fmt(complex(c).real) if not args.jet
                                else _fmt(c.coeffs[0].real)
                                for c in exp.Rpoly) + "\n")
    sys.stdout.write("T coefficients: "
                     + " ".join(_fmt(complex(c).real) if not args.jet
                                else _fmt(c.coeffs[0].real)
                                for c in exp.Tpoly) + "\n")
    payload = _expansion_json(exp, config, model)
    payload["scale"] = scale.as_dict()
    if gp is not None:
        payload["growth_phase"] = gp
    if args.out:
        _write_output(payload, args.out)
    return EXIT_OK


def cmd_correct(args, config):
    from . import correction as corr
    model, norm_model, scale, spec, report = _prepare(args.model, args.ell)
    _require_pass(report, scale, spec)
    exp = expand(norm_model, spec, args.order, NumericMode(args.eps))
    mr, kth = (int(x) for x in args.grid.split(","))
    prob = corr.make_problem(norm_model, spec, exp, args.gamma, args.eps,
                             M_r=mr, K_theta=kth)
    results = {}
    norms_seq = []
    if args.method in ("collocation", "both"):
        fld = corr.solve_collocation(prob)
        results["collocation"] = fld
        sys.stdout.write(
            f"collocation: reduced residual "
            f"{_fmt(fld.meta['reduced_residual'])}, combined residual "
            f"{_fmt(corr.combined_residual_sup(prob, fld))}\n")
    if args.method in ("picard", "both"):
        fld_p = corr.solve_picard(prob)
        q, norms_seq = corr.contraction_estimate(prob, n_iters=args.iters,
                                                 delta=args.delta)
        results["picard"] = fld_p
        sys.stdout.write(
            f"picard: fixed point in {fld_p.meta['picard_iters']} steps, "
            f"observed contraction {_fmt(q)}\n")
        results["q_observed"] = q
    if args.method == "both":
        diff = results["picard"].sup_diff(results["collocation"])
        sys.stdout.write(f"cross-method sup difference {_fmt(diff)}\n")

    fld = results.get("collocation", results.get("picard"))
    payload = {
        "model_hash": model.content_hash(),
        "config": config.as_dict(),
        "scale": scale.as_dict(),
        "gamma": args.gamma,
        "eps": args.eps,
        "sigma": prob.sigma,
        "grid": {"radial_nodes": fld.r_nodes.tolist(),
                 "kmax": fld.kmax},
        "coefficients": {
            f"a[{k - fld.kmax}]": [[v.real, v.imag] for v in
                                   fld.coeffs[:, k, :].ravel()]
            for k in range(2 * fld.kmax + 1)},
        "difference_norms": norms_seq,
    }
    if "q_observed" in results:
        payload["q_observed"] = results["q_observed"]
    if args.out:
        _write_output(payload, args.out)
    return EXIT_OK


def cmd_verify(args, config):
    model, norm_model, scale, spec, report = _prepare(args.model, args.ell)
    _require_pass(report, scale, spec)
    rep = run_verification(model, args.order, args.eps, gamma=args.gamma,
                           with_correction=args.with_correction,
                           ell_hint=args.ell)
    payload = {"model_hash": model.content_hash(),
               "config": config.as_dict(), **rep.as_dict()}
    for name, sec in rep.sections.items():
        status = sec.get("status")
        if status == "ok":
            keys = [k for k in sec if k not in ("status",)]
            sys.stdout.write(f"{name}: ok ({', '.join(sorted(keys))})\n")
        else:
            sys.stdout.write(f"{name}: skipped ({sec.get('reason')})\n")
    if args.out:
        _write_output(payload, args.out)
    return EXIT_OK


def cmd_sweep(args, config):
    model, norm_model, scale, spec, report = _prepare(args.model, args.ell)
    _require_pass(report, scale, spec)
    eps_list = [float(x) for x in args.eps_list.split(",")]
    sw = eps_sweep(norm_model, spec, args.order, eps_list)
    sys.stdout.write(
        f"monotone approach to the conservative limit: {sw['monotone']}\n"
        f"halving ratios: {' '.join(_fmt(r) for r in sw['halving_ratios'])}\n"
        f"fd vs jet slopes at eps={_fmt(sw['eps_aux'])}: "
        f"{_fmt(sw['fd_vs_jet'])}\n")
    ncoef = sw["rows"][0]["coeffs"].size
    header = (["eps", "dist_to_conservative"]
              + [f"c{i:04d}" for i in range(ncoef)])
    rows = [[r["eps"], r["dist_to_zero"]] + [float(x) for x in r["coeffs"]]
            for r in sw["rows"]]
    _write_csv(args.out, header, rows)
    return EXIT_OK


def cmd_backbone(args, config):
    model, norm_model, scale, spec, report = _prepare(args.model, args.ell)
    _require_pass(report, scale, spec)
    exp = expand(norm_model, spec, args.order, NumericMode(args.eps))
    r_grid = np.linspace(0.0, args.rmax, args.npoints + 1)[1:]
    rows = backbone(exp, r_grid)
    header = ["r", "amplitude", "frequency", "decay_rate"]
    _write_csv(args.out, header,
               [[row["r"], row["amplitude"], row["frequency"],
                 row["decay_rate"]] for row in rows])
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(
        prog="ssm",
        description="Two-dimensional spectral submanifolds of damped "
                    "polynomial vector fields, with exact conservative "
                    "limits.  All --eps values refer to the normalized "
                    "system (distinguished eigenvalue -eps + i); the scale "
                    "report maps back to the model file's parameter.")
    p.add_argument("--version", action="version", version=__version__)

    def common(sp):
        sp.add_argument("model", help="model JSON file")
        sp.add_argument("--ell", type=int, default=None,
                        help="index of the distinguished mode pair")
        sp.add_argument("--threads", type=int,
                        default=os.cpu_count(),
                        help="worker cap, exported as SSM_THREADS "
                             "(default: available cores)")
        sp.add_argument("--seed", type=int, default=0,
                        help="seed for randomized sampling (default 0)")
        sp.add_argument("--out", default=None,
                        help="output file ('-' for stdout)")

    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("check", help="validate the model and the "
                                      "structural assumptions")
    common(sp)
    sp.add_argument("--eps-grid", default=None,
                    help="comma list of eps values for the grid checks")
    sp.add_argument("--res-margin", type=float, default=0.05,
                    help="non-resonance margin (default 0.05)")
    sp.add_argument("--sigma-cap", type=int, default=16,
                    help="largest admissible smoothness order")

    sp = sub.add_parser("expand", help="solve the invariance equation "
                                       "order by order")
    common(sp)
    sp.add_argument("--order", type=int, required=True)
    group = sp.add_mutually_exclusive_group(required=True)
    group.add_argument("--eps", type=float, default=None)
    group.add_argument("--jet", action="store_true",
                       help="carry exact eps-jets (conservative value "
                            "and slope)")
    sp.add_argument("--jet-degree", type=int, default=1)

    sp = sub.add_parser("correct", help="solve for the tail correction")
    common(sp)
    sp.add_argument("--order", type=int, required=True)
    sp.add_argument("--eps", type=float, required=True)
    sp.add_argument("--gamma", type=float, required=True)
    sp.add_argument("--method", choices=["picard", "collocation", "both"],
                    default="collocation")
    sp.add_argument("--delta", type=float, default=0.5,
                    help="harmonic weight of the diagnostic norm")
    sp.add_argument("--grid", default="24,12", help="Mr,Ktheta (default 24,12)")
    sp.add_argument("--iters", type=int, default=8,
                    help="iterates for the contraction estimate")

    sp = sub.add_parser("verify", help="residual, trajectory and "
                                       "conservation verification")
    common(sp)
    sp.add_argument("--order", type=int, required=True)
    sp.add_argument("--eps", type=float, required=True)
    sp.add_argument("--gamma", type=float, default=0.1)
    sp.add_argument("--with-correction", action="store_true")

    sp = sub.add_parser("sweep", help="coefficient table over the damping "
                                      "parameter (CSV: eps, distance to "
                                      "the conservative limit, flattened "
                                      "coefficients)")
    common(sp)
    sp.add_argument("--order", type=int, required=True)
    sp.add_argument("--eps-list", required=True,
                    help="comma list including 0")

    sp = sub.add_parser("backbone", help="amplitude/frequency/decay table "
                                         "(CSV: r, amplitude, frequency, "
                                         "decay_rate)")
    common(sp)
    sp.add_argument("--order", type=int, required=True)
    sp.add_argument("--eps", type=float, required=True)
    sp.add_argument("--rmax", type=float, required=True)
    sp.add_argument("--npoints", type=int, default=50)
    return p


COMMANDS = {
    "check": cmd_check,
    "expand": cmd_expand,
    "correct": cmd_correct,
    "verify": cmd_verify,
    "sweep": cmd_sweep,
    "backbone": cmd_backbone,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    threads = args.threads or int(os.environ.get("SSM_THREADS", "0")) \
        or os.cpu_count()
    os.environ["SSM_THREADS"] = str(threads)
    np.random.seed(args.seed)
    config = RunConfig(
        command=args.command, model=args.model,
        options={k: v for k, v in sorted(vars(args).items())
                 if k not in ("command", "model", "threads", "seed")},
        seed=args.seed, threads=threads)
    try:
        limiter = None
        try:
            import threadpoolctl
            limiter = threadpoolctl.threadpool_limits(limits=threads)
        except ImportError:
            pass
        try:
            return COMMANDS[args.command](args, config)
        finally:
            if limiter is not None:
                limiter.unregister()
    except InputOutputError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_IO
    except ValidationError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_VALIDATION
    except NumericalError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_NUMERICAL
    except SsmError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
