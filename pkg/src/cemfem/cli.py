"""Command line front end for the experiment runner.

Subcommands mirror the study designs: ``run`` (single case), ``sweep``
(cartesian product over list-valued axes), ``online`` (adaptive or uniform
enrichment), ``compare`` (both variants paired), plus ``export-basis`` and
``export-solution``. Configuration comes from a JSON file, optionally
overridden by flags; every report echoes the resolved config so a run can
be reproduced from its own output.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import coarse, offline
from .experiments import (ConfigError, ExperimentConfig, Session,
                          compare_variants, run, run_online, write_report)


def _load_config(args) -> ExperimentConfig:
    raw = {}
    if args.config:
        with open(args.config) as fh:
            raw = json.load(fh)
    for name in ("medium", "variant", "outdir", "lame_convention", "l2_weight",
                 "fine_solver", "patch_solver"):
        v = getattr(args, name.replace("-", "_"), None)
        if v is not None:
            raw[name] = v
    for name in ("d", "n_f", "seed"):
        v = getattr(args, name, None)
        if v is not None:
            raw[name] = v
    for name in ("n_c", "n_basis", "layers", "contrast"):
        v = getattr(args, name, None)
        if v is not None:
            raw[name] = v if len(v) > 1 else v[0]
    if getattr(args, "nu", None) is not None:
        raw["nu"] = args.nu
    online_over = {}
    for name in ("theta", "mode", "tol_rel", "max_iter", "p"):
        v = getattr(args, name, None)
        if v is not None:
            online_over[name] = v
    if online_over:
        raw["online"] = {**raw.get("online", {}), **online_over}
    return ExperimentConfig.from_dict(raw)


def _int_or_auto(text):
    return text if text == "auto" else int(text)


def _add_common(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--medium", help="preset name (model1-like, model2-like)")
    p.add_argument("--d", type=int)
    p.add_argument("--n-f", dest="n_f", type=int)
    p.add_argument("--n-c", dest="n_c", type=int, nargs="+")
    p.add_argument("--variant", choices=["constrained", "relaxed"])
    p.add_argument("--n-basis", dest="n_basis", type=int, nargs="+")
    p.add_argument("--layers", type=_int_or_auto, nargs="+")
    p.add_argument("--contrast", type=float, nargs="+")
    p.add_argument("--nu", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--outdir")
    p.add_argument("--lame-convention", dest="lame_convention",
                   choices=["paper", "standard"])
    p.add_argument("--l2-weight", dest="l2_weight", choices=["paper", "sqrt"])
    p.add_argument("--fine-solver", dest="fine_solver",
                   choices=["auto", "direct", "cg"])
    p.add_argument("--patch-solver", dest="patch_solver",
                   choices=["auto", "direct", "cg"])


def _add_online(p):
    p.add_argument("--theta", type=float)
    p.add_argument("--mode", choices=["adaptive", "uniform"])
    p.add_argument("--tol-rel", dest="tol_rel", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--p", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="cemfem",
        description="Multiscale coarse-space experiments for high-contrast elasticity")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("run", "single case: every axis must hold one value"),
        ("sweep", "cartesian sweep over list-valued axes"),
        ("online", "offline build plus residual-driven enrichment"),
        ("compare", "run both variants and pair the rows"),
        ("export-basis", "write basis columns as raw vectors with JSON sidecars"),
        ("export-solution", "write fine reference and coarse solution fields"),
    ]:
        p = sub.add_parser(name, help=help_)
        _add_common(p)
        if name == "online":
            _add_online(p)
        if name == "export-basis":
            p.add_argument("--target", required=True, help="output directory")
        if name == "export-solution":
            p.add_argument("--target", required=True, help="output file stem")
            p.add_argument("--format", choices=["csv", "bin"], default="csv")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    session = Session()
    try:
        if args.command == "run":
            for name in ("n_c", "n_basis", "layers", "contrast"):
                if len(getattr(cfg, name)) != 1:
                    raise ConfigError(f"'run' takes a single value per axis; "
                                      f"{name} has {len(getattr(cfg, name))} "
                                      "(use 'sweep' for lists)")
            report = run(cfg, session)
            path = write_report(report, cfg.outdir, "run")
        elif args.command == "sweep":
            report = run(cfg, session)
            path = write_report(report, cfg.outdir, "sweep")
        elif args.command == "online":
            report = run_online(cfg, session)
            path = write_report(report, cfg.outdir, "online")
        elif args.command == "compare":
            report = compare_variants(cfg, session)
            path = write_report(report, cfg.outdir, "compare")
        elif args.command == "export-basis":
            report = _export_basis(cfg, session, args.target)
            path = args.target
        elif args.command == "export-solution":
            report = _export_solution(cfg, session, args.target, args.format)
            path = args.target
        else:  # pragma: no cover
            raise ConfigError(f"unknown command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1
    _print_summary(args.command, report, path)
    if report.get("failures"):
        print(f"{report['failures']} case(s) failed; see the report for details",
              file=sys.stderr)
        return 1
    return 0


def _single_case_objects(cfg: ExperimentConfig, session: Session):
    from .experiments import auto_layers

    n_c, n_basis = cfg.n_c[0], cfg.n_basis[0]
    m, contrast = cfg.layers[0], cfg.contrast[0]
    mspec = cfg.medium_spec(contrast)
    g = session.grid(cfg.d, cfg.n_f, n_c)
    layers = auto_layers(cfg.variant, g.H, cfg.d) if m == "auto" else int(m)
    fine = session.fine(mspec, cfg.nu, cfg.lame_convention, cfg.force, cfg.fine_solver)
    basis = session.basis(mspec, cfg.nu, cfg.lame_convention, n_c, n_basis,
                          cfg.variant, layers, cfg.patch_solver)
    return g, fine, basis


def _export_basis(cfg, session, target):
    g, fine, basis = _single_case_objects(cfg, session)
    offline.export_basis(basis, target)
    return {"columns": basis.n_columns, "target": target}


def _export_solution(cfg, session, target, fmt):
    g, fine, basis = _single_case_objects(cfg, session)
    sol = coarse.coarse_solve(basis.R, fine["A"], fine["F"])
    ext = "csv" if fmt == "csv" else "bin"
    coarse.export_solution(f"{target}_coarse.{ext}", g, sol.u_fine, fmt)
    coarse.export_solution(f"{target}_reference.{ext}", g, fine["u_h"], fmt)
    return {"files": [f"{target}_coarse.{ext}", f"{target}_reference.{ext}"]}


def _print_summary(command, report, path):
    if command in ("run", "sweep"):
        for row in report["rows"]:
            if "failed" in row:
                print(f"H=1/{row['n_c']} N_b={row['n_basis']} m={row['layers']} "
                      f"contrast={row['contrast']:g} FAILED: {row['failed']}")
                continue
            print(f"H=1/{row['n_c']} {row['variant']} N_b={row['n_basis']} "
                  f"m={row['layers']} contrast={row['contrast']:g} "
                  f"dof={row['dof']} e_L2={row['e_l2']:.3e} e_H1={row['e_h1']:.3e}")
    elif command == "online":
        for rec in report["history"]:
            print(f"iter={rec['iteration']} dof={rec['dof']} "
                  f"e_L2={rec['e_l2']:.3e} e_H1={rec['e_h1']:.3e} "
                  f"residual_sq={rec['residual_sq']:.3e} selected={rec['selected']}")
        print(f"stopped: {report['flag']}")
    elif command == "compare":
        for row in report["rows"]:
            print(f"H=1/{row['n_c']} N_b={row['n_basis']} m={row['layers']} "
                  f"contrast={row['contrast']:g} "
                  f"constrained e_H1={row['constrained_e_h1']:.3e} "
                  f"relaxed e_H1={row['relaxed_e_h1']:.3e} "
                  f"relaxed_not_worse={row['relaxed_not_worse']}")
    print(f"report: {path}")


if __name__ == "__main__":
    raise SystemExit(main())
