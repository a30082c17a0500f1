"""Configuration-driven experiment runner.

A config (JSON file or dict) names a medium, a coarse-space recipe and the
sweep axes; the runner executes every case, measures errors against the
fine reference solution and emits machine-readable reports. Fine-level
objects (operators, reference solves, auxiliary spaces) are cached per
session so sweep axes that share them do not pay twice.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import os
import time
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__, coarse, fem, media, offline, online
from .auxiliary import build_auxiliary_space
from .grid import build_hierarchy, build_pou


class ConfigError(ValueError):
    """A configuration is malformed; the message names the offending field."""


_ONLINE_DEFAULTS = {"theta": 0.1, "mode": "adaptive", "tol_rel": 1e-6,
                    "tol_abs": 0.0, "max_iter": 10, "p": None}


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment description; sweep axes are tuples."""
    medium: object                 # preset name or MediumSpec
    d: int
    n_f: int
    n_c: tuple
    variant: str = "relaxed"
    n_basis: tuple = (4,)
    layers: tuple = ("auto",)
    nu: float = 0.2
    force: tuple = None
    contrast: tuple = (1.0e4,)
    online: dict = field(default_factory=lambda: dict(_ONLINE_DEFAULTS))
    outdir: str = "out"
    seed: int | None = None
    lame_convention: str = "paper"
    l2_weight: str = "paper"
    fine_solver: str = "auto"
    patch_solver: str = "auto"

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        medium = raw.pop("medium", "model1-like")
        if isinstance(medium, dict):
            medium = _medium_from_dict(medium)
        d = raw.pop("d", medium.d if isinstance(medium, media.MediumSpec) else 2)
        n_f = raw.pop("n_f", medium.n_f if isinstance(medium, media.MediumSpec)
                      else (128 if d == 2 else 32))
        cfg = cls(
            medium=medium, d=int(d), n_f=int(n_f),
            n_c=_as_tuple(raw.pop("n_c", 16 if d == 2 else 8), "n_c"),
            variant=raw.pop("variant", "relaxed"),
            n_basis=_as_tuple(raw.pop("n_basis", 4), "n_basis"),
            layers=_as_tuple(raw.pop("layers", "auto"), "layers"),
            nu=float(raw.pop("nu", 0.2)),
            force=tuple(f) if (f := raw.pop("force", None)) is not None else None,
            contrast=_as_tuple(raw.pop("contrast", 1.0e4), "contrast"),
            online={**_ONLINE_DEFAULTS, **raw.pop("online", {})},
            outdir=raw.pop("outdir", "out"),
            seed=raw.pop("seed", None),
            lame_convention=raw.pop("lame_convention", "paper"),
            l2_weight=raw.pop("l2_weight", "paper"),
            fine_solver=raw.pop("fine_solver", "auto"),
            patch_solver=raw.pop("patch_solver", "auto"),
        )
        if raw:
            raise ConfigError(f"unknown config fields: {sorted(raw)}")
        cfg.validate()
        return cfg

    def validate(self):
        if self.d not in (2, 3):
            raise ConfigError(f"d must be 2 or 3, got {self.d}")
        for name in ("n_c", "n_basis", "layers", "contrast"):
            if len(getattr(self, name)) == 0:
                raise ConfigError(f"sweep list {name!r} is empty")
        for nc in self.n_c:
            if not isinstance(nc, int) or nc < 2:
                raise ConfigError(f"n_c entries must be integers >= 2, got {nc}")
            if self.n_f % nc:
                raise ConfigError(f"n_f={self.n_f} not divisible by n_c={nc}")
        if self.variant not in ("constrained", "relaxed"):
            raise ConfigError(f"variant must be constrained or relaxed, got {self.variant!r}")
        for nb in self.n_basis:
            if not isinstance(nb, int) or nb < 1:
                raise ConfigError(f"n_basis entries must be positive integers, got {nb}")
        for m in self.layers:
            if m != "auto" and (not isinstance(m, int) or m < 0):
                raise ConfigError(f"layers entries must be 'auto' or integers >= 0, got {m}")
        for c in self.contrast:
            if not c > 0:
                raise ConfigError(f"contrast must be positive, got {c}")
        if not (0.0 < self.nu < 0.5):
            raise ConfigError(f"nu must lie in (0, 0.5), got {self.nu}")
        if self.force is not None and len(self.force) != self.d:
            raise ConfigError(f"force needs {self.d} components, got {len(self.force)}")
        th = self.online.get("theta", 0.1)
        if not (0.0 <= th <= 1.0):
            raise ConfigError(f"online.theta must lie in [0, 1], got {th}")
        if self.online.get("mode", "adaptive") not in ("adaptive", "uniform"):
            raise ConfigError(f"online.mode must be adaptive or uniform")
        if self.lame_convention not in ("paper", "standard"):
            raise ConfigError(f"lame_convention must be paper or standard")
        if self.l2_weight not in ("paper", "sqrt"):
            raise ConfigError(f"l2_weight must be paper or sqrt")

    def to_dict(self) -> dict:
        out = asdict(self)
        if isinstance(self.medium, media.MediumSpec):
            out["medium"] = _medium_to_dict(self.medium)
        for name in ("n_c", "n_basis", "layers", "contrast"):
            out[name] = list(out[name])
        if out["force"] is not None:
            out["force"] = list(out["force"])
        return out

    def medium_spec(self, contrast: float) -> media.MediumSpec:
        if isinstance(self.medium, media.MediumSpec):
            return self.medium.with_contrast(contrast)
        return media.preset(self.medium, n_f=self.n_f, contrast=contrast, seed=self.seed)


def _as_tuple(value, name):
    if isinstance(value, (list, tuple)):
        return tuple(value)
    return (value,)


def _medium_from_dict(raw: dict) -> media.MediumSpec:
    raw = dict(raw)
    channels = []
    for ch in raw.pop("channels", []):
        ch = dict(ch)
        kind = ch.pop("kind", "channel")
        ch["start"] = tuple(ch["start"])
        channels.append(media.LChannel(**ch) if kind == "lchannel" else media.Channel(**ch))
    inclusions = [media.Inclusion(corner=tuple(i["corner"]), extents=tuple(i["extents"]))
                  for i in raw.pop("inclusions", [])]
    if "random_extent" in raw:
        raw["random_extent"] = tuple(raw["random_extent"])
    try:
        return media.MediumSpec(channels=tuple(channels), inclusions=tuple(inclusions), **raw)
    except TypeError as exc:
        raise ConfigError(f"bad medium spec: {exc}") from exc


def _medium_to_dict(spec: media.MediumSpec) -> dict:
    out = asdict(spec)
    chans = []
    for ch in spec.channels:
        entry = asdict(ch)
        entry["kind"] = "lchannel" if isinstance(ch, media.LChannel) else "channel"
        entry["start"] = list(entry["start"])
        chans.append(entry)
    out["channels"] = chans
    out["inclusions"] = [{"corner": list(i.corner), "extents": list(i.extents)}
                         for i in spec.inclusions]
    out["random_extent"] = list(spec.random_extent)
    return out


def auto_layers(variant: str, H: float, d: int) -> int:
    """Oversampling recipe: more layers for smaller H, fewer in 3D.

    Constrained runs use about 4 log(1/H)/log 8 layers, relaxed about 3,
    and 3D about 2, rounded to the nearest integer and at least one.
    """
    base = 2.0 if d == 3 else {"constrained": 4.0, "relaxed": 3.0}[variant]
    return max(1, round(base * math.log(1.0 / H) / math.log(8.0)))


class Session:
    """Cache of fine-level objects shared across the cases of one run."""

    def __init__(self, basis_cache_size: int = 4):
        self._grid = {}
        self._field = {}
        self._fine = {}
        self._aux = {}
        self._pou = {}
        self._basis = OrderedDict()
        self._basis_cache_size = basis_cache_size

    def grid(self, d, n_f, n_c):
        key = (d, n_f, n_c)
        if key not in self._grid:
            self._grid[key] = build_hierarchy(d, n_f, n_c)
        return self._grid[key]

    def pou(self, d, n_f, n_c):
        key = (d, n_f, n_c)
        if key not in self._pou:
            self._pou[key] = build_pou(self.grid(d, n_f, n_c))
        return self._pou[key]

    def field(self, mspec: media.MediumSpec):
        if mspec not in self._field:
            self._field[mspec] = media.generate_medium(mspec)
        return self._field[mspec]

    def operators(self, mspec, nu, convention):
        """Fine stiffness and Lame fields; independent of coarse level and force."""
        key = ("op", mspec, nu, convention)
        if key not in self._fine:
            g = self.grid(mspec.d, mspec.n_f, 2)   # coarse level irrelevant here
            e = self.field(mspec)
            lam, mu = media.lame_from_young(e, nu, convention)
            A = fem.assemble_stiffness(g, lam, mu)
            self._fine[key] = {"lam": lam, "mu": mu, "A": A}
        return self._fine[key]

    def fine(self, mspec, nu, convention, force=None, fine_solver="auto"):
        """Operators plus load and the reference solution for one force."""
        key = ("ref", mspec, nu, convention, force)
        if key not in self._fine:
            g = self.grid(mspec.d, mspec.n_f, 2)
            ops = self.operators(mspec, nu, convention)
            F = fem.assemble_load(g, np.array(force) if force is not None else None)
            fs = fem.solve_fine(ops["A"], F, g, method=fine_solver)
            self._fine[key] = {**ops, "F": F, "u_h": fs.u,
                               "fine_method": fs.method,
                               "fine_residual": fs.rel_residual}
        return self._fine[key]

    def coefficients(self, mspec, nu, convention, n_c):
        key = (mspec, nu, convention, n_c)
        if key not in self._aux or "coeff" not in self._aux.get(key, {}):
            g = self.grid(mspec.d, mspec.n_f, n_c)
            e = self.field(mspec)
            self._aux.setdefault(key, {})["coeff"] = media.build_coefficients(
                g, e, nu=nu, convention=convention)
        return self._aux[key]["coeff"]

    def aux(self, mspec, nu, convention, n_c, n_basis):
        key = (mspec, nu, convention, n_c)
        entry = self._aux.setdefault(key, {})
        if ("space", n_basis) not in entry:
            g = self.grid(mspec.d, mspec.n_f, n_c)
            coeff = self.coefficients(mspec, nu, convention, n_c)
            entry[("space", n_basis)] = build_auxiliary_space(g, coeff, n_basis)
        return entry[("space", n_basis)]

    def basis(self, mspec, nu, convention, n_c, n_basis, variant, m, patch_solver="auto"):
        key = (mspec, nu, convention, n_c, n_basis, variant, m, patch_solver)
        if key in self._basis:
            self._basis.move_to_end(key)
            return self._basis[key]
        g = self.grid(mspec.d, mspec.n_f, n_c)
        ops = self.operators(mspec, nu, convention)
        aux = self.aux(mspec, nu, convention, n_c, n_basis)
        bs = offline.build_basis_matrix(g, ops["A"], aux, variant, m,
                                        method=patch_solver, check_rank=False)
        self._basis[key] = bs
        while len(self._basis) > self._basis_cache_size:
            self._basis.popitem(last=False)
        return bs


def _fingerprint():
    return {"package": "cemfem", "version": __version__}


def run_case(cfg: ExperimentConfig, session: Session, n_c: int, n_basis: int,
             m, contrast: float) -> dict:
    """One (H, N_b, m, contrast) cell of a sweep."""
    t0 = time.perf_counter()
    mspec = cfg.medium_spec(contrast)
    g = session.grid(cfg.d, cfg.n_f, n_c)
    layers = auto_layers(cfg.variant, g.H, cfg.d) if m == "auto" else int(m)
    fine = session.fine(mspec, cfg.nu, cfg.lame_convention, cfg.force, cfg.fine_solver)
    basis = session.basis(mspec, cfg.nu, cfg.lame_convention, n_c, n_basis,
                          cfg.variant, layers, cfg.patch_solver)
    sol = coarse.coarse_solve(basis.R, fine["A"], fine["F"],
                              provenance={"variant": cfg.variant, "m": layers,
                                          "n_basis": n_basis, "H": g.H})
    el2, eh1 = coarse.error_norms(g, fine["A"], fine["lam"], fine["mu"],
                                  sol.u_fine, fine["u_h"], l2_weight=cfg.l2_weight)
    return {
        "H": g.H, "n_c": n_c, "variant": cfg.variant, "n_basis": n_basis,
        "layers": layers, "contrast": contrast, "dof": basis.n_columns,
        "e_l2": el2, "e_h1": eh1,
        "galerkin_residual": sol.galerkin_residual,
        "fine_method": fine["fine_method"],
        "fine_residual": fine["fine_residual"],
        "wall_time": time.perf_counter() - t0,
    }


def _guarded_case(cfg, session, nc, nb, m, c):
    from .fem import SolverError

    try:
        return run_case(cfg, session, nc, nb, m, c)
    except SolverError as exc:
        return {"n_c": nc, "n_basis": nb, "layers": m, "contrast": c,
                "failed": str(exc)}


def run(cfg: ExperimentConfig, session: Session | None = None) -> dict:
    """Execute the configured sweep; returns the report dict.

    Solver failures do not abort the sweep: the failed case is recorded
    with its error message and the remaining cases still run.
    """
    session = session or Session()
    cases = list(itertools.product(cfg.n_c, cfg.n_basis, cfg.layers, cfg.contrast))
    workers = int(os.environ.get("CEMFEM_WORKERS", "1"))
    rows = [None] * len(cases)
    if workers > 1 and len(cases) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as ex:
            futs = {ex.submit(_guarded_case, cfg, session, nc, nb, m, c): k
                    for k, (nc, nb, m, c) in enumerate(cases)}
            for fut, k in futs.items():
                rows[k] = fut.result()
    else:
        for k, (nc, nb, m, c) in enumerate(cases):
            rows[k] = _guarded_case(cfg, session, nc, nb, m, c)
    return {"config": cfg.to_dict(), "fingerprint": _fingerprint(), "rows": rows,
            "failures": sum("failed" in r for r in rows)}


def run_online(cfg: ExperimentConfig, session: Session | None = None) -> dict:
    """Offline build followed by the enrichment loop; single-case axes only."""
    session = session or Session()
    for name in ("n_c", "n_basis", "layers", "contrast"):
        if len(getattr(cfg, name)) != 1:
            raise ConfigError(f"online runs need a single value for {name!r}")
    n_c, n_basis, m, contrast = cfg.n_c[0], cfg.n_basis[0], cfg.layers[0], cfg.contrast[0]
    mspec = cfg.medium_spec(contrast)
    g = session.grid(cfg.d, cfg.n_f, n_c)
    layers = auto_layers(cfg.variant, g.H, cfg.d) if m == "auto" else int(m)
    fine = session.fine(mspec, cfg.nu, cfg.lame_convention, cfg.force, cfg.fine_solver)
    aux = session.aux(mspec, cfg.nu, cfg.lame_convention, n_c, n_basis)
    pou = session.pou(cfg.d, cfg.n_f, n_c)
    basis = session.basis(mspec, cfg.nu, cfg.lame_convention, n_c, n_basis,
                          cfg.variant, layers, cfg.patch_solver)
    ocfg = cfg.online
    t0 = time.perf_counter()
    state = online.enrich_loop(
        g, fine["A"], fine["F"], aux, pou, basis, fine["u_h"],
        fine["lam"], fine["mu"], theta=ocfg["theta"], mode=ocfg["mode"],
        tol_rel=ocfg["tol_rel"], tol_abs=ocfg["tol_abs"],
        max_iter=ocfg["max_iter"], p=ocfg["p"], method=cfg.patch_solver,
        l2_weight=cfg.l2_weight)
    return {"config": cfg.to_dict(), "fingerprint": _fingerprint(),
            "flag": state.flag, "history": state.history,
            "wall_time": time.perf_counter() - t0, "_state": state}


def compare_variants(cfg: ExperimentConfig, session: Session | None = None) -> dict:
    """Run both variants on identical axes and pair the rows with a verdict."""
    session = session or Session()
    reports = {}
    for variant in ("constrained", "relaxed"):
        reports[variant] = run(replace(cfg, variant=variant), session)
    paired = []
    failures = 0
    for rc, rr in zip(reports["constrained"]["rows"], reports["relaxed"]["rows"]):
        if "failed" in rc or "failed" in rr:
            failures += 1
            paired.append({**{k: rc[k] for k in ("n_c", "n_basis", "layers", "contrast")},
                           "failed": rc.get("failed") or rr.get("failed")})
            continue
        paired.append({
            **{k: rc[k] for k in ("H", "n_c", "n_basis", "layers", "contrast")},
            "constrained_e_l2": rc["e_l2"], "constrained_e_h1": rc["e_h1"],
            "relaxed_e_l2": rr["e_l2"], "relaxed_e_h1": rr["e_h1"],
            "relaxed_not_worse": bool(rr["e_h1"] <= rc["e_h1"]),
        })
    return {"config": cfg.to_dict(), "fingerprint": _fingerprint(), "rows": paired,
            "failures": failures}


_CSV_COLUMNS = ["H", "n_c", "variant", "n_basis", "layers", "contrast",
                "dof", "e_l2", "e_h1"]
_COMPARE_COLUMNS = ["H", "n_c", "n_basis", "layers", "contrast",
                    "constrained_e_l2", "constrained_e_h1",
                    "relaxed_e_l2", "relaxed_e_h1", "relaxed_not_worse"]
_HISTORY_COLUMNS = ["iteration", "dof", "e_l2", "e_h1", "residual_sq", "selected"]


def _fmt(x):
    return repr(float(x)) if isinstance(x, float) else str(x)


def write_rows_csv(path, rows, columns):
    """Deterministic CSV: fixed column set, repr-formatted floats, no timings."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def write_report(report: dict, outdir, stem: str):
    os.makedirs(outdir, exist_ok=True)
    payload = {k: v for k, v in report.items() if not k.startswith("_")}
    with open(os.path.join(outdir, stem + ".json"), "w") as fh:
        json.dump(payload, fh, indent=1, default=float)
    if "history" in report:
        write_rows_csv(os.path.join(outdir, stem + ".csv"),
                       report["history"], _HISTORY_COLUMNS)
    elif report.get("rows"):
        good = [r for r in report["rows"] if "failed" not in r]
        if good:
            cols = _COMPARE_COLUMNS if "constrained_e_h1" in good[0] else _CSV_COLUMNS
            write_rows_csv(os.path.join(outdir, stem + ".csv"), good, cols)
    return os.path.join(outdir, stem + ".json")
