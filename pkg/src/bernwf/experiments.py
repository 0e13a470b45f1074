"""Batch experiment harness: config parsing, study runners, CSV + manifest.

One experiment per config file.  The on-disk format is a flat INI file with
two sections: ``[experiment]`` (kind, seed, output) and ``[study]`` (typed
per-kind parameters).  Every study writes one CSV plus a manifest recording
the verbatim config, its hash, the seed and the library version; rerunning
with the same config and seed reproduces the CSV byte for byte.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import bernstein as bn
from . import fleming_viot as fv
from . import generators as gn
from . import moments as mo
from . import mutation as mu
from . import semigroup as sg
from .mutation import _loglog_fit
from .polynomials import parse_polynomial
from .simplex import RngStream, enumerate_lattice, lattice_size, simplex_grid

KINDS = ("voronovskaya", "semigroup-rate", "longrun", "holder", "martingale",
         "fv-voronovskaya", "fv-semigroup", "moments", "assumptions")

OUTPUT_ENV = "BERNWF_OUTDIR"


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field_name = field_name
        self.message = message


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    seed: int
    output: str
    params: tuple[tuple[str, str], ...]

    def param(self, key: str, default: str | None = None) -> str | None:
        for k, v in self.params:
            if k == key:
                return v
        return default

    def to_text(self) -> str:
        lines = ["[experiment]", f"kind = {self.kind}", f"seed = {self.seed}",
                 f"output = {self.output}", "", "[study]"]
        lines += [f"{k} = {v}" for k, v in self.params]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        parser = configparser.ConfigParser()
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError("<file>", f"not a valid config: {exc}") from exc
        if "experiment" not in parser:
            raise ConfigError("experiment", "missing [experiment] section")
        exp = parser["experiment"]
        kind = exp.get("kind", "")
        if kind not in KINDS:
            raise ConfigError("experiment.kind",
                              f"unknown kind {kind!r}; choose from {', '.join(KINDS)}")
        try:
            seed = int(exp.get("seed", ""))
        except ValueError:
            raise ConfigError("experiment.seed", "must be an integer")
        output = exp.get("output", "").strip()
        if not output:
            raise ConfigError("experiment.output", "must be a nonempty name")
        study = parser["study"] if "study" in parser else {}
        params = tuple(sorted((k, study[k].strip()) for k in study))
        return cls(kind, seed, output, params)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text())


def _int_list(cfg: ExperimentConfig, key: str, required=True) -> list[int]:
    raw = cfg.param(key)
    if raw is None:
        if required:
            raise ConfigError(f"study.{key}", "missing")
        return []
    try:
        vals = [int(tok) for tok in raw.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"study.{key}", f"expected integers, got {raw!r}")
    if required and not vals:
        raise ConfigError(f"study.{key}", "needs at least one value")
    return vals


def _float_list(cfg: ExperimentConfig, key: str, required=True) -> list[float]:
    raw = cfg.param(key)
    if raw is None:
        if required:
            raise ConfigError(f"study.{key}", "missing")
        return []
    try:
        return [float(tok) for tok in raw.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"study.{key}", f"expected numbers, got {raw!r}")


def _int(cfg: ExperimentConfig, key: str, default: int | None = None) -> int:
    raw = cfg.param(key)
    if raw is None:
        if default is None:
            raise ConfigError(f"study.{key}", "missing")
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"study.{key}", f"expected an integer, got {raw!r}")


def _float(cfg: ExperimentConfig, key: str, default: float | None = None) -> float:
    raw = cfg.param(key)
    if raw is None:
        if default is None:
            raise ConfigError(f"study.{key}", "missing")
        return default
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"study.{key}", f"expected a number, got {raw!r}")


def _poly(cfg: ExperimentConfig, key: str, d: int) -> Polynomial:
    raw = cfg.param(key)
    if raw is None:
        raise ConfigError(f"study.{key}", "missing")
    try:
        return parse_polynomial(raw, d)
    except ValueError as exc:
        raise ConfigError(f"study.{key}", str(exc))


def _mutation(cfg: ExperimentConfig, d: int):
    """Returns (rates_for(n), limit MutationRates or None)."""
    model = cfg.param("mutation", "none")
    if model == "none":
        return None, None
    theta = _float(cfg, "theta", 1.0)
    if model == "uniform":
        limit = mu.MutationRates.strict(mu.uniform_limit_matrix(d, theta))
        return (lambda n: mu.uniform_mutation(n, d, theta)), limit
    if model in ("ohta-kimura-absorbing", "ohta-kimura-reflecting"):
        boundary = model.rsplit("-", 1)[1]
        limit = mu.MutationRates.weak(
            mu.ohta_kimura_limit_matrix(d, theta, boundary),
            allow_mass_loss=(boundary == "absorbing"))
        return (lambda n: mu.ohta_kimura(n, d, theta, boundary)), limit
    raise ConfigError("study.mutation", f"unknown model {model!r}")


def _functional(cfg: ExperimentConfig) -> fv.MomentFunctional:
    gamma_expr = cfg.param("gamma", "z")
    gamma_poly = parse_polynomial(gamma_expr, 1)
    gamma = lambda z: gamma_poly([z])
    name = cfg.param("functional", "variance")
    if name == "variance":
        return fv.variance_functional(gamma)
    if name == "mean":
        return fv.mean_functional(gamma)
    raise ConfigError("study.functional", f"unknown functional {name!r}")


# ---------------------------------------------------------------------------
# study runners: each returns (header, rows)
# ---------------------------------------------------------------------------

def _study_voronovskaya(cfg: ExperimentConfig):
    d = _int(cfg, "d")
    f = _poly(cfg, "f", d)
    ns = _int_list(cfg, "n")
    grid = simplex_grid(d, _int(cfg, "grid_m", 20 if d == 2 else 13))
    rates_for, limit = _mutation(cfg, d)
    rows = []
    for n in ns:
        rep = gn.voronovskaya_residual(
            f, n, grid=grid,
            rates_n=None if rates_for is None else rates_for(n),
            rates_limit=limit)
        rows.append(rep.row())
    return ["n", "residual", "bound", "pass"], rows


def _study_semigroup_rate(cfg: ExperimentConfig):
    d = _int(cfg, "d")
    f = _poly(cfg, "f", d)
    ns = _int_list(cfg, "n")
    ts = _float_list(cfg, "t")
    grid = simplex_grid(d, _int(cfg, "grid_m", 20 if d == 2 else 13))
    rates_for, limit = _mutation(cfg, d)
    oracle = sg.build_oracle(d, f.degree, limit)
    rows = []
    for t in ts:
        for n in ns:
            rn = None if rates_for is None else rates_for(n)
            err = sg.semigroup_error(f, n, t, rn, limit, grid=grid, oracle=oracle)
            bound = sg.trotter_rate_bound(f, n, t, limit, oracle=oracle)
            rows.append([n, repr(t), repr(err), repr(bound), repr(err / bound)])
    return ["n", "t", "error", "bound", "ratio"], rows


def _study_longrun(cfg: ExperimentConfig):
    d = _int(cfg, "d")
    ns = _int_list(cfg, "n")
    tol = _float(cfg, "tol", 1e-10)
    gen = RngStream(cfg.seed, 0).generator()
    rows = []
    for n in ns:
        values = gen.normal(size=lattice_size(d, n))
        f = bn.GridFunction(values, n, d)
        lattice = enumerate_lattice(d, n) / n
        vertex_vals = np.array([
            float(values[int(np.where((enumerate_lattice(d, n) == n * np.eye(d, dtype=int)[i]).all(axis=1))[0][0])])
            for i in range(d)])
        worst = 0.0
        for x in lattice:
            lim = bn.longrun_limit(f, x, n, tol=tol)
            worst = max(worst, abs(lim - float(x @ vertex_vals)))
        rows.append([n, repr(worst)])
    return ["n", "deviation"], rows


def _study_holder(cfg: ExperimentConfig):
    d = _int(cfg, "d")
    ns = _int_list(cfg, "n")
    alpha = _float(cfg, "alpha", 0.4)
    paths = _int(cfg, "paths", 10_000)
    x = np.full(d, 1.0 / d)
    rows = []
    for k, n in enumerate(ns):
        hist = bn.sample_chain_ensemble(x, n, n, None, paths, RngStream(cfg.seed, k))
        stats = bn.holder_statistics(hist / n, np.arange(n + 1) / n, alpha)
        rows.append([n, repr(alpha), repr(float(np.quantile(stats, 0.99))),
                     repr(float(stats.max()))])
    return ["n", "alpha", "q99", "max"], rows


def _study_martingale(cfg: ExperimentConfig):
    d = _int(cfg, "d")
    n = _int(cfg, "n")
    transitions = _int(cfg, "transitions", 100_000)
    rates_for, _ = _mutation(cfg, d)
    rates = None if rates_for is None else rates_for(n)
    gen = RngStream(cfg.seed, 0).generator()
    states = enumerate_lattice(d, n)
    pick = gen.choice(states.shape[0], size=5, replace=False)
    per_state = transitions // pick.shape[0]
    rows = []
    from .simplex import sample_multinomial_many
    for si, idx in enumerate(pick):
        y = states[idx] / n
        p = y if rates is None else mu.mutated_coords(y, rates)
        draws = sample_multinomial_many(np.tile(p, (per_state, 1)), n, gen) / n
        mean_inc = draws.mean(axis=0) - y
        theory = p - y
        sigma = np.sqrt(np.clip(p * (1 - p), 0.0, None) / n / per_state)
        for c in range(d):
            ok = abs(mean_inc[c] - theory[c]) <= 4.0 * max(sigma[c], 1e-15)
            rows.append([si, c, repr(float(mean_inc[c])), repr(float(theory[c])),
                         repr(float(sigma[c])), str(ok).lower()])
    return ["state", "coord", "mean_increment", "theory", "sigma",
            "within_4sigma"], rows


def _dim_schedule(cfg: ExperimentConfig):
    spec = cfg.param("dim", "ninth-root")
    if spec == "ninth-root":
        return mu.ninth_root_dim
    if spec.startswith("fixed:"):
        try:
            return mu.fixed_dim(int(spec.split(":", 1)[1]))
        except ValueError:
            raise ConfigError("study.dim", f"bad fixed dimension in {spec!r}")
    raise ConfigError("study.dim", f"unknown schedule {spec!r}")


def _study_fv_voronovskaya(cfg: ExperimentConfig):
    theta = _float(cfg, "theta", 1.0)
    ns = _int_list(cfg, "n")
    phi = _functional(cfg)
    dim_for = _dim_schedule(cfg)
    sched = mu.uniform_schedule(theta, dim_for)
    quad = cfg.param("qlimit", "quadrature") == "quadrature"
    qlimit = (uniform_quadrature_limit(theta) if quad
              else (lambda dd: mu.uniform_limit_matrix(dd, theta)))
    residuals, dims = [], []
    for n in ns:
        rep = fv.fv_voronovskaya_residual(phi, n, sched, qlimit_for=qlimit)
        residuals.append(rep.residual)
        dims.append(sched.dim_for(n))
    slope, _ = _loglog_fit(ns, residuals)
    rows = [[n, d_n, repr(float(r)), repr(float(slope))]
            for n, d_n, r in zip(ns, dims, residuals)]
    return ["n", "d_n", "residual", "fitted_exponent"], rows


def uniform_quadrature_limit(theta: float):
    """Continuum mutation action of the uniform model on the grid {i/d}:
    (theta/2)(uniform-rule mean - identity); the quadrature error is the
    finite-dimension part of the residual."""
    def factory(d: int) -> np.ndarray:
        m = np.full((d, d), theta / (2.0 * d))
        m -= (theta / 2.0) * np.eye(d)
        return m
    return factory


def _study_fv_semigroup(cfg: ExperimentConfig):
    d = _int(cfg, "d")
    theta = _float(cfg, "theta", 1.0)
    t = _float(cfg, "t", 0.5)
    ns = _int_list(cfg, "n")
    phi = _functional(cfg)
    disc = fv.Discretization(mu.uniform_grid(d))
    qmat = mu.uniform_limit_matrix(d, theta)
    rows = []
    for n in ns:
        err = fv.fv_semigroup_error(phi, n, t, disc,
                                    mu.uniform_mutation(n, d, theta), qmat)
        rows.append([n, d, repr(t), repr(err)])
    return ["n", "d", "t", "error"], rows


def _study_moments(cfg: ExperimentConfig):
    betas = _int_list(cfg, "beta")
    ns = _int_list(cfg, "n")
    xs = _float_list(cfg, "x")
    rows = []
    for beta in betas:
        table = mo.moment_table(beta, ns, xs)
        for i, n in enumerate(table.ns):
            for j, x in enumerate(table.xs):
                rows.append([n, repr(x), beta, repr(float(table.moments[i, j])),
                             repr(float(table.ratios[i, j]))])
    return ["n", "x", "beta", "moment", "ratio"], rows


def _study_assumptions(cfg: ExperimentConfig):
    model = cfg.param("model", "uniform")
    theta = _float(cfg, "theta", 1.0)
    ns = _int_list(cfg, "n")
    rows = []
    if model == "uniform":
        sched = mu.uniform_schedule(theta)
        beta = lambda z: z
        action = mu.uniform_limit_action(theta)
        q3_tol = _float(cfg, "q3_tol", 1.0)
    elif model == "ohta-kimura":
        sched = mu.ohta_kimura_schedule(theta)
        beta = lambda z: z * z
        action = mu.second_derivative_action(theta, lambda z: 2.0)
        q3_tol = _float(cfg, "q3_tol", 1e-9)
    else:
        raise ConfigError("study.model", f"unknown model {model!r}")
    decay = mu.check_rate_decay(sched, ns)
    conv = mu.check_generator_convergence(sched, action, beta, ns, tolerance=q3_tol,
                                          interior_only=(model == "ohta-kimura"))
    reports = [decay, conv]
    d_fixed = cfg.param("d")
    if d_fixed is not None and model == "uniform":
        d = int(d_fixed)
        fixed = mu.uniform_schedule(theta, mu.fixed_dim(d))
        reports.append(mu.check_rate_scaling(
            fixed, mu.uniform_limit_matrix(d, theta),
            gamma=_float(cfg, "gamma", 2.0), ns=ns))
    for rep in reports:
        for n, v in zip(rep.ns, rep.measurements):
            rows.append([rep.name, model, n, repr(v), repr(rep.fitted_exponent),
                         str(rep.passed).lower()])
    return ["check", "model", "n", "measurement", "fitted_exponent", "passed"], rows


_RUNNERS = {
    "voronovskaya": _study_voronovskaya,
    "semigroup-rate": _study_semigroup_rate,
    "longrun": _study_longrun,
    "holder": _study_holder,
    "martingale": _study_martingale,
    "fv-voronovskaya": _study_fv_voronovskaya,
    "fv-semigroup": _study_fv_semigroup,
    "moments": _study_moments,
    "assumptions": _study_assumptions,
}


def validate(cfg: ExperimentConfig) -> None:
    """Parse-and-type-check every parameter the study will use; raises
    ConfigError naming the offending field."""
    _dry_run_checks(cfg)


def _dry_run_checks(cfg: ExperimentConfig) -> None:
    kind = cfg.kind
    if kind in ("voronovskaya", "semigroup-rate"):
        d = _int(cfg, "d")
        _poly(cfg, "f", d)
        _int_list(cfg, "n")
        _mutation(cfg, d)
        if kind == "semigroup-rate":
            _float_list(cfg, "t")
    elif kind == "longrun":
        _int(cfg, "d"), _int_list(cfg, "n"), _float(cfg, "tol", 1e-10)
    elif kind == "holder":
        _int(cfg, "d"), _int_list(cfg, "n")
        alpha = _float(cfg, "alpha", 0.4)
        if not 0.0 < alpha < 1.0:
            raise ConfigError("study.alpha", "must lie in (0, 1)")
    elif kind == "martingale":
        d = _int(cfg, "d")
        _int(cfg, "n")
        _mutation(cfg, d)
    elif kind == "fv-voronovskaya":
        _int_list(cfg, "n"), _functional(cfg), _dim_schedule(cfg)
    elif kind == "fv-semigroup":
        _int(cfg, "d"), _int_list(cfg, "n"), _functional(cfg), _float(cfg, "t", 0.5)
    elif kind == "moments":
        _int_list(cfg, "beta"), _int_list(cfg, "n"), _float_list(cfg, "x")
    elif kind == "assumptions":
        _int_list(cfg, "n")
        if cfg.param("model", "uniform") not in ("uniform", "ohta-kimura"):
            raise ConfigError("study.model", "must be uniform or ohta-kimura")


def resolve_outdir(explicit: str | None = None) -> Path:
    if explicit:
        return Path(explicit)
    env = os.environ.get(OUTPUT_ENV)
    return Path(env) if env else Path.cwd()


def run_experiment(cfg: ExperimentConfig, outdir: Path) -> Path:
    """Execute one study; writes <output>.csv and <output>.manifest.json."""
    _dry_run_checks(cfg)
    header, rows = _RUNNERS[cfg.kind](cfg)
    outdir.mkdir(parents=True, exist_ok=True)
    csv_path = outdir / f"{cfg.output}.csv"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(row)
    csv_path.write_text(buf.getvalue())
    text = cfg.to_text()
    manifest = {
        "config_sha256": hashlib.sha256(text.encode()).hexdigest(),
        "config_text": text,
        "csv": csv_path.name,
        "kind": cfg.kind,
        "seed": cfg.seed,
        "version": __version__,
    }
    (outdir / f"{cfg.output}.manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return csv_path
