"""Batch driver: parse a run configuration, execute, emit reports.

Configs are flat ``key = value`` text, one pair per line, ``#`` comments
and blank lines allowed.  Values are typed per key; lists are
comma-separated.  ``schema_version`` is mandatory and must be 1.
Unknown keys are rejected with their line number so stale configs fail
loudly instead of silently using defaults.

Config schema (defaults in parentheses):

  schema_version    int, required, must be 1
  command           run | measure | lattice | counterexample | selftest (run)
  out               output directory (out)
  seed              int >= 0 (0)

  problem, chain route:
  n1                tangential sites, int >= 1 (2)
  n2                last degenerate site, int >= n1 (3)
  alpha_tangent     n1 floats (1.0, 1.6180339887498949)
  alpha_normal     J floats, the normal frequencies (4.17227258, 5.12759491, 6.37642311)
  beta              n2 - n1 floats, quartic coefficients (1.0)
  y_star            n1 floats, expansion actions (0.2, 0.2)
  eps               coupling strength >= 0 (1e-6)
  grading_m         reduction grading cap (9)
  normal_form_file  optional series file; overrides the chain route ()

  iteration:
  L                 degeneracy order, int >= 2 (2)
  tau               Diophantine exponent (1.0)
  dio_d             mode-weight exponent (1.0)
  a_exp, a_wt       site-weight shape (1.0, 0.02)
  p, pbar           norm exponents (1.0, 1.5)
  s0 rho0 r0 eta0 gamma0 sigma0 M0   initial geometry
                    (1.0, 0.046875, 0.3, 0.5, 0.05, 0.1, 1.0)
  K_schedule        cutoffs per step (5, 6, 7)
  nu_max            step budget, int >= 0 (3)
  stop_norm         convergence threshold (1e-14)
  strict_smallness  abort when the smallness bound fails (true)
  strict_hypotheses abort when a contraction hypothesis fails (true)
  strict_membership abort when a divisor check fails (true)
  equilibrium_tol   zero-residual tolerance (1e-10)
  torus_periods     post-run diagnostic length, 0 disables (100)
  torus_dt          diagnostic integrator step (0.02)
  torus_prune_rel   relative prune floor for the diagnostic (1e-8)

  measure:
  samples           parameter draws (2000)
  gamma_grid        divisor constants to scan (0.01, 0.05, 0.1)
  box               flattened lo,hi pairs; empty derives from alpha_tangent ()
  box_halfwidth     used when box is empty (0.2)
  sample_mode       random | grid (random)
  measure_K         cutoff; 0 means first K_schedule entry (0)

  lattice:
  T                 integration time (10.0)
  dt                integrator step (0.001)
  store_every       sample thinning (10)
  amplitude         initial displacement of excited sites (0.1)
  q0, p0            explicit initial state, n2 + J floats each ()

  counterexample:
  sigma_exp         plateau exit exponent, int >= 1 (1)
  ell_exp           forcing exponent, int >= 1 (1)
  eps_lo, eps_hi    grid range ((1e-3, 1e-1))
  eps_count         grid size (4001)

Exit codes: 0 success; 1 config or generic failure; 2 resonance
exclusion; 3 contraction-hypothesis or Lie-divergence failure; 4
equilibrium location failure; 5 smallness-bound failure.  Env var
KAMFORGE_THREADS caps measure-scan workers.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import reports
from .counterexample import (
    CounterexampleConfig,
    default_eps_grid,
    equilibrium_oscillation,
    verify_split,
)
from .degree import DegreeProblem, brouwer_degree
from .engine import (
    EngineParams,
    NormalForm,
    RunPolicy,
    ScheduleAnchors,
    StepGeometry,
    closed_form_geometry,
    decompose_normal_form,
    initial_state,
    run,
    schedule_next,
    structural_constants,
)
from .errors import (
    ConfigError,
    DivergenceError,
    EquilibriumNotFoundError,
    HypothesisError,
    KamforgeError,
    ResonanceError,
    SmallnessError,
)
from .homological import DiophantineParams
from .lattice import (
    LatticeConfig,
    build_lattice,
    default_sites,
    integrate_lattice,
    site_actions,
    to_normal_coordinates,
    torus_diagnostic,
)
from .measure import (
    ParameterBox,
    excluded_fraction,
    stepwise_loss,
    fitted_envelope_constant,
    wilson_interval,
)
from .series import (
    Dims,
    Sites,
    TFSeries,
    load_lines,
    monomial,
    poisson_bracket,
    series_product,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_RESONANCE = 2
EXIT_HYPOTHESIS = 3
EXIT_EQUILIBRIUM = 4
EXIT_SMALLNESS = 5

COMMANDS = ("run", "measure", "lattice", "counterexample", "selftest")


def exit_code_for(err: Optional[BaseException]) -> int:
    if err is None:
        return EXIT_OK
    if isinstance(err, ResonanceError):
        return EXIT_RESONANCE
    if isinstance(err, (HypothesisError, DivergenceError)):
        return EXIT_HYPOTHESIS
    if isinstance(err, EquilibriumNotFoundError):
        return EXIT_EQUILIBRIUM
    if isinstance(err, SmallnessError):
        return EXIT_SMALLNESS
    return EXIT_ERROR


@dataclass
class RunConfig:
    """Typed view of one parsed config file; field names match keys."""

    schema_version: int = 0
    command: str = "run"
    out: str = "out"
    seed: int = 0

    n1: int = 2
    n2: int = 3
    alpha_tangent: Tuple[float, ...] = (1.0, 1.6180339887498949)
    alpha_normal: Tuple[float, ...] = (4.17227258, 5.12759491, 6.37642311)
    beta: Tuple[float, ...] = (1.0,)
    y_star: Tuple[float, ...] = (0.2, 0.2)
    eps: float = 1e-6
    grading_m: int = 9
    normal_form_file: str = ""

    L: int = 2
    tau: float = 1.0
    dio_d: float = 1.0
    a_exp: float = 1.0
    a_wt: float = 0.02
    p: float = 1.0
    pbar: float = 1.5
    s0: float = 1.0
    rho0: float = 0.046875
    r0: float = 0.3
    eta0: float = 0.5
    gamma0: float = 0.05
    sigma0: float = 0.1
    M0: float = 1.0
    K_schedule: Tuple[int, ...] = (5, 6, 7)
    nu_max: int = 3
    stop_norm: float = 1e-14
    strict_smallness: bool = True
    strict_hypotheses: bool = True
    strict_membership: bool = True
    equilibrium_tol: float = 1e-10
    torus_periods: int = 100
    torus_dt: float = 0.02
    torus_prune_rel: float = 1e-8

    samples: int = 2000
    gamma_grid: Tuple[float, ...] = (0.01, 0.05, 0.1)
    box: Tuple[float, ...] = ()
    box_halfwidth: float = 0.2
    sample_mode: str = "random"
    measure_K: int = 0

    T: float = 10.0
    dt: float = 1e-3
    store_every: int = 10
    amplitude: float = 0.1
    q0: Tuple[float, ...] = ()
    p0: Tuple[float, ...] = ()

    sigma_exp: int = 1
    ell_exp: int = 1
    eps_lo: float = 1e-3
    eps_hi: float = 1e-1
    eps_count: int = 4001

    source: str = field(default="", repr=False)


_KINDS: Dict[str, str] = {
    "schema_version": "int",
    "command": "str",
    "out": "str",
    "seed": "int",
    "n1": "int",
    "n2": "int",
    "alpha_tangent": "floats",
    "alpha_normal": "floats",
    "beta": "floats",
    "y_star": "floats",
    "eps": "float",
    "grading_m": "int",
    "normal_form_file": "str",
    "L": "int",
    "tau": "float",
    "dio_d": "float",
    "a_exp": "float",
    "a_wt": "float",
    "p": "float",
    "pbar": "float",
    "s0": "float",
    "rho0": "float",
    "r0": "float",
    "eta0": "float",
    "gamma0": "float",
    "sigma0": "float",
    "M0": "float",
    "K_schedule": "ints",
    "nu_max": "int",
    "stop_norm": "float",
    "strict_smallness": "bool",
    "strict_hypotheses": "bool",
    "strict_membership": "bool",
    "equilibrium_tol": "float",
    "torus_periods": "int",
    "torus_dt": "float",
    "torus_prune_rel": "float",
    "samples": "int",
    "gamma_grid": "floats",
    "box": "floats",
    "box_halfwidth": "float",
    "sample_mode": "str",
    "measure_K": "int",
    "T": "float",
    "dt": "float",
    "store_every": "int",
    "amplitude": "float",
    "q0": "floats",
    "p0": "floats",
    "sigma_exp": "int",
    "ell_exp": "int",
    "eps_lo": "float",
    "eps_hi": "float",
    "eps_count": "int",
}


def _coerce(key: str, raw: str, lineno: int):
    kind = _KINDS[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind == "floats":
            if not raw:
                return ()
            return tuple(float(part.strip()) for part in raw.split(","))
        if kind == "ints":
            if not raw:
                return ()
            return tuple(int(part.strip()) for part in raw.split(","))
        return raw
    except ValueError:
        raise ConfigError(
            "line %d: field %r expects %s, got %r" % (lineno, key, kind, raw)
        ) from None


def _validate(cfg: RunConfig) -> None:
    def bad(field_name: str, why: str) -> ConfigError:
        return ConfigError("field %r %s" % (field_name, why))

    if cfg.schema_version != 1:
        raise bad("schema_version", "is mandatory and must be 1")
    if cfg.command not in COMMANDS:
        raise bad("command", "must be one of %s" % (", ".join(COMMANDS)))
    if cfg.seed < 0:
        raise bad("seed", "must be >= 0")
    if cfg.eps < 0:
        raise bad("eps", "must be >= 0")
    if cfg.nu_max < 0:
        raise bad("nu_max", "must be >= 0")
    if cfg.normal_form_file and not os.path.exists(cfg.normal_form_file):
        raise bad("normal_form_file", "references a missing file %r" % cfg.normal_form_file)
    if not cfg.K_schedule or any(k < 1 for k in cfg.K_schedule):
        raise bad("K_schedule", "needs at least one positive cutoff")
    if any(b < a for a, b in zip(cfg.K_schedule, cfg.K_schedule[1:])):
        raise bad("K_schedule", "must be nondecreasing")
    if cfg.sample_mode not in ("random", "grid"):
        raise bad("sample_mode", "must be random or grid")
    if len(cfg.box) % 2 != 0:
        raise bad("box", "needs an even number of values (lo,hi pairs)")
    if any(hi <= lo for lo, hi in zip(cfg.box[::2], cfg.box[1::2])):
        raise bad("box", "needs lo < hi in every pair")
    if not cfg.normal_form_file:
        if cfg.n1 < 1 or cfg.n2 < cfg.n1:
            raise bad("n2", "needs n2 >= n1 >= 1")
        if len(cfg.alpha_tangent) != cfg.n1:
            raise bad("alpha_tangent", "needs exactly n1 values")
        if len(cfg.y_star) != cfg.n1:
            raise bad("y_star", "needs exactly n1 values")
        if len(cfg.beta) != cfg.n2 - cfg.n1:
            raise bad("beta", "needs exactly n2 - n1 values")
        if not cfg.alpha_normal:
            raise bad("alpha_normal", "needs at least one frequency")


def parse_config(path: str) -> RunConfig:
    """Read and validate one flat config file."""
    try:
        with open(path) as fh:
            raw_lines = fh.readlines()
    except OSError as exc:
        raise ConfigError("cannot read config %r: %s" % (path, exc)) from exc

    values: Dict[str, object] = {}
    seen: Dict[str, int] = {}
    for lineno, raw in enumerate(raw_lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("line %d: expected 'key = value', got %r" % (lineno, raw.strip()))
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _KINDS:
            raise ConfigError("line %d: unknown key %r" % (lineno, key))
        if key in seen:
            raise ConfigError(
                "line %d: duplicate key %r (first set on line %d)" % (lineno, key, seen[key])
            )
        seen[key] = lineno
        values[key] = _coerce(key, val, lineno)

    if "schema_version" not in values:
        raise ConfigError("field 'schema_version' is mandatory and must be 1")
    cfg = RunConfig(**values)
    cfg.source = path
    _validate(cfg)
    return cfg


# --- shared assembly ------------------------------------------------------------


def _lattice_config(cfg: RunConfig) -> LatticeConfig:
    return LatticeConfig(
        n1=cfg.n1,
        n2=cfg.n2,
        alpha_tangent=tuple(cfg.alpha_tangent),
        alpha_normal=tuple(cfg.alpha_normal),
        beta=tuple(cfg.beta),
        eps=cfg.eps,
    )


def _problem(cfg: RunConfig) -> Tuple[NormalForm, TFSeries, Sites]:
    """Normal form + perturbation + site weights for the run command."""
    cons = structural_constants(cfg.L, cfg.tau)
    if cfg.normal_form_file:
        with open(cfg.normal_form_file) as fh:
            W = load_lines(fh)
        e, omega, Omega, g, f, rest = decompose_normal_form(W, cons.m)
        N = NormalForm(e=e, omega=omega, Omega=Omega, g=g, f=f, dims=W.dims)
        d = W.dims
        sites = Sites(
            z=tuple(range(d.n + 1, d.n + d.b + 1)),
            w=tuple(range(d.n + d.b + 1, d.n + d.b + d.J + 1)),
        )
        return N, rest, sites
    lat = _lattice_config(cfg)
    N, P = to_normal_coordinates(lat, cfg.y_star, grading_m=cfg.grading_m)
    return N, P, default_sites(lat)


def _engine_params(cfg: RunConfig, sites: Sites) -> Tuple[EngineParams, StepGeometry]:
    cons = structural_constants(cfg.L, cfg.tau)
    params = EngineParams(
        constants=cons,
        anchors=ScheduleAnchors(gamma0=cfg.gamma0, sigma0=cfg.sigma0, M0=cfg.M0),
        dio_d=cfg.dio_d,
        sites=sites,
        a_exp=cfg.a_exp,
        a_wt=cfg.a_wt,
        p=cfg.p,
        pbar=cfg.pbar,
        K_schedule=tuple(cfg.K_schedule),
        policy=RunPolicy(
            strict_smallness=cfg.strict_smallness,
            strict_hypotheses=cfg.strict_hypotheses,
            strict_membership=cfg.strict_membership,
        ),
        equilibrium_tol=cfg.equilibrium_tol,
        seed=cfg.seed,
    )
    geom0 = StepGeometry(
        nu=0,
        s=cfg.s0,
        rho=cfg.rho0,
        r=cfg.r0,
        eta=cfg.eta0,
        gamma=cfg.gamma0,
        sigma=cfg.sigma0,
        M=cfg.M0,
        K=cfg.K_schedule[0],
    )
    return params, geom0


def _emit(quiet: bool, *lines: str) -> None:
    if not quiet:
        for line in lines:
            print(line)


# --- commands -------------------------------------------------------------------


def _cmd_run(cfg: RunConfig, quiet: bool) -> int:
    N, P, sites = _problem(cfg)
    params, geom0 = _engine_params(cfg, sites)
    report = run(
        initial_state(N, P, geom0),
        params,
        nu_max=cfg.nu_max,
        stop_norm=cfg.stop_norm,
        eps=cfg.eps if cfg.eps > 0 else None,
    )

    diag = None
    scale = None
    if cfg.torus_periods > 0 and report.error is None and report.steps:
        omega_star = np.asarray(report.omega_star)
        T = cfg.torus_periods * 2.0 * math.pi / float(np.min(np.abs(omega_star)))
        diag = torus_diagnostic(
            report.final_N,
            report.final_P,
            T,
            cfg.torus_dt,
            prune_rel=cfg.torus_prune_rel,
            keep_trajectory=True,
        )
        scale = report.steps[-1].norm_P_out

    reports.write_json(
        os.path.join(cfg.out, "run_report.json"),
        reports.run_report_dict(report, cfg.seed, diag, scale),
    )
    reports.write_lines(
        os.path.join(cfg.out, "steps.csv"), reports.steps_csv_lines(report.steps)
    )
    reports.render_norm_decay(report, os.path.join(cfg.out, "norm_decay.png"))
    if diag is not None and diag.trajectory is not None:
        reports.render_torus_drift(
            diag.trajectory, os.path.join(cfg.out, "torus_drift.png")
        )

    lines = [
        "run: %d step(s), %s" % (len(report.steps), report.stop_reason),
        "  omega:  %s -> %s" % (list(report.omega0), list(report.omega_star)),
    ]
    for rec in report.steps:
        lines.append(
            "  step %d: K=%d  |X_P| %.3e -> %.3e  (x%.3g)  residual %.2e  H-ok %s"
            % (
                rec.nu,
                rec.K,
                rec.norm_P_in,
                rec.norm_P_out,
                rec.norm_P_out / rec.norm_P_in if rec.norm_P_in else 0.0,
                rec.residual_ratio,
                all(h.ok for h in rec.hypotheses),
            )
        )
    if diag is not None:
        lines.append(
            "  torus: sup|y|=%.3e sup|z|=%.3e sup|w|=%.3e  freq err %.3e  (scale %.3e)"
            % (diag.sup_y, diag.sup_z, diag.sup_w, diag.freq_rel_error, scale)
        )
    if report.error is not None:
        lines.append("  error: %s" % report.stop_reason)
    code = exit_code_for(report.error)
    lines.append("  exit %d" % code)
    reports.write_lines(os.path.join(cfg.out, "summary.txt"), lines)
    _emit(quiet, *lines)
    return code


def _cmd_measure(cfg: RunConfig, quiet: bool) -> int:
    if cfg.box:
        bounds = tuple(
            (cfg.box[2 * i], cfg.box[2 * i + 1]) for i in range(len(cfg.box) // 2)
        )
    else:
        bounds = tuple(
            (a - cfg.box_halfwidth, a + cfg.box_halfwidth) for a in cfg.alpha_tangent
        )
    Omega_arr = np.asarray(cfg.alpha_normal, float)
    box = ParameterBox(
        bounds=bounds,
        omega_map=lambda xi: np.asarray(xi, float),
        Omega_map=lambda xi: np.broadcast_to(
            Omega_arr, (len(xi), len(Omega_arr))
        ).copy(),
        sample_count=cfg.samples,
    )
    J = len(cfg.alpha_normal)
    w_sites = tuple(range(cfg.n2 + 1, cfg.n2 + 1 + J))
    K = cfg.measure_K if cfg.measure_K > 0 else cfg.K_schedule[0]

    estimates = [
        excluded_fraction(
            box,
            DiophantineParams(gamma=g, tau=cfg.tau, d=cfg.dio_d),
            K,
            w_sites,
            seed=cfg.seed,
            mode=cfg.sample_mode,
            count=cfg.samples,
        )
        for g in cfg.gamma_grid
    ]

    # gamma_nu follows the run schedule's closed form toward gamma0/2
    schedule = [
        (cfg.gamma0 * (1.0 + 2.0 ** (-nu)) / 2.0, k)
        for nu, k in enumerate(cfg.K_schedule)
    ]
    losses = stepwise_loss(
        box,
        schedule,
        cfg.tau,
        cfg.dio_d,
        w_sites,
        seed=cfg.seed,
        mode=cfg.sample_mode,
        count=cfg.samples,
    )

    doc = {
        "schema": reports.MEASURE_SCHEMA,
        "seed": cfg.seed,
        "samples": cfg.samples,
        "mode": cfg.sample_mode,
        "K": K,
        "tau": cfg.tau,
        "d": cfg.dio_d,
        "bounds": [list(b) for b in bounds],
        "estimates": [reports.estimate_dict(e) for e in estimates],
        "losses": [reports.loss_dict(s) for s in losses],
        "envelope_constant": fitted_envelope_constant(losses),
    }
    reports.write_json(os.path.join(cfg.out, "measure_report.json"), doc)
    reports.write_lines(
        os.path.join(cfg.out, "fractions.csv"), reports.fraction_csv_lines(estimates)
    )
    reports.write_lines(
        os.path.join(cfg.out, "losses.csv"), reports.loss_csv_lines(losses)
    )
    reports.render_measure_fraction(
        estimates, losses, os.path.join(cfg.out, "measure_fraction.png")
    )

    lines = ["measure: %d samples (%s), K=%d" % (cfg.samples, cfg.sample_mode, K)]
    for e in estimates:
        lines.append(
            "  gamma=%-8g excluded %.4f  [%.4f, %.4f]" % (e.gamma, e.fraction, e.ci_lo, e.ci_hi)
        )
    for s in losses:
        lines.append(
            "  shell %d (K %d->%d): lost %.4f  envelope %.4f"
            % (s.nu, s.K_prev, s.K, s.fraction, s.envelope)
        )
    lines.append("  exit 0")
    reports.write_lines(os.path.join(cfg.out, "summary.txt"), lines)
    _emit(quiet, *lines)
    return EXIT_OK


def _cmd_lattice(cfg: RunConfig, quiet: bool) -> int:
    lat = _lattice_config(cfg)
    H = build_lattice(lat)
    N = lat.n_sites
    if cfg.q0:
        if len(cfg.q0) != N:
            raise ConfigError("field 'q0' needs exactly %d values" % N)
        q0 = np.asarray(cfg.q0, float)
    else:
        q0 = np.zeros(N)
        excited = (
            [s - 1 for s in lat.degenerate_sites] if lat.degenerate_sites else [0]
        )
        for idx in excited:
            q0[idx] = cfg.amplitude
    if cfg.p0:
        if len(cfg.p0) != N:
            raise ConfigError("field 'p0' needs exactly %d values" % N)
        p0 = np.asarray(cfg.p0, float)
    else:
        p0 = np.zeros(N)

    traj = integrate_lattice(H, q0, p0, cfg.T, cfg.dt, store_every=cfg.store_every)
    energies = np.array([H.energy(traj.q[i], traj.p[i]) for i in range(len(traj.t))])
    e0 = float(energies[0])
    drift = float(np.max(np.abs(energies - e0))) / max(abs(e0), 1e-300)
    acts = site_actions(H, traj.q, traj.p)
    act_drift = (
        float(np.max(np.abs(acts - acts[0]))) if acts.size else 0.0
    )

    doc = {
        "schema": reports.LATTICE_SCHEMA,
        "seed": cfg.seed,
        "T": cfg.T,
        "dt": cfg.dt,
        "store_every": cfg.store_every,
        "sites": {
            "tangential": list(range(1, lat.n1 + 1)),
            "degenerate": list(lat.degenerate_sites),
            "normal": list(lat.normal_sites),
        },
        "energy0": e0,
        "max_rel_energy_drift": drift,
        "max_action_drift": act_drift,
        "samples": int(len(traj.t)),
    }
    reports.write_json(os.path.join(cfg.out, "lattice_report.json"), doc)
    reports.write_lines(os.path.join(cfg.out, "trajectory.csv"), traj.csv_lines())
    reports.render_lattice_trajectory(
        traj, energies, acts, os.path.join(cfg.out, "lattice_trajectory.png")
    )

    lines = [
        "lattice: %d sites, T=%g dt=%g (%d samples)" % (N, cfg.T, cfg.dt, len(traj.t)),
        "  energy %.6g, max relative drift %.3e" % (e0, drift),
        "  max pinned-action drift %.3e" % act_drift,
        "  exit 0",
    ]
    reports.write_lines(os.path.join(cfg.out, "summary.txt"), lines)
    _emit(quiet, *lines)
    return EXIT_OK


def _cmd_counterexample(cfg: RunConfig, quiet: bool) -> int:
    ccfg = CounterexampleConfig(
        sigma_exp=cfg.sigma_exp,
        ell_exp=cfg.ell_exp,
        eps_grid=default_eps_grid(cfg.eps_lo, cfg.eps_hi, cfg.eps_count),
    )
    split = verify_split(ccfg, seed=cfg.seed)
    osc = equilibrium_oscillation(ccfg)

    doc = {
        "schema": reports.COUNTEREXAMPLE_SCHEMA,
        "seed": cfg.seed,
        "sigma_exp": cfg.sigma_exp,
        "ell_exp": cfg.ell_exp,
        "split": reports.split_report_dict(split),
        "oscillation": reports.oscillation_dict(osc),
    }
    reports.write_json(os.path.join(cfg.out, "counterexample_report.json"), doc)
    reports.write_lines(os.path.join(cfg.out, "equilibrium.csv"), osc.csv_lines())
    reports.render_oscillation(
        osc, os.path.join(cfg.out, "counterexample_oscillation.png")
    )

    ok = split.ok and osc.sign_changes >= 10 and not osc.cauchy
    code = EXIT_OK if ok else EXIT_ERROR
    lines = [
        "counterexample: degree %d (stable over %d resolutions), margin %.3f"
        % (split.degree, len(split.degree_by_resolution), split.boundary_margin),
        "  convexity bound fails: min ratio %.1f, witness gap %.1f at %s"
        % (split.convexity.min_ratio, split.witness_gradient_gap, list(split.witness)),
        "  oscillation: %d sign changes on [%g, %g], tail spread %.3f"
        % (osc.sign_changes, float(osc.eps[-1]), float(osc.eps[0]), osc.tail_oscillation),
        "  exit %d" % code,
    ]
    reports.write_lines(os.path.join(cfg.out, "summary.txt"), lines)
    _emit(quiet, *lines)
    return code


def _selftest_checks(cfg: RunConfig) -> List[Tuple[str, bool, str]]:
    checks: List[Tuple[str, bool, str]] = []
    cons = structural_constants(cfg.L, cfg.tau)

    # 1. schedule recursion vs closed form.  The closed forms must satisfy
    # one recursion step near machine precision; the 30-step cumulative
    # comparison compounds ~1 ulp per power, so its floor is looser.
    anchors = ScheduleAnchors(gamma0=cfg.gamma0, sigma0=cfg.sigma0, M0=cfg.M0)
    geom = StepGeometry(
        nu=0, s=cfg.s0, rho=cfg.rho0, r=cfg.r0, eta=cfg.eta0,
        gamma=cfg.gamma0, sigma=cfg.sigma0, M=cfg.M0, K=cfg.K_schedule[0],
    )
    geom0 = geom
    fields_checked = ("s", "rho", "r", "eta", "gamma", "sigma", "M")
    cumulative = 0.0
    one_step = 0.0
    for nu in range(1, 31):
        geom = schedule_next(geom, cons, anchors, K_next=cfg.K_schedule[0])
        closed = closed_form_geometry(nu, geom0, cons, K=cfg.K_schedule[0])
        stepped = schedule_next(
            closed_form_geometry(nu - 1, geom0, cons, K=cfg.K_schedule[0]),
            cons,
            anchors,
            K_next=cfg.K_schedule[0],
        )
        for name in fields_checked:
            c = getattr(closed, name)
            cumulative = max(cumulative, abs(getattr(geom, name) - c) / max(abs(c), 1e-300))
            one_step = max(one_step, abs(getattr(stepped, name) - c) / max(abs(c), 1e-300))
    ok = one_step <= 2e-14 and cumulative <= 1e-12
    checks.append(
        (
            "schedule-closed-form",
            ok,
            "one-step rel err %.3e, 30-step %.3e" % (one_step, cumulative),
        )
    )

    # 2. bracket identities on a small random instance
    d = Dims(2, 1, 1)
    rng = np.random.default_rng(cfg.seed)

    def rand_series() -> TFSeries:
        S = TFSeries(d)
        for _ in range(6):
            k = tuple(int(v) for v in rng.integers(-1, 2, size=2))
            i = tuple(int(v) for v in rng.integers(0, 2, size=2))
            j = tuple(int(v) for v in rng.integers(0, 2, size=2))
            l1 = (int(rng.integers(0, 2)),)
            l2 = (int(rng.integers(0, 2)),)
            S = S + monomial(d, complex(rng.normal(), rng.normal()), k=k, i=i, j=j, l1=l1, l2=l2)
        return S

    A, B = rand_series(), rand_series()
    anti = (poisson_bracket(A, B) + poisson_bracket(B, A)).max_abs_coeff()
    prod_rule = (
        poisson_bracket(series_product(A, A), B)
        - series_product(A, poisson_bracket(A, B)).scaled(2.0)
    ).max_abs_coeff()
    err = max(anti, prod_rule)
    checks.append(("bracket-identities", err <= 1e-10, "worst residual %.3e" % err))

    # 3. degree of the identity map
    deg = brouwer_degree(
        DegreeProblem(lambda z: np.asarray(z, float), ((-1.0, 1.0), (-1.0, 1.0))),
        resolution=2,
        seed=cfg.seed,
    ).degree
    checks.append(("degree-identity", deg == 1, "degree %d" % deg))

    # 4. binomial confidence interval at a frozen point
    lo, hi = wilson_interval(8, 40)
    wok = abs(lo - 0.10499989725437703) <= 1e-12 and abs(hi - 0.34757306346399497) <= 1e-12
    checks.append(("wilson-interval", wok, "interval [%.12f, %.12f]" % (lo, hi)))

    # 5. chain reduction round-trip at one state
    lat = _lattice_config(cfg)
    Nf, Pser = to_normal_coordinates(lat, cfg.y_star, grading_m=12)
    from .lattice import normal_to_lattice

    x = rng.uniform(0.0, 2.0 * math.pi, size=lat.n1)
    y = rng.uniform(-5e-4, 5e-4, size=lat.n1)
    z = rng.uniform(-0.05, 0.05, size=2 * lat.b)
    w = rng.normal(size=lat.J) * 0.05 + 1j * rng.normal(size=lat.J) * 0.05
    q, pp = normal_to_lattice(lat, cfg.y_star, x, y, z, w)
    H = build_lattice(lat)
    direct = H.energy(q, pp)
    via = (Nf.to_series() + Pser).evaluate(x, y, z, w, np.conj(w)).real
    rerr = abs(direct - via) / max(1.0, abs(direct))
    checks.append(("lattice-round-trip", rerr <= 1e-10, "energy rel err %.3e" % rerr))

    return checks


def _cmd_selftest(cfg: RunConfig, quiet: bool) -> int:
    checks = _selftest_checks(cfg)
    all_ok = all(ok for _, ok, _ in checks)
    doc = {
        "schema": reports.SELFTEST_SCHEMA,
        "seed": cfg.seed,
        "ok": all_ok,
        "checks": [
            {"name": name, "ok": ok, "detail": detail} for name, ok, detail in checks
        ],
    }
    reports.write_json(os.path.join(cfg.out, "selftest_report.json"), doc)
    lines = ["selftest:"]
    for name, ok, detail in checks:
        lines.append("  %-22s %s  (%s)" % (name, "ok" if ok else "FAIL", detail))
    code = EXIT_OK if all_ok else EXIT_ERROR
    lines.append("  exit %d" % code)
    reports.write_lines(os.path.join(cfg.out, "summary.txt"), lines)
    _emit(quiet, *lines)
    return code


def execute(cfg: RunConfig, quiet: bool = False) -> int:
    """Run one parsed config; artifacts land in cfg.out."""
    os.makedirs(cfg.out, exist_ok=True)
    handler = {
        "run": _cmd_run,
        "measure": _cmd_measure,
        "lattice": _cmd_lattice,
        "counterexample": _cmd_counterexample,
        "selftest": _cmd_selftest,
    }[cfg.command]
    try:
        return handler(cfg, quiet)
    except KamforgeError as exc:
        code = exit_code_for(exc)
        print("%s: %s" % (type(exc).__name__, exc), file=sys.stderr)
        return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="kamforge",
        description="batch driver for normal-form iteration runs and diagnostics",
    )
    parser.add_argument("--config", required=True, help="path to a config file")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--seed", type=int, help="override the seed")
    parser.add_argument("--max-steps", type=int, help="override nu_max")
    parser.add_argument("--quiet", action="store_true", help="suppress stdout summary")
    args = parser.parse_args(argv)

    try:
        cfg = parse_config(args.config)
        if args.out is not None:
            cfg.out = args.out
        if args.seed is not None:
            cfg.seed = args.seed
        if args.max_steps is not None:
            cfg.nu_max = args.max_steps
        _validate(cfg)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_ERROR
    return execute(cfg, quiet=args.quiet)


if __name__ == "__main__":
    sys.exit(main())
