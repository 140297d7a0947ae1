"""Report rendering: JSON documents, CSV tables, summaries, and figures.

Every writer is deterministic for a fixed input: JSON is dumped with
sorted keys, CSV fields use repr or fixed %g formats, and files are
written with newline="\\n".  Figures go through the Agg backend so the
batch path never touches a display; they accompany the delimited output
rather than replacing it, and nothing downstream parses them.
"""

from __future__ import annotations

import json
from typing import Dict, List, Optional, Sequence

import numpy as np

from .counterexample import OscillationReport, SplitReport
from .engine import HypothesisCheck, RunReport, StepRecord
from .lattice import NormalTrajectory, TorusDiagnostic, Trajectory
from .measure import FRACTION_CSV_HEADER, FractionEstimate, StepLoss

RUN_SCHEMA = "kamforge-run/1"
MEASURE_SCHEMA = "kamforge-measure/1"
LATTICE_SCHEMA = "kamforge-lattice/1"
COUNTEREXAMPLE_SCHEMA = "kamforge-counterexample/1"
SELFTEST_SCHEMA = "kamforge-selftest/1"

STEPS_CSV_HEADER = (
    "nu,K,s,rho,r,eta,gamma,sigma,M,norm_P_in,norm_P_out,contraction,"
    "log_smallness_bound,smallness_ok,membership_ok,residual_ratio,"
    "omega_drift,grad_g_origin,lie_iterations,hypotheses_ok"
)

LOSS_CSV_HEADER = "nu,K_prev,K,gamma,lost,total,fraction,envelope"


def write_lines(path: str, lines: Sequence[str]) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


def write_json(path: str, obj: Dict) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _finite(x: float) -> Optional[float]:
    # JSON has no Infinity; report the sign textually through None + flags
    x = float(x)
    return x if np.isfinite(x) else None


def hypothesis_dict(h: HypothesisCheck) -> Dict:
    return {
        "name": h.name,
        "ok": bool(h.ok),
        "log_lhs": _finite(h.log_lhs),
        "log_rhs": _finite(h.log_rhs),
        "log_margin": _finite(h.log_margin),
    }


def step_dict(rec: StepRecord) -> Dict:
    return {
        "nu": rec.nu,
        "K": rec.K,
        "s": rec.s,
        "rho": rec.rho,
        "r": rec.r,
        "eta": rec.eta,
        "gamma": rec.gamma,
        "sigma": rec.sigma,
        "M": rec.M,
        "norm_P_in": rec.norm_P_in,
        "norm_P_out": rec.norm_P_out,
        "contraction": (rec.norm_P_out / rec.norm_P_in) if rec.norm_P_in else 0.0,
        "log_smallness_bound": _finite(rec.log_smallness_bound),
        "smallness_ok": bool(rec.smallness_ok),
        "membership_ok": bool(rec.membership_ok),
        "worst_divisor_margin": rec.worst_divisor_margin,
        "a_rho_log": _finite(rec.a_rho_log),
        "residual_ratio": rec.residual_ratio,
        "max_cond": rec.max_cond,
        "lie_iterations": rec.lie_iterations,
        "delta": list(rec.delta),
        "e": rec.e,
        "omega": list(rec.omega),
        "Omega": list(rec.Omega),
        "omega_drift": rec.omega_drift,
        "grad_g_origin": rec.grad_g_origin,
        "hypotheses": [hypothesis_dict(h) for h in rec.hypotheses],
    }


def steps_csv_lines(steps: Sequence[StepRecord]) -> List[str]:
    lines = [STEPS_CSV_HEADER]
    for rec in steps:
        contraction = (rec.norm_P_out / rec.norm_P_in) if rec.norm_P_in else 0.0
        hyp_ok = all(h.ok for h in rec.hypotheses)
        lines.append(
            "%d,%d,%s,%s,%s,%s,%s,%s,%s,%.17g,%.17g,%.17g,%.17g,%d,%d,%.17g,%.17g,%.17g,%d,%d"
            % (
                rec.nu,
                rec.K,
                repr(rec.s),
                repr(rec.rho),
                repr(rec.r),
                repr(rec.eta),
                repr(rec.gamma),
                repr(rec.sigma),
                repr(rec.M),
                rec.norm_P_in,
                rec.norm_P_out,
                contraction,
                rec.log_smallness_bound,
                int(rec.smallness_ok),
                int(rec.membership_ok),
                rec.residual_ratio,
                rec.omega_drift,
                rec.grad_g_origin,
                rec.lie_iterations,
                int(hyp_ok),
            )
        )
    return lines


def run_report_dict(
    report: RunReport,
    seed: int,
    torus: Optional[TorusDiagnostic] = None,
    torus_scale: Optional[float] = None,
) -> Dict:
    err = None
    if report.error is not None:
        err = {"type": type(report.error).__name__, "message": str(report.error)}
    torus_block = None
    if torus is not None:
        torus_block = {
            "sup_y": torus.sup_y,
            "sup_z": torus.sup_z,
            "sup_w": torus.sup_w,
            "freq_fit": list(torus.freq_fit),
            "freq_rel_error": torus.freq_rel_error,
            "T": torus.T,
            "dt": torus.dt,
            "scale": torus_scale,
        }
    return {
        "schema": RUN_SCHEMA,
        "seed": seed,
        "eps": report.eps,
        "converged": bool(report.converged),
        "stop_reason": report.stop_reason,
        "error": err,
        "omega0": list(report.omega0),
        "omega_star": list(report.omega_star),
        "Omega_star": list(report.Omega_star),
        "zeta_star": list(report.zeta_star),
        "e_star": report.e_star,
        "drift": {
            "exponent": report.drift_exponent,
            "constant": report.drift_constant,
        },
        "torus": torus_block,
        "steps": [step_dict(rec) for rec in report.steps],
    }


def fraction_csv_lines(estimates: Sequence[FractionEstimate]) -> List[str]:
    lines = [FRACTION_CSV_HEADER]
    lines.extend(e.csv_row() for e in estimates)
    return lines


def loss_csv_lines(losses: Sequence[StepLoss]) -> List[str]:
    lines = [LOSS_CSV_HEADER]
    for s in losses:
        lines.append(
            "%d,%d,%d,%.10g,%d,%d,%.10g,%.10g"
            % (s.nu, s.K_prev, s.K, s.gamma, s.lost, s.total, s.fraction, s.envelope)
        )
    return lines


def estimate_dict(e: FractionEstimate) -> Dict:
    return {
        "gamma": e.gamma,
        "K": e.K,
        "fraction": e.fraction,
        "ci_lo": e.ci_lo,
        "ci_hi": e.ci_hi,
        "excluded": e.excluded,
        "total": e.total,
        "witnesses": [
            {"sample": int(idx), "k": list(k), "l": list(l)}
            for idx, k, l in e.witnesses
        ],
    }


def loss_dict(s: StepLoss) -> Dict:
    return {
        "nu": s.nu,
        "K_prev": s.K_prev,
        "K": s.K,
        "gamma": s.gamma,
        "lost": s.lost,
        "total": s.total,
        "fraction": s.fraction,
        "envelope": s.envelope,
    }


def split_report_dict(report: SplitReport) -> Dict:
    return {
        "degree": report.degree,
        "degree_by_resolution": [list(p) for p in report.degree_by_resolution],
        "boundary_margin": report.boundary_margin,
        "odd_symmetry_gap": report.odd_symmetry_gap,
        "witness": [list(p) for p in report.witness],
        "witness_separation": report.witness_separation,
        "witness_gradient_gap": report.witness_gradient_gap,
        "convexity_ok": bool(report.convexity.ok),
        "convexity_min_ratio": report.convexity.min_ratio,
        "convexity_witness": (
            [list(p) for p in report.convexity.witness]
            if report.convexity.witness
            else None
        ),
        "linear_ok": bool(report.linear_ok),
        "linear_min_ratio": report.linear_min_ratio,
        "ok": bool(report.ok),
    }


def oscillation_dict(report: OscillationReport) -> Dict:
    return {
        "grid_size": int(len(report.eps)),
        "eps_hi": float(report.eps[0]),
        "eps_lo": float(report.eps[-1]),
        "sign_changes": report.sign_changes,
        "tail_oscillation": report.tail_oscillation,
        "cauchy": bool(report.cauchy),
    }


# --- figures -------------------------------------------------------------------


def _plt():
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    return plt


def render_norm_decay(report: RunReport, path: str) -> None:
    """Per-step perturbation norms on a log scale."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    if report.steps:
        nus = [rec.nu for rec in report.steps]
        ax.semilogy(
            [nus[0]] + [nu + 1 for nu in nus],
            [report.steps[0].norm_P_in] + [rec.norm_P_out for rec in report.steps],
            marker="o",
        )
    ax.set_xlabel("step")
    ax.set_ylabel("majorant vector-field norm of P")
    ax.set_title("perturbation decay")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_measure_fraction(
    estimates: Sequence[FractionEstimate],
    losses: Sequence[StepLoss],
    path: str,
) -> None:
    """Excluded fraction vs gamma with Wilson bars; shell losses vs envelope."""
    plt = _plt()
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.5, 4.0))
    if estimates:
        gammas = [e.gamma for e in estimates]
        fr = [e.fraction for e in estimates]
        lo = [e.fraction - e.ci_lo for e in estimates]
        hi = [e.ci_hi - e.fraction for e in estimates]
        ax1.errorbar(gammas, fr, yerr=[lo, hi], marker="o", capsize=3)
        ax1.set_xscale("log")
    ax1.set_xlabel("gamma")
    ax1.set_ylabel("excluded fraction")
    ax1.set_title("resonance-zone exclusion")
    ax1.grid(True, which="both", alpha=0.3)
    if losses:
        nus = [s.nu for s in losses]
        ax2.plot(nus, [s.fraction for s in losses], marker="o", label="measured loss")
        ax2.plot(nus, [s.envelope for s in losses], marker="s", ls="--", label="envelope")
        ax2.set_yscale("log")
        ax2.legend()
    ax2.set_xlabel("step")
    ax2.set_ylabel("fraction lost")
    ax2.set_title("per-shell losses")
    ax2.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_oscillation(report: OscillationReport, path: str) -> None:
    """Scaled equilibrium value across the epsilon grid."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    ax.plot(report.eps, report.ratio, lw=0.7)
    ax.set_xscale("log")
    ax.set_xlabel("epsilon")
    ax.set_ylabel("equilibrium / epsilon^ell")
    ax.set_title("forced equilibrium oscillation (%d sign changes)" % report.sign_changes)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_lattice_trajectory(
    traj: Trajectory,
    energies: np.ndarray,
    actions: Optional[np.ndarray],
    path: str,
) -> None:
    """Relative energy drift and, when available, pinned-site actions."""
    plt = _plt()
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.5, 4.0))
    e0 = float(energies[0])
    scale = max(abs(e0), 1e-300)
    ax1.plot(traj.t, (energies - e0) / scale, lw=0.8)
    ax1.set_xlabel("t")
    ax1.set_ylabel("relative energy drift")
    ax1.set_title("chain energy")
    ax1.grid(True, alpha=0.3)
    if actions is not None and actions.size:
        for j in range(actions.shape[1]):
            ax2.plot(traj.t, actions[:, j], lw=0.8, label="site %d" % (j + 1))
        if actions.shape[1] <= 8:
            ax2.legend(fontsize=8)
    ax2.set_xlabel("t")
    ax2.set_ylabel("site action")
    ax2.set_title("pinned-site actions")
    ax2.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_torus_drift(traj: NormalTrajectory, path: str) -> None:
    """Distance-from-torus components over the diagnostic integration."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    t = traj.t
    floor = 1e-300
    if traj.y.size:
        ax.semilogy(t, np.maximum(np.max(np.abs(traj.y), axis=1), floor), label="sup|y|")
    if traj.z.size:
        ax.semilogy(t, np.maximum(np.max(np.abs(traj.z), axis=1), floor), label="sup|z|")
    if traj.w.size:
        ax.semilogy(t, np.maximum(np.max(np.abs(traj.w), axis=1), floor), label="sup|w|")
    ax.set_xlabel("t")
    ax.set_ylabel("distance from the torus")
    ax.set_title("drift off the invariant torus")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
