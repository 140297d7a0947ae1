"""Oscillator-chain frontend: build the lattice, reduce it, integrate it.

The chain carries three kinds of sites: harmonically pinned ones that
become action-angle pairs, unpinned quartic sites that stay a real
canonical pair (the degenerate block), and pinned tail sites that become
complex normal modes.  The weak nearest-neighbor coupling is what the
iteration treats as the perturbation.  A symplectic integrator on the
original chain cross-validates what the normal-form engine produces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .engine import NormalForm
from .errors import BlowUpError
from .series import Dims, GradingCaps, Sites, TFSeries, monomial, series_product_split

__all__ = [
    "LatticeConfig",
    "LatticeHamiltonian",
    "NormalTrajectory",
    "Trajectory",
    "TorusDiagnostic",
    "build_lattice",
    "compile_vector_field",
    "default_sites",
    "integrate_lattice",
    "integrate_normal",
    "normal_to_lattice",
    "separable_power_g",
    "site_actions",
    "to_normal_coordinates",
    "torus_diagnostic",
]


@dataclass(frozen=True)
class LatticeConfig:
    """Chain layout: sites 1..n1 tangential, n1+1..n2 degenerate, then J
    normal modes.  alpha_tangent and alpha_normal are the pinning
    frequencies; beta holds the quartic coefficients of the degenerate
    sites; eps scales the nearest-neighbor coupling.

    interaction_exp is the exponent of the interaction potential and only
    the quadratic choice 1.0 is analytic at the origin, so everything else
    is rejected rather than approximated.
    """

    n1: int
    n2: int
    alpha_tangent: Tuple[float, ...]
    alpha_normal: Tuple[float, ...]
    beta: Tuple[float, ...]
    eps: float
    interaction_exp: float = 1.0

    def __post_init__(self):
        if self.n1 < 1:
            raise ValueError("need at least one tangential site")
        if self.n2 < self.n1:
            raise ValueError("degenerate block must start after the tangential sites")
        if len(self.alpha_tangent) != self.n1:
            raise ValueError("alpha_tangent must list one frequency per tangential site")
        if len(self.beta) != self.n2 - self.n1:
            raise ValueError("beta must list one coefficient per degenerate site")
        if any(b == 0 for b in self.beta):
            raise ValueError("degenerate-site coefficients must be nonzero")
        if any(a <= 0 for a in self.alpha_tangent) or any(a <= 0 for a in self.alpha_normal):
            raise ValueError("pinning frequencies must be positive")
        if self.interaction_exp != 1.0:
            raise ValueError(
                "only the quadratic interaction (exponent 1.0) is supported; "
                "other exponents are not analytic at the origin"
            )

    @property
    def J(self) -> int:
        return len(self.alpha_normal)

    @property
    def b(self) -> int:
        return self.n2 - self.n1

    @property
    def n_sites(self) -> int:
        return self.n2 + self.J

    @property
    def degenerate_sites(self) -> Tuple[int, ...]:
        return tuple(range(self.n1 + 1, self.n2 + 1))

    @property
    def normal_sites(self) -> Tuple[int, ...]:
        return tuple(range(self.n2 + 1, self.n2 + self.J + 1))


def default_sites(config: LatticeConfig) -> Sites:
    return Sites(z=config.degenerate_sites, w=config.normal_sites)


def _quartic(q, p):
    return q**4 - 6.0 * q**2 * p**2 + p**4


def _quartic_dq(q, p):
    return 4.0 * q**3 - 12.0 * q * p**2


def _quartic_dp(q, p):
    return -12.0 * q**2 * p + 4.0 * p**3


@dataclass(frozen=True)
class LatticeHamiltonian:
    """Chain energy in the flat (q, p) coordinates, one entry per site.

    alpha_eff is zero on the degenerate sites (they carry no harmonic
    term, only the quartic), beta_eff is zero everywhere else.
    """

    config: LatticeConfig
    alpha_eff: np.ndarray
    beta_eff: np.ndarray

    def energy(self, q: np.ndarray, p: np.ndarray) -> float:
        q = np.asarray(q, float)
        p = np.asarray(p, float)
        pinned = self.alpha_eff > 0
        harm = 0.5 * np.sum(self.alpha_eff[pinned] ** 2 * q[pinned] ** 2 + p[pinned] ** 2)
        quart = float(np.sum(self.beta_eff * _quartic(q, p)))
        d = q[1:] - q[:-1]
        return float(harm + quart + self.config.eps * 0.5 * np.sum(d * d))

    def coupling_force(self, q: np.ndarray) -> np.ndarray:
        """-d/dq of the nearest-neighbor term, free ends."""
        d = q[1:] - q[:-1]
        F = np.zeros_like(q)
        F[:-1] += self.config.eps * d
        F[1:] -= self.config.eps * d
        return F


def build_lattice(config: LatticeConfig) -> LatticeHamiltonian:
    N = config.n_sites
    alpha_eff = np.zeros(N)
    beta_eff = np.zeros(N)
    for j in range(1, config.n1 + 1):
        alpha_eff[j - 1] = config.alpha_tangent[j - 1]
    for t, j in enumerate(config.degenerate_sites):
        beta_eff[j - 1] = config.beta[t]
    for u, j in enumerate(config.normal_sites):
        alpha_eff[j - 1] = config.alpha_normal[u]
    return LatticeHamiltonian(config, alpha_eff, beta_eff)


# -- reduction to normal coordinates ----------------------------------------------


def _sqrt_binom(i: int) -> float:
    """Taylor coefficient of (1 + t)^(1/2) at order i."""
    c = 1.0
    for k in range(i):
        c *= (0.5 - k) / (k + 1)
    return c


def _position_series(config: LatticeConfig, dims: Dims, y_star: Sequence[float],
                     site: int, y_order: int) -> TFSeries:
    """The chain position q_site written in the reduced coordinates.

    Tangential sites expand sqrt(y_* + y) around the working actions to
    y_order powers; degenerate sites are identically their first block
    coordinate; normal sites are the real combination of the mode pair.
    """
    S = TFSeries(dims)
    if site <= config.n1:
        a = config.alpha_tangent[site - 1]
        ys = float(y_star[site - 1])
        if ys <= 0:
            raise ValueError("tangential expansion actions must be positive")
        lead = math.sqrt(2.0 * ys / a)
        for i in range(y_order + 1):
            coef = 0.5 * lead * _sqrt_binom(i) / ys**i
            iv = tuple(i if t == site - 1 else 0 for t in range(dims.n))
            for sign in (1, -1):
                kv = tuple(sign if t == site - 1 else 0 for t in range(dims.n))
                S._accum((kv, iv) + _zero_tail(dims), complex(coef))
        return S
    if site <= config.n2:
        t = site - config.n1 - 1
        jv = [0] * dims.nz
        jv[t] = 1
        return monomial(dims, 1.0, j=tuple(jv))
    u = site - config.n2 - 1
    a = config.alpha_normal[u]
    coef = 1.0 / math.sqrt(2.0 * a)
    lv = [0] * dims.J
    lv[u] = 1
    return monomial(dims, coef, l1=tuple(lv)) + monomial(dims, coef, l2=tuple(lv))


def _zero_tail(dims: Dims):
    return ((0,) * dims.nz, (0,) * dims.J, (0,) * dims.J)


def to_normal_coordinates(
    config: LatticeConfig,
    y_star: Sequence[float],
    grading_m: int = 9,
    l_cap: int = 4,
) -> Tuple[NormalForm, TFSeries]:
    """Reduce the chain to (normal form, perturbation series).

    The pinned harmonic sites turn into <alpha, y> and the mode terms
    exactly; the degenerate sites carry their quartic into g unchanged
    (the block stays a real canonical pair); only the coupling needs a
    Taylor expansion, taken around the working actions y_star and
    truncated at grading degree grading_m.  The constant <alpha, y_*> of
    the re-centering lands in the scalar slot.
    """
    if config.b < 1:
        raise ValueError("reduction needs at least one degenerate site")
    dims = Dims(config.n1, config.b, config.J)
    e = float(np.dot(config.alpha_tangent, np.asarray(y_star, float)))
    omega = np.asarray(config.alpha_tangent, float)
    Omega = np.asarray(config.alpha_normal, float)
    g = TFSeries(dims)
    for t, beta in enumerate(config.beta):
        jq = [0] * dims.nz
        jq[t] = 4
        g._accum(((0,) * dims.n, (0,) * dims.n, tuple(jq)) + (((0,) * dims.J,) * 2), complex(beta))
        jq = [0] * dims.nz
        jq[t] = 2
        jq[t + config.b] = 2
        g._accum(((0,) * dims.n, (0,) * dims.n, tuple(jq)) + (((0,) * dims.J,) * 2), complex(-6.0 * beta))
        jq = [0] * dims.nz
        jq[t + config.b] = 4
        g._accum(((0,) * dims.n, (0,) * dims.n, tuple(jq)) + (((0,) * dims.J,) * 2), complex(beta))
    N = NormalForm(e=e, omega=omega, Omega=Omega, g=g, f=TFSeries(dims), dims=dims)

    caps = GradingCaps(k_max=2, m_max=grading_m, l_max=l_cap)
    y_order = grading_m // 2 + 1
    pos = {
        j: _position_series(config, dims, y_star, j, y_order)
        for j in range(1, config.n_sites + 1)
    }
    P = TFSeries(dims)
    for j in range(1, config.n_sites):
        # eps * (q_{j+1} - q_j)^2 / 2, truncated at the grading caps; what
        # the caps reject is higher Taylor order than the engine retains
        diff = pos[j + 1] + pos[j].scaled(-1.0)
        sq, _ = series_product_split(diff, diff, caps)
        P = P + sq.scaled(0.5 * config.eps)
    return N, P


def normal_to_lattice(
    config: LatticeConfig,
    y_star: Sequence[float],
    x: Sequence[float],
    y: Sequence[float],
    z: Sequence[float],
    w: Sequence[complex],
) -> Tuple[np.ndarray, np.ndarray]:
    """Point map from reduced coordinates back to the chain's (q, p)."""
    q = np.zeros(config.n_sites)
    p = np.zeros(config.n_sites)
    for j in range(1, config.n1 + 1):
        a = config.alpha_tangent[j - 1]
        act = float(y_star[j - 1]) + float(y[j - 1])
        if act < 0:
            raise ValueError("total action went negative; point leaves the chart")
        amp = math.sqrt(act)
        q[j - 1] = math.sqrt(2.0 / a) * amp * math.cos(x[j - 1])
        p[j - 1] = math.sqrt(2.0 * a) * amp * math.sin(x[j - 1])
    for t, j in enumerate(config.degenerate_sites):
        q[j - 1] = float(z[t])
        p[j - 1] = float(z[t + config.b])
    for u, j in enumerate(config.normal_sites):
        a = config.alpha_normal[u]
        wj = complex(w[u])
        q[j - 1] = (wj + wj.conjugate()).real / math.sqrt(2.0 * a)
        p[j - 1] = (1j * math.sqrt(a / 2.0) * (wj - wj.conjugate())).real
    return q, p


def separable_power_g(p_exp: int, q_exp: int, b: int, dims: Optional[Dims] = None) -> TFSeries:
    """Separable power-law model for the degenerate block:
    sum_i z_i^(2p)/(2p) + z_(b+i)^(2q)/(2q).

    Polynomial for integer exponents above one; its gradient vanishes only
    at the origin and is odd, so the boundary degree is nonzero.  The
    default dims carry one inert angle pair because the series container
    always has a tangential block.
    """
    if p_exp <= 1 or q_exp <= 1 or int(p_exp) != p_exp or int(q_exp) != q_exp:
        raise ValueError("power-law exponents must be integers greater than one")
    if dims is None:
        dims = Dims(1, b, 0)
    if dims.b != b:
        raise ValueError("dims must carry the requested number of degenerate pairs")
    g = TFSeries(dims)
    for i in range(b):
        jq = [0] * dims.nz
        jq[i] = 2 * p_exp
        g._accum(((0,) * dims.n, (0,) * dims.n, tuple(jq)) + (((0,) * dims.J,) * 2),
                 complex(1.0 / (2.0 * p_exp)))
        jq = [0] * dims.nz
        jq[i + b] = 2 * q_exp
        g._accum(((0,) * dims.n, (0,) * dims.n, tuple(jq)) + (((0,) * dims.J,) * 2),
                 complex(1.0 / (2.0 * q_exp)))
    return g


# -- symplectic integration of the chain ------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    q: np.ndarray
    p: np.ndarray

    def csv_lines(self) -> List[str]:
        N = self.q.shape[1]
        head = ["t"] + ["q_%d" % (j + 1) for j in range(N)] + ["p_%d" % (j + 1) for j in range(N)]
        lines = [",".join(head)]
        for i in range(len(self.t)):
            row = [repr(float(self.t[i]))]
            row += [repr(float(v)) for v in self.q[i]]
            row += [repr(float(v)) for v in self.p[i]]
            lines.append(",".join(row))
        return lines


def _midpoint_solve(rhs, s0: np.ndarray, h: float, tol: float, max_iter: int = 60) -> np.ndarray:
    """One implicit-midpoint step s1 = s0 + h f((s0+s1)/2) by fixed point."""
    s1 = s0 + h * rhs(s0)
    for _ in range(max_iter):
        s_new = s0 + h * rhs(0.5 * (s0 + s1))
        err = float(np.max(np.abs(s_new - s1)))
        s1 = s_new
        if not math.isfinite(err):
            return s1
        if err <= tol * (1.0 + float(np.max(np.abs(s1)))):
            return s1
    return s1


def integrate_lattice(
    H: LatticeHamiltonian,
    q0: Sequence[float],
    p0: Sequence[float],
    T: float,
    dt: float,
    store_every: int = 1,
    tol: float = 1e-13,
) -> Trajectory:
    """Strang-split symplectic flow of the chain.

    The pinned harmonic part rotates exactly for half a step on each
    side of an implicit-midpoint step for the quartic plus coupling; both
    substeps are symplectic, so the composition is too.  The horizon T is
    honored exactly with a shortened final step.
    """
    if dt <= 0 or T < dt:
        raise ValueError("need dt > 0 and T >= dt")
    q = np.asarray(q0, float).copy()
    p = np.asarray(p0, float).copy()
    cfg = H.config
    pinned = H.alpha_eff > 0
    al = H.alpha_eff[pinned]

    def rotate(qv, pv, h):
        phi = al * h
        c, s = np.cos(phi), np.sin(phi)
        qp, pp = qv[pinned], pv[pinned]
        qv[pinned] = qp * c + (pp / al) * s
        pv[pinned] = pp * c - qp * al * s

    def nl_rhs(s):
        qq, pp = s[: len(q)], s[len(q):]
        dq = H.beta_eff * _quartic_dp(qq, pp)
        dp = -H.beta_eff * _quartic_dq(qq, pp) + H.coupling_force(qq)
        return np.concatenate([dq, dp])

    nsteps = int(math.ceil(T / dt - 1e-12))
    ts = [0.0]
    qs = [q.copy()]
    ps = [p.copy()]
    t = 0.0
    # escaping orbits overflow before the finiteness check catches them;
    # the check is the intended reporting path, not the warning
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(1, nsteps + 1):
            h = min(dt, T - t)
            rotate(q, p, 0.5 * h)
            s = _midpoint_solve(nl_rhs, np.concatenate([q, p]), h, tol)
            q, p = s[: len(q)].copy(), s[len(q):].copy()
            rotate(q, p, 0.5 * h)
            t += h
            if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
                raise BlowUpError("chain state became non-finite at t=%.6g" % t)
            if step % store_every == 0 or step == nsteps:
                ts.append(t)
                qs.append(q.copy())
                ps.append(p.copy())
    return Trajectory(np.array(ts), np.array(qs), np.array(ps))


def site_actions(H: LatticeHamiltonian, q: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Harmonic actions (alpha q^2 + p^2/alpha)/2 of the pinned sites."""
    pinned = H.alpha_eff > 0
    al = H.alpha_eff[pinned]
    return 0.5 * (al * np.asarray(q)[..., pinned] ** 2 + np.asarray(p)[..., pinned] ** 2 / al)


# -- integration of the reduced system --------------------------------------------


class _CompiledField:
    """Vector field of a series Hamiltonian, flattened for fast evaluation.

    All component partials share one monomial table; evaluating the field
    is one table evaluation and one matrix product.  State packing is
    [x, y, z, Re w, Im w].
    """

    def __init__(self, H: TFSeries):
        dims = H.dims
        self.dims = dims
        rows: List[TFSeries] = []
        for a_idx in range(dims.n):
            rows.append(H.partial("y", a_idx))
        for a_idx in range(dims.n):
            rows.append(H.partial("x", a_idx).scaled(-1.0))
        for qi in range(dims.b):
            rows.append(H.partial("z", qi + dims.b))
        for qi in range(dims.b):
            rows.append(H.partial("z", qi).scaled(-1.0))
        for j in range(dims.J):
            rows.append(H.partial("wbar", j).scaled(1j))
        cols: Dict[tuple, int] = {}
        for S in rows:
            for key in S.terms:
                cols.setdefault(key, len(cols))
        M = max(1, len(cols))
        A = np.zeros((len(rows), M), complex)
        K = np.zeros((M, dims.width), np.int64)
        for key, c_idx in cols.items():
            K[c_idx] = dims.flat(key)
        for r_idx, S in enumerate(rows):
            for key, c in S.terms.items():
                A[r_idx, cols[key]] = c
        self.A = A
        n, b, J = dims.n, dims.b, dims.J
        self.Kx = K[:, :n].astype(float)
        self.Ky = K[:, n:2 * n]
        self.Kz = K[:, 2 * n:2 * n + 2 * b]
        self.Kl1 = K[:, 2 * n + 2 * b:2 * n + 2 * b + J]
        self.Kl2 = K[:, 2 * n + 2 * b + J:]

    def rhs(self, state: np.ndarray) -> np.ndarray:
        d = self.dims
        n, b, J = d.n, d.b, d.J
        x = state[:n]
        y = state[n:2 * n]
        z = state[2 * n:2 * n + 2 * b]
        wr = state[2 * n + 2 * b:2 * n + 2 * b + J]
        wi = state[2 * n + 2 * b + J:]
        w = wr + 1j * wi
        mono = np.exp(1j * (self.Kx @ x))
        if n:
            mono = mono * np.prod(y[None, :] ** self.Ky, axis=1)
        if b:
            mono = mono * np.prod(z[None, :] ** self.Kz, axis=1)
        if J:
            mono = mono * np.prod(w[None, :] ** self.Kl1, axis=1)
            mono = mono * np.prod(np.conj(w)[None, :] ** self.Kl2, axis=1)
        vals = self.A @ mono
        xd = vals[:n].real
        yd = vals[n:2 * n].real
        zd = vals[2 * n:2 * n + 2 * b].real
        wd = vals[2 * n + 2 * b:]
        return np.concatenate([xd, yd, zd, wd.real, wd.imag])


def compile_vector_field(H: TFSeries) -> _CompiledField:
    return _CompiledField(H)


@dataclass(frozen=True)
class NormalTrajectory:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    w: np.ndarray


def integrate_normal(
    H: TFSeries,
    x0: Sequence[float],
    y0: Sequence[float],
    z0: Sequence[float],
    w0: Sequence[complex],
    T: float,
    dt: float,
    store_every: int = 1,
    tol: float = 1e-12,
) -> NormalTrajectory:
    """Implicit-midpoint flow of a series Hamiltonian in real variables.

    Angles are kept unwrapped so frequencies can be fit by a straight
    line afterwards.
    """
    if dt <= 0 or T < dt:
        raise ValueError("need dt > 0 and T >= dt")
    d = H.dims
    field = compile_vector_field(H)
    w0 = np.asarray(w0, complex)
    state = np.concatenate([
        np.asarray(x0, float),
        np.asarray(y0, float),
        np.asarray(z0, float),
        w0.real,
        w0.imag,
    ])
    nsteps = int(math.ceil(T / dt - 1e-12))
    ts = [0.0]
    rows = [state.copy()]
    t = 0.0
    for step in range(1, nsteps + 1):
        h = min(dt, T - t)
        state = _midpoint_solve(field.rhs, state, h, tol)
        t += h
        if not np.all(np.isfinite(state)):
            raise BlowUpError("reduced state became non-finite at t=%.6g" % t)
        if step % store_every == 0 or step == nsteps:
            ts.append(t)
            rows.append(state.copy())
    S = np.array(rows)
    n, b, J = d.n, d.b, d.J
    return NormalTrajectory(
        t=np.array(ts),
        x=S[:, :n],
        y=S[:, n:2 * n],
        z=S[:, 2 * n:2 * n + 2 * b],
        w=S[:, 2 * n + 2 * b:2 * n + 2 * b + J] + 1j * S[:, 2 * n + 2 * b + J:],
    )


@dataclass(frozen=True)
class TorusDiagnostic:
    sup_y: float
    sup_z: float
    sup_w: float
    freq_fit: Tuple[float, ...]
    freq_rel_error: float
    T: float
    dt: float
    trajectory: Optional["NormalTrajectory"] = None


def torus_diagnostic(
    N: NormalForm,
    P: TFSeries,
    T: float,
    dt: float,
    x0: Optional[Sequence[float]] = None,
    prune_rel: float = 1e-8,
    keep_trajectory: bool = False,
) -> TorusDiagnostic:
    """Integrate the reduced system from torus data and measure the drift.

    Starts at y = 0, z = 0, w = 0 (the invariant torus of the normal part)
    and reports how far the perturbation pushes the trajectory off it,
    plus a least-squares frequency fit of the angle flow against the
    normal-form frequencies.  Perturbation terms below prune_rel of the
    largest are dropped first; they cannot move the sups at measurement
    precision but dominate the evaluation cost.
    """
    d = N.dims
    H = N.to_series() + P.pruned(prune_rel * P.max_abs_coeff())
    x_start = np.zeros(d.n) if x0 is None else np.asarray(x0, float)
    traj = integrate_normal(
        H,
        x_start,
        np.zeros(d.n),
        np.zeros(2 * d.b),
        np.zeros(d.J, complex),
        T,
        dt,
    )
    sup_y = float(np.max(np.abs(traj.y))) if d.n else 0.0
    sup_z = float(np.max(np.abs(traj.z))) if d.b else 0.0
    sup_w = float(np.max(np.abs(traj.w))) if d.J else 0.0
    fits = []
    rel = 0.0
    for a_idx in range(d.n):
        slope = float(np.polyfit(traj.t, traj.x[:, a_idx], 1)[0])
        fits.append(slope)
        rel = max(rel, abs(slope - N.omega[a_idx]) / abs(N.omega[a_idx]))
    return TorusDiagnostic(
        sup_y=sup_y,
        sup_z=sup_z,
        sup_w=sup_w,
        freq_fit=tuple(fits),
        freq_rel_error=rel,
        T=T,
        dt=dt,
        trajectory=traj if keep_trajectory else None,
    )
