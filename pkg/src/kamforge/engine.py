"""Iteration driver: geometry schedule, hypotheses, one step, full run.

One step of the scheme does, in order: admissibility of the frequencies,
divisor-sum constant and convergence hypotheses for the current geometry,
truncation of the perturbation, solution of the linearised conjugacy
equation, the Lie transform it generates, relocation of the degenerate
equilibrium, and the translation that re-centres the normal form there.
The driver records everything it measures so a run report can be written
without re-deriving any quantity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .degree import find_equilibrium
from .errors import (
    DivergenceError,
    HypothesisError,
    KamforgeError,
    ResonanceError,
    SmallnessError,
)
from .homological import (
    DiophantineParams,
    _logsumexp,
    compute_A_rho,
    resonance_membership,
    solve_homological,
)
from .series import (
    Dims,
    GradingCaps,
    Sites,
    TFSeries,
    WeightedNorm,
    key_degree,
    majorant_vf_norm,
    poisson_bracket_split,
)

# --- structural constants -----------------------------------------------------


@dataclass(frozen=True)
class StructuralConstants:
    """Integer exponents fixed by the degeneracy order L and the divisor
    exponent tau; everything else in the schedule is phrased through them."""

    L: int
    tau: float
    m: int      # grading order kept by the normal form
    a: int      # structural split of m entering the norm scalings
    mu: int     # doubling index: (1 + 1/2m)^mu >= 2
    Xi: float   # composite exponent in the initial-size relations


def structural_constants(L: int, tau: float) -> StructuralConstants:
    if L < 1:
        raise ValueError("degeneracy order L must be a positive integer")
    if tau <= 0:
        raise ValueError("tau must be positive")
    m = math.ceil(L + math.sqrt(4.0 * L * L + 2.0 * L) / 2.0)
    third = (m + 1) / 3.0
    a = int(third) if third == int(third) else int(third) + 1
    mu = 1
    while (1.0 + 1.0 / (2 * m)) ** mu < 2.0:
        mu += 1
    Xi = 8.0 * mu * (m + 1) * (m - a) * (tau + 1.0)
    return StructuralConstants(L=L, tau=tau, m=m, a=a, mu=mu, Xi=Xi)


def theorem_exponent(constants: StructuralConstants) -> float:
    """Exponent in the final frequency-drift bound |w* - w| <= c * eps^x."""
    c = constants
    return 3.0 * c.m / (32.0 * c.mu * (c.m + 1) * (c.m - c.a) * (c.tau + 1.0))


# --- geometry schedule --------------------------------------------------------


@dataclass(frozen=True)
class StepGeometry:
    """Domain parameters at the start of step nu.

    K is the harmonic cutoff the upcoming step truncates at; the hypotheses
    quantify the error of exactly that cutoff.
    """

    nu: int
    s: float
    rho: float
    r: float
    eta: float
    gamma: float
    sigma: float
    M: float
    K: int


@dataclass(frozen=True)
class ScheduleAnchors:
    """nu = 0 values the affine recursions contract toward."""

    gamma0: float
    sigma0: float
    M0: float


def schedule_next(
    geom: StepGeometry,
    constants: StructuralConstants,
    anchors: ScheduleAnchors,
    K_next: int,
) -> StepGeometry:
    """One application of the parameter recursion."""
    m = constants.m
    return StepGeometry(
        nu=geom.nu + 1,
        s=geom.s - 6.0 * geom.rho,
        rho=geom.rho / 2.0,
        r=geom.eta * geom.r,
        eta=geom.eta ** (1.0 + 1.0 / (2 * m)),
        gamma=geom.gamma / 2.0 + anchors.gamma0 / 4.0,
        sigma=geom.sigma / 2.0 + anchors.sigma0 / 4.0,
        M=geom.M + anchors.M0 * 2.0 ** (-(geom.nu + 1)),
        K=K_next,
    )


def closed_form_geometry(
    nu: int,
    geom0: StepGeometry,
    constants: StructuralConstants,
    K: int,
) -> StepGeometry:
    """Direct evaluation of the recursion after nu steps.

    Assumes geom0 is the nu = 0 geometry and doubles as the anchor set
    (gamma0 = geom0.gamma and so on), which is how runs are configured.
    """
    if geom0.nu != 0:
        raise ValueError("closed forms are anchored at nu = 0")
    m = constants.m
    q = (1.0 + 1.0 / (2 * m)) ** nu
    two = 2.0 ** (-nu)
    return StepGeometry(
        nu=nu,
        s=geom0.s - 12.0 * geom0.rho * (1.0 - two),
        rho=geom0.rho * two,
        r=geom0.r * geom0.eta ** (2 * m * (q - 1.0)),
        eta=geom0.eta ** q,
        gamma=geom0.gamma * (1.0 + two) / 2.0,
        sigma=geom0.sigma * (1.0 + two) / 2.0,
        M=geom0.M * (2.0 - two),
        K=K,
    )


def literal_initial_geometry(
    eps: float,
    s0: float,
    rho0: float,
    sigma0: float,
    M0: float,
    constants: StructuralConstants,
    b: int,
) -> Tuple[StepGeometry, int]:
    """Initial parameters tied directly to the perturbation size eps.

    Returned for analysis and reporting, not used to drive runs: at desk
    scale the implied gamma0 sits within 1e-5 of 1, which makes the
    divisor threshold exclude essentially every frequency vector, and the
    implied eta0 is so close to 1 that the cutoff formula floors down to
    K1 = 1.  Only for extremely small eps does K1 jump to its huge generic
    values.  Runs therefore configure explicit geometry and re-check the
    same inequalities instead.
    """
    m, mu, Xi, tau = constants.m, constants.mu, constants.Xi, constants.tau
    base = float((2 * b) ** (m + 2))
    gamma0 = eps ** (1.0 / (4.0 * base * Xi))
    eta0 = gamma0 ** (2.0 * base) * eps ** (1.0 / Xi)
    K1 = (math.floor(math.log(1.0 / eta0 ** (m + 1))) + 1) ** (3 * mu)
    r0 = s0 * gamma0 / (K1 + 1.0) ** (tau + 1.0)
    geom = StepGeometry(
        nu=0, s=s0, rho=rho0, r=r0, eta=eta0,
        gamma=gamma0, sigma=sigma0, M=M0, K=min(K1, 2 ** 62),
    )
    return geom, K1


def smallness_bound_log(geom: StepGeometry, constants: StructuralConstants, b: int) -> float:
    """log of the admissible perturbation size gamma^(2(2b)^(m+2)) r^(m-a) eta^m."""
    base = float((2 * b) ** (constants.m + 2))
    return (
        2.0 * base * math.log(geom.gamma)
        + (constants.m - constants.a) * math.log(geom.r)
        + constants.m * math.log(geom.eta)
    )


# --- convergence hypotheses ---------------------------------------------------


@dataclass(frozen=True)
class HypothesisCheck:
    name: str
    ok: bool
    log_lhs: float
    log_rhs: float

    @property
    def log_margin(self) -> float:
        return self.log_rhs - self.log_lhs


def check_hypotheses(
    geom: StepGeometry,
    geom_next: StepGeometry,
    a_rho_log: float,
    constants: StructuralConstants,
    n: int,
    b: int,
) -> List[HypothesisCheck]:
    """The five inequalities that let one step contract into the next.

    All comparisons happen in logs: the divisor-sum constant alone can
    exceed the float range.  geom.K is the cutoff applied during this step,
    so it is the K appearing in the truncation conditions; the target sizes
    on the right come from geom_next.
    """
    m, a, tau = constants.m, constants.a, constants.tau
    lg = math.log
    rho, r, eta, gamma = geom.rho, geom.r, geom.eta, geom.gamma
    K = geom.K
    base = float((2 * b) ** (m + 2))
    checks = []

    lhs = n * lg(K) - K * rho
    rhs = (m + 1) * lg(eta)
    checks.append(HypothesisCheck("H1", lhs < rhs, lhs, rhs))

    dgamma = gamma - geom_next.gamma
    if dgamma <= 0:
        checks.append(HypothesisCheck("H2", False, math.inf, -math.inf))
    else:
        lhs = lg(8.0 * r)
        rhs = lg(dgamma) - (tau + 1.0) * lg(K + 1.0)
        checks.append(HypothesisCheck("H2", lhs < rhs, lhs, rhs))

    lhs = a_rho_log + (m - 1) * lg(r) + m * lg(eta)
    rhs = lg(rho)
    checks.append(HypothesisCheck("H3", lhs < rhs, lhs, rhs))

    lhs = a_rho_log + (m - 2 * a) * lg(r) + (m - a) * lg(eta)
    checks.append(HypothesisCheck("H4", lhs < 0.0, lhs, 0.0))

    terms = [
        2.0 * a_rho_log - 2.0 * lg(rho) + (m - 2 * a) * lg(r) - 0.5 * lg(eta),
        0.5 * lg(eta) + base * lg(gamma),
        a_rho_log - lg(rho) + 1.5 * lg(eta),
    ]
    lhs = _logsumexp(terms)
    rhs = 2.0 * base * lg(geom_next.gamma)
    checks.append(HypothesisCheck("H5", lhs <= rhs, lhs, rhs))
    return checks


# --- normal form container ----------------------------------------------------


def conforming_f_term(key, m: int) -> bool:
    """Terms allowed to stay in the higher normal-form remainder f.

    Angle free, matched normal exponents, grading at most m, and one of:
    pure action of degree >= 2, mixed action-degenerate, or a single
    matched normal pair carried by a positive-degree Taylor factor.
    """
    k, i, j, l1, l2 = key
    if any(k) or l1 != l2:
        return False
    deg = 2 * sum(i) + sum(j)
    if deg > m:
        return False
    lsum = sum(l1)
    if lsum == 0:
        if sum(j) == 0:
            return sum(i) >= 2
        return sum(i) >= 1
    if lsum == 1:
        return deg > 0
    return False


@dataclass
class NormalForm:
    """e + <omega, y> + <Omega, w wbar> + g(z) + f(y, z, w wbar)."""

    e: float
    omega: np.ndarray
    Omega: np.ndarray
    g: TFSeries
    f: TFSeries
    dims: Dims

    def to_series(self) -> TFSeries:
        d = self.dims
        S = TFSeries(d)
        if self.e:
            S._accum(d.zero_key(), complex(self.e))
        for t in range(d.n):
            if self.omega[t]:
                i = tuple(1 if u == t else 0 for u in range(d.n))
                S._accum(((0,) * d.n, i, (0,) * d.nz, (0,) * d.J, (0,) * d.J), complex(self.omega[t]))
        for t in range(d.J):
            if self.Omega[t]:
                l = tuple(1 if u == t else 0 for u in range(d.J))
                S._accum(((0,) * d.n, (0,) * d.n, (0,) * d.nz, l, l), complex(self.Omega[t]))
        S = S + self.g + self.f
        return S

    def grad_g_origin(self) -> np.ndarray:
        """Gradient of the degenerate part at z = 0 (its linear coefficients)."""
        d = self.dims
        out = np.zeros(d.nz)
        for (k, i, j, l1, l2), c in self.g.items():
            if sum(j) == 1 and not any(i) and not any(l1) and not any(l2) and not any(k):
                out[j.index(1)] += c.real
        return out


def decompose_normal_form(
    W: TFSeries, m: int, reality_tol: float = 1e-10
) -> Tuple[float, np.ndarray, np.ndarray, TFSeries, TFSeries, TFSeries]:
    """Sort a translated angle-free series into (e, omega, Omega, g, f, rest).

    rest collects everything that conforms to none of the slots and must be
    treated as perturbation.  The scalar slots are required to be real up to
    reality_tol relative to the largest coefficient.
    """
    d = W.dims
    e = 0j
    omega = np.zeros(d.n, complex)
    Omega = np.zeros(d.J, complex)
    g = TFSeries(d)
    f = TFSeries(d)
    rest = TFSeries(d)
    scale = max((abs(c) for _, c in W.items()), default=0.0)
    for key, c in W.items():
        k, i, j, l1, l2 = key
        angle_free = not any(k)
        if angle_free and not any(i) and not any(j) and not any(l1) and not any(l2):
            e += c
        elif angle_free and sum(i) == 1 and not any(j) and not any(l1) and not any(l2):
            omega[i.index(1)] += c
        elif angle_free and not any(i) and not any(j) and l1 == l2 and sum(l1) == 1:
            Omega[l1.index(1)] += c
        elif angle_free and not any(i) and not any(l1) and not any(l2) and sum(j) >= 1 \
                and key_degree(key) <= m:
            g._accum(key, c)
        elif conforming_f_term(key, m):
            f._accum(key, c)
        else:
            rest._accum(key, c)
    tol = reality_tol * max(1.0, scale)
    imag_worst = max(
        abs(e.imag),
        float(np.max(np.abs(omega.imag))) if d.n else 0.0,
        float(np.max(np.abs(Omega.imag))) if d.J else 0.0,
    )
    if imag_worst > tol:
        raise ValueError(
            "scalar normal-form slots are not real (worst imaginary part %.3e)" % imag_worst
        )
    return float(e.real), omega.real.copy(), Omega.real.copy(), g, f, rest


# --- Lie transform --------------------------------------------------------------


@dataclass(frozen=True)
class LieResult:
    series: TFSeries
    increments: Tuple[float, ...]
    iterations: int


def lie_transform(
    H: TFSeries,
    F: TFSeries,
    m: int,
    wn: WeightedNorm,
    sites: Sites,
    rel_tol: float = 1e-16,
    max_terms: int = 25,
) -> LieResult:
    """Flow of H along the Hamiltonian vector field of F, exp(ad_F) H.

    Summed as H + {H,F} + {{H,F},F}/2 + ...; each bracket is capped in
    harmonic, grading and normal exponents so the iteration cannot grow
    degrees without bound.  What a bracket pushes past the caps is kept in
    the running total (it belongs to the next perturbation) but is not
    bracketed again; dropping it from the recursion changes the sum only
    beyond the retained orders.

    Once the increments shrink, the ratio of consecutive majorant norms
    bounds the geometric tail of everything still unsummed; when that
    bound drops under the tolerance the loop stops without forming the
    next (and most expensive) bracket.  Increments that stop shrinking
    for four terms in a row abort the summation instead.
    """
    caps = GradingCaps(
        k_max=H.max_k_norm() + 2 * F.max_k_norm(),
        m_max=m + 4,
        l_max=4,
    )
    # coefficients this far below the leading size cannot change any double
    # in the accumulated sums, but they densify every further bracket
    floor = 1e-22 * H.max_abs_coeff()
    total = H.copy()
    term = H
    running = majorant_vf_norm(H, wn, sites) if H else 0.0
    prev = math.inf
    nondecreasing = 0
    increments: List[float] = []
    for j in range(1, max_terms + 1):
        within, overflow = poisson_bracket_split(term, F, caps, floor=floor)
        inv = 1.0 / j
        sj = within.scaled(inv)
        ovf = overflow.scaled(inv)
        total = total + sj + ovf
        inc = 0.0
        if sj or ovf:
            inc = majorant_vf_norm(sj + ovf, wn, sites)
        increments.append(inc)
        if inc <= rel_tol * max(running, 1e-300):
            return LieResult(total, tuple(increments), j)
        running += inc
        if inc >= prev:
            nondecreasing += 1
            if nondecreasing > 3:
                raise DivergenceError(
                    "transform increments stopped shrinking after %d brackets" % j
                )
        else:
            nondecreasing = 0
            if math.isfinite(prev):
                q = inc / prev
                if q <= 0.25 and inc * q / (1.0 - q) <= rel_tol * running:
                    return LieResult(total, tuple(increments), j)
        prev = inc
        term = sj
    raise DivergenceError("transform did not converge in %d brackets" % max_terms)


# --- equilibrium relocation -----------------------------------------------------


def locate_equilibrium(
    g: TFSeries,
    R_keep: TFSeries,
    radius: float,
    verify_tol: float = 1e-10,
    seed: int = 0,
) -> np.ndarray:
    """Zero of grad_z(g + averaged perturbation) near the origin.

    The base field subtracts its own value at zero, so the search starts
    from an exact equilibrium of the unperturbed part even when the stored
    g carries a tolerated sub-threshold linear residue.
    """
    d = g.dims
    nz = d.nz
    x0 = np.zeros(d.n)
    y0 = np.zeros(d.n)
    w0 = np.zeros(d.J)
    gq = [g.partial("z", q) for q in range(nz)]
    kq = [R_keep.partial("z", q) for q in range(nz)]
    zero = np.zeros(nz)
    g0 = np.array([gq[q].evaluate(x0, y0, zero, w0, w0).real for q in range(nz)])

    def base(z: np.ndarray) -> np.ndarray:
        return np.array(
            [gq[q].evaluate(x0, y0, z, w0, w0).real for q in range(nz)]
        ) - g0

    def pert(z: np.ndarray) -> np.ndarray:
        return np.array([kq[q].evaluate(x0, y0, z, w0, w0).real for q in range(nz)])

    delta, _residual = find_equilibrium(
        base, pert, dim=nz, radius=radius, verify_tol=verify_tol, seed=seed
    )
    return delta


# --- one step --------------------------------------------------------------------


@dataclass(frozen=True)
class RunPolicy:
    """Which verified inequalities abort the run when they fail.

    With a flag off the corresponding check still runs and is recorded,
    but the step proceeds; that is how configurations outside the proven
    smallness regime are explored without faking the check itself.
    """

    strict_smallness: bool = True
    strict_hypotheses: bool = True
    strict_membership: bool = True


@dataclass(frozen=True)
class EngineParams:
    constants: StructuralConstants
    anchors: ScheduleAnchors
    dio_d: float
    sites: Sites
    a_exp: float
    a_wt: float
    p: float
    pbar: float
    K_schedule: Tuple[int, ...]
    policy: RunPolicy = RunPolicy()
    equilibrium_tol: float = 1e-10
    seed: int = 0

    def weighted_norm(self, geom: StepGeometry) -> WeightedNorm:
        return WeightedNorm(
            s=geom.s, r=geom.r, a=float(self.constants.a),
            a_exp=self.a_exp, a_wt=self.a_wt, p=self.p, pbar=self.pbar,
        )

    def next_K(self, nu_next: int) -> int:
        if nu_next < len(self.K_schedule):
            return int(self.K_schedule[nu_next])
        # schedule exhausted: keep growing slowly so longer exploratory
        # runs stay defined
        return int(self.K_schedule[-1]) + 2 * (nu_next - len(self.K_schedule) + 1)


@dataclass
class StepRecord:
    nu: int
    K: int
    s: float
    rho: float
    r: float
    eta: float
    gamma: float
    sigma: float
    M: float
    norm_P_in: float
    norm_P_out: float
    log_smallness_bound: float
    smallness_ok: bool
    membership_ok: bool
    worst_divisor_margin: float
    a_rho_log: float
    hypotheses: List[HypothesisCheck]
    residual_ratio: float
    max_cond: float
    lie_iterations: int
    delta: Tuple[float, ...]
    e: float
    omega: Tuple[float, ...]
    Omega: Tuple[float, ...]
    omega_drift: float
    grad_g_origin: float


@dataclass
class IterationState:
    N: NormalForm
    P: TFSeries
    geom: StepGeometry
    zeta: np.ndarray
    prev_geom: Optional[StepGeometry] = None


def initial_state(N: NormalForm, P: TFSeries, geom0: StepGeometry) -> IterationState:
    return IterationState(N=N, P=P, geom=geom0, zeta=np.zeros(N.dims.nz))


def equilibrium_radius(geom: StepGeometry, constants: StructuralConstants) -> float:
    """Search ball for the relocated equilibrium, from the previous sizes."""
    return (geom.r ** (constants.m - 1) * geom.eta ** constants.m) ** (1.0 / constants.L)


def kam_step(state: IterationState, params: EngineParams) -> Tuple[IterationState, StepRecord]:
    """One full iteration step; raises per policy, otherwise records and proceeds."""
    N, P, geom = state.N, state.P, state.geom
    dims = N.dims
    n, J, b = dims.n, dims.J, dims.nz // 2
    cons = params.constants
    m = cons.m
    wn = params.weighted_norm(geom)
    sites = params.sites

    norm_in = majorant_vf_norm(P, wn, sites) if P else 0.0
    log_bound = smallness_bound_log(geom, cons, b)
    small_ok = norm_in <= 0.0 or math.log(norm_in) <= log_bound
    if params.policy.strict_smallness and not small_ok:
        raise SmallnessError(
            "perturbation norm %.3e exceeds the admissible size exp(%.3f)"
            % (norm_in, log_bound)
        )

    dio = DiophantineParams(gamma=geom.gamma, tau=cons.tau, d=params.dio_d)
    membership = resonance_membership(N.omega, N.Omega, dio, sites.w, K=geom.K)
    if params.policy.strict_membership and not membership.ok:
        worst = membership.failures[0]
        raise ResonanceError(
            "frequencies leave the admissible set at k=%r, l=%r (|value| %.3e < %.3e)"
            % (worst.k, worst.l, worst.value, worst.threshold),
            k=worst.k, l=worst.l, value=worst.value, threshold=worst.threshold,
        )

    a_rho = compute_A_rho(
        n=n, b=b, J=J, K=geom.K, m=m, tau=cons.tau, d=params.dio_d,
        rho=geom.rho, w_sites=sites.w,
    )
    geom_next = schedule_next(geom, cons, params.anchors, params.next_K(geom.nu + 1))
    hyps = check_hypotheses(geom, geom_next, a_rho.log_value, cons, n, b)
    if params.policy.strict_hypotheses:
        bad = [h.name for h in hyps if not h.ok]
        if bad:
            raise HypothesisError("convergence hypotheses failed: %s" % ", ".join(bad))

    R, tail = P.truncate_split(geom.K, m, l_cap=2)
    sol = solve_homological(
        N.to_series(), R, m, N.omega, N.Omega, dio, sites, wn
    )

    H_total = N.to_series() + P
    lie = lie_transform(H_total, sol.F, m, wn, sites)
    Pbar = lie.series - N.to_series() - sol.R_keep

    radius_geom = state.prev_geom if state.prev_geom is not None else geom
    radius = equilibrium_radius(radius_geom, cons)
    delta = locate_equilibrium(
        N.g, sol.R_keep, radius, verify_tol=params.equilibrium_tol, seed=params.seed
    )

    shifted = (N.to_series() + sol.R_keep).shift_z(delta)
    e_new, omega_new, Omega_new, g_new, f_new, extras = decompose_normal_form(shifted, m)
    P_next = Pbar.shift_z(delta) + extras
    N_next = NormalForm(e=e_new, omega=omega_new, Omega=Omega_new, g=g_new, f=f_new, dims=dims)
    grad0 = float(np.max(np.abs(N_next.grad_g_origin()))) if dims.nz else 0.0
    if grad0 > 1e-10:
        raise ValueError(
            "translated degenerate part keeps a linear term of size %.3e" % grad0
        )

    wn_next = params.weighted_norm(geom_next)
    norm_out = majorant_vf_norm(P_next, wn_next, sites) if P_next else 0.0
    record = StepRecord(
        nu=geom_next.nu,
        K=geom.K,
        s=geom.s, rho=geom.rho, r=geom.r, eta=geom.eta,
        gamma=geom.gamma, sigma=geom.sigma, M=geom.M,
        norm_P_in=norm_in,
        norm_P_out=norm_out,
        log_smallness_bound=log_bound,
        smallness_ok=small_ok,
        membership_ok=membership.ok,
        worst_divisor_margin=membership.worst.margin if membership.worst else math.inf,
        a_rho_log=a_rho.log_value,
        hypotheses=hyps,
        residual_ratio=sol.residual_ratio,
        max_cond=sol.max_cond,
        lie_iterations=lie.iterations,
        delta=tuple(float(v) for v in delta),
        e=e_new,
        omega=tuple(float(v) for v in omega_new),
        Omega=tuple(float(v) for v in Omega_new),
        omega_drift=float(np.max(np.abs(omega_new - N.omega))),
        grad_g_origin=grad0,
    )
    new_state = IterationState(
        N=N_next, P=P_next, geom=geom_next,
        zeta=state.zeta + delta, prev_geom=geom,
    )
    return new_state, record


# --- full run ---------------------------------------------------------------------


@dataclass
class RunReport:
    steps: List[StepRecord]
    omega0: Tuple[float, ...]
    omega_star: Tuple[float, ...]
    Omega_star: Tuple[float, ...]
    zeta_star: Tuple[float, ...]
    e_star: float
    converged: bool
    stop_reason: str
    error: Optional[KamforgeError] = None
    eps: Optional[float] = None
    drift_exponent: float = 0.0
    drift_constant: Optional[float] = None
    final_N: Optional[NormalForm] = None
    final_P: Optional[TFSeries] = None


def run(
    state: IterationState,
    params: EngineParams,
    nu_max: int,
    stop_norm: float = 1e-14,
    eps: Optional[float] = None,
) -> RunReport:
    """Iterate kam_step up to nu_max times and assemble the report.

    Policy violations raised by a step are caught and recorded; the report
    then carries the partially completed run together with the error, and
    the caller decides the process outcome.
    """
    omega0 = tuple(float(v) for v in state.N.omega)
    records: List[StepRecord] = []
    converged = False
    reason = "step budget exhausted"
    err: Optional[KamforgeError] = None
    wn = params.weighted_norm(state.geom)
    if (majorant_vf_norm(state.P, wn, params.sites) if state.P else 0.0) <= stop_norm:
        converged = True
        reason = "perturbation already below the stop threshold"
    else:
        for _ in range(nu_max):
            try:
                state, rec = kam_step(state, params)
            except KamforgeError as exc:
                err = exc
                reason = "%s: %s" % (type(exc).__name__, exc)
                break
            records.append(rec)
            if rec.norm_P_out <= stop_norm:
                converged = True
                reason = "perturbation below the stop threshold"
                break
        else:
            reason = "completed %d steps" % len(records)

    expo = theorem_exponent(params.constants)
    drift_c: Optional[float] = None
    omega_star = tuple(float(v) for v in state.N.omega)
    if eps is not None and eps > 0:
        drift = max(abs(a - b) for a, b in zip(omega_star, omega0)) if omega0 else 0.0
        drift_c = drift / eps ** expo
    return RunReport(
        steps=records,
        omega0=omega0,
        omega_star=omega_star,
        Omega_star=tuple(float(v) for v in state.N.Omega),
        zeta_star=tuple(float(v) for v in state.zeta),
        e_star=state.N.e,
        converged=converged,
        stop_reason=reason,
        error=err,
        eps=eps,
        drift_exponent=expo,
        drift_constant=drift_c,
        final_N=state.N,
        final_P=state.P,
    )
