"""Topological degree, equilibrium location, and weak convexity checks.

The persistence argument for degenerate directions rests on three finite
computations: the Brouwer degree of a gradient field on a small box, the
location of the perturbed zero inside that box, and a quantitative lower
bound on how fast the gradient separates points.  All three live here and
operate on plain callables R^D -> R^D so they can be unit-tested away from
the series machinery.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import root as _scipy_root

from .errors import EquilibriumNotFoundError, IllPosedBoundaryError

FieldFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class DegreeProblem:
    """A continuous field on an axis-aligned box, queried at ``target``."""

    map_fn: FieldFn
    box: Tuple[Tuple[float, float], ...]
    target: Optional[Tuple[float, ...]] = None

    def dim(self) -> int:
        return len(self.box)


@dataclass(frozen=True)
class DegreeResult:
    degree: int
    boundary_margin: float
    rays_tried: int
    simplices: int


def _perm_sign(perm: Sequence[int]) -> int:
    sign = 1
    for a in range(len(perm)):
        for b in range(a + 1, len(perm)):
            if perm[a] > perm[b]:
                sign = -sign
    return sign


def _face_orientation(axis: int, side: int) -> int:
    # Outward-normal convention: on the x_axis = hi face a positively
    # oriented frame (n, v_1, .., v_{D-1}) with the remaining axes in
    # increasing order carries sign (-1)^axis; the lo face flips it.
    base = -1 if axis % 2 else 1
    return base if side == 1 else -base


def _boundary_simplices(problem: DegreeProblem, resolution: int):
    """Yield (vertices, orientation) for a Kuhn triangulation of the box
    boundary.  ``vertices`` is a (D, D) array of corner coordinates in
    path order; the orientation already includes the face sign."""
    box = problem.box
    dim = len(box)
    for axis in range(dim):
        free = [j for j in range(dim) if j != axis]
        steps = [(box[j][1] - box[j][0]) / resolution for j in free]
        for side in (0, 1):
            fixed_val = box[axis][side]
            orient0 = _face_orientation(axis, side)
            for cell in itertools.product(range(resolution), repeat=dim - 1):
                corner = np.empty(dim)
                corner[axis] = fixed_val
                for t, j in enumerate(free):
                    corner[j] = box[j][0] + cell[t] * steps[t]
                for perm in itertools.permutations(range(dim - 1)):
                    verts = np.empty((dim, dim))
                    verts[0] = corner
                    cur = corner.copy()
                    for t, p in enumerate(perm):
                        cur = cur.copy()
                        cur[free[p]] += steps[p]
                        verts[t + 1] = cur
                    yield verts, orient0 * _perm_sign(perm)


def brouwer_degree(
    problem: DegreeProblem,
    resolution: int = 4,
    seed: int = 0,
    margin_tol: float = 1e-9,
    max_rays: int = 40,
) -> DegreeResult:
    """Brouwer degree of ``map_fn`` on the box with respect to ``target``.

    Piecewise-linear boundary method: triangulate the box boundary into
    Kuhn simplices, interpolate the field linearly on each, and count
    signed crossings of a random ray from the target through the image
    surface.  Rays that graze a simplex face are rejected and redrawn, so
    the count is almost surely well defined; the answer is exact for the
    PL interpolant and equals the degree of the field whenever the
    resolution is fine enough that the interpolant never passes through
    the target on the boundary.
    """
    dim = problem.dim()
    if dim < 1:
        raise ValueError("degree needs a box of dimension >= 1")
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    target = np.zeros(dim) if problem.target is None else np.asarray(problem.target, float)

    cells = []
    margin = np.inf
    scale = 0.0
    for verts, orient in _boundary_simplices(problem, resolution):
        vals = np.empty((dim, dim))
        for t in range(dim):
            vals[t] = np.asarray(problem.map_fn(verts[t].copy()), float) - target
        norms = np.linalg.norm(vals, axis=1)
        margin = min(margin, float(norms.min()))
        scale = max(scale, float(norms.max()))
        cells.append((vals, orient))

    if not np.isfinite(scale) or scale == 0.0:
        raise IllPosedBoundaryError("field vanishes identically on the box boundary")
    if margin <= margin_tol * max(1.0, scale):
        raise IllPosedBoundaryError(
            "target lies within %.3e of the boundary image; degree is ill posed"
            % margin
        )

    rng = np.random.default_rng(seed)
    for attempt in range(1, max_rays + 1):
        u = rng.normal(size=dim)
        u /= np.linalg.norm(u)
        total = 0
        clean = True
        for vals, orient in cells:
            ymat = vals.T  # columns are vertex images
            sign, logdet = np.linalg.slogdet(ymat)
            if sign == 0 or logdet < np.log(1e-14 * max(1.0, scale)) * dim:
                # flat image simplex: it cannot be crossed transversally,
                # but a ray through it is ambiguous; perturbing the ray
                # does not help, skipping is the PL-correct action.
                continue
            mu = np.linalg.solve(ymat, u)
            if np.any(np.abs(mu) <= 1e-12):
                clean = False
                break
            if np.all(mu > 0.0):
                total += orient * int(sign)
        if clean:
            return DegreeResult(
                degree=total,
                boundary_margin=margin,
                rays_tried=attempt,
                simplices=len(cells),
            )
    raise IllPosedBoundaryError(
        "no transversal ray found after %d attempts" % max_rays
    )


def _as_field(fn: FieldFn, dim: int) -> FieldFn:
    def wrapped(z: np.ndarray) -> np.ndarray:
        out = np.asarray(fn(np.asarray(z, float)), float).reshape(dim)
        return out

    return wrapped


def find_equilibrium(
    base: FieldFn,
    pert: FieldFn,
    dim: int,
    radius: float,
    verify_tol: float = 1e-10,
    seed: int = 0,
    grid_points: int = 5,
) -> Tuple[np.ndarray, float]:
    """Zero of ``base + pert`` inside the ball ``|z| <= radius``.

    Continuation in t from the unperturbed zero at the origin along
    ``base + t*pert`` is tried first; a grid of Newton seeds across the
    ball backs it up, since the unperturbed Jacobian is allowed to be
    singular at the origin (that is the whole point of the degenerate
    setting).  Among the verified zeros the one of smallest norm wins,
    with lexicographic order breaking exact ties.  Raises
    EquilibriumNotFoundError when no candidate survives verification.
    """
    if dim < 1 or dim > 6:
        raise ValueError("equilibrium search supports 1 <= dim <= 6")
    if radius <= 0:
        raise ValueError("radius must be positive")
    fb = _as_field(base, dim)
    fp = _as_field(pert, dim)

    def full(z: np.ndarray) -> np.ndarray:
        return fb(z) + fp(z)

    candidates = []

    def consider(x: np.ndarray) -> None:
        x = np.asarray(x, float)
        if not np.all(np.isfinite(x)):
            return
        if np.linalg.norm(x) > radius * (1.0 + 1e-9):
            return
        if np.max(np.abs(full(x))) > verify_tol:
            return
        candidates.append(x)

    # Homotopy leg.  The schedule bisects on failure so a fold that sits
    # between two t values gets straddled more finely before giving up.
    z = np.zeros(dim)
    t_prev = 0.0
    queue = list(np.linspace(0.0, 1.0, 11)[1:])
    guard = 0
    while queue and guard < 200:
        guard += 1
        t = queue[0]

        def ht(zz: np.ndarray, tt: float = t) -> np.ndarray:
            return fb(zz) + tt * fp(zz)

        sol = _scipy_root(ht, z, method="hybr", tol=1e-13)
        if sol.success and np.max(np.abs(ht(sol.x))) <= 1e-9:
            z = np.asarray(sol.x, float)
            t_prev = t
            queue.pop(0)
        else:
            mid = 0.5 * (t_prev + t)
            if t - t_prev < 1e-6:
                break
            queue.insert(0, mid)
    if not queue:
        sol = _scipy_root(full, z, method="hybr", tol=1e-13)
        if sol.success:
            consider(sol.x)

    # Grid-seeded sweep over the ball.
    axes = [np.linspace(-radius, radius, grid_points)] * dim
    for seed_pt in itertools.product(*axes):
        p = np.asarray(seed_pt, float)
        if np.linalg.norm(p) > radius * (1.0 + 1e-12):
            continue
        sol = _scipy_root(full, p, method="hybr", tol=1e-13)
        if sol.success:
            consider(sol.x)

    if not candidates:
        raise EquilibriumNotFoundError(
            "no zero of the perturbed gradient within radius %.3e" % radius
        )

    def sort_key(x: np.ndarray):
        return (round(float(np.linalg.norm(x)), 12), tuple(np.round(x, 12)))

    best = min(candidates, key=sort_key)
    residual = float(np.max(np.abs(full(best))))
    if residual > verify_tol:
        raise EquilibriumNotFoundError(
            "best candidate re-verification failed: residual %.3e" % residual
        )
    return best, residual


@dataclass(frozen=True)
class WeakConvexityReport:
    ok: bool
    min_ratio: float
    witness: Optional[Tuple[Tuple[float, ...], Tuple[float, ...]]]
    pairs_checked: int


def weak_convexity_check(
    grad_fn: FieldFn,
    box: Sequence[Tuple[float, float]],
    order: int,
    sigma: float,
    nsamples: int = 400,
    seed: int = 0,
) -> WeakConvexityReport:
    """Sampled falsifier for |grad(z) - grad(z')| >= sigma |z - z'|^order.

    Half of the sampled pairs differ in a single coordinate; a gradient
    that is constant along some axis segment (a plateau) then produces a
    machine-exact zero numerator, so flat spots are caught without any
    tolerance tuning.  Passing the check is evidence, not proof.
    """
    dim = len(box)
    fn = _as_field(grad_fn, dim)
    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])

    def draw() -> np.ndarray:
        return lo + (hi - lo) * rng.random(dim)

    min_ratio = np.inf
    witness = None
    checked = 0
    for idx in range(nsamples):
        z1 = draw()
        if idx % 2 == 0:
            z2 = draw()
        else:
            z2 = z1.copy()
            ax = int(rng.integers(dim))
            z2[ax] = lo[ax] + (hi[ax] - lo[ax]) * rng.random()
        gap = np.linalg.norm(z1 - z2)
        if gap <= 1e-12:
            continue
        checked += 1
        ratio = float(np.linalg.norm(fn(z1) - fn(z2)) / gap**order)
        if ratio < min_ratio:
            min_ratio = ratio
            witness = (tuple(z1), tuple(z2))
    ok = bool(min_ratio >= sigma)
    return WeakConvexityReport(ok=ok, min_ratio=float(min_ratio), witness=witness, pairs_checked=checked)
