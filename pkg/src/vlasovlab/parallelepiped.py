"""Backward-in-time transport of block-linear phase-space parallelepipeds.

A set S = {(x, v) : ||M ((x, v) - center)|| <= radius} with block matrix
M = [[A, B], [C, D]] and the block max-norm ||(x, v)|| = max(|x|, |v|)
(Euclidean inside each block) is stepped backward along the flow: the blocks
absorb the window-averaged gradient of the regularized field, the center
follows the free-streaming/impulse update, and the radius grows by the
prescribed recursion g(r) = r + C * w * (r^beta + eps).  While the blocks
stay near the identity ("norm conditions") the stepped set provably contains
the preimages of its particles, so the particle count is non-decreasing
backward in time; an eps-lattice covering of the final set converts counts
into density bounds at the coarser scale.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from .ensemble import ParticleEnsemble
from .forces import field_regularized, grad_field_regularized
from .integrate import Trajectory


class NormConditionsViolated(RuntimeError):
    """The block matrix strayed too far from the identity to keep tracking."""


class TrackingInvariantError(RuntimeError):
    """A step violated one of the asserted drift bounds (implementation bug)."""


@dataclass(frozen=True)
class PhaseParallelepiped:
    """Block-linear image of a max-norm phase ball.

    Membership: max(|A(x-X0) + B(v-V0)|, |C(x-X0) + D(v-V0)|) <= radius,
    with Euclidean norms inside each d-dimensional block.
    """

    center_x: np.ndarray
    center_v: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    radius: float

    def __post_init__(self):
        cx = np.asarray(self.center_x, dtype=float).reshape(-1)
        cv = np.asarray(self.center_v, dtype=float).reshape(-1)
        d = cx.shape[0]
        blocks = {}
        for name in "ABCD":
            blk = np.asarray(getattr(self, name), dtype=float)
            if blk.shape == ():
                blk = blk.reshape(1, 1)
            if blk.shape != (d, d) or not np.isfinite(blk).all():
                raise ValueError(f"block {name} must be a finite ({d}, {d}) matrix")
            blocks[name] = blk
        if not (np.isfinite(cx).all() and np.isfinite(cv).all()):
            raise ValueError("center must be finite")
        if not self.radius > 0.0:
            raise ValueError("radius must be positive")
        object.__setattr__(self, "center_x", cx)
        object.__setattr__(self, "center_v", cv)
        for name, blk in blocks.items():
            object.__setattr__(self, name, blk)

    @property
    def dim(self) -> int:
        return self.center_x.shape[0]

    def matrix(self) -> np.ndarray:
        return np.block([[self.A, self.B], [self.C, self.D]])

    @classmethod
    def box(cls, center_x, center_v, radius) -> "PhaseParallelepiped":
        """Axis-aligned phase box: identity diagonal blocks, zero shear."""
        cx = np.atleast_1d(np.asarray(center_x, dtype=float))
        d = cx.shape[0]
        eye, zero = np.eye(d), np.zeros((d, d))
        return cls(cx, center_v, eye, zero, zero, eye, radius)


def _block_images(S: PhaseParallelepiped, x, v):
    dx = x - S.center_x
    dv = v - S.center_v
    top = dx @ S.A.T + dv @ S.B.T
    bot = dx @ S.C.T + dv @ S.D.T
    return top, bot


def contains(S: PhaseParallelepiped, x, v=None):
    """Membership test; accepts (x, v) pairs or stacked phase points."""
    if v is None:
        pts = np.asarray(x, dtype=float)
        x, v = pts[..., : S.dim], pts[..., S.dim :]
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    single = x.ndim == 1
    top, bot = _block_images(S, np.atleast_2d(x), np.atleast_2d(v))
    norm = np.maximum(
        np.linalg.norm(top, axis=-1), np.linalg.norm(bot, axis=-1)
    )
    inside = norm <= S.radius
    return bool(inside[0]) if single else inside


def count_in(ens: ParticleEnsemble, S: PhaseParallelepiped) -> int:
    """Exact number of particles inside S."""
    return int(np.count_nonzero(contains(S, ens.positions, ens.velocities)))


def block_norms(S: PhaseParallelepiped) -> dict:
    """Spectral norms of A - I, D - I, B, C (exact SVD; d <= 3)."""
    eye = np.eye(S.dim)
    return {
        "A": float(np.linalg.norm(S.A - eye, 2)),
        "D": float(np.linalg.norm(S.D - eye, 2)),
        "B": float(np.linalg.norm(S.B, 2)),
        "C": float(np.linalg.norm(S.C, 2)),
    }


def norm_conditions(S: PhaseParallelepiped):
    """(ok, margins): diagonal blocks within 1/2 of the identity and
    off-diagonal blocks of norm at most 1/2, with the slack per block."""
    norms = block_norms(S)
    margins = {name: 0.5 - val for name, val in norms.items()}
    ok = all(v >= 0.0 for v in margins.values())
    return ok, margins


def _boundary_unit_samples(d: int, n_samples: int, seed: int) -> np.ndarray:
    """Extreme points (|u_x| = |u_v| = 1) of the unit block max-ball."""
    if d == 1:
        return np.array(
            [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]]
        )
    axes = np.vstack([np.eye(d), -np.eye(d)])
    combos = [np.concatenate([a, b]) for a in axes for b in axes]
    rng = np.random.default_rng(seed)
    gx = rng.standard_normal((n_samples, d))
    gv = rng.standard_normal((n_samples, d))
    gx /= np.linalg.norm(gx, axis=1, keepdims=True)
    gv /= np.linalg.norm(gv, axis=1, keepdims=True)
    return np.vstack([np.array(combos), np.column_stack([gx, gv])])


def boundary_extent(
    S: PhaseParallelepiped, n_samples: int = 2048, seed: int = 0
) -> float:
    """Largest block max-norm distance from the center over sampled boundary
    points of S (pulled back through M).  Exact for d = 1 (corner
    enumeration); a lower bound of the true extent otherwise."""
    u = _boundary_unit_samples(S.dim, n_samples, seed)
    z = np.linalg.solve(S.matrix(), (S.radius * u).T).T
    zx, zv = z[:, : S.dim], z[:, S.dim :]
    return float(
        np.max(np.maximum(np.linalg.norm(zx, axis=1), np.linalg.norm(zv, axis=1)))
    )


def containment_check(
    S: PhaseParallelepiped, n_samples: int = 2048, seed: int = 0
) -> bool:
    """Empirical form of the inner containment lemma: S sits inside the
    block max-ball of radius 2*radius about its center.  Requires the norm
    conditions (raises NormConditionsViolated otherwise)."""
    ok, margins = norm_conditions(S)
    if not ok:
        raise NormConditionsViolated(f"norm conditions violated: margins {margins}")
    return boundary_extent(S, n_samples, seed) <= 2.0 * S.radius * (1.0 + 1e-12)


@dataclass
class BackwardStepRecord:
    t_from: float
    t_to: float
    window: float
    count_from: int
    count_to: int
    radius_before: float
    radius_after: float
    block_drift: float
    det_before: float
    det_after: float
    grad_norm: float
    margins: dict

    def as_dict(self) -> dict:
        out = dict(self.__dict__)
        out["margins"] = {k: float(v) for k, v in self.margins.items()}
        return out


def backward_step(
    S: PhaseParallelepiped,
    traj: Trajectory,
    t: float,
    eps: float,
    beta: float,
    growth_const: float,
    window: float | None = None,
):
    """One backward step of the tracking map over [t - window, t].

    Blocks absorb the window average G of the regularized field gradient at
    the fixed center (A' = A + w B G, B' = B + w A, and likewise for C, D);
    the center free-streams and receives the integrated regularized field;
    the radius follows g(r) = r + C_growth * w * (r^beta + eps).  Asserts the
    near-identity drift bounds: block drift <= 2 max(1, |G|) w and
    |det M' - det M| <= 4^d max(1, |G|)^d |det M| w^2 (both hold whenever the
    norm conditions do; a failure signals an implementation bug).

    Returns (stepped set, BackwardStepRecord).
    """
    if window is None:
        window = eps
    ok, margins = norm_conditions(S)
    if not ok:
        raise NormConditionsViolated(f"norm conditions violated: margins {margins}")
    i1 = traj.index_of_time(t)
    try:
        i0 = traj.index_of_time(t - window)
    except ValueError:
        raise ValueError(
            f"window missing: [{t - window}, {t}] not covered by the trajectory"
        ) from None
    if i0 >= i1:
        raise ValueError("window must span at least one step")
    dt = traj.dt
    w = float(traj.times[i1] - traj.times[i0])

    evals = np.empty((i1 - i0 + 1, S.dim))
    grads = np.empty((i1 - i0 + 1, S.dim, S.dim))
    for a, k in enumerate(range(i0, i1 + 1)):
        snap = traj.snapshot(k)
        evals[a] = field_regularized(snap, S.center_x, eps, traj.kernel)
        grads[a] = grad_field_regularized(snap, S.center_x, eps, traj.kernel)
    int_E = np.trapezoid(evals, dx=dt, axis=0)
    G = np.trapezoid(grads, dx=dt, axis=0) / w

    A2 = S.A + w * S.B @ G
    B2 = S.B + w * S.A
    C2 = S.C + w * S.D @ G
    D2 = S.D + w * S.C
    S2 = PhaseParallelepiped(
        center_x=S.center_x - w * S.center_v,
        center_v=S.center_v - int_E,
        A=A2,
        B=B2,
        C=C2,
        D=D2,
        radius=S.radius + growth_const * w * (S.radius**beta + eps),
    )

    g_norm = float(np.linalg.norm(G, 2))
    drift = max(
        np.linalg.norm(A2 - S.A, 2),
        np.linalg.norm(B2 - S.B, 2),
        np.linalg.norm(C2 - S.C, 2),
        np.linalg.norm(D2 - S.D, 2),
    )
    drift_bound = 2.0 * max(1.0, g_norm) * w
    if drift > drift_bound * (1.0 + 1e-9):
        raise TrackingInvariantError(
            f"block drift {drift:.3e} exceeds {drift_bound:.3e}"
        )
    det0, det1 = np.linalg.det(S.matrix()), np.linalg.det(S2.matrix())
    det_bound = 4.0**S.dim * max(1.0, g_norm) ** S.dim * max(abs(det0), 1e-12) * w * w
    if abs(det1 - det0) > det_bound * (1.0 + 1e-9):
        raise TrackingInvariantError(
            f"determinant drift {abs(det1 - det0):.3e} exceeds {det_bound:.3e}"
        )
    record = BackwardStepRecord(
        t_from=float(t),
        t_to=float(t - w),
        window=w,
        count_from=-1,
        count_to=-1,
        radius_before=S.radius,
        radius_after=S2.radius,
        block_drift=float(drift),
        det_before=float(det0),
        det_after=float(det1),
        grad_norm=g_norm,
        margins=margins,
    )
    return S2, record


@dataclass
class TrackingReport:
    """Outcome of iterating the backward step from some time down to zero."""

    times: list
    counts: list
    radii: list
    steps: list
    termination: str
    eps: float
    beta: float
    growth_const: float
    final_set: PhaseParallelepiped | None = None

    @property
    def monotone_ok(self) -> bool:
        return all(b >= a for a, b in zip(self.counts, self.counts[1:]))

    @property
    def reached_origin(self) -> bool:
        return self.termination == "reached-origin"

    def radius_bound_ok(self) -> bool:
        """Closed-form control of the radius recursion.

        With r_{n+1} = g(r_n), the defect over eta + C n eps (eps + eta^beta)
        obeys a geometric recursion; the final radius stays below
        eta + C_final (eps + eta^beta).  Checked for every recorded step
        while the iterate stays below 2*eta (the regime where the recursion's
        derivation is valid).
        """
        eta = self.radii[0]
        C = self.growth_const
        eps = self.eps
        cprime = C * self.beta * 2.0 ** (self.beta - 1.0)
        unit = eps + eta**self.beta
        for n, r in enumerate(self.radii):
            if r > 2.0 * eta:
                break
            alpha_bound = ((1.0 + cprime * eps * eta ** (self.beta - 1.0)) ** n - 1.0) * C * unit
            if r > eta + C * n * eps * unit + alpha_bound + 1e-12:
                return False
        return True

    def to_jsonl(self, fh) -> None:
        for rec in self.steps:
            fh.write(json.dumps(rec.as_dict(), sort_keys=True) + "\n")


def track_back(
    S_t: PhaseParallelepiped,
    traj: Trajectory,
    t: float,
    eps: float,
    beta: float,
    growth_const: float,
) -> TrackingReport:
    """Iterate the backward step from time t down to 0.

    Full steps of length eps, plus a final partial step when t is not a
    multiple of eps.  Counts are recorded at every stage and must be
    non-decreasing going backward; tracking stops early (with the reason)
    if the norm conditions fail.
    """
    k_t = traj.index_of_time(t)
    t = float(traj.times[k_t])
    S = S_t
    counts = [count_in(traj.snapshot(k_t), S)]
    times = [t]
    radii = [S.radius]
    steps = []
    termination = "reached-origin"
    now = t
    while now > 1e-12 * max(1.0, t):
        window = min(eps, now)
        ok, margins = norm_conditions(S)
        if not ok:
            termination = "norm-conditions-violated"
            break
        S, rec = backward_step(S, traj, now, eps, beta, growth_const, window=window)
        now = rec.t_to
        cnt = count_in(traj.snapshot(traj.index_of_time(now)), S)
        rec.count_from = counts[-1]
        rec.count_to = cnt
        counts.append(cnt)
        times.append(now)
        radii.append(S.radius)
        steps.append(rec)
    return TrackingReport(
        times=times,
        counts=counts,
        radii=radii,
        steps=steps,
        termination=termination,
        eps=eps,
        beta=beta,
        growth_const=growth_const,
        final_set=S,
    )


# ---------------------------------------------------------------------------
# lattice covering


_MAX_LATTICE_CANDIDATES = 60_000_000


def _sigma_min(M: np.ndarray) -> float:
    s = np.linalg.svd(M, compute_uv=False)[-1]
    if s <= 1e-12:
        raise NormConditionsViolated(
            "block matrix is numerically singular; the set is unbounded"
        )
    return float(s)


def lattice_cover(
    S: PhaseParallelepiped, eps: float, max_det_slack: float | None = None
) -> np.ndarray:
    """All eps-lattice points inside the radius-(eta + 2 eps) enlargement.

    The returned set P covers S with blocks of radius eps: every member of S
    has a lattice point within eps in the block max-norm (for d <= 3 the
    nearest lattice point works, since sqrt(d)/2 <= 1 and the matrix norm is
    at most 2 under the norm conditions).  Requires the norm conditions; when
    max_det_slack is given, also requires det(M) <= 1 + max_det_slack * eps.
    """
    ok, margins = norm_conditions(S)
    if not ok:
        raise NormConditionsViolated(f"norm conditions violated: margins {margins}")
    M = S.matrix()
    det = float(np.linalg.det(M))
    if max_det_slack is not None and det > 1.0 + max_det_slack * eps:
        raise NormConditionsViolated(
            f"determinant condition violated: det={det} > 1 + {max_det_slack}*eps"
        )
    center = np.concatenate([S.center_x, S.center_v])
    # rigorous per-coordinate reach: |z - c| <= |M^-1| * sqrt(2) * (eta + 2 eps)
    # (norm-conditioned blocks do not bound the inverse, so use it directly)
    reach = np.sqrt(2.0) / _sigma_min(M) * (S.radius + 2.0 * eps)
    lo = np.ceil((center - reach) / eps - 1e-9).astype(int)
    hi = np.floor((center + reach) / eps + 1e-9).astype(int)
    n_cand = int(np.prod(hi - lo + 1))
    if n_cand > _MAX_LATTICE_CANDIDATES:
        raise ValueError(
            f"lattice enumeration too large ({n_cand} candidates); shrink eta/eps"
        )
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    grid = np.meshgrid(*axes, indexing="ij")
    pts = eps * np.stack([g.ravel() for g in grid], axis=1).astype(float)
    z = (pts - center) @ M.T
    d = S.dim
    norm = np.maximum(
        np.linalg.norm(z[:, :d], axis=1), np.linalg.norm(z[:, d:], axis=1)
    )
    return pts[norm <= (S.radius + 2.0 * eps) * (1.0 + 1e-12)]


def cover_is_complete(S: PhaseParallelepiped, P: np.ndarray, eps: float, points):
    """Constructive cover check: every given point of S is within eps (block
    max-norm) of some covering point.  Returns (ok, worst distance)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.size == 0:
        return True, 0.0
    d = S.dim
    nearest = eps * np.round(points / eps)
    dist = np.maximum(
        np.linalg.norm((points - nearest)[:, :d], axis=1),
        np.linalg.norm((points - nearest)[:, d:], axis=1),
    )
    keys = set(map(tuple, np.round(P / eps).astype(int)))
    member = np.array(
        [tuple(row) in keys for row in np.round(nearest / eps).astype(int)]
    )
    ok_direct = member & (dist <= eps * (1.0 + 1e-9))
    if ok_direct.all():
        return True, float(dist.max())
    # Fall back to an exact nearest-cover search for the few misses.
    tree = cKDTree(P)
    worst = float(dist[ok_direct].max()) if ok_direct.any() else 0.0
    for row in points[~ok_direct]:
        idx = tree.query_ball_point(row, r=eps * (1.0 + 1e-9), p=np.inf)
        if not idx:
            return False, np.inf
        cand = P[idx]
        dd = np.maximum(
            np.linalg.norm((row - cand)[:, :d], axis=1),
            np.linalg.norm((row - cand)[:, d:], axis=1),
        )
        if dd.min() > eps * (1.0 + 1e-9):
            return False, float(dd.min())
        worst = max(worst, float(dd.min()))
    return True, worst


def cover_cardinality_constant(S: PhaseParallelepiped, P: np.ndarray, eps: float) -> float:
    """Fitted constant C' in |P| <= eps^(-2d) eta^(2d-1) (eta + C' eps)."""
    p = 2 * S.dim
    eta = S.radius
    return max(0.0, (len(P) * eps**p / eta ** (p - 1) - eta) / eps)


def cover_cardinality_literal_ok(S: PhaseParallelepiped, P: np.ndarray, eps: float):
    """The volume-comparison display exactly as stated:
    |P| (2 eps)^(2d) <= det(M) (eta + 4 eps)^(2d).  Returns (ok, lhs, rhs)."""
    p = 2 * S.dim
    lhs = len(P) * (2.0 * eps) ** p
    rhs = float(np.linalg.det(S.matrix())) * (S.radius + 4.0 * eps) ** p
    return lhs <= rhs * (1.0 + 1e-12), lhs, rhs


_UNIT_BALL_VOL = {1: 2.0, 2: math.pi, 3: 4.0 * math.pi / 3.0}


def cover_cardinality_volume_ok(S: PhaseParallelepiped, P: np.ndarray, eps: float):
    """Corrected volume comparison: disjoint half-open lattice cells around
    the covering points fit inside the radius-(eta + 4 eps) enlargement, so
    |P| eps^(2d) <= vol(ball) (eta + 4 eps)^(2d) / det(M).
    Returns (ok, lhs, rhs)."""
    d = S.dim
    p = 2 * d
    lhs = len(P) * eps**p
    rhs = (
        _UNIT_BALL_VOL[d] ** 2
        * (S.radius + 4.0 * eps) ** p
        / float(np.linalg.det(S.matrix()))
    )
    return lhs <= rhs * (1.0 + 1e-12), lhs, rhs


# ---------------------------------------------------------------------------
# growth-constant pilot and the preservation experiment


def estimate_growth_const(
    traj: Trajectory,
    eps: float,
    beta: float,
    eta: float,
    t: float | None = None,
    n_boxes: int = 16,
    seed: int = 0,
    pilot: float = 1.0,
    headroom: float = 1.10,
) -> float:
    """Pilot pass for the radius growth constant.

    Tracks identity boxes of radius eta backward with a provisional constant
    and records, at each step, the defect

        (max over counted particles of ||M'(z(t-w) - center')|| - r) /
        (w * (r^beta + eps)),

    i.e. the constant that step actually needed.  Returns the maximum defect
    times a headroom factor (floored at a tenth of the pilot constant).
    """
    if t is None:
        k = (traj.n_times - 1) // max(1, int(round(eps / traj.dt)))
        t = float(k * eps)
    k_t = traj.index_of_time(t)
    rng = np.random.default_rng(seed)
    idx = rng.choice(traj.n, size=min(n_boxes, traj.n), replace=False)
    need = 0.0
    for i in idx:
        S = PhaseParallelepiped.box(
            traj.positions[k_t, i], traj.velocities[k_t, i], eta
        )
        now = t
        while now > 1e-12:
            window = min(eps, now)
            ok, _ = norm_conditions(S)
            if not ok:
                break
            snap_now = traj.snapshot(traj.index_of_time(now))
            inside = contains(S, snap_now.positions, snap_now.velocities)
            r_before = S.radius
            S2, rec = backward_step(
                S, traj, now, eps, beta, pilot, window=window
            )
            if inside.any():
                snap_prev = traj.snapshot(traj.index_of_time(rec.t_to))
                top, bot = _block_images(
                    S2, snap_prev.positions[inside], snap_prev.velocities[inside]
                )
                extent = np.maximum(
                    np.linalg.norm(top, axis=1), np.linalg.norm(bot, axis=1)
                ).max()
                defect = (extent - r_before) / (window * (r_before**beta + eps))
                need = max(need, float(defect))
            S = S2
            now = rec.t_to
    return max(need * headroom, 0.1 * pilot)


@dataclass
class PreservationReport:
    """Measured and tracked density bounds at the coarse scale vs the fine
    scale at time zero, with the fitted slack constant."""

    eta: float
    eps: float
    beta: float
    growth_const: float
    horizon: float
    times: np.ndarray
    linf_eta_upper: np.ndarray
    linf_eps0_upper: float
    tracked_bound: np.ndarray
    fitted_C: float
    slack: float
    n_boxes: int
    counts_monotone_ok: bool
    chain_ok: bool
    early_stops: int


def linf_preservation_report(
    traj: Trajectory,
    eta: float,
    eps: float,
    beta: float,
    growth_const: float,
    horizon: float | None = None,
    n_boxes: int = 32,
    seed: int = 0,
) -> PreservationReport:
    """Near-preservation experiment for the coarse-scale sup norm.

    For a family of radius-eta boxes centered on a particle subsample at each
    eps-multiple t within the no-stretch horizon: track the box back to time
    zero, cover the final parallelepiped by the eps-lattice, and bound the
    box's particle count by (covering count) * (max eps-ball mass at time 0).
    The horizon is auto-detected as the largest sampled time whose tracks all
    keep the norm conditions.  The fitted constant is the measured slack

        (sup_t upper_eta(t) - upper_eps(0)) / (eta^beta + eps/eta).
    """
    from .diagnostics import discrete_linf

    stride = max(1, int(round(eps / traj.dt)))
    t_max = traj.times[-1] if horizon is None else horizon
    sample_ks = [k for k in range(0, traj.n_times, stride) if traj.times[k] <= t_max + 1e-12]
    rng = np.random.default_rng(seed)
    linf0_lo, linf0_hi = discrete_linf(traj.snapshot(0), eps)

    times, measured, tracked = [], [], []
    monotone_ok = True
    chain_ok = True
    early = 0
    horizon_used = 0.0
    n = traj.n
    p = 2 * traj.dim
    for k in sample_ks:
        t = float(traj.times[k])
        lo, hi = discrete_linf(traj.snapshot(k), eta)
        idx = rng.choice(n, size=min(n_boxes, n), replace=False)
        worst_bound = 0.0
        stopped = False
        for i in idx:
            S = PhaseParallelepiped.box(
                traj.positions[k, i], traj.velocities[k, i], eta
            )
            if t == 0.0:
                count0 = count_in(traj.snapshot(0), S)
                bound = count0
                report = None
            else:
                report = track_back(S, traj, t, eps, beta, growth_const)
                if not report.reached_origin:
                    stopped = True
                    break
                monotone_ok &= report.monotone_ok
                S0 = report.final_set
                try:
                    P = lattice_cover(S0, eps)
                except (NormConditionsViolated, ValueError):
                    stopped = True
                    break
                bound = len(P) * linf0_hi * (2.0 * eps) ** p * n
                if report.counts[-1] > bound * (1.0 + 1e-9):
                    chain_ok = False
                count0 = report.counts[0]
            density_bound = bound / n / (2.0 * eta) ** p
            worst_bound = max(worst_bound, density_bound)
        if stopped:
            early += 1
            break
        horizon_used = t
        times.append(t)
        measured.append(hi)
        tracked.append(worst_bound)

    measured = np.asarray(measured)
    slack = eta**beta + eps / eta
    fitted = max(0.0, (measured.max(initial=0.0) - linf0_hi) / slack)
    return PreservationReport(
        eta=eta,
        eps=eps,
        beta=beta,
        growth_const=growth_const,
        horizon=horizon_used,
        times=np.asarray(times),
        linf_eta_upper=measured,
        linf_eps0_upper=linf0_hi,
        tracked_bound=np.asarray(tracked),
        fitted_C=float(fitted),
        slack=float(slack),
        n_boxes=n_boxes,
        counts_monotone_ok=monotone_ok,
        chain_ok=chain_ok,
        early_stops=early,
    )
