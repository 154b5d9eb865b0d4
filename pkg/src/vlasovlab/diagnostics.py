"""Scalar diagnostics of the discrete dynamics.

Everything here is a pure function of an ensemble or a recorded trajectory:
support radii R/K, the minimal phase-space separation statistic m, windowed
force averages (single and pairwise-difference form), and a certified
two-sided bracket for the discrete phase-space sup norm at a given scale.

Window averages are trapezoid sums on the step grid with window starts
restricted to the grid, so every reported supremum is a certified lower bound
for its continuum counterpart.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .ensemble import ParticleEnsemble
from .integrate import Trajectory

EXACT_PAIR_LIMIT = 32768
_PAIR_CHUNK = 2048


# ---------------------------------------------------------------------------
# support radii


def support_radii_series(traj: Trajectory, norm: float = 2):
    """Running sups of |X_i| and |V_i| over the sampled instants."""
    R = np.linalg.norm(traj.positions, ord=norm, axis=2).max(axis=1)
    K = np.linalg.norm(traj.velocities, ord=norm, axis=2).max(axis=1)
    return np.maximum.accumulate(R), np.maximum.accumulate(K)


def support_radii(traj: Trajectory, up_to: float | None = None, norm: float = 2):
    """(R, K): running sup of position and velocity magnitudes up to a time.

    Euclidean by default (pass norm=np.inf for the box radius).  Also checks
    the free-transport bound R(T) <= R(0) + T*K(T) on the sampled grid and
    warns if it fails beyond the step-size tolerance.
    """
    k = traj.n_times - 1 if up_to is None else traj.index_of_time(up_to)
    Rs, Ks = support_radii_series(traj, norm=norm)
    R, K = float(Rs[k]), float(Ks[k])
    T = float(traj.times[k])
    slack = 0.5 * traj.dt * traj.dt * float(np.max(traj.field_mags[: k + 1], initial=0.0))
    margin = Rs[0] + T * K - R
    if margin < -(slack * max(1, k) + 1e-12):
        warnings.warn(
            f"transport bound violated: R(T)={R:.6g} > R(0)+T*K(T)={Rs[0] + T * K:.6g}",
            stacklevel=2,
        )
    return R, K


# ---------------------------------------------------------------------------
# minimal phase-space separation


def _min_separation_pair(X, V):
    n = X.shape[0]
    best = np.inf
    pair = (0, 1)
    block = max(1, _SEP_BLOCK // max(1, n))
    for s in range(0, n, block):
        e = min(n, s + block)
        dx = np.linalg.norm(X[s:e, None, :] - X[None, :, :], axis=2)
        dv = np.linalg.norm(V[s:e, None, :] - V[None, :, :], axis=2)
        dist = dx + dv
        rows = np.arange(e - s)
        dist[rows, np.arange(s, e)] = np.inf
        jmin = np.unravel_index(np.argmin(dist), dist.shape)
        if dist[jmin] < best:
            best = float(dist[jmin])
            pair = (int(jmin[0] + s), int(jmin[1]))
    return best, pair


_SEP_BLOCK = 1 << 22


def min_phase_separation_pair(ens: ParticleEnsemble, eps: float):
    """(m, (i, j)): the separation statistic and the pair realizing it."""
    if ens.n > EXACT_PAIR_LIMIT:
        raise ValueError(
            f"too large: exact O(N^2) separation limited to N <= {EXACT_PAIR_LIMIT}; "
            "subsample explicitly for bigger ensembles"
        )
    dist, pair = _min_separation_pair(ens.positions, ens.velocities)
    if dist == 0.0:
        return np.inf, pair
    return eps / dist, pair


def min_phase_separation(ens: ParticleEnsemble, eps: float) -> float:
    """eps / min over pairs of (|X_i - X_j| + |V_i - V_j|).

    Infinite (a collision flag) when a pair coincides in phase space.
    """
    return min_phase_separation_pair(ens, eps)[0]


# ---------------------------------------------------------------------------
# windowed force averages


def beta_interval(d: int, alpha: float):
    """Admissible open interval for the pair-difference exponent."""
    return 1.0, min(d - alpha, 2.0 * d - 3.0 * alpha)


def default_beta(d: int, alpha: float) -> float:
    """Midpoint of the admissible interval (d >= 2)."""
    lo, hi = beta_interval(d, alpha)
    if hi <= lo:
        raise ValueError(
            f"admissible beta interval is empty for d={d}, alpha={alpha}; "
            "for d=1 use beta=1 with short_time_beta=True (short-time use only)"
        )
    return 0.5 * (lo + hi)


def _resolve_beta(beta, d, alpha, short_time_beta):
    if d == 1:
        if not short_time_beta:
            raise ValueError(
                "d=1 has an empty admissible beta interval; pass "
                "short_time_beta=True to use beta=1 (valid for short-time "
                "estimates only)"
            )
        if beta is not None and beta != 1.0:
            raise ValueError("with short_time_beta=True, beta must be 1")
        return 1.0
    if beta is None:
        return default_beta(d, alpha)
    lo, hi = beta_interval(d, alpha)
    if not lo < beta < hi:
        raise ValueError(f"invalid beta={beta}: must lie strictly in ({lo}, {hi})")
    return float(beta)


def _cumtrapz(y, dt):
    """Cumulative trapezoid along axis 0, starting at 0."""
    out = np.zeros_like(y)
    np.cumsum(0.5 * dt * (y[1:] + y[:-1]), axis=0, out=out[1:])
    return out


def _window_steps(eps, dt):
    w = int(round(eps / dt))
    if eps < 2.0 * dt * (1.0 - 1e-12) or w < 2:
        raise ValueError(f"window too coarse: eps={eps} must be at least 2*dt={2 * dt}")
    return w


def windowed_force_avg_series(traj: Trajectory, eps: float) -> np.ndarray:
    """Running sup of short-window field averages, one value per instant.

    Entry m is the sup over particles and grid window starts t <= t_m - eps of
    (1/eps) * integral of |E(X_i)| over [t, t + eps]; for t_m < eps the
    normalization stays 1/eps with the integral taken over [0, t_m].
    """
    w = _window_steps(eps, traj.dt)
    integral = _cumtrapz(traj.field_mags, traj.dt)
    n_t = traj.n_times
    out = np.empty(n_t)
    head = min(w, n_t)
    out[:head] = integral[:head].max(axis=1) / eps
    if n_t > w:
        win = (integral[w:] - integral[:-w]).max(axis=1) / (w * traj.dt)
        out[w:] = np.maximum.accumulate(win)
    return out


def windowed_force_avg(traj: Trajectory, eps: float) -> float:
    """The windowed force average at the final recorded instant."""
    return float(windowed_force_avg_series(traj, eps)[-1])


def select_pairs(ens: ParticleEnsemble, eps: float, pair_budget: int, seed: int = 0):
    """Pairs for the difference average: all of them if they fit the budget,
    otherwise the separation-realizing pair plus a uniform sample.

    Returns (pairs (m, 2) int array, exact flag)."""
    n = ens.n
    total = n * (n - 1) // 2
    if total <= pair_budget:
        iu, ju = np.triu_indices(n, k=1)
        return np.column_stack([iu, ju]), True
    _, tight = min_phase_separation_pair(ens, eps)
    tight_row = np.array(sorted(tight), dtype=np.int64)
    rng = np.random.default_rng(seed)
    want = pair_budget
    rows = [tight_row[None, :]]
    have = 1
    while have < want:
        i = rng.integers(0, n, size=2 * (want - have))
        j = rng.integers(0, n, size=2 * (want - have))
        keep = i != j
        cand = np.sort(np.column_stack([i[keep], j[keep]]), axis=1)
        rows.append(cand)
        have = np.unique(np.concatenate(rows, axis=0), axis=0).shape[0]
    pairs = np.unique(np.concatenate(rows, axis=0), axis=0)
    # never truncate away the separation-realizing pair
    is_tight = np.all(pairs == tight_row, axis=1)
    pairs = np.concatenate([pairs[is_tight], pairs[~is_tight][: want - 1]], axis=0)
    return pairs, False


def windowed_force_diff_avg_series(
    traj: Trajectory,
    eps: float,
    beta: float | None = None,
    pair_budget: int = 100_000,
    seed: int = 0,
    short_time_beta: bool = False,
    pairs: np.ndarray | None = None,
) -> np.ndarray:
    """Running sup over pairs of windowed averages of the difference quotient
    |E(X_i) - E(X_j)| / (eps^beta + |X_i - X_j|), one value per instant."""
    if traj.field_vecs is None:
        raise ValueError("trajectory was recorded without field vectors")
    beta = _resolve_beta(beta, traj.dim, traj.kernel.alpha, short_time_beta)
    w = _window_steps(eps, traj.dt)
    if pairs is None:
        pairs, _ = select_pairs(traj.snapshot(0), eps, pair_budget, seed)
    n_t = traj.n_times
    head = min(w, n_t)
    best_short = np.zeros(head)
    best_win = np.zeros(max(0, n_t - w))
    floor = eps**beta
    E, X = traj.field_vecs, traj.positions
    for s in range(0, pairs.shape[0], _PAIR_CHUNK):
        ii = pairs[s : s + _PAIR_CHUNK, 0]
        jj = pairs[s : s + _PAIR_CHUNK, 1]
        dE = np.linalg.norm(E[:, ii, :] - E[:, jj, :], axis=2)
        dX = np.linalg.norm(X[:, ii, :] - X[:, jj, :], axis=2)
        q = dE / (floor + dX)
        integral = _cumtrapz(q, traj.dt)
        np.maximum(best_short, integral[:head].max(axis=1) / eps, out=best_short)
        if n_t > w:
            win = (integral[w:] - integral[:-w]).max(axis=1) / (w * traj.dt)
            np.maximum(best_win, win, out=best_win)
    out = np.empty(n_t)
    out[:head] = best_short
    if n_t > w:
        out[w:] = np.maximum.accumulate(best_win)
    return out


def windowed_force_diff_avg(
    traj: Trajectory,
    eps: float,
    beta: float | None = None,
    pair_budget: int = 100_000,
    seed: int = 0,
    short_time_beta: bool = False,
) -> float:
    """Pair-difference windowed average at the final instant.

    When the pair set is subsampled (budget exceeded) the value is a certified
    lower-bound estimate; the separation-realizing pair is always included.
    """
    series = windowed_force_diff_avg_series(
        traj, eps, beta, pair_budget, seed, short_time_beta
    )
    return float(series[-1])


# ---------------------------------------------------------------------------
# discrete sup-norm bracket


def discrete_linf(ens: ParticleEnsemble, scale: float):
    """Two-sided bracket (lower, upper) for the discrete sup norm at a scale.

    lower: best mass/volume over closed max-norm balls centered at particles
    and at occupied lattice-cell centers (a genuine lower bound of the
    continuum sup).  upper: 2^(2d) times the best half-open lattice cell of
    side 2*scale (any max-norm ball of radius scale meets at most 2^(2d)
    cells).  Guarantees lower <= sup <= upper and upper <= 2^(2d) * lower.
    """
    if not scale > 0.0:
        raise ValueError("scale must be positive")
    pts = ens.phase_points()
    n, p = pts.shape
    side = 2.0 * scale
    cells, counts = np.unique(np.floor(pts / side), axis=0, return_counts=True)
    max_cell = int(counts.max())
    centers = (cells + 0.5) * side
    candidates = np.vstack([pts, centers])
    tree = cKDTree(pts)
    ball = tree.query_ball_point(candidates, r=scale, p=np.inf, return_length=True)
    vol = side**p
    lower = int(np.max(ball)) / n / vol
    upper = (2.0**p) * max_cell / n / vol
    return float(lower), float(upper)


@dataclass(frozen=True)
class MlinfReport:
    lhs: float
    rhs: float
    ratio: float
    holds: bool


def check_mlinf(m: float, linf_upper: float, d: int) -> MlinfReport:
    """Check the separation-to-density bound: sup norm upper <= (4m)^(2d).

    Never raises; a violation in the report indicates either a bug or a
    genuinely colliding configuration (where m is infinite and the bound is
    vacuous).
    """
    rhs = (4.0 * m) ** (2 * d) if np.isfinite(m) else np.inf
    ratio = 0.0 if not np.isfinite(rhs) else linf_upper / rhs
    return MlinfReport(
        lhs=float(linf_upper),
        rhs=float(rhs),
        ratio=float(ratio),
        holds=bool(linf_upper <= rhs * (1.0 + 1e-12)),
    )


# ---------------------------------------------------------------------------
# aggregate record


@dataclass
class DiagnosticsRecord:
    """Time series of all scalar diagnostics, sampled on the eps grid."""

    times: np.ndarray
    R: np.ndarray
    K: np.ndarray
    m: np.ndarray
    Ebar: np.ndarray
    dEbar: np.ndarray
    linf_eps_lo: np.ndarray
    linf_eps_hi: np.ndarray
    linf_eta_lo: np.ndarray
    linf_eta_hi: np.ndarray
    eps: float
    eta: float
    beta: float
    E0: float
    dEbar_exact: bool

    COLUMNS = (
        "t,R,K,m,Ebar,dEbar,linf_eps_lo,linf_eps_hi,linf_eta_lo,linf_eta_hi"
    )

    def to_csv(self, path) -> None:
        cols = [
            self.times, self.R, self.K, self.m, self.Ebar, self.dEbar,
            self.linf_eps_lo, self.linf_eps_hi, self.linf_eta_lo, self.linf_eta_hi,
        ]
        with open(path, "w") as fh:
            fh.write(self.COLUMNS + "\n")
            for row in zip(*cols):
                fh.write(",".join(repr(float(x)) for x in row) + "\n")

    @classmethod
    def from_csv(cls, path) -> dict:
        data = np.genfromtxt(path, delimiter=",", names=True)
        data = np.atleast_1d(data)
        return {name: data[name] for name in data.dtype.names}


def compute_diagnostics(
    traj: Trajectory,
    eps: float,
    eta: float | None = None,
    beta: float | None = None,
    pair_budget: int = 100_000,
    seed: int = 0,
    stride: int | None = None,
    short_time_beta: bool | None = None,
) -> DiagnosticsRecord:
    """Evaluate every diagnostic at each eps-multiple of the trajectory.

    eta defaults to sqrt(eps) (the first rung of the scale-escalation
    ladder).  For d=1 the pair-difference exponent automatically falls back
    to the short-time choice beta=1 unless overridden.
    """
    if eta is None:
        eta = float(np.sqrt(eps))
    if short_time_beta is None:
        short_time_beta = traj.dim == 1
    if stride is None:
        stride = max(1, int(round(eps / traj.dt)))
    idx = np.arange(0, traj.n_times, stride)
    beta_val = _resolve_beta(beta, traj.dim, traj.kernel.alpha, short_time_beta)

    Rs, Ks = support_radii_series(traj)
    ebar = windowed_force_avg_series(traj, eps)
    pairs, exact = select_pairs(traj.snapshot(0), eps, pair_budget, seed)
    debar = windowed_force_diff_avg_series(
        traj, eps, beta_val, pair_budget, seed, short_time_beta, pairs=pairs
    )

    m = np.empty(idx.size)
    lo_e = np.empty(idx.size)
    hi_e = np.empty(idx.size)
    lo_h = np.empty(idx.size)
    hi_h = np.empty(idx.size)
    for a, k in enumerate(idx):
        snap = traj.snapshot(k)
        m[a] = min_phase_separation(snap, eps)
        lo_e[a], hi_e[a] = discrete_linf(snap, eps)
        lo_h[a], hi_h[a] = discrete_linf(snap, eta)

    return DiagnosticsRecord(
        times=traj.times[idx],
        R=Rs[idx],
        K=Ks[idx],
        m=m,
        Ebar=ebar[idx],
        dEbar=debar[idx],
        linf_eps_lo=lo_e,
        linf_eps_hi=hi_e,
        linf_eta_lo=lo_h,
        linf_eta_hi=hi_h,
        eps=float(eps),
        eta=float(eta),
        beta=float(beta_val),
        E0=float(traj.field_mags[0].max()),
        dEbar_exact=bool(exact),
    )
