"""Dyadic shell decompositions around an anchor particle.

These are the combinatorial devices behind the windowed force estimates:
position shells of base radius 3*eps*K, a velocity redecomposition of the
innermost position cell with base 3*eps*Ebar, a further split of the slowest
group by a second-order threshold, persistence ("stability") of shell
membership over one short window, and explicit covering-count bounds that
make the cardinality inequalities falsifiable.

Shell boundaries are half-open (left-exclusive, right-inclusive) everywhere;
shells beyond the logarithmic cap are merged into the last shell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ensemble import ParticleEnsemble
from .integrate import Trajectory


@dataclass
class ShellPartition:
    """Partition of `scope` into a remainder (<= base) plus dyadic shells.

    Shell k holds indices with base * 2^(k-1) < dist <= base * 2^k for
    k = 1..k_max (the last shell also absorbs anything beyond the cap).
    For velocity partitions, `position_radius` records the radius of the
    position cell the subset came from (needed by the covering bounds).
    """

    anchor: int
    kind: str
    base_radius: float
    k_max: int
    shells: list
    remainder: np.ndarray
    scope: np.ndarray
    n_total: int
    position_radius: float | None = None

    def members(self, k: int) -> np.ndarray:
        for kk, idx in self.shells:
            if kk == k:
                return idx
        raise KeyError(f"no shell {k}")

    def check_partition_laws(self, dists: np.ndarray | None = None) -> bool:
        """Disjointness + exhaustiveness of remainder and shells over scope."""
        parts = [self.remainder] + [idx for _, idx in self.shells]
        cat = np.concatenate(parts) if parts else np.empty(0, dtype=int)
        return (
            np.unique(cat).size == cat.size
            and np.array_equal(np.sort(cat), np.sort(self.scope))
        )


def _dyadic_split(scope, dists, base, k_max):
    if base <= 0.0:
        return [(k, np.empty(0, dtype=int)) for k in range(1, k_max + 1)], scope.copy()
    rem = scope[dists <= base]
    shells = []
    with np.errstate(divide="ignore"):
        ks = np.ceil(np.log2(np.maximum(dists, 1e-300) / base)).astype(int)
    ks = np.clip(ks, 1, k_max)
    outside = dists > base
    for k in range(1, k_max + 1):
        shells.append((k, scope[outside & (ks == k)]))
    return shells, rem


def position_shells(
    ens: ParticleEnsemble, anchor: int, eps: float, K: float
) -> ShellPartition:
    """Split all j != anchor by position distance with base radius 3*eps*K.

    The cap is ceil(log2(R / (4*eps*K))) with R the measured support radius,
    floored at one shell.
    """
    if not K > 0.0:
        raise ValueError("K must be positive")
    scope = np.setdiff1d(np.arange(ens.n), [anchor])
    dists = np.linalg.norm(ens.positions[scope] - ens.positions[anchor], axis=1)
    base = 3.0 * eps * K
    R = float(np.linalg.norm(ens.positions, axis=1).max())
    k_max = max(1, int(np.ceil(np.log2(max(R, 1e-300) / (4.0 * eps * K)))))
    shells, rem = _dyadic_split(scope, dists, base, k_max)
    return ShellPartition(
        anchor=anchor,
        kind="position",
        base_radius=base,
        k_max=k_max,
        shells=shells,
        remainder=rem,
        scope=scope,
        n_total=ens.n,
    )


def velocity_shells(
    ens: ParticleEnsemble, anchor: int, subset, eps: float, Ebar: float
) -> ShellPartition:
    """Redecompose a position cell by velocity distance, base 3*eps*Ebar.

    With Ebar = 0 every index lands in the remainder.  The cap is
    ceil(log2(K / (eps*Ebar))) with K the measured speed bound.
    """
    subset = np.asarray(subset, dtype=int)
    dists = np.linalg.norm(ens.velocities[subset] - ens.velocities[anchor], axis=1)
    base = 3.0 * eps * Ebar
    K = float(np.linalg.norm(ens.velocities, axis=1).max())
    if Ebar > 0.0:
        k_max = max(1, int(np.ceil(np.log2(max(K, 1e-300) / (eps * Ebar)))))
    else:
        k_max = 0
    shells, rem = (
        _dyadic_split(subset, dists, base, k_max) if k_max > 0 else ([], subset.copy())
    )
    pos_radius = float(
        np.linalg.norm(ens.positions[subset] - ens.positions[anchor], axis=1).max()
    ) if subset.size else 0.0
    return ShellPartition(
        anchor=anchor,
        kind="velocity",
        base_radius=base,
        k_max=k_max,
        shells=shells,
        remainder=rem,
        scope=subset.copy(),
        n_total=ens.n,
        position_radius=pos_radius,
    )


def q0_split(
    ens: ParticleEnsemble, anchor: int, subset, eps: float, K: float, dEbar: float
):
    """Split the slowest velocity group at the threshold 6*eps^2*K*dEbar.

    Members at or above the threshold go to the first group (>= convention).
    """
    if dEbar < 0.0:
        raise ValueError("dEbar must be nonnegative")
    subset = np.asarray(subset, dtype=int)
    thr = 6.0 * eps * eps * K * dEbar
    dv = np.linalg.norm(ens.velocities[subset] - ens.velocities[anchor], axis=1)
    return subset[dv >= thr], subset[dv < thr]


@dataclass
class StabilityReport:
    violations: list
    n_checked: int

    @property
    def ok(self) -> bool:
        return not self.violations


def shell_stability_check(
    traj: Trajectory, partition: ShellPartition, window
) -> StabilityReport:
    """Verify shell membership bounds persist across one short window.

    For a partition anchored at t1 and any sampled t in [t1, t0] with
    t0 - t1 <= eps: position-shell members stay at distance >= base/3 *
    2^(k-1), the position remainder stays within 5/3 * base, and
    velocity-shell members keep |V_j - V_anchor| > base/3 * 2^(k-1).
    """
    t1, t0 = window
    if t0 < t1:
        raise ValueError("window must satisfy t1 <= t0")
    if t0 - t1 > traj.eps * (1.0 + 1e-9):
        raise ValueError(
            f"invalid window: length {t0 - t1} exceeds eps={traj.eps}"
        )
    i1, i0 = traj.index_of_time(t1), traj.index_of_time(t0)
    data = traj.positions if partition.kind == "position" else traj.velocities
    anchor = partition.anchor
    violations = []
    checked = 0
    for k, idx in partition.shells:
        if idx.size == 0:
            continue
        bound = partition.base_radius / 3.0 * 2.0 ** (k - 1)
        for s in range(i1, i0 + 1):
            d = np.linalg.norm(data[s, idx] - data[s, anchor], axis=1)
            checked += idx.size
            if partition.kind == "position":
                bad = d < bound * (1.0 - 1e-12)
            else:
                bad = d <= bound * (1.0 - 1e-12)
            for j, val in zip(idx[bad], d[bad]):
                violations.append(
                    {"kind": partition.kind, "k": int(k), "j": int(j),
                     "t": float(traj.times[s]), "value": float(val),
                     "bound": float(bound)}
                )
    if partition.kind == "position" and partition.remainder.size:
        cap = 5.0 / 3.0 * partition.base_radius
        idx = partition.remainder
        for s in range(i1, i0 + 1):
            d = np.linalg.norm(data[s, idx] - data[s, anchor], axis=1)
            checked += idx.size
            bad = d > cap * (1.0 + 1e-12)
            for j, val in zip(idx[bad], d[bad]):
                violations.append(
                    {"kind": "position-remainder", "k": 0, "j": int(j),
                     "t": float(traj.times[s]), "value": float(val),
                     "bound": float(cap)}
                )
    return StabilityReport(violations=violations, n_checked=checked)


def axis_cover_count(radius: float, scale: float) -> int:
    """Number of half-open lattice cells of side 2*scale (anchored at the
    center) meeting a closed interval [-radius, radius]."""
    side = 2.0 * scale
    return int(np.floor(radius / side)) + int(np.ceil(radius / side)) + 1


@dataclass
class CountBoundReport:
    entries: list

    @property
    def ok(self) -> bool:
        return all(e["ratio"] is None or e["ratio"] <= 1.0 + 1e-12 for e in self.entries)

    def max_ratio(self) -> float:
        ratios = [e["ratio"] for e in self.entries if e["ratio"] is not None]
        return max(ratios) if ratios else 0.0


def shell_count_bound_check(
    partition: ShellPartition,
    linf_upper: float,
    eps: float,
    K_or_Ebar: float,
    d: int,
) -> CountBoundReport:
    """Compare each shell's cardinality with an explicit covering bound.

    A shell region is covered by boxes of side 2*eps combinatorially (exact
    per-axis counts, no anonymous constants); any such box holds at most
    linf_upper * (2*eps)^(2d) * N particles.  Empty shells report a ratio of
    None (n/a).  Bounds are capped at N.
    """
    n = partition.n_total
    cap_mass = linf_upper * (2.0 * eps) ** (2 * d) * n
    entries = []

    def add(kind, k, count, rx, rv):
        boxes = axis_cover_count(rx, eps) ** d * axis_cover_count(rv, eps) ** d
        bound = min(float(n), cap_mass * boxes)
        ratio = None if count == 0 else count / bound
        entries.append(
            {"kind": kind, "k": int(k), "count": int(count),
             "bound": float(bound), "ratio": ratio}
        )

    if partition.kind == "position":
        K = K_or_Ebar
        add("position-remainder", 0, partition.remainder.size,
            partition.base_radius, 2.0 * K)
        for k, idx in partition.shells:
            add("position", k, idx.size, partition.base_radius * 2.0**k, 2.0 * K)
    else:
        rx = partition.position_radius or 0.0
        add("velocity-remainder", 0, partition.remainder.size,
            rx, partition.base_radius)
        for k, idx in partition.shells:
            add("velocity", k, idx.size, rx, partition.base_radius * 2.0**k)
    return CountBoundReport(entries=entries)


@dataclass
class TwoScalePartition:
    """Outer shells at the coarse scale plus a fine redecomposition of the
    innermost coarse cell; exhaustive and disjoint over all j != anchor."""

    outer: ShellPartition
    inner: ShellPartition

    def check_partition_laws(self) -> bool:
        parts = [idx for _, idx in self.outer.shells]
        parts += [self.inner.remainder] + [idx for _, idx in self.inner.shells]
        cat = np.concatenate(parts)
        return (
            np.unique(cat).size == cat.size
            and np.array_equal(np.sort(cat), np.sort(self.outer.scope))
        )


def two_scale_shells(
    ens: ParticleEnsemble, anchor: int, eps: float, eta: float, K: float
) -> TwoScalePartition:
    """Coarse shells at base 3*eta*K; the coarse remainder redecomposed at
    base 3*eps*K with at most ceil(log2(eta/eps)) fine shells."""
    if eta <= eps:
        raise ValueError(f"scale order violated: eta={eta} must exceed eps={eps}")
    outer = position_shells(ens, anchor, eta, K)
    k_inner = max(1, int(np.ceil(np.log2(eta / eps))))
    sub = outer.remainder
    dists = np.linalg.norm(ens.positions[sub] - ens.positions[anchor], axis=1)
    shells, rem = _dyadic_split(sub, dists, 3.0 * eps * K, k_inner)
    inner = ShellPartition(
        anchor=anchor,
        kind="position",
        base_radius=3.0 * eps * K,
        k_max=k_inner,
        shells=shells,
        remainder=rem,
        scope=sub.copy(),
        n_total=ens.n,
    )
    return TwoScalePartition(outer=outer, inner=inner)


def shell_force_statistic(
    partition: ShellPartition, eps: float, K: float, alpha: float
) -> float:
    """Empirical shell sum (1/N) * sum_k |C_k| * (eps*K*2^(k-1))^(-alpha).

    This is the quantity the dyadic argument bounds by the interpolated
    density-support product; comparing it against that product with a fitted
    constant is the executable form of the windowed-force estimate.
    """
    total = 0.0
    for k, idx in partition.shells:
        if idx.size:
            total += idx.size * (eps * K * 2.0 ** (k - 1)) ** (-alpha)
    return total / partition.n_total
