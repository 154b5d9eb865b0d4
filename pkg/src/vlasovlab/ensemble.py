"""Phase-space ensembles, stratified ("quiet start") initialization, and the
discrete scale of the N-particle problem."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import truncnorm

DENSITY_KINDS = ("uniform-box", "product-gaussian-truncated", "two-stream")


def epsilon_scale(R0: float, N: int, d: int) -> float:
    """Discrete scale R0 / N**(1/(2d)) of an N-particle system in d dimensions.

    Roughly the smallest inter-particle separation (and, with order-one
    velocities, the shortest time interval) the discrete dynamics can resolve.
    """
    if d not in (1, 2, 3):
        raise ValueError(f"invalid dimension d={d}: must be 1, 2 or 3")
    if N < 2:
        raise ValueError(f"need at least 2 particles, got N={N}")
    if not R0 > 0:
        raise ValueError(f"support radius must be positive, got R0={R0}")
    return R0 / N ** (1.0 / (2 * d))


@dataclass(frozen=True)
class ParticleEnsemble:
    """Immutable snapshot of N identical particles, each of weight 1/N.

    Positions and velocities are (n, dim) float arrays; the arrays are copied
    and marked read-only so snapshots can be shared across threads.
    """

    dim: int
    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"invalid dimension d={self.dim}: must be 1, 2 or 3")
        pos = np.array(self.positions, dtype=float, copy=True)
        vel = np.array(self.velocities, dtype=float, copy=True)
        if pos.ndim == 1:
            pos = pos[:, None]
        if vel.ndim == 1:
            vel = vel[:, None]
        if pos.shape != vel.shape or pos.ndim != 2 or pos.shape[1] != self.dim:
            raise ValueError(
                f"positions {pos.shape} and velocities {vel.shape} must both be "
                f"(n, {self.dim}) arrays"
            )
        if pos.shape[0] < 2:
            raise ValueError("an ensemble needs at least 2 particles")
        if not (np.isfinite(pos).all() and np.isfinite(vel).all()):
            raise ValueError("non-finite phase-space coordinates")
        pos.setflags(write=False)
        vel.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "velocities", vel)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def weight(self) -> float:
        """Mass carried by each particle; identical particles, total mass 1."""
        return 1.0 / self.n

    def phase_points(self) -> np.ndarray:
        """(n, 2*dim) array of concatenated (position, velocity) rows."""
        return np.concatenate([self.positions, self.velocities], axis=1)


@dataclass(frozen=True)
class InitialDensitySpec:
    """Compactly supported product density on phase space.

    Kinds:
      * ``uniform-box``: uniform on [-R0_x, R0_x]^d x [-R0_v, R0_v]^d.
      * ``product-gaussian-truncated``: centered product Gaussian with scales
        (sigma_x, sigma_v), truncated to the same box and renormalized.
      * ``two-stream``: uniform in position; first velocity axis is an equal
        mixture of two uniform blocks centered at +-v_center with half-width
        v_halfwidth; remaining velocity axes uniform.

    Total mass is 1 and the density vanishes outside the max-norm box by
    construction.
    """

    kind: str
    dim: int = 1
    R0_x: float = 1.0
    R0_v: float = 1.0
    sigma_x: float = 0.5
    sigma_v: float = 0.5
    v_center: float = 0.5
    v_halfwidth: float = 0.25

    def __post_init__(self):
        if self.kind not in DENSITY_KINDS:
            raise ValueError(
                f"unsupported density kind {self.kind!r}; known: {DENSITY_KINDS}"
            )
        if self.dim not in (1, 2, 3):
            raise ValueError(f"invalid dimension d={self.dim}")
        if not (self.R0_x > 0 and self.R0_v > 0):
            raise ValueError("support radii must be positive")
        if self.kind == "product-gaussian-truncated" and not (
            self.sigma_x > 0 and self.sigma_v > 0
        ):
            raise ValueError("gaussian scales must be positive")
        if self.kind == "two-stream":
            if not self.v_halfwidth > 0:
                raise ValueError("stream half-width must be positive")
            if abs(self.v_center) + self.v_halfwidth > self.R0_v + 1e-12:
                raise ValueError(
                    "two-stream blocks must fit inside the velocity support box"
                )


def _uniform_quantile(R):
    return lambda u: R * (2.0 * np.asarray(u, dtype=float) - 1.0)


def _uniform_pdf(R):
    def pdf(x):
        x = np.asarray(x, dtype=float)
        return np.where(np.abs(x) <= R, 1.0 / (2.0 * R), 0.0)

    return pdf


def _truncnorm_quantile(R, sigma):
    a, b = -R / sigma, R / sigma
    return lambda u: truncnorm.ppf(np.asarray(u, dtype=float), a, b, scale=sigma)


def _truncnorm_pdf(R, sigma):
    a, b = -R / sigma, R / sigma

    def pdf(x):
        return truncnorm.pdf(np.asarray(x, dtype=float), a, b, scale=sigma)

    return pdf


def _two_stream_quantile(c, w):
    def q(u):
        u = np.asarray(u, dtype=float)
        lower = -c - w + 4.0 * w * u
        upper = c - w + 4.0 * w * (u - 0.5)
        return np.where(u < 0.5, lower, upper)

    return q


def _two_stream_pdf(c, w):
    def pdf(v):
        v = np.asarray(v, dtype=float)
        in_block = (np.abs(v - c) <= w) | (np.abs(v + c) <= w)
        return np.where(in_block, 1.0 / (4.0 * w), 0.0)

    return pdf


def axis_quantile(spec: InitialDensitySpec, axis: int):
    """Quantile function of the marginal on one of the 2*dim phase axes.

    Axes 0..dim-1 are positions, dim..2*dim-1 velocities; the two-stream
    mixture sits on the first velocity axis.
    """
    d = spec.dim
    if not 0 <= axis < 2 * d:
        raise ValueError(f"axis {axis} out of range for dim {d}")
    if axis < d:
        if spec.kind == "product-gaussian-truncated":
            return _truncnorm_quantile(spec.R0_x, spec.sigma_x)
        return _uniform_quantile(spec.R0_x)
    if spec.kind == "product-gaussian-truncated":
        return _truncnorm_quantile(spec.R0_v, spec.sigma_v)
    if spec.kind == "two-stream" and axis == d:
        return _two_stream_quantile(spec.v_center, spec.v_halfwidth)
    return _uniform_quantile(spec.R0_v)


def axis_pdf(spec: InitialDensitySpec, axis: int):
    """Marginal density on one phase axis (same axis convention as above)."""
    d = spec.dim
    if not 0 <= axis < 2 * d:
        raise ValueError(f"axis {axis} out of range for dim {d}")
    if axis < d:
        if spec.kind == "product-gaussian-truncated":
            return _truncnorm_pdf(spec.R0_x, spec.sigma_x)
        return _uniform_pdf(spec.R0_x)
    if spec.kind == "product-gaussian-truncated":
        return _truncnorm_pdf(spec.R0_v, spec.sigma_v)
    if spec.kind == "two-stream" and axis == d:
        return _two_stream_pdf(spec.v_center, spec.v_halfwidth)
    return _uniform_pdf(spec.R0_v)


def lattice_side(N: int, p: int) -> int:
    """Largest integer k with k**p <= N."""
    k = max(1, int(round(N ** (1.0 / p))))
    while (k + 1) ** p <= N:
        k += 1
    while k**p > N and k > 1:
        k -= 1
    return k


def quiet_start_init(
    spec: InitialDensitySpec, N: int, seed: int = 0, jitter: float = 0.0
) -> ParticleEnsemble:
    """Deterministic stratified placement: one particle per equal-mass cell.

    Each of the 2*dim phase axes is split into k equal-mass intervals
    (k = largest integer with k**(2*dim) <= N; the request is padded down,
    never up, so the actual particle count is k**(2*dim)).  The particle
    sits at the mass midpoint of its cell, optionally perturbed by a
    seed-deterministic uniform jitter of at most 10% of the local cell width
    (applied in mass space, so particles stay inside their cells and the
    declared support).

    Each position coordinate additionally carries a deterministic sub-cell
    stagger (at most 10% of the cell width, indexed by the partner velocity
    coordinate): a pure product lattice would put k**dim particles at
    identical positions, which the exact singular force cannot evaluate.
    Same-velocity-row spacing is untouched, so the minimal phase-space
    separation is still exactly one cell width and m(0) stays bounded
    uniformly in N.
    """
    d = spec.dim
    if not 0.0 <= jitter <= 0.1:
        raise ValueError("jitter must lie in [0, 0.1] (fraction of cell width)")
    k = lattice_side(N, 2 * d)
    if k < 2:
        raise ValueError(f"N={N} too small for a {2 * d}-dimensional lattice")
    mid = (np.arange(k) + 0.5) / k
    grids = np.meshgrid(*([mid] * (2 * d)), indexing="ij")
    u = np.stack([g.ravel() for g in grids], axis=1)
    for axis in range(d):
        # stagger in (-0.1, 0.1) cell units, one distinct value per v-row
        u[:, axis] += 0.2 * (u[:, d + axis] - 0.5) / k
    if jitter > 0.0:
        rng = np.random.default_rng(seed)
        u = u + rng.uniform(-1.0, 1.0, size=u.shape) * (jitter / k)
    pts = np.empty_like(u)
    for axis in range(2 * d):
        pts[:, axis] = axis_quantile(spec, axis)(u[:, axis])
    return ParticleEnsemble(d, pts[:, :d], pts[:, d:])
