"""Singular pairwise force fields and their regularizations.

The central kernel is r -> sign * r / (|r| + delta)^(1+alpha) with
0 < alpha < 1; delta = 0 gives the exact singular kernel, delta > 0 the
regularized one.  All ensemble fields are plain O(N) pair sums per target,
evaluated with numpy's pairwise-summation reductions in a fixed source order
(chunked over targets to bound temporary memory).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .ensemble import ParticleEnsemble

# Pairwise work per target block; keeps temporaries around ~100 MB.
_PAIR_BLOCK = 1 << 22


class CollisionDetected(RuntimeError):
    """A pair of particles fell below the collision threshold (exact kernel)."""

    def __init__(self, pair, distance, time=None):
        self.pair = (int(pair[0]), int(pair[1]))
        self.distance = float(distance)
        self.time = None if time is None else float(time)
        msg = (
            f"collision detected: particles {self.pair} at distance "
            f"{self.distance:.6e}"
        )
        if time is not None:
            msg += f" at t={self.time:.6g}"
        super().__init__(msg)


@dataclass(frozen=True)
class ForceKernel:
    """Central force r -> sign * r / (|r| + delta)^(1 + alpha).

    alpha must lie strictly in (0, 1); sign is +1 (repulsive) or -1
    (attractive); delta >= 0 is the regularization length (0 = exact).
    """

    alpha: float
    sign: int = 1
    delta: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(
                f"alpha={self.alpha} outside (0, 1); steeper kernels are out of scope"
            )
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 (repulsive) or -1 (attractive)")
        if self.delta < 0.0:
            raise ValueError("regularization length must be >= 0")

    def regularized(self, eps: float) -> "ForceKernel":
        """Same kernel with the regularization length replaced by eps."""
        if not eps > 0.0:
            raise ValueError("regularization scale must be positive")
        return replace(self, delta=float(eps))


def pair_force(r, kernel: ForceKernel) -> np.ndarray:
    """Force of a unit source at the origin on a target displaced by r.

    Odd in r; the magnitude is bounded by |r|**(-alpha).
    """
    r = np.asarray(r, dtype=float)
    mag = np.linalg.norm(r, axis=-1, keepdims=True)
    if kernel.delta == 0.0 and np.any(mag == 0.0):
        raise ValueError("singular input: zero displacement with the exact kernel")
    return kernel.sign * r / (mag + kernel.delta) ** (1.0 + kernel.alpha)


def _sum_field(targets, sources, kernel, self_index=None, collision_tol=0.0):
    """(1/N) * sum over sources of the pair kernel, per target.

    targets: (m, d); sources: (n, d). self_index, if given, is an (m,) array
    of source indices excluded per target (used when targets are the source
    particles themselves).  Returns (m, d).  Raises CollisionDetected when the
    exact kernel sees a non-self pair at distance 0, or below collision_tol.
    """
    targets = np.asarray(targets, dtype=float)
    sources = np.asarray(sources, dtype=float)
    m, d = targets.shape
    n = sources.shape[0]
    expo = 1.0 + kernel.alpha
    out = np.empty((m, d), dtype=float)
    block = max(1, _PAIR_BLOCK // max(1, n * d))
    for s in range(0, m, block):
        e = min(m, s + block)
        diff = targets[s:e, None, :] - sources[None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        if self_index is not None:
            rows = np.arange(e - s)
            cols = self_index[s:e]
            dist[rows, cols] = np.inf
        if kernel.delta == 0.0:
            jmin = np.unravel_index(np.argmin(dist), dist.shape)
            dmin = dist[jmin]
            if dmin == 0.0 or dmin < collision_tol:
                i = jmin[0] + s if self_index is None else int(self_index[jmin[0] + s])
                raise CollisionDetected((i, jmin[1]), dmin)
        with np.errstate(divide="ignore", over="ignore"):
            w = (dist + kernel.delta) ** (-expo)
        if self_index is not None:
            w[rows, cols] = 0.0
        elif kernel.delta > 0.0:
            # Regularized self-term at a coincident point is 0/delta = 0.
            w[dist == 0.0] = 0.0
        out[s:e] = np.einsum("ij,ijk->ik", w, diff)
    return kernel.sign * out / n


def field_exact(
    ens: ParticleEnsemble, i: int, kernel: ForceKernel, collision_tol: float = 0.0
) -> np.ndarray:
    """Exact pairwise field (1/N) sum_{j != i} F(X_i - X_j) at particle i."""
    if not 0 <= i < ens.n:
        raise IndexError(f"particle index {i} out of range")
    target = ens.positions[i : i + 1]
    out = _sum_field(
        target,
        ens.positions,
        kernel,
        self_index=np.array([i]),
        collision_tol=collision_tol,
    )
    return out[0]


def fields_all(
    ens: ParticleEnsemble, kernel: ForceKernel, collision_tol: float = 0.0
) -> np.ndarray:
    """Exact field at every particle, (n, dim).  One O(N^2) pass."""
    return _sum_field(
        ens.positions,
        ens.positions,
        kernel,
        self_index=np.arange(ens.n),
        collision_tol=collision_tol,
    )


def field_at(ens: ParticleEnsemble, x, kernel: ForceKernel) -> np.ndarray:
    """Field at arbitrary points, summing over all N particles.

    With delta > 0 a point sitting exactly on a particle contributes a zero
    self-term; with the exact kernel it raises CollisionDetected.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x[None, :] if single else x
    out = _sum_field(pts, ens.positions, kernel)
    return out[0] if single else out


def field_regularized(
    ens: ParticleEnsemble, x, eps: float, kernel: ForceKernel
) -> np.ndarray:
    """Field at x with the kernel regularized at scale eps (delta := eps)."""
    return field_at(ens, x, kernel.regularized(eps))


def grad_field_regularized(
    ens: ParticleEnsemble, x, eps: float, kernel: ForceKernel
) -> np.ndarray:
    """Analytic Jacobian (d x d) of the eps-regularized field at a point x.

    d/dx [ r (|r|+eps)^-(1+a) ] =
        (|r|+eps)^-(1+a) I - (1+a) (|r|+eps)^-(2+a) (r r^T)/|r|,
    with the anisotropic term vanishing continuously as r -> 0.
    """
    if not eps > 0.0:
        raise ValueError("regularization scale must be positive")
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != ens.dim:
        raise ValueError(f"point has dimension {x.shape[0]}, expected {ens.dim}")
    a = kernel.alpha
    diff = x[None, :] - ens.positions
    dist = np.linalg.norm(diff, axis=1)
    s = dist + eps
    iso = np.sum(s ** (-(1.0 + a)))
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(dist > 0.0, s ** (-(2.0 + a)) / np.maximum(dist, 1e-300), 0.0)
    aniso = np.einsum("n,ni,nj->ij", coef, diff, diff)
    jac = iso * np.eye(ens.dim) - (1.0 + a) * aniso
    return kernel.sign * jac / ens.n
