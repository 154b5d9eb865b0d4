"""Velocity-Verlet time stepping with per-step field recording.

The step size is tied to the discrete scale (dt = eps/kappa) so that the
short-window time averages downstream always have at least kappa quadrature
nodes per window.  Trajectories record every step's snapshot and per-particle
field magnitude (optionally the field vectors), which is what all windowed
diagnostics consume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ensemble import ParticleEnsemble, epsilon_scale
from .forces import CollisionDetected, ForceKernel, _sum_field

_ENERGY_BLOCK = 1 << 22


class NonFiniteState(RuntimeError):
    """A coordinate became non-finite during integration."""


@dataclass(frozen=True)
class CollisionInfo:
    time: float
    pair: tuple
    distance: float


@dataclass
class Trajectory:
    """Uniformly sampled trajectory of an interacting ensemble.

    times[k] = k*dt; positions/velocities are (n_times, n, dim); field_mags
    holds |E(X_i)| per snapshot, field_vecs the vectors when recorded.
    A trajectory that aborted on a collision keeps the completed prefix and
    carries the diagnosis in `collision`.
    """

    dt: float
    eps: float
    kernel: ForceKernel
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    field_mags: np.ndarray
    field_vecs: np.ndarray | None = None
    collision: CollisionInfo | None = None

    @property
    def n_times(self) -> int:
        return self.times.shape[0]

    @property
    def n(self) -> int:
        return self.positions.shape[1]

    @property
    def dim(self) -> int:
        return self.positions.shape[2]

    @property
    def completed(self) -> bool:
        return self.collision is None

    def snapshot(self, k: int) -> ParticleEnsemble:
        return ParticleEnsemble(self.dim, self.positions[k], self.velocities[k])

    def index_of_time(self, t: float, tol: float = 1e-9) -> int:
        """Index of the sample instant equal to t (the grid is uniform)."""
        k = int(round(t / self.dt))
        if k < 0 or k >= self.n_times or abs(self.times[k] - t) > tol * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not on the recorded step grid")
        return k

    def save(self, path) -> None:
        """Columnar binary dump (single .npz file)."""
        np.savez_compressed(
            path,
            dt=self.dt,
            eps=self.eps,
            kernel=np.array([self.kernel.alpha, self.kernel.sign, self.kernel.delta]),
            times=self.times,
            positions=self.positions,
            velocities=self.velocities,
            field_mags=self.field_mags,
            field_vecs=(
                self.field_vecs if self.field_vecs is not None else np.empty(0)
            ),
        )

    @classmethod
    def load(cls, path) -> "Trajectory":
        z = np.load(path)
        a, sgn, delta = z["kernel"]
        vecs = z["field_vecs"]
        return cls(
            dt=float(z["dt"]),
            eps=float(z["eps"]),
            kernel=ForceKernel(float(a), int(sgn), float(delta)),
            times=z["times"],
            positions=z["positions"],
            velocities=z["velocities"],
            field_mags=z["field_mags"],
            field_vecs=None if vecs.size == 0 else vecs,
        )


def verlet_step(
    ens: ParticleEnsemble, dt: float, kernel: ForceKernel, collision_tol: float = 0.0
) -> ParticleEnsemble:
    """One velocity-Verlet step: half kick, drift, half kick.

    Time-reversible (stepping dt then -dt returns the state); total momentum
    is conserved because the pair kicks cancel in each half step.
    """
    if dt == 0.0:
        return ens
    E0 = _sum_field(
        ens.positions, ens.positions, kernel,
        self_index=np.arange(ens.n), collision_tol=collision_tol,
    )
    v_half = ens.velocities + 0.5 * dt * E0
    x_new = ens.positions + dt * v_half
    E1 = _sum_field(
        x_new, x_new, kernel,
        self_index=np.arange(ens.n), collision_tol=collision_tol,
    )
    v_new = v_half + 0.5 * dt * E1
    return ParticleEnsemble(ens.dim, x_new, v_new)


def run(
    ens0: ParticleEnsemble,
    T: float,
    kernel: ForceKernel,
    steps_per_epsilon: int = 8,
    eps: float | None = None,
    record_vectors: bool = False,
    collision_tol_factor: float = 1e-3,
) -> Trajectory:
    """Integrate to horizon T with dt = eps/steps_per_epsilon.

    eps defaults to the discrete scale computed from the initial max-norm
    support radius.  On a collision (some pair below collision_tol_factor*eps
    with the exact kernel) the run aborts cleanly and returns the partial
    trajectory with the diagnosis attached; a non-finite coordinate raises
    NonFiniteState.
    """
    if not T > 0.0:
        raise ValueError("horizon T must be positive")
    if steps_per_epsilon < 2:
        raise ValueError("need at least 2 steps per epsilon window")
    if eps is None:
        R0 = float(np.max(np.abs(ens0.positions)))
        eps = epsilon_scale(R0, ens0.n, ens0.dim)
    dt = eps / steps_per_epsilon
    n_steps = int(math.ceil(T / dt - 1e-12))
    n, d = ens0.n, ens0.dim
    tol = collision_tol_factor * eps if kernel.delta == 0.0 else 0.0
    self_idx = np.arange(n)

    pos = np.empty((n_steps + 1, n, d))
    vel = np.empty((n_steps + 1, n, d))
    mags = np.empty((n_steps + 1, n))
    vecs = np.empty((n_steps + 1, n, d)) if record_vectors else None

    X = ens0.positions.copy()
    V = ens0.velocities.copy()
    collision = None
    try:
        E = _sum_field(X, X, kernel, self_index=self_idx, collision_tol=tol)
    except CollisionDetected as exc:
        raise CollisionDetected(exc.pair, exc.distance, time=0.0) from None

    k_done = 0
    for k in range(n_steps + 1):
        pos[k] = X
        vel[k] = V
        mags[k] = np.linalg.norm(E, axis=1)
        if vecs is not None:
            vecs[k] = E
        k_done = k
        if k == n_steps:
            break
        v_half = V + 0.5 * dt * E
        X = X + dt * v_half
        try:
            E = _sum_field(X, X, kernel, self_index=self_idx, collision_tol=tol)
        except CollisionDetected as exc:
            collision = CollisionInfo((k + 1) * dt, exc.pair, exc.distance)
            break
        V = v_half + 0.5 * dt * E
        if not (np.isfinite(X).all() and np.isfinite(V).all()):
            raise NonFiniteState(f"non-finite state at t={(k + 1) * dt:.6g}")

    m = k_done + 1
    return Trajectory(
        dt=dt,
        eps=eps,
        kernel=kernel,
        times=dt * np.arange(m),
        positions=pos[:m],
        velocities=vel[:m],
        field_mags=mags[:m],
        field_vecs=None if vecs is None else vecs[:m],
        collision=collision,
    )


def pair_potential(rho, kernel: ForceKernel):
    """Scalar potential phi with F = -grad phi for the (regularized) kernel."""
    rho = np.asarray(rho, dtype=float)
    a, delta = kernel.alpha, kernel.delta
    if delta == 0.0:
        psi = rho ** (1.0 - a) / (1.0 - a)
    else:
        u = rho + delta
        psi = (u ** (1.0 - a) - delta ** (1.0 - a)) / (1.0 - a) + (delta / a) * (
            u ** (-a) - delta ** (-a)
        )
    return -kernel.sign * psi


def total_energy(ens: ParticleEnsemble, kernel: ForceKernel) -> float:
    """Conserved energy per unit mass: (1/N) sum |V|^2/2 + pair potential."""
    ke = 0.5 * float(np.mean(np.sum(ens.velocities**2, axis=1)))
    X = ens.positions
    n = ens.n
    pe = 0.0
    block = max(1, _ENERGY_BLOCK // max(1, n))
    for s in range(0, n, block):
        e = min(n, s + block)
        diff = X[s:e, None, :] - X[None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        rows = np.arange(e - s)
        dist[rows, np.arange(s, e)] = np.nan
        phi = pair_potential(dist, kernel)
        pe += float(np.nansum(phi))
    return ke + pe / (2.0 * n * n)
