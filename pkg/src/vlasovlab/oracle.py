"""Desk-scale 1D-1V continuum reference.

A Strang-split semi-Lagrangian transport solver on a tensor phase grid, the
self-consistent mean-field force computed from the spatial density, and
weak-distance / force-convergence statistics comparing a particle run with
the grid solution.  Restricted to one spatial dimension: a 2D phase grid is
cheap, and the convergence statements being exercised are dimension-generic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .ensemble import InitialDensitySpec, ParticleEnsemble, axis_pdf
from .forces import ForceKernel
from .integrate import Trajectory


class SupportOverflow(RuntimeError):
    """The transported density reached the buffered edge of the grid."""


@dataclass
class GridDensity:
    """Nonnegative phase-space density on a uniform tensor grid (d = 1).

    x and v hold cell centers; values has shape (nx, nv).  Total mass is the
    cell-sum times the cell area and is kept at 1 (to 1e-8) by the solver.
    """

    x: np.ndarray
    v: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.x.size, self.v.size):
            raise ValueError("values must have shape (nx, nv)")

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def dv(self) -> float:
        return float(self.v[1] - self.v[0])

    def cell_area(self) -> float:
        return self.dx * self.dv

    def mass(self) -> float:
        return float(self.values.sum() * self.cell_area())

    def rho(self) -> np.ndarray:
        """Spatial density: integral of f over velocity."""
        return self.values.sum(axis=1) * self.dv

    def copy(self) -> "GridDensity":
        return GridDensity(self.x.copy(), self.v.copy(), self.values.copy())

    def edge_mass(self, cells: int = 2) -> float:
        """Mass within `cells` of the grid boundary (overflow sentinel)."""
        m = np.zeros_like(self.values, dtype=bool)
        m[:cells, :] = m[-cells:, :] = True
        m[:, :cells] = m[:, -cells:] = True
        return float(self.values[m].sum() * self.cell_area())

    def save(self, prefix) -> None:
        """Flat binary (float64, C order) plus a JSON grid header."""
        self.values.astype(np.float64).tofile(f"{prefix}.bin")
        header = {
            "nx": int(self.x.size),
            "nv": int(self.v.size),
            "x0": float(self.x[0]),
            "v0": float(self.v[0]),
            "dx": self.dx,
            "dv": self.dv,
            "order": "C",
            "dtype": "float64",
        }
        with open(f"{prefix}.json", "w") as fh:
            json.dump(header, fh, sort_keys=True)

    @classmethod
    def load(cls, prefix) -> "GridDensity":
        with open(f"{prefix}.json") as fh:
            h = json.load(fh)
        values = np.fromfile(f"{prefix}.bin", dtype=np.float64).reshape(
            h["nx"], h["nv"]
        )
        x = h["x0"] + h["dx"] * np.arange(h["nx"])
        v = h["v0"] + h["dv"] * np.arange(h["nv"])
        return cls(x, v, values)


def grid_from_spec(
    spec: InitialDensitySpec, nx: int, nv: int, pad: float = 2.0
) -> GridDensity:
    """Sample the initial product density on a buffered grid (d = 1 only).

    The grid spans pad times the support radii, so the support sits in the
    interior with a buffer of at least (pad - 1)/pad of the half-extent.
    """
    if spec.dim != 1:
        raise ValueError("the grid reference is one-dimensional only")
    if pad < 1.2:
        raise ValueError("need at least a 10% support buffer on the grid")
    Lx, Lv = pad * spec.R0_x, pad * spec.R0_v
    x = np.linspace(-Lx, Lx, nx, endpoint=False) + Lx / nx
    v = np.linspace(-Lv, Lv, nv, endpoint=False) + Lv / nv
    fx = axis_pdf(spec, 0)(x)
    fv = axis_pdf(spec, 1)(v)
    values = np.outer(fx, fv)
    g = GridDensity(x, v, values)
    total = g.mass()
    if total <= 0:
        raise ValueError("density vanishes on the grid")
    g.values /= total
    return g


def field_from_density(
    rho: np.ndarray, x_nodes: np.ndarray, kernel: ForceKernel, x_eval=None
) -> np.ndarray:
    """Mean-field force from a spatial density on a uniform grid.

    Midpoint-rule convolution with the pair kernel over source cells, except
    that any cell containing the evaluation point contributes its closed-form
    kernel integral (the density taken constant over that cell), which kills
    the integrable singularity exactly.
    """
    if kernel.alpha >= 1.0:
        raise ValueError("kernel is non-integrable in 1D for alpha >= 1")
    rho = np.asarray(rho, dtype=float)
    x_nodes = np.asarray(x_nodes, dtype=float)
    h = float(x_nodes[1] - x_nodes[0])
    xe = x_nodes if x_eval is None else np.atleast_1d(np.asarray(x_eval, dtype=float))
    a = kernel.alpha
    diff = xe[:, None] - x_nodes[None, :]
    self_cell = np.abs(diff) <= 0.5 * h
    with np.errstate(divide="ignore", invalid="ignore"):
        mid = diff / np.abs(diff) ** (1.0 + a) * h
    mid[self_cell] = 0.0
    # closed form of the kernel integral over the cell containing x:
    # int sign(x-y)|x-y|^-a dy = ((u+)^(1-a) - (u-)^(1-a)) / (1-a)
    up = np.clip(diff + 0.5 * h, 0.0, None)
    dn = np.clip(0.5 * h - diff, 0.0, None)
    closed = (up ** (1.0 - a) - dn ** (1.0 - a)) / (1.0 - a)
    weights = np.where(self_cell, closed, mid)
    out = kernel.sign * weights @ rho
    return out if x_eval is None or np.ndim(x_eval) else out[0]


def _shift_rows(f, shifts):
    """Cubic-spline shift of each row of f by its own (cell-unit) offset."""
    out = np.empty_like(f)
    for i, s in enumerate(shifts):
        out[i] = ndimage.shift(f[i], s, order=3, mode="constant", cval=0.0)
    return out


@dataclass
class OracleRun:
    """Grid solution snapshots plus the per-step self-consistent field."""

    times: np.ndarray
    fields: np.ndarray  # (n_times, nx) at cell centers
    snapshot_times: np.ndarray
    densities: list
    mass_drift: np.ndarray
    grid_x: np.ndarray
    grid_v: np.ndarray

    def field_at(self, t: float, x) -> np.ndarray:
        """Field interpolated linearly in time and space."""
        times = self.times
        if t < times[0] - 1e-9 or t > times[-1] + 1e-9:
            raise ValueError(f"misaligned times: t={t} outside oracle range")
        k = min(int(np.searchsorted(times, t, side="right") - 1), times.size - 2)
        k = max(k, 0)
        w = (t - times[k]) / (times[k + 1] - times[k])
        row = (1.0 - w) * self.fields[k] + w * self.fields[k + 1]
        return np.interp(np.asarray(x, dtype=float), self.grid_x, row)


def solve(
    f0: GridDensity,
    T: float,
    dt: float,
    kernel: ForceKernel | None,
    snapshot_stride: int = 1,
    edge_tol: float = 1e-9,
) -> OracleRun:
    """Strang-split semi-Lagrangian transport to horizon T.

    Each step: half position advection, field from the spatial density, full
    velocity advection, half position advection; cubic interpolation with
    clipping to nonnegativity and mass renormalization (the pre-renormalization
    drift is recorded, so renormalization cannot mask an instability).
    Raises SupportOverflow when mass reaches the buffered boundary.
    kernel=None runs the free-streaming reference (zero field).
    """
    if not (T > 0 and dt > 0):
        raise ValueError("T and dt must be positive")
    n_steps = int(np.ceil(T / dt - 1e-12))
    f = f0.values.copy()
    x, v = f0.x, f0.v
    dx, dv = f0.dx, f0.dv
    area = dx * dv
    x_shift_half = v * (0.5 * dt) / dx  # per-column, constant over the run

    def self_field(density):
        if kernel is None:
            return np.zeros(x.size)
        return field_from_density(density.sum(axis=1) * dv, x, kernel)

    fields = np.empty((n_steps + 1, x.size))
    drift = np.zeros(n_steps + 1)
    densities = [GridDensity(x.copy(), v.copy(), f.copy())]
    snapshot_times = [0.0]
    fields[0] = self_field(f)

    for k in range(1, n_steps + 1):
        # x half step: f(x, v) <- f(x - v dt/2, v), column-wise constant shift
        f = _shift_rows(f.T, x_shift_half).T
        E = self_field(f)
        # v full step: f(x, v) <- f(x, v - E(x) dt), row-wise shift
        f = _shift_rows(f, E * dt / dv)
        f = _shift_rows(f.T, x_shift_half).T
        np.clip(f, 0.0, None, out=f)
        mass = f.sum() * area
        drift[k] = mass - 1.0
        if mass <= 0:
            raise SupportOverflow("density vanished (all mass clipped)")
        f /= mass
        g = GridDensity(x, v, f)
        if g.edge_mass() > edge_tol:
            raise SupportOverflow(
                f"support reached the grid buffer at t={k * dt:.6g} "
                f"(edge mass {g.edge_mass():.3e})"
            )
        fields[k] = self_field(f)
        if k % snapshot_stride == 0 or k == n_steps:
            densities.append(GridDensity(x.copy(), v.copy(), f.copy()))
            snapshot_times.append(k * dt)

    return OracleRun(
        times=dt * np.arange(n_steps + 1),
        fields=fields,
        snapshot_times=np.asarray(snapshot_times),
        densities=densities,
        mass_drift=drift,
        grid_x=x,
        grid_v=v,
    )


# ---------------------------------------------------------------------------
# weak-convergence statistics


def test_dictionary(box, dictionary_size: int = 675, widths=None):
    """Fixed dictionary of Lipschitz-1 tensor Gaussians on a phase box.

    box = (x_lo, x_hi, v_lo, v_hi).  Three widths by default (quarter, eighth
    and sixteenth of the larger extent), each paired with the same lattice of
    centers.  Returns (cx, cv, widths, amplitudes); the centers are the
    product lattice cx x cv and amp*exp(-|z-c|^2/2w^2) has Lipschitz
    constant 1 when amp = w*sqrt(e).
    """
    x_lo, x_hi, v_lo, v_hi = box
    extent = max(x_hi - x_lo, v_hi - v_lo)
    if widths is None:
        widths = np.array([extent / 4.0, extent / 8.0, extent / 16.0])
    widths = np.asarray(widths, dtype=float)
    per_axis = max(2, int(np.sqrt(dictionary_size / widths.size)))
    cx = np.linspace(x_lo, x_hi, per_axis)
    cv = np.linspace(v_lo, v_hi, per_axis)
    amplitudes = widths * np.sqrt(np.e)
    return cx, cv, widths, amplitudes


def _gauss(points, centers, width):
    return np.exp(-((points[:, None] - centers[None, :]) ** 2) / (2.0 * width**2))


def weak_distance(
    ens: ParticleEnsemble, f: GridDensity, dictionary_size: int = 675
) -> float:
    """Bounded-Lipschitz surrogate distance between a particle ensemble and a
    grid density: the largest discrepancy of their integrals over a fixed
    dictionary of Lipschitz-1 tensor Gaussians covering the joint support."""
    if ens.dim != 1:
        raise ValueError("weak distance is implemented for d = 1")
    pts = ens.phase_points()
    occupied = f.values > f.values.max() * 1e-12
    x_occ = f.x[occupied.any(axis=1)]
    v_occ = f.v[occupied.any(axis=0)]
    box = (
        min(pts[:, 0].min(), x_occ.min()),
        max(pts[:, 0].max(), x_occ.max()),
        min(pts[:, 1].min(), v_occ.min()),
        max(pts[:, 1].max(), v_occ.max()),
    )
    cx, cv, widths, amps = test_dictionary(box, dictionary_size)
    fvals = f.values * f.cell_area()
    worst = 0.0
    for width, amp in zip(widths, amps):
        # Tensor structure: <mu, phi> factors through 1D Gaussian tables.
        px = _gauss(pts[:, 0], cx, width)
        pv = _gauss(pts[:, 1], cv, width)
        phi_p = amp * (px[:, :, None] * pv[:, None, :]).mean(axis=0)
        gx = _gauss(f.x, cx, width)
        gv = _gauss(f.v, cv, width)
        phi_f = amp * (gx.T @ fvals @ gv)
        worst = max(worst, float(np.max(np.abs(phi_p - phi_f))))
    return worst


def force_convergence_stat(traj: Trajectory, run: OracleRun, eps: float):
    """Windowed force-convergence statistic.

    For each window start t on the step grid,
        stat(t) = sup_i (1/eps) * integral over [t, t+eps] of
                  |F_N(X_i(s)) - F_inf(s, X_i(s))| ds,
    with F_N the recorded exact particle field and F_inf the oracle field
    interpolated in time and space.  Returns (window start times, stats).
    """
    if traj.field_vecs is None:
        raise ValueError("trajectory was recorded without field vectors")
    if traj.dim != 1:
        raise ValueError("the oracle comparison is one-dimensional")
    from .diagnostics import _cumtrapz, _window_steps

    w = _window_steps(eps, traj.dt)
    n_t = traj.n_times
    diff = np.empty((n_t, traj.n))
    for k in range(n_t):
        t = float(traj.times[k])
        f_inf = run.field_at(t, traj.positions[k, :, 0])
        diff[k] = np.abs(traj.field_vecs[k, :, 0] - f_inf)
    integral = _cumtrapz(diff, traj.dt)
    if n_t <= w:
        raise ValueError("trajectory shorter than one window")
    stats = (integral[w:] - integral[:-w]).max(axis=1) / (w * traj.dt)
    return traj.times[: n_t - w], stats


def near_field_stat(traj: Trajectory, r: float, window_starts, eps: float):
    """Windowed average of the near-field force contribution.

    sup over the given window starts and particles of
        (1/eps) int (1/N) sum_{0 < |X_j - X_i| <= r} |X_i - X_j|^(-alpha) ds.
    This is the particle-side near-singularity term in the force-convergence
    split; the dyadic estimates bound it by const * r^(alpha' - alpha).
    """
    from .diagnostics import _window_steps

    w = _window_steps(eps, traj.dt)
    a = traj.kernel.alpha
    n = traj.n
    block = max(1, (1 << 22) // max(1, n))
    best = 0.0
    for t0 in np.atleast_1d(window_starts):
        k0 = traj.index_of_time(float(t0))
        if k0 + w >= traj.n_times:
            raise ValueError("window extends past the trajectory")
        acc = np.zeros(n)
        prev = None
        for k in range(k0, k0 + w + 1):
            X = traj.positions[k]
            contrib = np.empty(n)
            for s in range(0, n, block):
                e = min(n, s + block)
                d = np.linalg.norm(X[s:e, None, :] - X[None, :, :], axis=2)
                d[np.arange(e - s), np.arange(s, e)] = np.inf
                contrib[s:e] = np.where(d <= r, d ** (-a), 0.0).sum(axis=1) / n
            if prev is not None:
                acc += 0.5 * traj.dt * (prev + contrib)
            prev = contrib
        best = max(best, float(acc.max() / (w * traj.dt)))
    return best


def weak_form_residual(traj: Trajectory, run: OracleRun, sigma: float = 0.5):
    """Force-mismatch term of the weak-form transport residual.

    For the fixed test function phi = exp(-(x^2 + v^2)/(2 sigma^2)),
        (1/T) int_0^T (1/N) sum_i (F_inf - F_N)(X_i) d_v phi(X_i, V_i) dt.
    Goes to zero with the force-convergence statistic as N grows.
    """
    if traj.field_vecs is None:
        raise ValueError("trajectory was recorded without field vectors")
    vals = np.empty(traj.n_times)
    for k in range(traj.n_times):
        x = traj.positions[k, :, 0]
        v = traj.velocities[k, :, 0]
        f_inf = run.field_at(float(traj.times[k]), x)
        dphi_dv = -(v / sigma**2) * np.exp(-(x**2 + v**2) / (2.0 * sigma**2))
        vals[k] = np.mean((f_inf - traj.field_vecs[k, :, 0]) * dphi_dv)
    return float(np.trapezoid(vals, dx=traj.dt) / traj.times[-1])
