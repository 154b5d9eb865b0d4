"""Experiment orchestration: flat key=value configuration, artifact bundles,
the short-time bound suite, the scale-escalation schedule, and the
particle-versus-grid convergence study."""

from __future__ import annotations

import configparser
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .diagnostics import (
    DiagnosticsRecord,
    check_mlinf,
    compute_diagnostics,
    default_beta,
    discrete_linf,
)
from .ensemble import (
    DENSITY_KINDS,
    InitialDensitySpec,
    epsilon_scale,
    quiet_start_init,
)
from .forces import CollisionDetected, ForceKernel
from .integrate import run
from .oracle import (
    force_convergence_stat,
    grid_from_spec,
    solve,
    weak_distance,
)
from .parallelepiped import (
    PhaseParallelepiped,
    estimate_growth_const,
    linf_preservation_report,
    track_back,
)
from .shells import (
    position_shells,
    shell_count_bound_check,
    shell_stability_check,
    velocity_shells,
)

N_CEILING = 4096


class ConfigError(ValueError):
    """Invalid or unparsable experiment configuration."""


@dataclass
class ExperimentConfig:
    """Resolved experiment configuration (see print_schema for the file form)."""

    # [density]
    kind: str = "uniform-box"
    R0_x: float = 1.0
    R0_v: float = 1.0
    sigma_x: float = 0.5
    sigma_v: float = 0.5
    v_center: float = 0.5
    v_halfwidth: float = 0.25
    # [run]
    d: int = 1
    alpha: float = 0.5
    sign: int = 1
    N: list = field(default_factory=lambda: [256])
    T: float = 0.25
    kappa: int = 8
    seed: int = 1
    jitter: float = 0.0
    beta: float | None = None
    pair_budget: int = 100_000
    allow_large: bool = False
    collision_tol_factor: float | None = None
    # [schedule]
    M: int = 4
    n_boxes: int = 8
    track_time: float | None = None
    # [oracle]
    nx: int = 256
    nv: int = 256
    oracle_kappa: int = 4
    checkpoints: int = 4
    grid_pad: float = 3.0
    # [output]
    out_dir: str = "out"
    save_trajectory: bool = False

    def validate(self) -> None:
        if self.kind not in DENSITY_KINDS:
            raise ConfigError(f"density.kind: unknown kind {self.kind!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"run.alpha: {self.alpha} outside (0, 1)")
        if self.sign not in (1, -1):
            raise ConfigError("run.sign: must be 'repulsive' or 'attractive'")
        if self.d not in (1, 2, 3):
            raise ConfigError(f"run.d: invalid dimension {self.d}")
        if not self.N or sorted(self.N) != list(self.N):
            raise ConfigError("run.N: must be a nonempty ascending list")
        if any(n < 2 for n in self.N):
            raise ConfigError("run.N: particle counts must be >= 2")
        if max(self.N) > N_CEILING and not self.allow_large:
            raise ConfigError(
                f"run.N: {max(self.N)} exceeds the desk-scale ceiling "
                f"{N_CEILING}; set allow_large = true to override"
            )
        if self.T <= 0:
            raise ConfigError("run.T: horizon must be positive")
        if self.kappa < 2:
            raise ConfigError("run.kappa: need at least 2 steps per epsilon")
        if self.M < 1:
            raise ConfigError("schedule.M: need at least one stage")
        if not 0.0 <= self.jitter <= 0.1:
            raise ConfigError("run.jitter: must lie in [0, 0.1]")

    def density_spec(self) -> InitialDensitySpec:
        return InitialDensitySpec(
            kind=self.kind,
            dim=self.d,
            R0_x=self.R0_x,
            R0_v=self.R0_v,
            sigma_x=self.sigma_x,
            sigma_v=self.sigma_v,
            v_center=self.v_center,
            v_halfwidth=self.v_halfwidth,
        )

    def kernel(self) -> ForceKernel:
        return ForceKernel(alpha=self.alpha, sign=self.sign)

    def resolved_collision_tol_factor(self) -> float:
        """Default 1e-3 of eps; 0 for d=1, where stream crossings through the
        (integrable) singularity are generic and not collisions."""
        if self.collision_tol_factor is not None:
            return self.collision_tol_factor
        return 0.0 if self.d == 1 else 1e-3

    def eta_schedule(self, eps: float) -> np.ndarray:
        """Scale ladder eta_i = sqrt(eps) * r**i with r = eps**(-1/(4M)).

        The endpoints are pinned: eta_0 = eps**(1/2), eta_M = eps**(1/4).
        """
        r = eps ** (-1.0 / (4.0 * self.M))
        return np.sqrt(eps) * r ** np.arange(self.M + 1)

    def resolved(self) -> dict:
        out = asdict(self)
        out["sign"] = "repulsive" if self.sign == 1 else "attractive"
        return out


_SCHEMA = """\
# Flat key = value configuration; one level of sections, no nesting.
[density]
kind = uniform-box            ; uniform-box | product-gaussian-truncated | two-stream
R0_x = 1.0                    ; position support half-width
R0_v = 1.0                    ; velocity support half-width
sigma_x = 0.5                 ; gaussian kind only
sigma_v = 0.5
v_center = 0.5                ; two-stream kind only
v_halfwidth = 0.25

[run]
d = 1                         ; dimension (1, 2 or 3)
alpha = 0.5                   ; kernel exponent, strictly in (0, 1)
sign = repulsive              ; repulsive | attractive
N = 256, 1024                 ; ascending particle counts (padded down to k^(2d))
T = 0.25                      ; horizon
kappa = 8                     ; steps per epsilon window
seed = 1
jitter = 0.0                  ; quiet-start jitter, fraction of cell width (<= 0.1)
; beta = 1.25                 ; optional pair-difference exponent override
pair_budget = 100000
allow_large = false           ; lift the N <= 4096 desk-scale ceiling
; collision_tol_factor = 0.001 ; collision threshold as a fraction of eps
;                               (default: 1e-3, but 0 for d=1 crossings)

[schedule]
M = 4                         ; scale-escalation stages
n_boxes = 8                   ; tracked boxes per stage
; track_time = 0.125          ; optional tracking start time (default: last eps multiple)

[oracle]
nx = 256
nv = 256
oracle_kappa = 4              ; oracle steps per epsilon (finest N)
checkpoints = 4               ; weak-distance checkpoints across [0, T]
grid_pad = 3.0                ; grid half-extent as a multiple of the support radii

[output]
dir = out
save_trajectory = false
"""


def print_schema() -> str:
    return _SCHEMA


def parse_config(path) -> ExperimentConfig:
    """Parse the flat structured-text config with field-level errors."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    cfg = ExperimentConfig()

    def grab(section, key, cast, default):
        if not cp.has_option(section, key):
            return default
        raw = cp.get(section, key).strip()
        try:
            return cast(raw)
        except Exception as exc:
            raise ConfigError(f"{section}.{key}: cannot parse {raw!r} ({exc})") from None

    def as_bool(raw):
        if raw.lower() in ("true", "yes", "1", "on"):
            return True
        if raw.lower() in ("false", "no", "0", "off"):
            return False
        raise ValueError("expected a boolean")

    def as_sign(raw):
        table = {"repulsive": 1, "attractive": -1, "+1": 1, "-1": -1}
        if raw not in table:
            raise ValueError("expected repulsive or attractive")
        return table[raw]

    def as_int_list(raw):
        return [int(tok) for tok in raw.replace(",", " ").split()]

    known = {
        "density": {"kind", "r0_x", "r0_v", "sigma_x", "sigma_v", "v_center", "v_halfwidth"},
        "run": {"d", "alpha", "sign", "n", "t", "kappa", "seed", "jitter", "beta",
                "pair_budget", "allow_large", "collision_tol_factor"},
        "schedule": {"m", "n_boxes", "track_time"},
        "oracle": {"nx", "nv", "oracle_kappa", "checkpoints", "grid_pad"},
        "output": {"dir", "save_trajectory"},
    }
    for section in cp.sections():
        if section not in known:
            raise ConfigError(f"unknown section [{section}]")
        for key in cp.options(section):
            if key not in known[section]:
                raise ConfigError(f"unknown key {section}.{key}")

    cfg.kind = grab("density", "kind", str, cfg.kind)
    cfg.R0_x = grab("density", "R0_x", float, cfg.R0_x)
    cfg.R0_v = grab("density", "R0_v", float, cfg.R0_v)
    cfg.sigma_x = grab("density", "sigma_x", float, cfg.sigma_x)
    cfg.sigma_v = grab("density", "sigma_v", float, cfg.sigma_v)
    cfg.v_center = grab("density", "v_center", float, cfg.v_center)
    cfg.v_halfwidth = grab("density", "v_halfwidth", float, cfg.v_halfwidth)
    cfg.d = grab("run", "d", int, cfg.d)
    cfg.alpha = grab("run", "alpha", float, cfg.alpha)
    cfg.sign = grab("run", "sign", as_sign, cfg.sign)
    cfg.N = grab("run", "N", as_int_list, cfg.N)
    cfg.T = grab("run", "T", float, cfg.T)
    cfg.kappa = grab("run", "kappa", int, cfg.kappa)
    cfg.seed = grab("run", "seed", int, cfg.seed)
    cfg.jitter = grab("run", "jitter", float, cfg.jitter)
    cfg.beta = grab("run", "beta", float, cfg.beta)
    cfg.pair_budget = grab("run", "pair_budget", int, cfg.pair_budget)
    cfg.allow_large = grab("run", "allow_large", as_bool, cfg.allow_large)
    cfg.collision_tol_factor = grab(
        "run", "collision_tol_factor", float, cfg.collision_tol_factor
    )
    cfg.M = grab("schedule", "M", int, cfg.M)
    cfg.n_boxes = grab("schedule", "n_boxes", int, cfg.n_boxes)
    cfg.track_time = grab("schedule", "track_time", float, cfg.track_time)
    cfg.nx = grab("oracle", "nx", int, cfg.nx)
    cfg.nv = grab("oracle", "nv", int, cfg.nv)
    cfg.oracle_kappa = grab("oracle", "oracle_kappa", int, cfg.oracle_kappa)
    cfg.checkpoints = grab("oracle", "checkpoints", int, cfg.checkpoints)
    cfg.grid_pad = grab("oracle", "grid_pad", float, cfg.grid_pad)
    cfg.out_dir = grab("output", "dir", str, cfg.out_dir)
    cfg.save_trajectory = grab("output", "save_trajectory", as_bool, cfg.save_trajectory)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# gates and short-time checks


def evaluate_gates(diag: DiagnosticsRecord, eps: float, beta: float, M: int,
                   fitted_C: float | None, no_stretch_horizon: float | None,
                   T: float, d: int, alpha: float) -> dict:
    """First violation time (or None) of each long-time gate inequality."""
    t = diag.times
    with np.errstate(divide="ignore", invalid="ignore"):
        rhs_m = 1.0 / (12.0 * eps * diag.K * diag.dEbar)
        power1 = eps ** (d - alpha) * diag.m ** (-2 * d) * diag.K ** (2 * d - alpha)
        power2 = (
            eps ** (2 * d - 3 * alpha)
            * diag.m ** (-2 * d)
            * diag.Ebar**d
            * diag.K ** (d - alpha)
        )

    def first_violation(bad):
        idx = np.nonzero(bad)[0]
        return float(t[idx[0]]) if idx.size else None

    thr = eps**beta
    gates = {
        "m_vs_dEbar": first_violation(diag.m > rhs_m),
        "eps_power_1": first_violation(power1 > thr),
        "eps_power_2": first_violation(power2 > thr),
        "T_prime_ge_T_over_M": (
            None if no_stretch_horizon is None else bool(no_stretch_horizon >= T / M)
        ),
        "fitted_C_le_eps_power": (
            None if fitted_C is None else bool(fitted_C <= eps ** (-1.0 / (8.0 * M)))
        ),
    }
    return gates


def theorem1_checks(diag: DiagnosticsRecord, d: int) -> dict:
    """Short-time boundedness: the largest sampled time through which every
    bound (m, K, R doubling; sup-norm cap) holds, plus the cap margins."""
    m0, K0, R0 = diag.m[0], diag.K[0], diag.R[0]
    ok = (
        (diag.m <= 2.0 * m0)
        & (diag.K <= 2.0 * (1.0 + K0))
        & (diag.R <= 2.0 * (1.0 + R0))
        & (diag.linf_eps_hi <= (8.0 * m0) ** (2 * d))
    )
    bad = np.nonzero(~ok)[0]
    t_obs = float(diag.times[-1]) if not bad.size else float(diag.times[max(bad[0] - 1, 0)])
    mlinf = [check_mlinf(m, hi, d) for m, hi in zip(diag.m, diag.linf_eps_hi)]
    return {
        "T_obs": t_obs,
        "mlinf_violations": int(sum(not r.holds for r in mlinf)),
        "mlinf_max_ratio": float(max(r.ratio for r in mlinf)),
        "m_max_over_m0": float(diag.m.max() / m0),
        "K_max": float(diag.K.max()),
        "R_max": float(diag.R.max()),
        "linf_eps_hi_max": float(diag.linf_eps_hi.max()),
    }


# ---------------------------------------------------------------------------
# experiment driver


def _shell_report(traj, diag, eps) -> dict:
    """Shell partitions, stability and count bounds at the last full window."""
    k_last = traj.n_times - 1
    stride = max(1, int(round(eps / traj.dt)))
    k_anchor = max(0, k_last - stride)
    t1, t0 = float(traj.times[k_anchor]), float(traj.times[k_last])
    snap = traj.snapshot(k_anchor)
    K = float(diag.K[-1])
    Ebar = float(diag.Ebar[-1])
    hi = float(diag.linf_eps_hi[-1])
    out = []
    for anchor in (0, snap.n // 2):
        pos = position_shells(snap, anchor, eps, K)
        stab = shell_stability_check(traj, pos, (t1, t0))
        bounds = shell_count_bound_check(pos, hi, eps, K, traj.dim)
        entry = {
            "anchor": int(anchor),
            "t_anchor": t1,
            "kind": "position",
            "stability_violations": len(stab.violations),
            "shells": bounds.entries,
        }
        out.append(entry)
        vel = velocity_shells(snap, anchor, pos.remainder, eps, Ebar)
        stab_v = shell_stability_check(traj, vel, (t1, t0))
        bounds_v = shell_count_bound_check(vel, hi, eps, Ebar, traj.dim)
        out.append(
            {
                "anchor": int(anchor),
                "t_anchor": t1,
                "kind": "velocity",
                "stability_violations": len(stab_v.violations),
                "shells": bounds_v.entries,
            }
        )
    return out


def run_experiment(config: ExperimentConfig, progress=None) -> dict:
    """Run the simulation suite for every requested N and write the bundle.

    Artifacts per N: diagnostics_N{n}.csv, shells_N{n}.json,
    tracking_N{n}.jsonl; one summary.json for the bundle.  Returns the
    summary dictionary.  Deterministic for a fixed config and seed.
    """
    config.validate()
    os.makedirs(config.out_dir, exist_ok=True)
    spec = config.density_spec()
    kernel = config.kernel()
    d = config.d

    summary = {
        "code_version": __version__,
        "config": config.resolved(),
        "epsilon": {},
        "actual_N": {},
        "T_obs": {},
        "gate_first_violation": {},
        "theorem1_checks": {},
        "theorem4_fitted_C": {},
        "tracking": {},
        "fconv_by_N": None,
        "collision": None,
    }

    for N_req in config.N:
        tag = str(N_req)
        ens = quiet_start_init(spec, N_req, seed=config.seed, jitter=config.jitter)
        eps = epsilon_scale(config.R0_x, ens.n, d)
        if progress:
            progress(f"simulate N={N_req} (actual {ens.n}), eps={eps:.4g}")
        summary["epsilon"][tag] = eps
        summary["actual_N"][tag] = ens.n
        try:
            traj = run(
                ens,
                config.T,
                kernel,
                steps_per_epsilon=config.kappa,
                eps=eps,
                record_vectors=True,
                collision_tol_factor=config.resolved_collision_tol_factor(),
            )
        except CollisionDetected as exc:
            summary["collision"] = {
                "N": N_req,
                "time": exc.time,
                "pair": list(exc.pair),
                "distance": exc.distance,
            }
            break
        if traj.collision is not None:
            summary["collision"] = {
                "N": N_req,
                "time": traj.collision.time,
                "pair": list(traj.collision.pair),
                "distance": traj.collision.distance,
            }
            break

        etas = config.eta_schedule(eps)
        beta = config.beta
        if beta is None:
            beta = 1.0 if d == 1 else default_beta(d, config.alpha)
        diag = compute_diagnostics(
            traj,
            eps,
            eta=float(etas[0]),
            beta=config.beta,
            pair_budget=config.pair_budget,
            seed=config.seed,
        )
        diag.to_csv(os.path.join(config.out_dir, f"diagnostics_N{tag}.csv"))

        shells = _shell_report(traj, diag, eps)
        with open(os.path.join(config.out_dir, f"shells_N{tag}.json"), "w") as fh:
            json.dump(shells, fh, sort_keys=True, indent=1)

        # Backward tracking at the first rung of the eta schedule.
        stride = max(1, int(round(eps / traj.dt)))
        n_windows = (traj.n_times - 1) // stride
        t_track = config.track_time
        if t_track is None:
            t_track = min(3, n_windows) * eps
        fitted_C = None
        horizon = None
        if n_windows >= 1:
            growth = estimate_growth_const(
                traj, eps, diag.beta, float(etas[0]),
                t=t_track, n_boxes=config.n_boxes, seed=config.seed,
            )
            rng = np.random.default_rng(config.seed + 1)
            k_t = traj.index_of_time(t_track)
            centers = rng.choice(ens.n, size=min(config.n_boxes, ens.n), replace=False)
            with open(os.path.join(config.out_dir, f"tracking_N{tag}.jsonl"), "w") as fh:
                reports = []
                for box, i in enumerate(centers):
                    S = PhaseParallelepiped.box(
                        traj.positions[k_t, i], traj.velocities[k_t, i], float(etas[0])
                    )
                    rep = track_back(S, traj, t_track, eps, diag.beta, growth)
                    reports.append(rep)
                    for rec in rep.steps:
                        row = rec.as_dict()
                        row["box"] = box
                        fh.write(json.dumps(row, sort_keys=True) + "\n")

            preservation = linf_preservation_report(
                traj, float(etas[0]), eps, diag.beta, growth,
                n_boxes=config.n_boxes, seed=config.seed,
            )
            fitted_C = preservation.fitted_C
            horizon = preservation.horizon
            stage_Cs = [fitted_C]
            for i in range(1, config.M + 1):
                # Coarser rungs compare the measured bracket at consecutive scales.
                _, hi_i = discrete_linf(traj.snapshot(traj.n_times - 1), float(etas[i]))
                _, hi_prev = discrete_linf(traj.snapshot(0), float(etas[i - 1]))
                slack = float(etas[i]) ** diag.beta + float(etas[i - 1]) / float(etas[i])
                stage_Cs.append(max(0.0, (hi_i - hi_prev) / slack))
            summary["tracking"][tag] = {
                "growth_const": growth,
                "t_track": t_track,
                "boxes": len(centers),
                "monotone_ok": all(r.monotone_ok for r in reports),
                "early_stops": sum(not r.reached_origin for r in reports),
                "no_stretch_horizon": horizon,
                "stage_fitted_C": stage_Cs,
            }

        t1 = theorem1_checks(diag, d)
        summary["T_obs"][tag] = t1["T_obs"]
        summary["theorem1_checks"][tag] = t1
        summary["theorem4_fitted_C"][tag] = fitted_C
        summary["gate_first_violation"][tag] = evaluate_gates(
            diag, eps, diag.beta, config.M, fitted_C,
            horizon, config.T, d, config.alpha,
        )
        if config.save_trajectory:
            traj.save(os.path.join(config.out_dir, f"trajectory_N{tag}.npz"))

    with open(os.path.join(config.out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
    return summary


def convergence_study(config: ExperimentConfig, progress=None) -> dict:
    """Particle-versus-grid study at d=1: weak distances at checkpoints and
    the windowed force-convergence statistic, for each N.

    Writes convergence.csv (one row per N and checkpoint) and a summary with
    fitted log2-N decay exponents.  The grid reference is solved once, at the
    time step of the finest particle run, so it is N-independent.
    """
    config.validate()
    if config.d != 1:
        raise ConfigError("the convergence study requires d = 1 (grid oracle)")
    os.makedirs(config.out_dir, exist_ok=True)
    spec = config.density_spec()
    kernel = config.kernel()

    f0 = grid_from_spec(spec, config.nx, config.nv, pad=config.grid_pad)
    eps_fine = epsilon_scale(config.R0_x, max(config.N), 1)
    oracle_dt = eps_fine / config.oracle_kappa
    if progress:
        progress(f"oracle solve: {config.nx}x{config.nv}, dt={oracle_dt:.4g}")
    oracle = solve(f0, config.T, oracle_dt, kernel,
                   snapshot_stride=max(1, config.oracle_kappa))

    check_times = np.linspace(0.0, config.T, config.checkpoints + 1)
    rows = []
    fconv = {}
    dist_at_T = {}
    for N_req in config.N:
        ens = quiet_start_init(spec, N_req, seed=config.seed, jitter=config.jitter)
        eps = epsilon_scale(config.R0_x, ens.n, 1)
        if progress:
            progress(f"converge N={N_req} (actual {ens.n})")
        traj = run(ens, config.T, kernel, steps_per_epsilon=config.kappa,
                   eps=eps, record_vectors=True,
                   collision_tol_factor=config.resolved_collision_tol_factor())
        if traj.collision is not None:
            raise RuntimeError(
                f"collision during convergence run N={N_req} at "
                f"t={traj.collision.time}"
            )
        for t in check_times:
            k = min(traj.index_of_time(round(t / traj.dt) * traj.dt), traj.n_times - 1)
            snap = traj.snapshot(k)
            ref = _nearest_density(oracle, float(traj.times[k]))
            dist = weak_distance(snap, ref)
            rows.append((ens.n, float(traj.times[k]), dist))
            if abs(t - config.T) < 1e-12:
                dist_at_T[ens.n] = dist
        starts, stats = force_convergence_stat(traj, oracle, eps)
        fconv[ens.n] = float(stats.max())

    with open(os.path.join(config.out_dir, "convergence.csv"), "w") as fh:
        fh.write("N,t,weak_distance\n")
        for n, t, v in rows:
            fh.write(f"{n},{t!r},{v!r}\n")

    ns = sorted(dist_at_T)
    exponent = None
    if len(ns) >= 2:
        logn = np.log2(ns)
        logd = np.log2([dist_at_T[n] for n in ns])
        exponent = float(-np.polyfit(logn, logd, 1)[0])
    summary = {
        "code_version": __version__,
        "config": config.resolved(),
        "weak_distance_rows": [[int(n), t, v] for n, t, v in rows],
        "weak_distance_at_T": {str(n): dist_at_T[n] for n in ns},
        "fconv_by_N": {str(n): fconv[n] for n in sorted(fconv)},
        "decay_exponent_log2N": exponent,
    }
    with open(os.path.join(config.out_dir, "convergence_summary.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
    return summary


def _nearest_density(oracle, t: float):
    k = int(np.argmin(np.abs(oracle.snapshot_times - t)))
    if abs(oracle.snapshot_times[k] - t) > 1e-6 + 1e-3 * max(t, 1.0):
        raise ValueError(f"no oracle snapshot near t={t}")
    return oracle.densities[k]


# ---------------------------------------------------------------------------
# offline verification


def verify_bundle(bundle_dir) -> list:
    """Re-check every invariant recorded in a bundle; returns violations."""
    problems = []
    spath = os.path.join(bundle_dir, "summary.json")
    try:
        with open(spath) as fh:
            summary = json.load(fh)
    except OSError as exc:
        return [f"cannot read {spath}: {exc}"]
    d = summary["config"]["d"]
    p = 2 * d
    for tag, eps in summary.get("epsilon", {}).items():
        csv_path = os.path.join(bundle_dir, f"diagnostics_N{tag}.csv")
        if not os.path.exists(csv_path):
            if summary.get("collision"):
                continue
            problems.append(f"missing {csv_path}")
            continue
        cols = DiagnosticsRecord.from_csv(csv_path)
        R, K, m = cols["R"], cols["K"], cols["m"]
        lo, hi = cols["linf_eps_lo"], cols["linf_eps_hi"]
        lo_h, hi_h = cols["linf_eta_lo"], cols["linf_eta_hi"]
        if np.any(np.diff(R) < -1e-12) or np.any(np.diff(K) < -1e-12):
            problems.append(f"N={tag}: running sups R/K not monotone")
        for name, a, b in (("eps", lo, hi), ("eta", lo_h, hi_h)):
            if np.any(a > b * (1 + 1e-9)):
                problems.append(f"N={tag}: {name} bracket inverted")
            if np.any(b > (2.0**p) * a * (1 + 1e-9)):
                problems.append(f"N={tag}: {name} bracket wider than 2^(2d)")
        rhs = (4.0 * m) ** p
        if np.any(hi > rhs * (1 + 1e-9)):
            problems.append(f"N={tag}: separation-to-density bound violated")
        jsonl = os.path.join(bundle_dir, f"tracking_N{tag}.jsonl")
        if os.path.exists(jsonl):
            per_box = {}
            with open(jsonl) as fh:
                for line in fh:
                    rec = json.loads(line)
                    per_box.setdefault(rec.get("box", 0), []).append(rec)
            for box, recs in per_box.items():
                if any(r["count_to"] < r["count_from"] for r in recs):
                    problems.append(
                        f"N={tag}: backward counts not monotone (box {box})"
                    )
        shells_path = os.path.join(bundle_dir, f"shells_N{tag}.json")
        if os.path.exists(shells_path):
            with open(shells_path) as fh:
                for entry in json.load(fh):
                    if entry["stability_violations"]:
                        problems.append(
                            f"N={tag}: shell stability violations recorded"
                        )
                    for shell in entry["shells"]:
                        ratio = shell.get("ratio")
                        if ratio is not None and ratio > 1.0 + 1e-9:
                            problems.append(
                                f"N={tag}: shell count bound exceeded "
                                f"({entry['kind']} k={shell['k']})"
                            )
    return problems
