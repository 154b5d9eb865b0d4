import numpy as np
import pytest

from vlasovlab import (
    ForceKernel,
    InitialDensitySpec,
    ParticleEnsemble,
    Trajectory,
    check_mlinf,
    default_beta,
    discrete_linf,
    epsilon_scale,
    min_phase_separation,
    quiet_start_init,
    run,
    support_radii,
    windowed_force_avg,
    windowed_force_diff_avg,
)
from vlasovlab.diagnostics import (
    beta_interval,
    compute_diagnostics,
    min_phase_separation_pair,
    select_pairs,
    support_radii_series,
    windowed_force_avg_series,
)

K05 = ForceKernel(0.5)
SOFT = ForceKernel(0.5, delta=1e12)  # effectively zero force


def synthetic_trajectory(X, V, dt, n_steps, mags=None, vecs=None, eps=0.25):
    """Free-transport trajectory with prescribed field recordings."""
    X, V = np.asarray(X, float), np.asarray(V, float)
    n, d = X.shape
    pos = np.array([X + k * dt * V for k in range(n_steps + 1)])
    vel = np.broadcast_to(V, (n_steps + 1, n, d)).copy()
    if mags is None:
        mags = np.zeros((n_steps + 1, n))
    return Trajectory(
        dt=dt,
        eps=eps,
        kernel=K05,
        times=dt * np.arange(n_steps + 1),
        positions=pos,
        velocities=vel,
        field_mags=np.asarray(mags, float),
        field_vecs=None if vecs is None else np.asarray(vecs, float),
    )


# ---------------------------------------------------------------------------
# support radii


def test_support_radii_free_transport_equality_case():
    # single fast particle starting at the boundary moving outward
    X = np.array([[1.0], [0.0]])
    V = np.array([[2.0], [0.0]])
    traj = synthetic_trajectory(X, V, 0.125, 8)
    R, K = support_radii(traj)
    assert K == pytest.approx(2.0)
    assert R == pytest.approx(1.0 + 1.0 * 2.0)  # R(0) + T*K(T), equality


def test_support_radii_static():
    X = np.array([[0.3], [-0.7]])
    traj = synthetic_trajectory(X, np.zeros_like(X), 0.125, 4)
    R, K = support_radii(traj)
    assert (R, K) == (pytest.approx(0.7), 0.0)


def test_support_radii_match_brute_force_scan():
    spec = InitialDensitySpec("uniform-box", dim=1)
    ens = quiet_start_init(spec, 64)
    traj = run(ens, 0.5, K05, eps=0.25, collision_tol_factor=0.0)
    R, K = support_radii(traj)
    R_brute = max(
        np.linalg.norm(traj.positions[k], axis=1).max()
        for k in range(traj.n_times)
    )
    K_brute = max(
        np.linalg.norm(traj.velocities[k], axis=1).max()
        for k in range(traj.n_times)
    )
    assert R == pytest.approx(R_brute) and K == pytest.approx(K_brute)
    Rs, Ks = support_radii_series(traj)
    assert np.all(np.diff(Rs) >= 0) and np.all(np.diff(Ks) >= 0)


# ---------------------------------------------------------------------------
# minimal separation


def test_min_phase_separation_direct():
    ens = ParticleEnsemble(1, [[0.0], [1.0]], [[0.0], [1.0]])
    assert min_phase_separation(ens, 0.5) == pytest.approx(0.25)


def test_min_phase_separation_collision_flag():
    ens = ParticleEnsemble(1, [[0.0], [0.0], [1.0]], [[0.5], [0.5], [0.0]])
    assert min_phase_separation(ens, 0.5) == np.inf


def test_min_phase_separation_too_large():
    X = np.zeros((40000, 1))
    with pytest.raises(ValueError, match="too large"):
        min_phase_separation(ParticleEnsemble(1, X, X), 0.1)


# ---------------------------------------------------------------------------
# windowed force average


def test_windowed_avg_constant_field():
    X = np.zeros((4, 1))
    mags = np.full((17, 4), 3.0)
    traj = synthetic_trajectory(X, X, 0.125 / 4, 16, mags=mags, eps=0.125)
    assert windowed_force_avg(traj, 0.125) == pytest.approx(3.0)


def test_windowed_avg_short_horizon_normalization():
    # T < eps: (1/eps) * integral over [0, T] of a constant c -> c*T/eps
    X = np.zeros((2, 1))
    mags = np.full((5, 2), 2.0)
    dt = 0.01
    traj = synthetic_trajectory(X, X, dt, 4, mags=mags, eps=0.25)
    T = 4 * dt
    assert windowed_force_avg(traj, 0.25) == pytest.approx(2.0 * T / 0.25)


def test_windowed_avg_window_too_coarse():
    X = np.zeros((2, 1))
    traj = synthetic_trajectory(X, X, 0.2, 4)
    with pytest.raises(ValueError, match="coarse"):
        windowed_force_avg(traj, 0.2)


def test_windowed_avg_series_monotone_and_flyby_stability():
    X0 = np.array([[-1.0], [1.0]])
    V0 = np.array([[0.6], [-0.6]])
    eps = 0.25
    vals = []
    for kappa in (16, 32):
        traj = run(ParticleEnsemble(1, X0, V0), 1.5, K05,
                   steps_per_epsilon=kappa, eps=eps)
        series = windowed_force_avg_series(traj, eps)
        w = int(round(eps / traj.dt))
        assert np.all(np.diff(series[w:]) >= -1e-15)  # running sup
        vals.append(series[-1])
    assert abs(vals[1] - vals[0]) / vals[1] <= 0.02


# ---------------------------------------------------------------------------
# windowed pair-difference average


def test_diff_avg_zero_for_spatially_constant_field():
    X = np.array([[0.0], [0.5], [1.0]])
    vecs = np.ones((17, 3, 1)) * 2.5  # identical field at every particle
    mags = np.full((17, 3), 2.5)
    traj = synthetic_trajectory(X, np.zeros_like(X), 0.125 / 4, 16,
                                mags=mags, vecs=vecs, eps=0.125)
    val = windowed_force_diff_avg(traj, 0.125, short_time_beta=True)
    assert val == 0.0


def test_diff_avg_two_particles_hand_quadrature():
    dt = 0.03125
    n_steps = 16
    eps = 0.125
    beta = 1.0
    X = np.array([[0.0], [1.0]])
    V = np.zeros_like(X)
    times = dt * np.arange(n_steps + 1)
    e0 = np.sin(1.0 + times)  # arbitrary smooth recordings
    e1 = 0.25 * np.cos(times)
    vecs = np.stack([e0, e1], axis=1)[:, :, None]
    mags = np.abs(vecs[:, :, 0])
    traj = synthetic_trajectory(X, V, dt, n_steps, mags=mags, vecs=vecs, eps=eps)
    got = windowed_force_diff_avg(traj, eps, short_time_beta=True)
    q = np.abs(e0 - e1) / (eps**beta + 1.0)
    w = int(round(eps / dt))
    best = 0.0
    for k in range(n_steps + 1 - w):
        seg = q[k : k + w + 1]
        best = max(best, np.trapezoid(seg, dx=dt) / (w * dt))
    assert got == pytest.approx(best, rel=1e-12)


def test_diff_avg_positive_homogeneity():
    dt = 0.03125
    rng = np.random.default_rng(0)
    vecs = rng.uniform(-1, 1, size=(17, 4, 1))
    X = np.linspace(0.0, 1.0, 4)[:, None]
    traj1 = synthetic_trajectory(X, np.zeros_like(X), dt, 16,
                                 mags=np.abs(vecs[:, :, 0]), vecs=vecs)
    traj2 = synthetic_trajectory(X, np.zeros_like(X), dt, 16,
                                 mags=2 * np.abs(vecs[:, :, 0]), vecs=2 * vecs)
    a = windowed_force_diff_avg(traj1, 0.125, short_time_beta=True)
    b = windowed_force_diff_avg(traj2, 0.125, short_time_beta=True)
    assert b == pytest.approx(2 * a, rel=1e-12)


def test_beta_validation():
    assert beta_interval(2, 0.5) == (1.0, 1.5)
    assert default_beta(2, 0.5) == pytest.approx(1.25)
    with pytest.raises(ValueError, match="d=1"):
        default_beta(1, 0.5)
    X = np.zeros((2, 2))
    traj = Trajectory(
        dt=0.01, eps=0.25, kernel=K05, times=np.arange(3) * 0.01,
        positions=np.zeros((3, 2, 2)), velocities=np.zeros((3, 2, 2)),
        field_mags=np.zeros((3, 2)), field_vecs=np.zeros((3, 2, 2)),
    )
    with pytest.raises(ValueError, match="invalid beta"):
        windowed_force_diff_avg(traj, 0.05, beta=1.7)


def test_select_pairs_budget_and_tight_pair():
    spec = InitialDensitySpec("uniform-box", dim=1)
    ens = quiet_start_init(spec, 64)
    pairs, exact = select_pairs(ens, 0.25, pair_budget=10_000)
    assert exact and pairs.shape[0] == 64 * 63 // 2
    pairs2, exact2 = select_pairs(ens, 0.25, pair_budget=100, seed=3)
    assert not exact2 and pairs2.shape[0] == 100
    _, tight = min_phase_separation_pair(ens, 0.25)
    assert sorted(tight) in pairs2.tolist()


# ---------------------------------------------------------------------------
# discrete sup-norm bracket


def test_linf_single_box_contains_everything():
    X = np.array([[0.1], [0.2], [-0.1], [0.0]])
    V = np.array([[0.0], [0.1], [-0.2], [0.2]])
    ens = ParticleEnsemble(1, X, V)
    lower, upper = discrete_linf(ens, 1.0)
    assert lower == pytest.approx((2.0) ** -2)  # mass 1 in one radius-1 box
    assert lower <= upper <= 4.0**1 * lower + 1e-12


def test_linf_lower_bound_self_box():
    spec = InitialDensitySpec("uniform-box", dim=1)
    ens = quiet_start_init(spec, 16)
    for scale in (0.1, 0.25, 0.5):
        lower, upper = discrete_linf(ens, scale)
        assert lower >= (1.0 / 16) / (2 * scale) ** 2 - 1e-15
        assert lower <= upper <= 2.0**2 * lower * (1 + 1e-9)


def test_linf_bracket_vs_exhaustive_center_scan():
    spec = InitialDensitySpec("uniform-box", dim=1)
    ens = quiet_start_init(spec, 16)
    eps = epsilon_scale(1.0, 16, 1)
    lower, upper = discrete_linf(ens, eps)
    pts = ens.phase_points()
    grid = np.arange(-1.2, 1.2, eps / 50.0)
    best = 0
    for cx in grid:
        dx_ok = np.abs(pts[:, 0] - cx) <= eps
        if not dx_ok.any():
            continue
        sub = pts[dx_ok, 1]
        for cv in grid:
            best = max(best, int(np.count_nonzero(np.abs(sub - cv) <= eps)))
    sup_grid = best / 16 / (2 * eps) ** 2
    assert lower <= sup_grid * (1 + 1e-9)
    assert sup_grid <= upper * (1 + 1e-9)


def test_mlinf_lattice_and_rescaling():
    spec = InitialDensitySpec("uniform-box", dim=1)
    ens = quiet_start_init(spec, 16)
    eps = 0.25
    m = min_phase_separation(ens, eps)
    _, hi = discrete_linf(ens, eps)
    rep = check_mlinf(m, hi, 1)
    assert rep.holds and rep.ratio <= 1.0
    # rescale all phase coordinates by 2, eps fixed: m halves, rhs / 2^(2d)
    ens2 = ParticleEnsemble(1, 2 * ens.positions, 2 * ens.velocities)
    m2 = min_phase_separation(ens2, eps)
    assert m2 == pytest.approx(m / 2)
    _, hi2 = discrete_linf(ens2, eps)
    rep2 = check_mlinf(m2, hi2, 1)
    assert rep2.holds


def test_mlinf_vacuous_on_collision():
    rep = check_mlinf(np.inf, 123.0, 2)
    assert rep.holds and rep.rhs == np.inf


def test_compute_diagnostics_invariants():
    spec = InitialDensitySpec("uniform-box", dim=1)
    ens = quiet_start_init(spec, 64)
    eps = epsilon_scale(1.0, 64, 1)
    traj = run(ens, 0.5, K05, eps=eps, record_vectors=True,
               collision_tol_factor=0.0)
    diag = compute_diagnostics(traj, eps, pair_budget=3000, seed=0)
    assert diag.times[0] == 0.0
    assert np.all(np.diff(diag.R) >= 0) and np.all(np.diff(diag.K) >= 0)
    assert np.all(diag.linf_eps_lo <= diag.linf_eps_hi * (1 + 1e-9))
    assert np.all(diag.linf_eps_hi <= 4.0 * diag.linf_eps_lo * (1 + 1e-9))
    assert np.all(diag.linf_eps_hi <= (4 * diag.m) ** 2 * (1 + 1e-9))
    assert diag.E0 == pytest.approx(traj.field_mags[0].max())


def test_diagnostics_csv_roundtrip(tmp_path):
    spec = InitialDensitySpec("uniform-box", dim=1)
    ens = quiet_start_init(spec, 16)
    traj = run(ens, 0.25, K05, eps=0.25, record_vectors=True,
               collision_tol_factor=0.0)
    diag = compute_diagnostics(traj, 0.25)
    path = tmp_path / "diag.csv"
    diag.to_csv(path)
    cols = type(diag).from_csv(path)
    header = open(path).readline().strip()
    assert header == "t,R,K,m,Ebar,dEbar,linf_eps_lo,linf_eps_hi,linf_eta_lo,linf_eta_hi"
    np.testing.assert_allclose(cols["R"], diag.R, rtol=0)
    np.testing.assert_allclose(cols["dEbar"], diag.dEbar, rtol=0)
