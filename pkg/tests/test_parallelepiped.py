import numpy as np
import pytest

from vlasovlab import (
    ForceKernel,
    InitialDensitySpec,
    NormConditionsViolated,
    ParticleEnsemble,
    PhaseParallelepiped,
    backward_step,
    boundary_extent,
    containment_check,
    contains,
    count_in,
    epsilon_scale,
    estimate_growth_const,
    field_regularized,
    lattice_cover,
    linf_preservation_report,
    norm_conditions,
    quiet_start_init,
    run,
    track_back,
)
from vlasovlab.parallelepiped import (
    block_norms,
    cover_cardinality_constant,
    cover_cardinality_volume_ok,
    cover_is_complete,
)

K05 = ForceKernel(0.5)


def box1(cx, cv, eta, A=1.0, B=0.0, C=0.0, D=1.0):
    return PhaseParallelepiped([cx], [cv], [[A]], [[B]], [[C]], [[D]], eta)


@pytest.fixture(scope="module")
def cloud_run():
    spec = InitialDensitySpec("uniform-box", dim=1)
    ens = quiet_start_init(spec, 256)
    eps = epsilon_scale(1.0, 256, 1)
    traj = run(ens, 0.25, K05, eps=eps, record_vectors=True,
               collision_tol_factor=0.0)
    assert traj.completed
    return traj, eps


@pytest.fixture(scope="module")
def far_pair_run():
    # two static sources symmetric about the origin, 1e8 away: the field at
    # the box center vanishes by symmetry and the gradient is ~1e-12, so
    # backward steps there reduce to exact shear composition
    X = np.array([[-1e8], [1e8]])
    V = np.array([[0.0], [0.0]])
    ens = ParticleEnsemble(1, X, V)
    return run(ens, 1.5, K05, steps_per_epsilon=4, eps=0.25)


# ---------------------------------------------------------------------------
# membership and geometry


def test_contains_axis_box_and_center():
    S = PhaseParallelepiped.box([0.5, -0.5], [1.0, 0.0], 0.3)
    assert contains(S, np.array([0.5, -0.5]), np.array([1.0, 0.0]))
    assert contains(S, np.array([0.5 + 0.29, -0.5]), np.array([1.0, 0.29]))
    assert not contains(S, np.array([0.5 + 0.31, -0.5]), np.array([1.0, 0.0]))


def test_contains_sheared_vs_grid_rasterization():
    S = box1(0.1, -0.2, 0.5, A=1.0, B=0.3, C=0.0, D=1.0)
    xs = np.linspace(-1.5, 1.5, 101)
    vs = np.linspace(-1.5, 1.5, 101)
    gx, gv = np.meshgrid(xs, vs, indexing="ij")
    pts = np.column_stack([gx.ravel(), gv.ravel()])
    got = contains(S, pts)
    expect = (np.abs((pts[:, 0] - 0.1) + 0.3 * (pts[:, 1] + 0.2)) <= 0.5) & (
        np.abs(pts[:, 1] + 0.2) <= 0.5
    )
    assert np.array_equal(got, expect)


def test_contains_translation_invariance():
    rng = np.random.default_rng(4)
    S = PhaseParallelepiped(
        [0.0, 0.0], [0.0, 0.0],
        np.eye(2) + 0.1 * rng.standard_normal((2, 2)),
        0.2 * rng.standard_normal((2, 2)),
        0.2 * rng.standard_normal((2, 2)),
        np.eye(2) + 0.1 * rng.standard_normal((2, 2)),
        0.7,
    )
    pts = rng.uniform(-1, 1, size=(64, 4))
    shift = np.array([0.3, -0.2, 0.5, 0.1])
    S2 = PhaseParallelepiped(
        S.center_x + shift[:2], S.center_v + shift[2:],
        S.A, S.B, S.C, S.D, S.radius,
    )
    np.testing.assert_array_equal(contains(S, pts), contains(S2, pts + shift))


def test_count_in_extremes_and_duplicate_scan():
    spec = InitialDensitySpec("uniform-box", dim=1)
    ens = quiet_start_init(spec, 64)
    everything = PhaseParallelepiped.box([0.0], [0.0], 10.0)
    assert count_in(ens, everything) == 64
    nothing = PhaseParallelepiped.box([50.0], [0.0], 0.5)
    assert count_in(ens, nothing) == 0
    S = box1(0.1, -0.1, 0.4, B=0.2, C=-0.1)
    brute = sum(
        1
        for x, v in zip(ens.positions[:, 0], ens.velocities[:, 0])
        if max(abs((x - 0.1) + 0.2 * (v + 0.1)), abs(-0.1 * (x - 0.1) + (v + 0.1)))
        <= 0.4
    )
    assert count_in(ens, S) == brute


# ---------------------------------------------------------------------------
# norm conditions and containment


def test_norm_conditions_margins():
    S = PhaseParallelepiped.box([0.0], [0.0], 1.0)
    ok, margins = norm_conditions(S)
    assert ok and margins == {"A": 0.5, "D": 0.5, "B": 0.5, "C": 0.5}
    bad = box1(0.0, 0.0, 1.0, A=1.6)
    ok2, margins2 = norm_conditions(bad)
    assert not ok2 and margins2["A"] == pytest.approx(-0.1)


def test_block_norms_vs_power_iteration():
    rng = np.random.default_rng(6)
    blocks = [np.eye(3) + 0.2 * rng.standard_normal((3, 3)) for _ in range(4)]
    S = PhaseParallelepiped(np.zeros(3), np.zeros(3), *blocks, 1.0)
    norms = block_norms(S)

    def power_norm(mat, iters=2000):
        x = rng.standard_normal(mat.shape[1])
        for _ in range(iters):
            x = mat.T @ (mat @ x)
            x /= np.linalg.norm(x)
        return np.linalg.norm(mat @ x)

    eye = np.eye(3)
    for key, mat in zip("ADBC", (blocks[0] - eye, blocks[3] - eye, blocks[1], blocks[2])):
        assert norms[key] == pytest.approx(power_norm(mat), abs=1e-10)


def test_containment_identity_and_sheared_boundary():
    S = PhaseParallelepiped.box([0.3], [0.0], 0.8)
    assert boundary_extent(S) == pytest.approx(0.8)
    assert containment_check(S)
    # norm-condition boundary with opposite-sign shear: corners exactly at 2
    S2 = box1(0.0, 0.0, 1.0, A=1.0, B=0.5, C=0.5, D=1.0)
    assert boundary_extent(S2) == pytest.approx(2.0)
    assert containment_check(S2)
    S3 = box1(0.0, 0.0, 1.0, A=1.5, B=0.5, C=-0.5, D=1.5)
    assert containment_check(S3)


def test_containment_negative_control():
    # B = 0.9 violates the norm conditions; with A = 0.5 a corner escapes 2 eta
    S = box1(0.0, 0.0, 1.0, A=0.5, B=0.9)
    ok, _ = norm_conditions(S)
    assert not ok
    with pytest.raises(NormConditionsViolated):
        containment_check(S)
    assert boundary_extent(S) > 2.0  # the counterexample point


def test_identity_diagonal_containment_is_tight():
    # with identity diagonal blocks the 2-eta containment is a theorem:
    # |x| <= eta (1+|B|)/(1-|B||C|) <= 2 eta
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(200):
        S = box1(0.0, 0.0, 1.0,
                 B=rng.uniform(-0.5, 0.5), C=rng.uniform(-0.5, 0.5))
        worst = max(worst, boundary_extent(S))
    assert worst <= 2.0 + 1e-9


# ---------------------------------------------------------------------------
# backward stepping


def test_backward_step_far_sources_pure_shear(far_pair_run):
    traj = far_pair_run
    eta = 0.5
    S = PhaseParallelepiped.box([0.0], [0.25], eta)
    t = float(traj.times[-1])
    S2, rec = backward_step(S, traj, t, 0.25, beta=1.0, growth_const=0.3)
    np.testing.assert_allclose(S2.A, S.A, atol=1e-12)
    np.testing.assert_allclose(S2.B, S.B + 0.25 * S.A, atol=1e-12)
    np.testing.assert_allclose(S2.C, S.C, atol=1e-12)
    np.testing.assert_allclose(S2.D, S.D + 0.25 * S.C, atol=1e-12)
    np.testing.assert_allclose(
        S2.center_x, S.center_x - 0.25 * S.center_v, atol=1e-12
    )
    np.testing.assert_allclose(S2.center_v, S.center_v, atol=1e-8)
    assert S2.radius == pytest.approx(eta + 0.3 * 0.25 * (eta**1.0 + 0.25))
    assert rec.grad_norm < 1e-10


def test_backward_step_det_identity_and_slope():
    # |det M' - det M| = |det M| |det(I - w^2 G) - 1| ~ w^2 |tr G|; sources
    # sit far enough that G barely depends on the window/regularization scale
    X = np.array([[-5.0], [6.0]])
    V = np.array([[0.2], [-0.1]])
    ens = ParticleEnsemble(1, X, V)
    traj = run(ens, 0.2, K05, steps_per_epsilon=32, eps=0.2)
    S = box1(0.05, 0.0, 0.1, A=1.1, B=0.2, C=-0.15, D=0.95)
    drifts = []
    windows = (0.2, 0.1, 0.05)
    for w in windows:
        S2, rec = backward_step(S, traj, 0.2, w, beta=1.0, growth_const=1.0)
        drifts.append(abs(rec.det_after - rec.det_before))
        # exact factorization check
        assert rec.det_after == pytest.approx(
            rec.det_before * (1 - w * w * _avg_grad(traj, S, 0.2, w)), rel=1e-9
        )
    slope = np.polyfit(np.log(windows), np.log(drifts), 1)[0]
    assert 1.6 <= slope <= 2.4


def _avg_grad(traj, S, t, w):
    from vlasovlab import grad_field_regularized

    i1 = traj.index_of_time(t)
    i0 = traj.index_of_time(t - w)
    g = [
        grad_field_regularized(traj.snapshot(k), S.center_x, w, traj.kernel)[0, 0]
        for k in range(i0, i1 + 1)
    ]
    return np.trapezoid(g, dx=traj.dt) / w


def test_backward_step_vs_integrated_flow_map():
    # the affine backward map absorbs the regularized field to first order:
    # tracers integrated through E_eps land within the grown radius
    X = np.array([[-0.3], [0.5]])
    V = np.array([[0.3], [-0.2]])
    ens = ParticleEnsemble(1, X, V)
    eps = 0.25
    traj = run(ens, eps, K05, steps_per_epsilon=16, eps=eps)
    t = float(traj.times[-1])
    eta, beta = 0.05, 1.0
    S = PhaseParallelepiped.box(traj.positions[-1, 0], traj.velocities[-1, 0], eta)
    S2, _ = backward_step(S, traj, t, eps, beta, growth_const=0.0)

    corners = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1], [0, 1], [1, 0]], float)
    z0 = np.concatenate([S.center_x, S.center_v]) + eta * corners

    def field(k, x):
        return field_regularized(traj.snapshot(k), np.array([x]), eps, traj.kernel)[0]

    worst = 0.0
    for z in z0:
        x, v = z
        for k in range(traj.n_times - 1, 0, -1):
            dt = traj.dt
            # midpoint rule backward through the recorded field
            xm = x - 0.5 * dt * v
            em = 0.5 * (field(k, xm) + field(k - 1, xm))
            x = x - dt * (v - 0.5 * dt * em)
            v = v - dt * em
        img = np.array([x - S2.center_x[0], v - S2.center_v[0]])
        top = S2.A[0, 0] * img[0] + S2.B[0, 0] * img[1]
        bot = S2.C[0, 0] * img[0] + S2.D[0, 0] * img[1]
        worst = max(worst, max(abs(top), abs(bot)))
    defect = (worst - eta) / (eps * (eta**beta + eps))
    assert defect <= 1.0


def test_track_back_far_sources_full_track(far_pair_run):
    traj = far_pair_run
    eta = 0.5
    t = 0.5
    S = PhaseParallelepiped.box([0.0], [0.25], eta)
    rep = track_back(S, traj, t, 0.25, beta=1.0, growth_const=0.2)
    assert rep.reached_origin
    assert rep.counts == [0, 0, 0]  # no sources near the box
    assert rep.monotone_ok
    assert rep.radius_bound_ok()
    # exact shear composition: B_n = n * eps * I
    np.testing.assert_allclose(rep.final_set.B, 0.5 * np.eye(1), atol=1e-10)
    np.testing.assert_allclose(rep.final_set.A, np.eye(1), atol=1e-10)
    # center free-streamed backward: x -> x - t * v
    np.testing.assert_allclose(rep.final_set.center_x, [-0.5 * 0.25], atol=1e-8)


def test_track_back_early_stop_beyond_stretch_horizon(far_pair_run):
    traj = far_pair_run
    S = PhaseParallelepiped.box([0.0], [0.25], 0.5)
    rep = track_back(S, traj, float(traj.times[-1]), 0.25, 1.0, 0.2)
    assert rep.termination == "norm-conditions-violated"
    assert not rep.reached_origin
    # the shear block grows by eps*I per step and may not exceed 1/2:
    # exactly three eps-steps are admissible (0.25, 0.5, then 0.75 blocks)
    assert len(rep.steps) == 3


def test_track_back_monotone_counts_full_dynamics(cloud_run):
    traj, eps = cloud_run
    eta = np.sqrt(eps)
    growth = estimate_growth_const(traj, eps, 1.0, eta, n_boxes=8, seed=0)
    rng = np.random.default_rng(1)
    t = float(3 * eps)
    k = traj.index_of_time(t)
    ok_boxes = 0
    for i in rng.choice(traj.n, size=12, replace=False):
        S = PhaseParallelepiped.box(
            traj.positions[k, i], traj.velocities[k, i], eta
        )
        rep = track_back(S, traj, t, eps, 1.0, growth)
        assert rep.monotone_ok, f"count violation at box {i}"
        if rep.reached_origin:
            ok_boxes += 1
            assert rep.counts[0] >= 1
    assert ok_boxes >= 10


# ---------------------------------------------------------------------------
# lattice covering


def test_lattice_cover_identity_exact_count():
    eps = 0.1
    S = PhaseParallelepiped.box([0.0], [0.0], 4 * eps)
    P = lattice_cover(S, eps)
    # |eps Z^2 inside the square of half-side eta + 2 eps = 6 eps| = 13^2
    assert len(P) == 169
    cprime = cover_cardinality_constant(S, P, eps)
    assert len(P) <= eps**-2 * S.radius ** (2 - 1) * (S.radius + cprime * eps) + 1e-9
    ok, lhs, rhs = cover_cardinality_volume_ok(S, P, eps)
    assert ok and lhs <= rhs


def test_lattice_cover_point_like_set_contains_cell_corners():
    eps = 0.25
    S = PhaseParallelepiped.box([0.30], [0.40], 1e-9)
    P = lattice_cover(S, eps)
    keys = set(map(tuple, np.round(P / eps).astype(int)))
    for corner in ((1, 1), (1, 2), (2, 1), (2, 2)):  # cell [0.25,0.5)x[0.25,0.5)
        assert corner in keys


def test_lattice_cover_requires_conditions():
    S = box1(0.0, 0.0, 1.0, A=1.6)
    with pytest.raises(NormConditionsViolated):
        lattice_cover(S, 0.1)
    S2 = PhaseParallelepiped.box([0.0], [0.0], 1.0)
    with pytest.raises(NormConditionsViolated):
        lattice_cover(S2, 0.1, max_det_slack=-10.0)


def test_cover_property_random_sheared_sets():
    rng = np.random.default_rng(8)
    for trial in range(20):
        eps = 0.125
        eta = eps * rng.uniform(1.0, 6.0)
        S = box1(
            rng.uniform(-1, 1), rng.uniform(-1, 1), eta,
            A=1 + rng.uniform(-0.3, 0.3), B=rng.uniform(-0.4, 0.4),
            C=rng.uniform(-0.4, 0.4), D=1 + rng.uniform(-0.3, 0.3),
        )
        P = lattice_cover(S, eps)
        # rejection-sample members of S
        box = 2.5 * eta
        cand = np.column_stack([
            rng.uniform(S.center_x[0] - box, S.center_x[0] + box, 400),
            rng.uniform(S.center_v[0] - box, S.center_v[0] + box, 400),
        ])
        members = cand[contains(S, cand)]
        ok, worst = cover_is_complete(S, P, eps, members)
        assert ok, f"trial {trial}: member farther than eps from P ({worst})"


def test_cover_includes_contained_particles(cloud_run):
    traj, eps = cloud_run
    ens = traj.snapshot(0)
    S = box1(0.0, 0.0, 3 * eps, B=0.2, C=-0.2)
    P = lattice_cover(S, eps)
    pts = ens.phase_points()
    inside = pts[contains(S, pts)]
    assert inside.size
    ok, _ = cover_is_complete(S, P, eps, inside)
    assert ok


# ---------------------------------------------------------------------------
# preservation experiment


def test_linf_preservation_report_smoke(cloud_run):
    traj, eps = cloud_run
    eta = np.sqrt(eps)
    growth = estimate_growth_const(traj, eps, 1.0, eta, n_boxes=6, seed=2)
    rep = linf_preservation_report(
        traj, eta, eps, 1.0, growth, n_boxes=6, seed=2
    )
    assert rep.fitted_C >= 0.0
    assert rep.counts_monotone_ok
    assert rep.chain_ok
    assert rep.horizon >= 0.0
    assert rep.times.size == rep.linf_eta_upper.size == rep.tracked_bound.size
    # tracked covering chain genuinely bounds the measured eta-scale density
    assert np.all(rep.tracked_bound[1:] > 0)