import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from opinionlab.audit import (
    AuditError,
    LyapunovConfig,
    RobustnessParams,
    audit_a2_trajectory,
    audit_a3_trajectory,
    beta_reduction,
    check_A1_coupling,
    check_A2,
    check_A3,
    check_variation_bound,
    eps_degroot_params,
    granular_params,
    j_minus,
    j_plus,
    lyapunov,
    lyapunov_series,
    tv_weight_gap,
    variation,
)
from opinionlab.dynamics import (
    DeGroot,
    DistortionModel,
    EpsilonDeGroot,
    GranularDeGroot,
    InitialDistribution,
    SimConfig,
    run,
)
from opinionlab.graphs import GraphSpec, generate


def uniform_init(mu=0.5, k=0.5):
    return InitialDistribution(mu=mu, noise="uniform", k=k)


# -- Lyapunov functional ----------------------------------------------------------

def test_lyapunov_hand_examples():
    g2 = generate(GraphSpec("path", n=2))
    cfg = LyapunovConfig(center=0, ratio=0.5)
    assert lyapunov(g2, cfg, [0, 1], [1, 0]) == 0.0
    assert lyapunov(g2, cfg, [0, 1], [0, 1]) == 2.0
    g3 = generate(GraphSpec("path", n=3))
    assert lyapunov(g3, cfg, [0, 0, 1], [0, 0, 1]) == 1.0


def test_lyapunov_bound():
    g = generate(GraphSpec("torus", w=5, h=5))
    cfg = LyapunovConfig(center=7, ratio=0.8)
    rng = np.random.default_rng(0)
    a, b = rng.random(g.n), rng.random(g.n)
    val = lyapunov(g, cfg, a, b)
    spread = max(a.max(), b.max()) - min(a.min(), b.min())
    assert 0.0 <= val <= 2.0 * g.weight_mass(7, 0.8) * spread ** 2


def test_j_sums_reproduce_lyapunov():
    g = generate(GraphSpec("cycle", n=4))
    cfg = LyapunovConfig(center=1, ratio=0.7)
    rng = np.random.default_rng(3)
    layer_t, layer_t1 = rng.random(4), rng.random(4)
    total = lyapunov(g, cfg, layer_t, layer_t1)
    sum_plus = sum(j_plus(g, cfg, j, layer_t, layer_t1) for j in range(4))
    # J^- at time t+1 reads the t+1 layer pairwise against the t layer
    sum_minus = sum(j_minus(g, cfg, j, layer_t1, layer_t) for j in range(4))
    assert abs(sum_plus - total) <= 1e-12 * total
    assert abs(sum_minus - total) <= 1e-12 * total


def test_j_all_equal_layers_vanish():
    g = generate(GraphSpec("path", n=4))
    cfg = LyapunovConfig(center=0, ratio=0.5)
    layer = np.full(4, 0.37)
    for j in range(4):
        assert j_plus(g, cfg, j, layer, layer) == 0.0
        assert j_minus(g, cfg, j, layer, layer) == 0.0


def test_exact_rational_identities():
    g = generate(GraphSpec("random_regular", n=12, degree=3, seed=1))
    cfg = LyapunovConfig(center=0, ratio=Fraction(3, 5))
    rng = np.random.default_rng(9)
    layers = [[Fraction(x).limit_denominator(997) for x in rng.random(g.n)]
              for _ in range(3)]
    l0 = lyapunov(g, cfg, layers[0], layers[1])
    l1 = lyapunov(g, cfg, layers[1], layers[2])
    assert isinstance(l0, Fraction)
    assert sum(j_plus(g, cfg, j, layers[0], layers[1]) for j in range(g.n)) == l0
    assert sum(j_minus(g, cfg, j, layers[1], layers[0]) for j in range(g.n)) == l0
    # the jump identity, exactly
    jump = sum(j_plus(g, cfg, j, layers[1], layers[2])
               - j_minus(g, cfg, j, layers[1], layers[0]) for j in range(g.n))
    assert l1 - l0 == jump


def test_lyapunov_series_matches_direct():
    spec = GraphSpec("random_regular", n=30, degree=3, seed=2)
    g = generate(spec)
    cfg = SimConfig(graph=spec, rule=EpsilonDeGroot(0.05), init=uniform_init(),
                    horizon=120, seed=6, record="full")
    traj = run(cfg, graph=g)
    lcfg = LyapunovConfig(center=3, ratio=0.93)
    series = lyapunov_series(g, lcfg, traj.full, recompute_every=17)
    direct = np.array([lyapunov(g, lcfg, traj.full[t], traj.full[t + 1])
                       for t in range(120)])
    assert np.allclose(series, direct, rtol=1e-12, atol=1e-14)


# -- A2 / A3 ------------------------------------------------------------------------

def test_check_a2_examples():
    assert check_A2(0.6, 0.5, 0.1).passed
    rep = check_A2(0.61, 0.5, 0.1)
    assert not rep.passed
    assert rep.worst_violation == pytest.approx(0.01)
    assert check_A2(0.5, 0.5, 0.0).passed  # plain averaging at eps = 0


def test_check_a3_pass_cases():
    params = RobustnessParams(eps=0.1, gamma=0.05, eta=0.1)
    rep = check_A3(0.9, 0.5, 0.6, params)
    assert rep.passed
    # quantitative spot check at v = y: lhs 0.03 <= rhs (0.4^2 - 0.1^2) = 0.15
    assert 0.1 * abs(0.6 - 0.9) <= (0.9 - 0.5) ** 2 - (0.6 - 0.5) ** 2
    assert check_A3(0.42, 0.5, 0.42, params).passed  # no move: 0 <= 0


def test_check_a3_brute_force_failing_triple():
    # search for a violating update before trusting the checker's verdict
    params = RobustnessParams(eps=1.0, gamma=0.05, eta=1.0)
    found = None
    for x, y, move in itertools.product(
            np.linspace(0.6, 0.95, 8), [0.5], np.linspace(1e-6, 1e-2, 6)):
        x_new = x - move
        worst = min(
            (x - v) ** 2 - (x_new - v) ** 2
            for v in np.linspace(y - params.gamma, y + params.gamma, 101))
        if params.eta * abs(x_new - x) > worst:
            found = (x, y, x_new)
            break
    assert found is not None
    rep = check_A3(found[0], found[1], found[2], params)
    assert not rep.passed
    assert rep.witness is not None


def test_check_a3_worst_case_is_endpoint():
    rng = np.random.default_rng(5)
    for _ in range(200):
        x = rng.uniform(0, 1)
        y = rng.uniform(0, 1)
        x_new = rng.uniform(0, 1)
        eta = rng.uniform(0.01, 1.0)
        gamma = rng.uniform(0.01, 0.2)
        lhs = eta * abs(x_new - x)
        dense = np.linspace(y - gamma, y + gamma, 2001)
        worst_dense = np.max(lhs - ((x - dense) ** 2 - (x_new - dense) ** 2))
        ends = np.array([y - gamma, y + gamma])
        worst_ends = np.max(lhs - ((x - ends) ** 2 - (x_new - ends) ** 2))
        assert worst_ends >= worst_dense - 1e-12


def test_check_a3_grid_validation():
    with pytest.raises(AuditError):
        check_A3(0.5, 0.5, 0.5, RobustnessParams(0.1, 0.05, 0.1), v_grid_points=2)


def test_a3_trajectory_audit_eps_rule():
    spec = GraphSpec("random_regular", n=40, degree=3, seed=7)
    g = generate(spec)
    eps, gamma = 0.05, 0.045
    params = eps_degroot_params(eps, gamma)
    cfg = SimConfig(graph=spec, rule=EpsilonDeGroot(eps), init=uniform_init(),
                    horizon=300, seed=2, record="full")
    traj = run(cfg, graph=g)
    assert audit_a3_trajectory(g, traj.full, params).passed
    assert audit_a2_trajectory(g, traj.full, eps).passed


def test_a3_trajectory_audit_distorted_reduced_params():
    spec = GraphSpec("random_regular", n=40, degree=3, seed=7)
    g = generate(spec)
    eps, gamma = 0.05, 0.045
    beta = 0.9 * gamma
    for kind in ("plus_bias", "minus_bias", "uniform_noise", "per_step_adversarial"):
        cfg = SimConfig(graph=spec, rule=EpsilonDeGroot(eps), init=uniform_init(),
                        horizon=200, seed=4, record="full",
                        distortion=DistortionModel(kind, beta))
        traj = run(cfg, graph=g)
        reduced = beta_reduction(eps_degroot_params(eps, gamma), beta)
        assert audit_a3_trajectory(g, traj.full, reduced).passed, kind
        assert audit_a2_trajectory(g, traj.full, eps + beta).passed, kind


def test_a3_trajectory_audit_granular():
    levels = (0.0, 0.5, 1.0)
    spec = GraphSpec("random_regular", n=30, degree=3, seed=3)
    g = generate(spec)
    gp = granular_params(levels, g.d)
    cfg = SimConfig(graph=spec, rule=GranularDeGroot(levels), init=uniform_init(),
                    horizon=200, seed=5, record="full")
    traj = run(cfg, graph=g)
    params = RobustnessParams(eps=2 * gp.eps_levels, gamma=gp.gamma, eta=gp.eta)
    assert audit_a3_trajectory(g, traj.full, params).passed
    assert audit_a2_trajectory(g, traj.full, 2 * gp.eps_levels).passed


def test_a3_trajectory_audit_catches_degroot():
    # plain averaging is not robust: tiny moves with zero squared-distance gain
    spec = GraphSpec("random_regular", n=30, degree=3, seed=3)
    g = generate(spec)
    cfg = SimConfig(graph=spec, rule=DeGroot(), init=uniform_init(),
                    horizon=60, seed=5, record="full")
    traj = run(cfg, graph=g)
    params = RobustnessParams(eps=0.05, gamma=0.045, eta=2 * (0.05 - 0.045))
    assert not audit_a3_trajectory(g, traj.full, params).passed


# -- A1 coupling -----------------------------------------------------------------------

def test_a1_identical_initials():
    cfg = SimConfig(graph=GraphSpec("torus", w=5, h=5), rule=EpsilonDeGroot(0.05),
                    init=uniform_init(), horizon=100, seed=1)
    assert check_A1_coupling(cfg, 0.0).passed


def test_a1_raised_coordinate():
    cfg = SimConfig(graph=GraphSpec("torus", w=7, h=7), rule=EpsilonDeGroot(0.03),
                    init=uniform_init(), horizon=1000, seed=2)
    rep = check_A1_coupling(cfg, {10: 0.1})
    assert rep.passed
    assert rep.worst_violation == 0.0


def test_a1_with_distortion_and_bots():
    cfg = SimConfig(graph=GraphSpec("torus", w=5, h=5), rule=GranularDeGroot((0.0, 0.5, 1.0)),
                    init=uniform_init(), horizon=300, seed=3, bots=((0, 1.0),),
                    distortion=DistortionModel("plus_bias", 0.01))
    assert check_A1_coupling(cfg, 0.05).passed


class MoveAwayRule:
    """Test fixture: steps away from the neighbor average; not monotone."""

    deterministic = True

    def validate(self):
        return []

    def update(self, g, own_anchor, perceived):
        sums = np.add.reduceat(perceived, g.indptr[:-1])
        y = sums / g.degrees
        return own_anchor + 0.5 * (own_anchor - y)


def test_a1_non_monotone_fixture_fails():
    cfg = SimConfig(graph=GraphSpec("torus", w=5, h=5), rule=MoveAwayRule(),
                    init=uniform_init(), horizon=50, seed=4)
    rng = np.random.default_rng(0)
    rep = check_A1_coupling(cfg, rng.uniform(0, 0.3, 25))
    assert not rep.passed
    assert rep.witness is not None
    agent, t, gap = rep.witness
    assert gap > 0 and t >= 1


def test_a1_rejects_negative_perturbation():
    cfg = SimConfig(graph=GraphSpec("path", n=4), rule=DeGroot(),
                    init=uniform_init(), horizon=5, seed=1)
    with pytest.raises(AuditError):
        check_A1_coupling(cfg, -0.1)


# -- variation ----------------------------------------------------------------------------

def test_variation_examples():
    assert variation(np.zeros(10), 0, 9) == 0.0
    alternating = np.tile([0.0, 1.0], 6)
    assert variation(alternating, 0, 11) == 0.0
    assert variation([0, 0, 0.1, 0, 0.1], 0, 4) == pytest.approx(0.1)


def test_variation_window_errors():
    with pytest.raises(AuditError):
        variation([0, 1, 2], 0, 3)  # needs index 3
    with pytest.raises(AuditError):
        variation([0, 1, 2, 3], 2, 2)


def test_variation_bound_static():
    g = generate(GraphSpec("path", n=5))
    opinions = np.tile(np.linspace(0, 0.04, 5), (30, 1))
    rep = check_variation_bound(g, 2, 0.02, 0.1, opinions, 0, 29)
    assert rep.passed
    assert rep.details["variation"] == 0.0


def test_variation_bound_eps_run():
    spec = GraphSpec("random_regular", n=50, degree=3, seed=9)
    g = generate(spec)
    eps, gamma = 0.05, 0.045
    eta = 2 * (eps - gamma)
    cfg = SimConfig(graph=spec, rule=EpsilonDeGroot(eps), init=uniform_init(),
                    horizon=500, seed=11, record="full")
    traj = run(cfg, graph=g)
    for center in (0, 17, 42):
        rep = check_variation_bound(g, center, gamma, eta, traj.full, 0, 500)
        assert rep.passed, rep.to_dict()


def test_variation_bound_with_bot():
    spec = GraphSpec("random_regular", n=50, degree=3, seed=9)
    g = generate(spec)
    eps, gamma = 0.05, 0.045
    cfg = SimConfig(graph=spec, rule=EpsilonDeGroot(eps), init=uniform_init(),
                    horizon=500, seed=12, record="full", bots=((5, 1.0),))
    traj = run(cfg, graph=g)
    rep = check_variation_bound(g, 20, gamma, 2 * (eps - gamma), traj.full, 0, 500)
    assert rep.passed


# -- TV weight gap ---------------------------------------------------------------------------

def test_tv_same_distance_edges_vanish():
    g = generate(GraphSpec("cycle", n=6))
    # from the opposite node, both edges at node 3's neighbors are symmetric
    assert tv_weight_gap(g, 0, 3, 0.5) == pytest.approx(0.0, abs=1e-15)
    # center to its own edges: all incident edges at distance 0
    assert tv_weight_gap(g, 2, 2, 0.3) == pytest.approx(0.0, abs=1e-15)


def test_tv_path3_hand_value():
    g = generate(GraphSpec("path", n=3))
    assert tv_weight_gap(g, 0, 1, 0.5) == pytest.approx(1 / 6, abs=1e-15)


def test_tv_sweep_to_one_vanishes():
    g = generate(GraphSpec("torus", w=7, h=7))
    vals = [max(tv_weight_gap(g, 0, j, r) for j in (10, 24, 30))
            for r in (0.5, 0.9, 0.99, 0.999)]
    assert all(b <= a + 1e-15 for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-3


@given(st.floats(0.05, 0.99), st.integers(0, 24), st.integers(0, 24))
@settings(max_examples=100, deadline=None)
def test_tv_bounds(r, i, j):
    g = generate(GraphSpec("torus", w=5, h=5))
    tv = tv_weight_gap(g, i, j, r)
    assert tv <= (1 - r) + 1e-12
    if r >= 0.5:
        assert tv <= (1 - r) / 2 + 1e-12


# -- parameter calculators ---------------------------------------------------------------------

def test_eps_degroot_params_examples():
    assert eps_degroot_params(0.1, 0.05).eta == pytest.approx(0.1)
    assert eps_degroot_params(0.1, 1e-9).eta == pytest.approx(0.2)
    assert eps_degroot_params(0.01, 0.009).eta == pytest.approx(0.002)
    with pytest.raises(AuditError):
        eps_degroot_params(0.1, 0.1)


def test_granular_params_examples():
    gp = granular_params([0, 1], 2)
    assert (gp.eps_levels, gp.gamma, gp.eta) == (0.5, 0.25, 0.25)
    gp2 = granular_params([0, 0.5, 1], 1)
    assert gp2.gamma == gp2.eta == 0.125
    gp3 = granular_params([0, 1], 1)
    assert gp3.gamma == 0.25
    assert granular_params([0.4], 3).rho_levels == 1.0  # degenerate set
    with pytest.raises(AuditError):
        granular_params([0, 1], 0)


def test_granular_params_exact_enumeration():
    # independent enumeration with Fractions for levels {0, 1/2, 1}, d = 4
    levels = [Fraction(0), Fraction(1, 2), Fraction(1)]
    pool = set()
    for k in range(1, 5):
        for combo in itertools.combinations_with_replacement(levels, k):
            pool.add(sum(combo) / k)
    for combo in itertools.combinations_with_replacement(levels, 2):
        pool.add(sum(combo) / 2)
    ordered = sorted(pool)
    expect = min(b - a for a, b in zip(ordered, ordered[1:])) / 2
    gp = granular_params([0.0, 0.5, 1.0], 4)
    assert gp.gamma == float(expect)


def test_beta_reduction_examples():
    params = RobustnessParams(0.1, 0.05, 0.1)
    assert beta_reduction(params, 0.0) == params
    reduced = beta_reduction(params, 0.04)
    assert reduced.eps == pytest.approx(0.14)
    assert reduced.gamma == pytest.approx(0.01)
    assert reduced.eta == 0.1
    with pytest.raises(AuditError):
        beta_reduction(params, 0.05)


def test_robustness_params_invariant():
    with pytest.raises(AuditError):
        RobustnessParams(eps=0.1, gamma=0.2, eta=0.1)


# -- Lyapunov monotonicity along robust runs -----------------------------------------------------

@pytest.mark.parametrize("bots,distortion", [
    ((), DistortionModel()),
    (((3, 1.0),), DistortionModel()),
    ((), DistortionModel("plus_bias", 0.9 * 0.045)),
    (((3, 1.0),), DistortionModel("uniform_noise", 0.9 * 0.045)),
])
def test_lyapunov_monotone_along_eps_runs(bots, distortion):
    spec = GraphSpec("random_regular", n=60, degree=3, seed=13)
    g = generate(spec)
    eps, gamma = 0.05, 0.045
    beta = distortion.beta if distortion.kind != "none" else 0.0
    gamma_eff = gamma - beta
    cfg = SimConfig(graph=spec, rule=EpsilonDeGroot(eps), init=uniform_init(),
                    horizon=400, seed=14, record="full", bots=bots,
                    distortion=distortion)
    traj = run(cfg, graph=g)
    for center in (0, 30):
        series = lyapunov_series(g, LyapunovConfig(center, 1.0 - gamma_eff), traj.full)
        slack = 1e-9 * g.weight_mass(center, 1.0 - gamma_eff)
        assert np.max(np.diff(series)) <= slack


def test_lyapunov_can_increase_for_degroot():
    # sanity: the monotonicity is a property of robust rules, not of all runs
    spec = GraphSpec("cycle", n=4)
    g = generate(spec)
    cfg = SimConfig(graph=spec, rule=DeGroot(),
                    init=InitialDistribution(mu=0.0, noise="degenerate"),
                    horizon=6, seed=1, record="full")
    traj = run(cfg, graph=g, initial=np.array([0.0, 1.0, 0.0, 1.0]))
    series = lyapunov_series(g, LyapunovConfig(0, 0.9), traj.full)
    assert np.all(series >= 0)
