import math
from dataclasses import replace

import numpy as np
import pytest

from sandwich_qpe import (
    AmbiguityError,
    BudgetPolicy,
    DegenerateNodeError,
    PowerObservable,
    RngStream,
    SpectralModel,
    SplitPolicy,
    UsageLedger,
    allocate_shots,
    angular_distance,
    build_tree,
    degenerate_chain_tree,
    estimate_magnitude,
    estimate_omega,
    exact_amplitude,
    generate_model,
    sandwich_test,
    sequential_baseline,
    two_layer_estimate,
    wrap_angle,
)
from sandwich_qpe.estimators import (
    default_phi_grid,
    effective_scale,
    sine_from_magnitudes,
    theta1_budget,
    variance_weight_sum,
)


def make_tree(k, seed=0, x_min=1 / 3, **kwargs):
    return build_tree(
        k, SplitPolicy(stream=RngStream(seed).child(9), x_min=x_min), **kwargs
    )


def exact_mags(model, a, b):
    return (
        exact_amplitude(model, a).modulus,
        exact_amplitude(model, b).modulus,
        exact_amplitude(model, a + b).modulus,
    )


# ----------------------------------------------------------------------
# Policy validation
# ----------------------------------------------------------------------

def test_policy_validation():
    with pytest.raises(ValueError):
        BudgetPolicy(q=0.5)
    with pytest.raises(ValueError):
        BudgetPolicy(phi1=0.0)
    with pytest.raises(ValueError):
        BudgetPolicy(phi1=math.pi / 2)  # cos = 0 kills the paired channel
    with pytest.raises(ValueError):
        BudgetPolicy(s_floor=0.0)
    with pytest.raises(ValueError):
        BudgetPolicy(epsilon=-0.1)


# ----------------------------------------------------------------------
# estimate_omega
# ----------------------------------------------------------------------

def test_omega_exact_identity_random_models():
    policy = BudgetPolicy()
    for seed in range(30):
        model = generate_model("uniform_random", 8, seed)
        rng = np.random.default_rng(seed)
        a, b = (int(v) for v in rng.integers(1, 30, 2))
        mags = exact_mags(model, a, b)
        if min(mags) < 1e-3:
            continue
        est = estimate_omega(
            model, a, b, policy, mags, 0, RngStream(seed), UsageLedger(), exact=True
        )
        theta_ab = exact_amplitude(model, a + b).argument
        reconstructed = wrap_angle(
            exact_amplitude(model, a).argument
            + exact_amplitude(model, b).argument
            - est.omega_hat
            + policy.phi1
        )
        assert angular_distance(reconstructed, theta_ab) <= 1e-9


def test_omega_single_eigenstate_equals_phi1():
    model = SpectralModel([0.9], [1.0])
    for phi1 in (math.pi / 4, 1.0, -0.8):
        policy = BudgetPolicy(phi1=phi1)
        est = estimate_omega(
            model, 2, 5, policy, (1.0, 1.0, 1.0), 0, RngStream(0), UsageLedger(),
            exact=True,
        )
        assert angular_distance(est.omega_hat, phi1) <= 1e-12


def test_omega_noisy_accuracy():
    # Spec names two_level(gap=pi/2) here, but that model has r_2 = 0 (it is
    # the degenerate exemplar elsewhere), so the node a=b=1 cannot be
    # estimated at all.  gap = 2*pi/5 keeps every magnitude healthy:
    # r_1 = 0.809, r_2 = 0.309.  Derived omega sd at 1e6 shots per channel
    # is ~3e-3, so 0.02 is a 7-sigma band.
    model = generate_model("two_level", 2, 0, gap=2 * math.pi / 5)
    policy = BudgetPolicy()
    exact_est = estimate_omega(
        model, 1, 1, policy, exact_mags(model, 1, 1), 0, RngStream(0), UsageLedger(),
        exact=True,
    )
    hits = 0
    for seed in range(200):
        stream = RngStream(seed).child(3)
        ledger = UsageLedger()
        mags = tuple(
            estimate_magnitude(model, PowerObservable(p), 10**6, stream.child(ch), ledger)
            for ch, p in ((0, 1), (1, 1), (2, 2))
        )
        est = estimate_omega(
            model, 1, 1, policy, mags, 2 * 10**6, stream.child(7), ledger
        )
        hits += angular_distance(est.omega_hat, exact_est.omega_hat) <= 0.02
    assert hits >= 190


def test_omega_degenerate_error_names_power():
    model = generate_model("two_level", 2, 0, gap=math.pi / 2)
    policy = BudgetPolicy()
    with pytest.raises(DegenerateNodeError) as err:
        estimate_omega(
            model, 1, 1, policy, (0.7, 0.7, 0.0), 100, RngStream(0), UsageLedger()
        )
    assert err.value.value == 2


def test_sine_clamping():
    v, clamped = sine_from_magnitudes(0.9, 0.9, 0.9, 0.0, math.pi / 4)
    assert clamped and v == 1.0
    v, clamped = sine_from_magnitudes(0.9, 0.9, 0.9, 1.0, math.pi / 4)
    assert not clamped and -1.0 <= v <= 1.0


# ----------------------------------------------------------------------
# allocate_shots
# ----------------------------------------------------------------------

def test_allocate_root_unit_budget():
    # (k/k)^q * 1 = 1, so the root budget is just the min_shots floor.
    tree = make_tree(16, x_min=0.5)
    policy = BudgetPolicy(min_shots=1, budget_scale=1.0, q=2.0, calibrate=False)
    plan = allocate_shots(tree, policy, 16, [1.0] * len(tree.nontrivial_nodes()))
    root = next(b for b in plan.node_budgets if b.value == 16)
    assert root.node_shots == 1


def test_allocate_floor_scaling_is_64x():
    tree = make_tree(16, x_min=0.5)
    policy = BudgetPolicy(min_shots=1, budget_scale=1.0, q=2.0, calibrate=False)
    n = len(tree.nontrivial_nodes())
    full = allocate_shots(tree, policy, 16, [1.0] * n)
    half = allocate_shots(tree, policy, 16, [0.5] * n)
    for b1, b2 in zip(full.node_budgets, half.node_budgets):
        assert b2.node_shots == 64 * b1.node_shots


def test_allocate_respects_min_shots_per_channel():
    tree = make_tree(8)
    policy = BudgetPolicy(min_shots=100, calibrate=False)
    plan = allocate_shots(tree, policy, 8, [1.0] * len(tree.nontrivial_nodes()))
    for budget in plan.node_budgets:
        assert budget.shots_r >= 100 and budget.shots_s >= 100


def test_allocate_alignment_checked():
    tree = make_tree(8)
    with pytest.raises(ValueError):
        allocate_shots(tree, BudgetPolicy(), 8, [1.0])


def test_theta1_budget_formula():
    policy = BudgetPolicy(epsilon=0.05, theta1_scale=16.0)
    assert theta1_budget(policy, 128) == math.ceil(16.0 * (128 / 0.05) ** 2)


def test_effective_scale_targets_epsilon():
    tree = make_tree(32)
    policy = BudgetPolicy(epsilon=0.1, q=2.0)
    expected = variance_weight_sum(tree, 2.0) / 0.01
    assert effective_scale(tree, policy) == pytest.approx(expected)
    raw = replace(policy, calibrate=False, budget_scale=7.0)
    assert effective_scale(tree, raw) == 7.0


# ----------------------------------------------------------------------
# sandwich_test
# ----------------------------------------------------------------------

def test_exact_mode_identity_k64():
    model = generate_model("clustered", 12, 2)
    tree = make_tree(64, seed=5)
    policy = BudgetPolicy(s_floor=1e-6)
    rep = sandwich_test(model, 64, tree, policy, RngStream(3), UsageLedger(), exact=True)
    assert rep.angular_error <= 1e-9
    assert rep.exact_mode
    assert rep.ledger.shots == 0


def test_exact_mode_phi_invariance():
    model = generate_model("uniform_random", 10, 6)
    tree = make_tree(48, seed=2)
    estimates = []
    for phi1 in (math.pi / 4, math.pi / 3, 1.0, 2.0, -0.7):
        policy = BudgetPolicy(phi1=phi1, s_floor=1e-6)
        rep = sandwich_test(
            model, 48, tree, policy, RngStream(1), UsageLedger(), exact=True
        )
        estimates.append(rep.theta_k_hat)
    for value in estimates[1:]:
        assert angular_distance(value, estimates[0]) <= 1e-9


def test_k1_is_pure_hadamard():
    model = generate_model("uniform_random", 6, 1)
    tree = make_tree(1)
    rep = sandwich_test(model, 1, tree, BudgetPolicy(epsilon=0.1), RngStream(2), UsageLedger())
    assert rep.node_estimates == []
    assert len(rep.leaf_estimates) == 1
    assert rep.leaf_estimates[0].value == 1
    assert rep.theta_k_hat == wrap_angle(rep.theta1_hat)


def test_report_self_consistency_bit_exact():
    model = generate_model("ground_dominated", 16, 1, eta=0.8)
    tree = make_tree(32, seed=7)
    rep = sandwich_test(
        model, 32, tree, BudgetPolicy(epsilon=0.1), RngStream(5), UsageLedger()
    )
    # Recombine from the report parts with the documented order: leaf terms
    # first (ascending value), then phi1 - omega per node in list order.
    total = 0.0
    for leaf in rep.leaf_estimates:
        total += leaf.count * leaf.theta_hat
    for node in rep.node_estimates:
        total += rep.phi1 - node.omega_hat
    assert wrap_angle(total) == rep.theta_k_hat
    assert rep.recombined_theta() == rep.theta_k_hat


def test_run_determinism():
    model = generate_model("ground_dominated", 12, 3, eta=0.7)
    tree = make_tree(24, seed=4)
    policy = BudgetPolicy(epsilon=0.1)
    reps = [
        sandwich_test(model, 24, tree, policy, RngStream(11), UsageLedger())
        for _ in range(2)
    ]
    assert reps[0].theta_k_hat == reps[1].theta_k_hat
    assert reps[0].ledger.as_dict() == reps[1].ledger.as_dict()
    assert reps[0].node_estimates == reps[1].node_estimates


def test_tree_k_mismatch_rejected():
    model = generate_model("uniform_random", 6, 0)
    with pytest.raises(ValueError):
        sandwich_test(model, 9, make_tree(8), BudgetPolicy(), RngStream(0), UsageLedger())


def test_noisy_accuracy_k32():
    model = generate_model("ground_dominated", 16, 1, eta=0.8)
    policy = BudgetPolicy(epsilon=0.1, q=2.0)
    hits = 0
    for seed in range(50):
        tree = make_tree(32, seed=seed)
        rep = sandwich_test(model, 32, tree, policy, RngStream(seed), UsageLedger())
        hits += rep.angular_error <= 3 * policy.epsilon
    assert hits >= 45


def test_variance_halves_when_budgets_double():
    model = generate_model("ground_dominated", 8, 2, eta=0.8)
    tree = make_tree(32, seed=9)

    def spread(scale):
        policy = BudgetPolicy(
            epsilon=0.1, budget_scale=scale, theta1_scale=16.0 * scale
        )
        values = [
            sandwich_test(model, 32, tree, policy, RngStream(seed), UsageLedger()).theta_k_hat
            for seed in range(200)
        ]
        exact = exact_amplitude(model, 32).argument
        errs = [wrap_angle(v - exact) for v in values]
        return float(np.var(errs))

    ratio = spread(1.0) / spread(2.0)
    assert 2.0 / 1.3 <= ratio <= 2.0 * 1.3


def test_clamp_rate_low_at_high_shots():
    # Pick a generic node: all magnitudes >= 0.3 and both sine channels away
    # from +-1, then check clamping is rare at 1e6 shots per channel and not
    # more common than at 1e3 shots.
    policy = BudgetPolicy(min_shots=100)
    model = None
    for seed in range(200):
        cand = generate_model("uniform_random", 8, seed)
        r_a, r_b, r_ab = exact_mags(cand, 2, 3)
        if min(r_a, r_b, r_ab) < 0.3:
            continue
        est = estimate_omega(
            cand, 2, 3, policy, (r_a, r_b, r_ab), 0, RngStream(0), UsageLedger(),
            exact=True,
        )
        if max(abs(math.sin(est.omega_hat)), abs(math.cos(est.omega_hat))) <= 0.9:
            model = cand
            break
    assert model is not None

    def clamp_rate(shots):
        clamps = 0
        for seed in range(200):
            stream = RngStream(seed).child(8)
            ledger = UsageLedger()
            mags = tuple(
                estimate_magnitude(model, PowerObservable(p), shots, stream.child(ch), ledger)
                for ch, p in ((0, 2), (1, 3), (2, 5))
            )
            est = estimate_omega(model, 2, 3, policy, mags, 2 * shots, stream.child(7), ledger)
            clamps += est.clamped
        return clamps / 200.0

    rate_high = clamp_rate(10**6)
    assert rate_high < 0.01
    assert clamp_rate(10**3) >= rate_high


# ----------------------------------------------------------------------
# Leaf cutoff
# ----------------------------------------------------------------------

def test_leaf_cutoff_exact_identity():
    model = generate_model("clustered", 10, 8)
    for cutoff in (2, 3):
        tree = make_tree(64, seed=3, leaf_cutoff=cutoff)
        rep = sandwich_test(
            model, 64, tree, BudgetPolicy(s_floor=1e-6), RngStream(1), UsageLedger(),
            exact=True,
        )
        assert rep.angular_error <= 1e-9
        assert len(rep.leaf_estimates) >= 1


def test_leaf_cutoff_reduces_cost():
    model = SpectralModel([0.4], [1.0])  # constant magnitudes
    policy = BudgetPolicy(epsilon=0.1, q=1.0)
    led1, led3 = UsageLedger(), UsageLedger()
    sandwich_test(model, 256, make_tree(256, seed=1), policy, RngStream(0), led1)
    sandwich_test(
        model, 256, make_tree(256, seed=1, leaf_cutoff=4), policy, RngStream(0), led3
    )
    assert led3.u_applications < led1.u_applications


# ----------------------------------------------------------------------
# sequential baseline
# ----------------------------------------------------------------------

def test_sequential_k3_exact():
    model = generate_model("uniform_random", 6, 2)
    rep = sequential_baseline(
        model, 3, BudgetPolicy(s_floor=1e-6), RngStream(0), UsageLedger(), exact=True
    )
    assert [n.value for n in rep.node_estimates] == [3, 2]
    assert rep.mode == "sequential"
    assert rep.angular_error <= 1e-9


def test_sequential_degenerate_at_2():
    # lambda = [0, pi/2] gives r_2 = |(1 + exp(i pi)) / 2| = 0, verified via
    # exact_amplitude before the behavioral assertion.
    model = generate_model("two_level", 2, 0, gap=math.pi / 2)
    assert exact_amplitude(model, 2).modulus < 1e-14
    with pytest.raises(DegenerateNodeError) as err:
        sequential_baseline(model, 8, BudgetPolicy(), RngStream(1), UsageLedger())
    assert err.value.value == 2


def test_sandwich_jumps_over_bad_power():
    # r_5 = 0 (gap pi/5) blocks the chain but not a power-of-two tree.
    model = generate_model("two_level", 2, 0, gap=math.pi / 5)
    assert exact_amplitude(model, 5).modulus < 1e-14
    with pytest.raises(DegenerateNodeError) as err:
        sequential_baseline(model, 64, BudgetPolicy(), RngStream(2), UsageLedger())
    assert err.value.value == 5
    tree = make_tree(64, x_min=0.5)
    assert 5 not in {int(v) for v in tree.all_values()}
    rep = sandwich_test(model, 64, tree, BudgetPolicy(epsilon=0.05), RngStream(3), UsageLedger())
    assert rep.angular_error <= 0.15


# ----------------------------------------------------------------------
# two-layer estimation
# ----------------------------------------------------------------------

def known_phases(model, a, b, c, include=("theta_ab", "theta_bc")):
    known = {
        "theta_a": exact_amplitude(model, a).argument,
        "theta_b": exact_amplitude(model, b).argument,
        "theta_c": exact_amplitude(model, c).argument,
    }
    if "theta_ab" in include:
        known["theta_ab"] = exact_amplitude(model, a + b).argument
    if "theta_bc" in include:
        known["theta_bc"] = exact_amplitude(model, b + c).argument
    return known


def test_two_layer_exact_recovery():
    model = generate_model("uniform_random", 8, 4)
    a, b, c = 3, 4, 5
    theta = two_layer_estimate(
        model, a, b, c, default_phi_grid(6), 1000,
        known_phases(model, a, b, c), RngStream(9), UsageLedger(), exact=True,
    )
    exact = exact_amplitude(model, a + b + c).argument
    assert angular_distance(theta, exact) <= 1e-6


def test_two_layer_shunts_zero_middle_term():
    # gap pi/5: r_{b+c} = r_5 = 0, so theta_bc is unnecessary.
    model = generate_model("two_level", 2, 0, gap=math.pi / 5)
    a, b, c = 2, 2, 3
    assert exact_amplitude(model, b + c).modulus < 1e-14
    theta = two_layer_estimate(
        model, a, b, c, default_phi_grid(6), 1000,
        known_phases(model, a, b, c, include=("theta_ab",)),
        RngStream(9), UsageLedger(), exact=True,
    )
    exact = exact_amplitude(model, a + b + c).argument
    assert angular_distance(theta, exact) <= 1e-6


def test_two_layer_flat_grid_is_ambiguous():
    model = generate_model("uniform_random", 8, 4)
    with pytest.raises(AmbiguityError):
        two_layer_estimate(
            model, 3, 4, 5, [(0.0, 0.0)] * 4, 100,
            known_phases(model, 3, 4, 5), RngStream(9), UsageLedger(), exact=True,
        )


def test_two_layer_two_unknowns():
    model = generate_model("uniform_random", 8, 14)
    a, b, c = 2, 3, 4
    theta = two_layer_estimate(
        model, a, b, c, default_phi_grid(8), 1000,
        known_phases(model, a, b, c, include=("theta_ab",)),
        RngStream(9), UsageLedger(), exact=True,
    )
    exact = exact_amplitude(model, a + b + c).argument
    assert angular_distance(theta, exact) <= 1e-4


def test_two_layer_requires_enough_grid_and_knowns():
    model = generate_model("uniform_random", 8, 4)
    with pytest.raises(ValueError):
        two_layer_estimate(
            model, 3, 4, 5, default_phi_grid(4)[:3], 100,
            known_phases(model, 3, 4, 5), RngStream(9), UsageLedger(), exact=True,
        )
    with pytest.raises(ValueError):
        two_layer_estimate(
            model, 3, 4, 5, default_phi_grid(6), 100,
            {"theta_a": 0.0}, RngStream(9), UsageLedger(), exact=True,
        )
    with pytest.raises(ValueError):
        two_layer_estimate(
            model, 3, 4, 5, default_phi_grid(6), 100,
            known_phases(model, 3, 4, 5, include=()),
            RngStream(9), UsageLedger(), exact=True,
        )


def test_two_layer_noisy_sanity():
    model = generate_model("ground_dominated", 8, 6, eta=0.85)
    a, b, c = 3, 3, 4
    theta = two_layer_estimate(
        model, a, b, c, default_phi_grid(6), 10**6,
        known_phases(model, a, b, c), RngStream(5), UsageLedger(),
    )
    exact = exact_amplitude(model, a + b + c).argument
    assert angular_distance(theta, exact) <= 0.05
