"""Phase recovery by sandwiched selective phase rotations.

For powers a and b, the magnitude of <psi|U^a R_psi^phi U^b|psi> obeys

    s_ab^2 = r_{a+b}^2 + 4 r_a^2 r_b^2 sin^2(phi)
             - 4 r_{a+b} r_a r_b sin(phi) sin(omega),
    omega  = theta_a + theta_b - theta_{a+b} + phi,

so measured magnitudes {r_a, r_b, r_{a+b}, s_ab} pin down sin(omega):

    sin(omega) = (4 r_a^2 r_b^2 sin^2(phi) + r_{a+b}^2 - s_ab^2)
                 / (4 r_{a+b} r_a r_b sin(phi)).

A single phi leaves a two-fold ambiguity in omega.  Measuring at phi and at
phi + pi/2 resolves it: since omega(phi) = Delta + phi with a phi-independent
Delta, the two sine estimates are sin(Delta + phi) and cos(Delta + phi), and
atan2 recovers omega(phi) uniquely mod 2pi.

The relation theta_{a+b} = theta_a + theta_b - omega + phi is then iterated
bottom-up over a random binary sum tree; value-1 leaves contribute a single
Hadamard-test estimate of theta_1, so the root phase is

    theta_k = k * theta_1 + sum over non-trivial nodes of (phi - omega),

with the exactly-known phi terms kept explicit.  Shot budgets per node scale
as (k / value)^q / s^6, which equalizes the variance contributions of the
heights for q > 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .measurement import (
    PowerObservable,
    RngStream,
    SandwichObservable,
    TwoLayerObservable,
    UsageLedger,
    estimate_magnitude,
    hadamard_test_estimate,
)
from .spectral import (
    SpectralModel,
    angular_distance,
    exact_amplitude,
    exact_sandwich_magnitude,
    exact_two_layer_magnitude,
    phase_factor,
    wrap_angle,
)
from .sumtree import SumTree, degenerate_chain_tree, tree_smin

# Stream path purposes (first path entry under the run stream).
_P_LEAF = 0
_P_PILOT = 1
_P_CHANNEL = 2
_P_TWO_LAYER = 3

# Channel indices within a node.
_CH_RA, _CH_RB, _CH_RAB, _CH_S1, _CH_S2 = range(5)

# Single-channel budgets are capped here: the binomial sampler needs C-long
# shot counts, and relative shot noise at 2^62 draws is below float
# resolution anyway.
_SHOT_CAP = 1 << 62


class DegenerateNodeError(RuntimeError):
    """A node magnitude fell below the floor; the recursion cannot cross it."""

    def __init__(self, value: int, magnitudes: tuple[float, float, float]):
        self.value = value
        self.magnitudes = magnitudes
        super().__init__(
            f"degenerate node value {value}: magnitudes {magnitudes} below floor"
        )


class AmbiguityError(RuntimeError):
    """The two-layer fit cannot identify the target phase."""

    def __init__(self, message: str, candidates: list[float]):
        self.candidates = candidates
        super().__init__(message)


@dataclass(frozen=True)
class BudgetPolicy:
    """Shot allocation policy.

    Per non-trivial node of value v the budget is

        shots = max(min_shots, ceil(C * (k / v)^q * s_hat^-6)),

    with s_hat the floored minimum of the node's magnitude estimates.  When
    ``calibrate`` is set (the default), the driver scales C = budget_scale by
    sum((v / k)^q) / epsilon^2 over the tree, which targets a total omega
    variance of about epsilon^2; with calibrate off, budget_scale is used
    verbatim.  theta_1 gets ceil(theta1_scale * (k / epsilon)^2) Hadamard
    shots.

    q >= 1; q > 1 makes the per-height variance sum telescope, q = 1 is
    admitted but adds a log(k) factor to the variance.  phi1 must have both
    sin(phi1) and cos(phi1) nonzero so that the paired measurement at
    phi1 + pi/2 has a nonvanishing denominator.
    """

    q: float = 2.0
    epsilon: float = 0.05
    phi1: float = math.pi / 4.0
    s_floor: float = 1e-3
    min_shots: int = 100
    budget_scale: float = 1.0
    theta1_scale: float = 16.0
    calibrate: bool = True
    reuse_magnitudes: bool = False

    def __post_init__(self):
        if self.q < 1.0:
            raise ValueError("q must be >= 1")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if abs(math.sin(self.phi1)) < 1e-9 or abs(math.cos(self.phi1)) < 1e-9:
            raise ValueError("phi1 must have nonzero sine and cosine")
        if not 0.0 < self.s_floor <= 1.0:
            raise ValueError("s_floor must lie in (0, 1]")
        if self.min_shots < 1:
            raise ValueError("min_shots must be >= 1")
        if self.budget_scale <= 0.0 or self.theta1_scale <= 0.0:
            raise ValueError("budget scales must be positive")


@dataclass(frozen=True)
class NodeEstimate:
    """Result of one sandwich measurement at a non-trivial node."""

    height: int
    position: int
    value: int
    a: int
    b: int
    omega_hat: float
    r_a_hat: float
    r_b_hat: float
    r_ab_hat: float
    s1_hat: float
    s2_hat: float
    shots_r_a: int
    shots_r_b: int
    shots_r_ab: int
    shots_s1: int
    shots_s2: int
    clamped: bool


@dataclass(frozen=True)
class NodeBudget:
    height: int
    position: int
    value: int
    a: int
    b: int
    floor_estimate: float
    node_shots: int
    shots_r: int
    shots_s: int
    pilot_shots: int


@dataclass(frozen=True)
class ShotPlan:
    """Planned per-node budgets plus the theta_1 Hadamard budget."""

    scale: float
    theta1_shots: int
    node_budgets: list[NodeBudget]
    predicted_u_applications: int


@dataclass(frozen=True)
class LeafEstimate:
    """Hadamard-test phase estimate shared by all leaves of one value."""

    value: int
    count: int
    theta_hat: float
    shots: int


@dataclass
class EstimateReport:
    """Full record of one estimation run.

    theta_k_hat is recomputable from the parts:
    sum(count * theta_hat over leaf estimates) plus sum(phi1 - omega_hat over
    node estimates), wrapped; the exact phase is carried alongside purely as
    simulation privilege for error reporting.
    """

    mode: str
    k: int
    phi1: float
    q: float
    epsilon: float
    theta_k_hat: float
    leaf_estimates: list[LeafEstimate]
    node_estimates: list[NodeEstimate]
    theta_k_exact: float
    angular_error: float
    ledger: UsageLedger
    tree_smin: float
    tree_smin_no_root: float
    plan: ShotPlan | None
    exact_mode: bool
    master_seed: int | None = None
    config: dict = field(default_factory=dict)

    @property
    def theta1_hat(self) -> float | None:
        for leaf in self.leaf_estimates:
            if leaf.value == 1:
                return leaf.theta_hat
        return None

    def recombined_theta(self) -> float:
        return _combine(self.leaf_estimates, self.node_estimates, self.phi1)


def _combine(leaves, nodes, phi1: float) -> float:
    total = 0.0
    for leaf in leaves:
        total += leaf.count * leaf.theta_hat
    for est in nodes:
        total += phi1 - est.omega_hat
    return wrap_angle(total)


def sine_from_magnitudes(
    r_a: float, r_b: float, r_ab: float, s: float, phi: float
) -> tuple[float, bool]:
    """Invert the sandwich magnitude relation for sin(omega).

    Returns the value clamped to [-1, 1] and a flag marking whether clamping
    fired (shot noise can push the raw ratio outside the valid range).
    """
    sphi = math.sin(phi)
    num = 4.0 * (r_a * r_b * sphi) ** 2 + r_ab * r_ab - s * s
    den = 4.0 * r_ab * r_a * r_b * sphi
    raw = num / den
    if raw > 1.0:
        return 1.0, True
    if raw < -1.0:
        return -1.0, True
    return raw, False


def estimate_omega(
    model: SpectralModel,
    a: int,
    b: int,
    policy: BudgetPolicy,
    magnitudes: tuple[float, float, float],
    shots_s: int,
    rng: RngStream,
    ledger: UsageLedger,
    exact: bool = False,
    height: int = 0,
    position: int = 1,
    channel_shots: tuple[int, int, int] = (0, 0, 0),
) -> NodeEstimate:
    """Estimate omega = theta_a + theta_b - theta_{a+b} + phi1 for one node.

    ``magnitudes`` are the caller's estimates of (r_a, r_b, r_{a+b}); the
    sandwich magnitude is measured here at phi1 and phi1 + pi/2, half of
    shots_s each.  Raises DegenerateNodeError when any magnitude estimate
    undercuts the policy floor, leaving the caller to resample the tree or
    abort.
    """
    if a < 1 or b < 1:
        raise ValueError("omega estimation needs powers a, b >= 1")
    r_a, r_b, r_ab = magnitudes
    if min(r_a, r_b, r_ab) < policy.s_floor:
        offender = min(zip((r_a, r_b, r_ab), (a, b, a + b)))[1]
        raise DegenerateNodeError(offender, (r_a, r_b, r_ab))
    phi1 = policy.phi1
    phi2 = phi1 + math.pi / 2.0
    if exact:
        s1 = exact_sandwich_magnitude(model, a, b, phi1)
        s2 = exact_sandwich_magnitude(model, a, b, phi2)
        shots_s1 = shots_s2 = 0
    else:
        shots_s2 = shots_s // 2
        shots_s1 = shots_s - shots_s2
        if shots_s2 < 1:
            raise ValueError("sandwich channel needs at least 2 shots")
        s1 = estimate_magnitude(
            model, SandwichObservable(a, b, phi1), shots_s1, rng.child(_CH_S1), ledger
        )
        s2 = estimate_magnitude(
            model, SandwichObservable(a, b, phi2), shots_s2, rng.child(_CH_S2), ledger
        )
    v1, c1 = sine_from_magnitudes(r_a, r_b, r_ab, s1, phi1)
    v2, c2 = sine_from_magnitudes(r_a, r_b, r_ab, s2, phi2)
    # v1 = sin(Delta + phi1), v2 = sin(Delta + phi2) = cos(Delta + phi1).
    omega = wrap_angle(math.atan2(v1, v2))
    return NodeEstimate(
        height=height,
        position=position,
        value=a + b,
        a=a,
        b=b,
        omega_hat=omega,
        r_a_hat=r_a,
        r_b_hat=r_b,
        r_ab_hat=r_ab,
        s1_hat=s1,
        s2_hat=s2,
        shots_r_a=channel_shots[0],
        shots_r_b=channel_shots[1],
        shots_r_ab=channel_shots[2],
        shots_s1=shots_s1,
        shots_s2=shots_s2,
        clamped=c1 or c2,
    )


def variance_weight_sum(tree: SumTree, q: float) -> float:
    """sum((value / k)^q) over non-trivial nodes; the calibration constant."""
    k = tree.k
    return float(sum((node.value / k) ** q for node in tree.nontrivial_nodes()))


def allocate_shots(
    tree: SumTree,
    policy: BudgetPolicy,
    k: int,
    floor_estimates,
) -> ShotPlan:
    """Translate magnitude floor estimates into per-node shot budgets.

    ``floor_estimates`` aligns with tree.nontrivial_nodes(); each entry is
    the node's minimum magnitude estimate before flooring.  The node budget
    is split into equal quarters for the three magnitude channels and the
    sandwich pair (each phi value getting one eighth), every channel floored
    at min_shots.
    """
    nodes = tree.nontrivial_nodes()
    floors = list(floor_estimates)
    if len(floors) != len(nodes):
        raise ValueError("floor estimates must align with the non-trivial nodes")
    C = policy.budget_scale
    budgets = []
    predicted_u = 0
    for node, floor_raw in zip(nodes, floors):
        s_hat = max(policy.s_floor, float(floor_raw))
        raw = C * (k / node.value) ** policy.q * s_hat**-6
        node_shots = min(max(policy.min_shots, math.ceil(raw)), _SHOT_CAP)
        shots_r = max(policy.min_shots, node_shots // 4)
        shots_s = max(policy.min_shots, node_shots // 8)
        budgets.append(
            NodeBudget(
                height=node.height,
                position=node.position,
                value=node.value,
                a=node.left_value,
                b=node.right_value,
                floor_estimate=float(floor_raw),
                node_shots=node_shots,
                shots_r=shots_r,
                shots_s=shots_s,
                pilot_shots=policy.min_shots,
            )
        )
        a, b = node.left_value, node.right_value
        predicted_u += shots_r * (a + b + (a + b)) + 2 * shots_s * (a + b)
        predicted_u += 2 * policy.min_shots * (a + b)  # pilot pass
    theta1_shots = theta1_budget(policy, k)
    predicted_u += theta1_shots
    return ShotPlan(
        scale=C,
        theta1_shots=theta1_shots,
        node_budgets=budgets,
        predicted_u_applications=predicted_u,
    )


def theta1_budget(policy: BudgetPolicy, k: int) -> int:
    """Hadamard budget for the unit-power phase: ceil(C1 (k / eps)^2)."""
    return min(math.ceil(policy.theta1_scale * (k / policy.epsilon) ** 2), _SHOT_CAP)


def _leaf_budget(policy: BudgetPolicy, count: int, n_classes: int) -> int:
    # Generalizes the theta_1 budget to leaf-cutoff > 1: a class whose
    # estimate is reused by `count` leaves gets an error share eps/n_classes.
    raw = math.ceil(policy.theta1_scale * (count * n_classes / policy.epsilon) ** 2)
    return min(raw, _SHOT_CAP)


def effective_scale(tree: SumTree, policy: BudgetPolicy) -> float:
    """Budget multiplier actually used by the driver for this tree."""
    if not policy.calibrate:
        return policy.budget_scale
    weight = variance_weight_sum(tree, policy.q)
    if weight == 0.0:  # no non-trivial nodes (k = 1): nothing to scale
        return policy.budget_scale
    return policy.budget_scale * weight / policy.epsilon**2


def sandwich_test(
    model: SpectralModel,
    k: int,
    tree: SumTree,
    policy: BudgetPolicy,
    rng: RngStream,
    ledger: UsageLedger,
    exact: bool = False,
    mode: str = "sandwich",
) -> EstimateReport:
    """Run the full recursion over a tree and estimate theta_k.

    Stages: (1) one Hadamard-test phase estimate per distinct leaf value;
    (2) a cheap pilot pass of min_shots per magnitude to set node budgets;
    (3) per node, magnitude channels then the paired sandwich measurement;
    (4) the deterministic fold theta_k = sum(leaf phases) + sum(phi1 - omega).
    Trivial nodes pass their nonzero child's phase through and never appear
    in the fold.

    With ``exact=True`` every measurement is replaced by its true value and
    nothing is recorded to the ledger: the recursion is then an identity up
    to float error.  Measurements draw from streams keyed by (purpose, node
    index, channel), so results for a fixed master seed do not depend on
    execution order; run totals are merged into the caller's ledger at the
    end.
    """
    if tree.k != k:
        raise ValueError(f"tree root {tree.k} does not match k={k}")
    run_ledger = UsageLedger()
    nodes = tree.nontrivial_nodes()

    leaf_counts = {v: c for v, c in sorted(tree.leaf_value_counts().items()) if v >= 1}
    n_classes = len(leaf_counts)
    leaf_estimates = []
    for value, count in leaf_counts.items():
        if exact:
            theta = exact_amplitude(model, value).argument
            shots = 0
        else:
            shots = _leaf_budget(policy, count, n_classes)
            amp = hadamard_test_estimate(
                model, value, shots, rng.child(_P_LEAF, value), run_ledger
            )
            theta = amp.argument
        leaf_estimates.append(LeafEstimate(value, count, theta, shots))

    plan = None
    node_estimates = []
    if exact:
        for i, node in enumerate(nodes):
            a, b = node.left_value, node.right_value
            mags = (
                exact_amplitude(model, a).modulus,
                exact_amplitude(model, b).modulus,
                exact_amplitude(model, node.value).modulus,
            )
            node_estimates.append(
                estimate_omega(
                    model, a, b, policy, mags, 0,
                    rng.child(_P_CHANNEL, i), run_ledger,
                    exact=True, height=node.height, position=node.position,
                )
            )
    else:
        # A pilot reading below the floor is confirmed at ~16 / s_floor^2
        # shots before the node is declared degenerate; min_shots pilots on a
        # healthy-but-small magnitude read zero far too often to act on.
        confirm_shots = min(math.ceil(16.0 / policy.s_floor**2), _SHOT_CAP)
        pilot_floors = []
        dead_powers: dict[int, tuple] = {}
        for i, node in enumerate(nodes):
            a, b = node.left_value, node.right_value
            pilot = rng.child(_P_PILOT, i)
            readings = []
            for ch, power in ((_CH_RA, a), (_CH_RB, b), (_CH_RAB, node.value)):
                if power in dead_powers:
                    readings.append(0.0)
                    continue
                r = estimate_magnitude(
                    model, PowerObservable(power), policy.min_shots,
                    pilot.child(ch), run_ledger,
                )
                if r < policy.s_floor:
                    r = estimate_magnitude(
                        model, PowerObservable(power), confirm_shots,
                        pilot.child(ch + 3), run_ledger,
                    )
                    if r < policy.s_floor:
                        dead_powers[power] = tuple(readings) + (r,)
                readings.append(r)
            pilot_floors.append(min(readings))
        if dead_powers:
            # Finish the scan before aborting, then name the smallest dead
            # power: that is the one a strictly sequential pass would hit.
            power = min(dead_powers)
            raise DegenerateNodeError(power, dead_powers[power])
        scaled = replace(policy, budget_scale=effective_scale(tree, policy))
        plan = allocate_shots(tree, scaled, k, pilot_floors)
        cache: dict[int, float] = {}

        def measured_r(power: int, shots: int, stream: RngStream) -> float:
            if policy.reuse_magnitudes and power in cache:
                return cache[power]
            r = estimate_magnitude(
                model, PowerObservable(power), shots, stream, run_ledger
            )
            if policy.reuse_magnitudes:
                cache[power] = r
            return r

        for i, (node, budget) in enumerate(zip(nodes, plan.node_budgets)):
            a, b = node.left_value, node.right_value
            chan = rng.child(_P_CHANNEL, i)
            r_a = measured_r(a, budget.shots_r, chan.child(_CH_RA))
            r_b = measured_r(b, budget.shots_r, chan.child(_CH_RB))
            r_ab = measured_r(node.value, budget.shots_r, chan.child(_CH_RAB))
            node_estimates.append(
                estimate_omega(
                    model, a, b, policy, (r_a, r_b, r_ab),
                    2 * budget.shots_s, chan, run_ledger,
                    height=node.height, position=node.position,
                    channel_shots=(budget.shots_r, budget.shots_r, budget.shots_r),
                )
            )

    theta_hat = _combine(leaf_estimates, node_estimates, policy.phi1)
    exact_theta = exact_amplitude(model, k).argument
    report = EstimateReport(
        mode=mode,
        k=k,
        phi1=policy.phi1,
        q=policy.q,
        epsilon=policy.epsilon,
        theta_k_hat=theta_hat,
        leaf_estimates=leaf_estimates,
        node_estimates=node_estimates,
        theta_k_exact=exact_theta,
        angular_error=angular_distance(theta_hat, exact_theta),
        ledger=run_ledger.snapshot(),
        tree_smin=tree_smin(tree, model),
        tree_smin_no_root=tree_smin(tree, model, exclude_root=True),
        plan=plan,
        exact_mode=exact,
        master_seed=rng.master_seed,
    )
    ledger.merge(run_ledger)
    return report


def sequential_baseline(
    model: SpectralModel,
    k: int,
    policy: BudgetPolicy,
    rng: RngStream,
    ledger: UsageLedger,
    exact: bool = False,
) -> EstimateReport:
    """Sequential proxy: the sandwich recursion over the chain tree.

    Every power k' <= k appears as a node value, so a single overlap that
    undercuts the floor anywhere below k kills the run with a
    DegenerateNodeError naming the offending power.
    """
    tree = degenerate_chain_tree(k)
    return sandwich_test(
        model, k, tree, policy, rng, ledger, exact=exact, mode="sequential"
    )


def default_phi_grid(n_points: int = 6) -> list[tuple[float, float]]:
    """A spread of (phi1, phi2) pairs keeping both rotations effective."""
    base = [
        (math.pi / 4, math.pi / 4),
        (math.pi / 4, 3 * math.pi / 4),
        (3 * math.pi / 4, math.pi / 4),
        (math.pi / 3, math.pi / 6),
        (math.pi / 6, math.pi / 3),
        (2 * math.pi / 5, 2 * math.pi / 5),
        (math.pi / 5, 3 * math.pi / 5),
        (3 * math.pi / 5, math.pi / 5),
    ]
    if n_points > len(base):
        raise ValueError(f"at most {len(base)} default grid points")
    return base[:n_points]


def two_layer_estimate(
    model: SpectralModel,
    a: int,
    b: int,
    c: int,
    phi_grid: list[tuple[float, float]],
    shots_per_point: int,
    known: dict[str, float],
    rng: RngStream,
    ledger: UsageLedger,
    exact: bool = False,
    shunt_threshold: float = 1e-3,
    s_floor: float = 1e-3,
) -> float:
    """Recover theta_{a+b+c} from two-layer sandwich magnitudes.

    The magnitude over the grid follows the four-term expansion

        s = |T0 + Phi1 T1 + Phi2 T2 + Phi1 Phi2 T3|,
        T0 = r_{a+b+c} e^{i theta_{a+b+c}},   T1 = r_a r_{b+c} e^{i(th_a + th_{b+c})},
        T2 = r_{a+b} r_c e^{i(th_{a+b} + th_c)}, T3 = r_a r_b r_c e^{i(th_a + th_b + th_c)}.

    ``known`` must provide theta_a, theta_b, theta_c and may provide
    theta_ab and/or theta_bc.  Terms whose magnitude coefficient falls below
    ``shunt_threshold`` are dropped (they cannot influence s); whatever
    middle phases remain unknown after shunting are fitted jointly with the
    target by least squares over the grid.  A flat residual landscape (for
    example phi1 = phi2 = 0) raises AmbiguityError with candidate phases.
    """
    if min(a, b, c) < 1:
        raise ValueError("two-layer estimation needs powers a, b, c >= 1")
    if len(phi_grid) < 4:
        raise ValueError("need at least 4 grid points")
    for key in ("theta_a", "theta_b", "theta_c"):
        if key not in known:
            raise ValueError(f"known phases must include {key}")
    run_ledger = UsageLedger()

    powers = {"a": a, "b": b, "c": c, "ab": a + b, "bc": b + c, "abc": a + b + c}
    mags = {}
    for j, (name, power) in enumerate(sorted(powers.items())):
        if exact:
            mags[name] = exact_amplitude(model, power).modulus
        else:
            mags[name] = estimate_magnitude(
                model,
                PowerObservable(power),
                shots_per_point,
                rng.child(_P_TWO_LAYER, 100 + j),
                run_ledger,
            )

    coeff = {
        "t0": mags["abc"],
        "t1": mags["a"] * mags["bc"],
        "t2": mags["ab"] * mags["c"],
        "t3": mags["a"] * mags["b"] * mags["c"],
    }
    retained = {name for name, value in coeff.items() if value >= shunt_threshold}
    if "t0" not in retained:
        raise AmbiguityError(
            "target term magnitude below the shunt threshold; theta_{a+b+c} "
            "cannot be identified",
            [],
        )
    if any(v < s_floor for v in (coeff[name] for name in retained)):
        raise DegenerateNodeError(a + b + c, (coeff["t0"], coeff["t1"], coeff["t2"]))

    unknowns = ["theta_abc"]
    if "t1" in retained and "theta_bc" not in known:
        unknowns.append("theta_bc")
    if "t2" in retained and "theta_ab" not in known:
        unknowns.append("theta_ab")
    if len(unknowns) > 2:
        raise ValueError(
            "both middle phases unknown and retained; provide theta_ab or theta_bc"
        )

    s_meas = []
    for g, (phi1, phi2) in enumerate(phi_grid):
        if exact:
            s_meas.append(exact_two_layer_magnitude(model, a, b, c, phi1, phi2))
        else:
            s_meas.append(
                estimate_magnitude(
                    model,
                    TwoLayerObservable(a, b, c, phi1, phi2),
                    shots_per_point,
                    rng.child(_P_TWO_LAYER, g),
                    run_ledger,
                )
            )
    s_meas = np.asarray(s_meas)
    factors = np.array(
        [[phase_factor(p1), phase_factor(p2)] for p1, p2 in phi_grid], dtype=complex
    )

    th_a, th_b, th_c = known["theta_a"], known["theta_b"], known["theta_c"]

    def residual(theta_abc: float, theta_bc: float, theta_ab: float) -> float:
        t0 = coeff["t0"] * np.exp(1j * theta_abc) if "t0" in retained else 0.0
        t1 = coeff["t1"] * np.exp(1j * (th_a + theta_bc)) if "t1" in retained else 0.0
        t2 = coeff["t2"] * np.exp(1j * (theta_ab + th_c)) if "t2" in retained else 0.0
        t3 = coeff["t3"] * np.exp(1j * (th_a + th_b + th_c)) if "t3" in retained else 0.0
        s_model = np.abs(
            t0 + factors[:, 0] * t1 + factors[:, 1] * t2 + factors[:, 0] * factors[:, 1] * t3
        )
        return float(np.sum((s_model - s_meas) ** 2))

    def residual_vec(vec) -> float:
        params = {
            "theta_bc": known.get("theta_bc", 0.0),
            "theta_ab": known.get("theta_ab", 0.0),
        }
        for name, value in zip(unknowns, vec):
            params[name] = value
        return residual(vec[0], params["theta_bc"], params["theta_ab"])

    # Coarse scan for a starting point and for flatness detection.
    n_scan = 721
    grid_1d = np.linspace(-math.pi, math.pi, n_scan, endpoint=False)
    if len(unknowns) == 1:
        scan_vals = np.array([residual_vec([t]) for t in grid_1d])
        scan_points = [[t] for t in grid_1d]
    else:
        coarse = np.linspace(-math.pi, math.pi, 90, endpoint=False)
        scan_points = [[t1, t2] for t1 in coarse for t2 in coarse]
        scan_vals = np.array([residual_vec(p) for p in scan_points])
    span = float(scan_vals.max() - scan_vals.min())
    if span <= 1e-10 * (1.0 + float(scan_vals.max())):
        raise AmbiguityError(
            "flat residual landscape; no phase is identifiable at this phi grid",
            [float(p[0]) for p in scan_points[:: max(1, len(scan_points) // 8)]],
        )
    best = int(np.argmin(scan_vals))
    start = scan_points[best]

    if len(unknowns) == 1:
        step = 2 * math.pi / n_scan
        result = minimize_scalar(
            lambda t: residual_vec([t]),
            bounds=(start[0] - 2 * step, start[0] + 2 * step),
            method="bounded",
            options={"xatol": 1e-12},
        )
        solution = [float(result.x)]
    else:
        result = minimize(
            residual_vec,
            np.asarray(start, dtype=float),
            method="Nelder-Mead",
            options={"xatol": 1e-12, "fatol": 1e-18, "maxiter": 4000},
        )
        solution = [float(v) for v in result.x]

    ledger.merge(run_ledger)
    return wrap_angle(solution[0])
