"""Runtime-checkable robustness machinery.

Everything here is a pure function over recorded opinion layers: the
geometrically edge-weighted Lyapunov functional and its per-agent
decomposition, per-update averaging/robustness predicates, the coupling
monotonicity check, variation functionals, the total-variation weight gap,
and the parameter calculators for the clamped and granular rules.

Inequality audits use an absolute slack of 1e-9 scaled by the magnitude of
the compared quantities; passing a `fractions.Fraction` ratio (with exact
layers) switches the Lyapunov sums to rational arithmetic so the algebraic
identities can be certified without slack.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

import numpy as np

from .dynamics import SimConfig, Simulation, _segment_means
from .graphs import Graph, generate

SLACK_SCALE = 1e-9


def _slack(*magnitudes: float) -> float:
    return SLACK_SCALE * max(1.0, *(abs(float(m)) for m in magnitudes))


class AuditError(ValueError):
    """Audit called with inconsistent inputs."""


@dataclass(frozen=True)
class RobustnessParams:
    """(eps, gamma, eta): averaging slack, anchor-interval half-width, and
    the minimum squared-distance gain per unit of opinion movement."""

    eps: float
    gamma: float
    eta: float

    def __post_init__(self):
        if self.eps <= 0 or self.gamma <= 0 or self.eta <= 0:
            raise AuditError("eps, gamma, eta must all be positive")
        if self.gamma > self.eps + 1e-15:
            raise AuditError("gamma must not exceed eps")


@dataclass(frozen=True)
class LyapunovConfig:
    """Center node and geometric ratio for the edge weights r^d(center, e)."""

    center: int
    ratio: float | Fraction

    def __post_init__(self):
        if not (0 < self.ratio < 1):
            raise AuditError("ratio must lie in (0, 1)")


@dataclass
class AuditReport:
    condition: str
    passed: bool
    worst_violation: float
    witness: tuple | None = None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "passed": bool(self.passed),
            "worst_violation": float(self.worst_violation),
            "witness": list(self.witness) if self.witness is not None else None,
            "details": self.details,
        }


# -- Lyapunov functional ------------------------------------------------------

def _edge_weights(g: Graph, cfg: LyapunovConfig):
    """Per stored edge: ratio^d(center, e).  Rational if ratio is a Fraction."""
    dists = g.edge_distances_from(cfg.center)
    if isinstance(cfg.ratio, Fraction):
        return [cfg.ratio ** int(d) for d in dists]
    return np.power(float(cfg.ratio), dists, dtype=np.float64)


def lyapunov(g: Graph, cfg: LyapunovConfig, layer_t, layer_t1) -> float | Fraction:
    """Sum over ordered edge pairs (j,k) of r^d(center,e) * (A_{j,t+1} - A_{k,t})^2.

    Each undirected edge contributes both orientations."""
    w = _edge_weights(g, cfg)
    if isinstance(cfg.ratio, Fraction):
        total = Fraction(0)
        for (j, k), we in zip(g.edges, w):
            a, b = layer_t1[j] - layer_t[k], layer_t1[k] - layer_t[j]
            total += we * (a * a + b * b)
        return total
    a_t = np.asarray(layer_t, dtype=np.float64)
    a_t1 = np.asarray(layer_t1, dtype=np.float64)
    ej, ek = g.edges[:, 0], g.edges[:, 1]
    d1 = a_t1[ej] - a_t[ek]
    d2 = a_t1[ek] - a_t[ej]
    return float(np.sum(w * (d1 * d1 + d2 * d2)))


def j_plus(g: Graph, cfg: LyapunovConfig, j: int, layer_t, layer_t1) -> float | Fraction:
    """Agent j's forward share: sum_k w(j,k) (A_{j,t+1} - A_{k,t})^2."""
    return _j_term(g, cfg, j, layer_t1[j], layer_t)


def j_minus(g: Graph, cfg: LyapunovConfig, j: int, layer_t, layer_tm1) -> float | Fraction:
    """Agent j's backward share: sum_k w(j,k) (A_{j,t-1} - A_{k,t})^2."""
    return _j_term(g, cfg, j, layer_tm1[j], layer_t)


def _j_term(g: Graph, cfg: LyapunovConfig, j: int, own_value, other_layer):
    dist = g.distances_from(cfg.center)
    nbrs = g.neighbors(j)
    d_e = np.minimum(dist[j], dist[nbrs])
    if isinstance(cfg.ratio, Fraction):
        total = Fraction(0)
        for k, de in zip(nbrs, d_e):
            diff = own_value - other_layer[k]
            total += (cfg.ratio ** int(de)) * diff * diff
        return total
    w = np.power(float(cfg.ratio), d_e, dtype=np.float64)
    diff = float(own_value) - np.asarray(other_layer, dtype=np.float64)[nbrs]
    return float(np.sum(w * diff * diff))


def _flat_weights(g: Graph, cfg: LyapunovConfig) -> np.ndarray:
    """Weights aligned with the CSR position array: w[pos] = r^d(center,(owner,nbr))."""
    dist = g.distances_from(cfg.center)
    owner = np.repeat(np.arange(g.n), g.degrees)
    d_e = np.minimum(dist[owner], dist[g.indices])
    return np.power(float(cfg.ratio), d_e, dtype=np.float64)


def _ragged_positions(indptr: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """CSR positions covering the adjacency segments of the given nodes."""
    lens = indptr[nodes + 1] - indptr[nodes]
    total = int(lens.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    starts = indptr[nodes]
    offsets = np.arange(total) - np.repeat(np.cumsum(lens) - lens, lens)
    return np.repeat(starts, lens) + offsets


def lyapunov_series(g: Graph, cfg: LyapunovConfig, opinions: np.ndarray,
                    recompute_every: int = 256) -> np.ndarray:
    """L(t) for t = 0..T-1 over a full recording (T+1 layers).

    Steps where an agent's opinion matches its value two steps earlier
    contribute nothing to the jump, so the series is updated incrementally
    from the agents that moved, with a full recomputation every
    `recompute_every` steps to bound float drift."""
    opinions = np.asarray(opinions, dtype=np.float64)
    T = opinions.shape[0] - 1
    if T < 1:
        raise AuditError("need at least two layers")
    w_flat = _flat_weights(g, cfg)
    owner = np.repeat(np.arange(g.n), g.degrees)
    series = np.empty(T)
    series[0] = lyapunov(g, cfg, opinions[0], opinions[1])
    for t in range(1, T):
        if t % recompute_every == 0:
            series[t] = lyapunov(g, cfg, opinions[t], opinions[t + 1])
            continue
        a0, a1, a2 = opinions[t - 1], opinions[t], opinions[t + 1]
        moved = np.flatnonzero(a2 != a0)
        if moved.size == 0:
            series[t] = series[t - 1]
            continue
        pos = _ragged_positions(g.indptr, moved)
        own = owner[pos]
        nbr = g.indices[pos]
        fwd = a2[own] - a1[nbr]
        bwd = a0[own] - a1[nbr]
        delta = np.sum(w_flat[pos] * (fwd * fwd - bwd * bwd))
        series[t] = series[t - 1] + delta
    return series


# -- per-update conditions ----------------------------------------------------

def check_A2(x_new: float, y_true: float, eps: float) -> AuditReport:
    """Approximate averaging: the update stays within eps of the true
    neighbor average."""
    violation = abs(x_new - y_true) - eps
    return AuditReport(
        condition="A2",
        passed=violation <= _slack(x_new, y_true, eps),
        worst_violation=float(max(violation, 0.0)),
        witness=None if violation <= _slack(x_new, y_true, eps) else (x_new, y_true),
    )


def _a3_candidates(y: float, gamma: float, points: int) -> np.ndarray:
    if points < 3:
        raise AuditError("v_grid_points must be at least 3")
    return np.linspace(y - gamma, y + gamma, points)


def check_A3(x_prev2: float, y: float, x_new: float,
             params: RobustnessParams, v_grid_points: int = 33) -> AuditReport:
    """Robustness: moving from x_prev2 to x_new must shrink the squared
    distance to every v within gamma of the neighbor average y by at least
    eta times the movement.

    The right-hand side is affine in v, so its minimum over the interval is
    attained at an endpoint (the one nearer the midpoint of the move); the
    uniform grid is checked as well."""
    grid = _a3_candidates(y, params.gamma, v_grid_points)
    mid = 0.5 * (x_prev2 + x_new)
    v_star = y + params.gamma if mid >= y else y - params.gamma
    candidates = np.append(grid, v_star)
    lhs = params.eta * abs(x_new - x_prev2)
    rhs = (x_prev2 - candidates) ** 2 - (x_new - candidates) ** 2
    violations = lhs - rhs
    worst_idx = int(np.argmax(violations))
    worst = float(violations[worst_idx])
    slack = _slack(lhs, float(rhs[worst_idx]))
    return AuditReport(
        condition="A3",
        passed=worst <= slack,
        worst_violation=max(worst, 0.0),
        witness=None if worst <= slack else (x_prev2, x_new, float(candidates[worst_idx])),
    )


def _true_means(g: Graph, layer: np.ndarray) -> np.ndarray:
    return _segment_means(g, layer[g.indices])


def audit_a3_trajectory(g: Graph, opinions: np.ndarray,
                        params: RobustnessParams,
                        v_grid_points: int = 33,
                        skip: Iterable[int] = ()) -> AuditReport:
    """check_A3 over every recorded update of a full trajectory.

    The anchor for the update at time t is the layer at t-2 (the initial
    layer doubles as t = -1); the v-interval is centered on the undistorted
    neighbor average of layer t-1.  Nodes in `skip` (bots) are exempt."""
    opinions = np.asarray(opinions, dtype=np.float64)
    T = opinions.shape[0] - 1
    mask = np.ones(g.n, dtype=bool)
    for i_ in skip:
        mask[i_] = False
    offsets = np.linspace(-params.gamma, params.gamma, v_grid_points)
    worst = -np.inf
    witness = None
    for t in range(1, T + 1):
        x_prev2 = opinions[t - 2] if t >= 2 else opinions[0]
        x_new = opinions[t]
        y = _true_means(g, opinions[t - 1])
        lhs = params.eta * np.abs(x_new - x_prev2)
        # endpoints are grid members; the affine RHS is minimized at one of them
        v = y[:, None] + offsets[None, :]
        rhs = (x_prev2[:, None] - v) ** 2 - (x_new[:, None] - v) ** 2
        viol = lhs[:, None] - rhs
        viol[~mask] = -np.inf
        idx = np.unravel_index(np.argmax(viol), viol.shape)
        if viol[idx] > worst:
            worst = float(viol[idx])
            witness = (int(idx[0]), t, float(v[idx]))
    slack = _slack(1.0)
    return AuditReport(
        condition="A3",
        passed=worst <= slack,
        worst_violation=max(worst, 0.0),
        witness=None if worst <= slack else witness,
        details={"updates": T, "grid_points": v_grid_points},
    )


def audit_a2_trajectory(g: Graph, opinions: np.ndarray, eps: float,
                        skip: Iterable[int] = ()) -> AuditReport:
    """check_A2 over every recorded update against the true averages."""
    opinions = np.asarray(opinions, dtype=np.float64)
    T = opinions.shape[0] - 1
    mask = np.ones(g.n, dtype=bool)
    for i_ in skip:
        mask[i_] = False
    worst = -np.inf
    witness = None
    for t in range(1, T + 1):
        y = _true_means(g, opinions[t - 1])
        viol = np.abs(opinions[t] - y) - eps
        viol[~mask] = -np.inf
        i_ = int(np.argmax(viol))
        if viol[i_] > worst:
            worst = float(viol[i_])
            witness = (i_, t, float(y[i_]))
    slack = _slack(1.0)
    return AuditReport(
        condition="A2",
        passed=worst <= slack,
        worst_violation=max(worst, 0.0),
        witness=None if worst <= slack else witness,
        details={"updates": T},
    )


def check_A1_coupling(config: SimConfig, perturbation,
                      graph: Graph | None = None) -> AuditReport:
    """Monotonicity via coupling: run the config twice with shared
    randomness, the second time from initial opinions raised pointwise by
    the (nonnegative) perturbation, and verify the pointwise order survives
    every step."""
    g = graph if graph is not None else generate(config.graph)
    sim_lo = Simulation(g, config)
    if np.isscalar(perturbation):
        pert = np.full(g.n, float(perturbation))
    elif isinstance(perturbation, dict):
        pert = np.zeros(g.n)
        for i_, amt in perturbation.items():
            pert[i_] = amt
    else:
        pert = np.asarray(perturbation, dtype=np.float64)
    if np.any(pert < 0):
        raise AuditError("perturbation must be pointwise nonnegative")
    sim_hi = Simulation(g, config, initial=sim_lo.now + pert)
    worst = float(np.max(sim_lo.now - sim_hi.now))
    witness = None
    slack = _slack(1.0)
    if worst > slack:
        witness = (int(np.argmax(sim_lo.now - sim_hi.now)), 0, worst)
    for t in range(1, config.horizon + 1):
        sim_lo.advance()
        sim_hi.advance()
        gap = sim_lo.now - sim_hi.now
        g_max = float(np.max(gap))
        if g_max > worst:
            worst = g_max
            if g_max > slack:
                witness = (int(np.argmax(gap)), t, g_max)
    return AuditReport(
        condition="A1",
        passed=worst <= slack,
        worst_violation=max(worst, 0.0),
        witness=witness,
        details={"horizon": config.horizon},
    )


# -- variation ----------------------------------------------------------------

def variation(series, a: int, b: int) -> float:
    """Sum over a < t < b of |A_{t+1} - A_{t-1}| for one agent's trajectory."""
    series = np.asarray(series, dtype=np.float64)
    if not (b > a >= 0):
        raise AuditError("need b > a >= 0")
    if series.shape[0] <= b:
        raise AuditError(f"trajectory must be recorded through time {b}")
    ts = np.arange(a + 1, b)
    if ts.size == 0:
        return 0.0
    return float(np.sum(np.abs(series[ts + 1] - series[ts - 1])))


def check_variation_bound(g: Graph, i: int, gamma: float, eta: float,
                          opinions: np.ndarray, a: int, b: int) -> AuditReport:
    """The two-parity variation of agent i over [a, b] is bounded by the
    drop of the Lyapunov functional L_{i,1-gamma} from a to b-1, divided by
    eta; the functional itself must be non-increasing along the way."""
    opinions = np.asarray(opinions, dtype=np.float64)
    if opinions.shape[0] <= b:
        raise AuditError(f"trajectory must be recorded through time {b}")
    cfg = LyapunovConfig(center=i, ratio=1.0 - gamma)
    v = variation(opinions[:, i], a, b)
    series = lyapunov_series(g, cfg, opinions[: b + 1])
    budget = (series[a] - series[b - 1]) / eta
    bound_violation = v - budget
    mono_violation = float(np.max(np.diff(series[a: b]))) if b - a >= 2 else 0.0
    mono_slack = _slack(g.weight_mass(i, 1.0 - gamma))
    passed = (bound_violation <= _slack(v, budget)) and (mono_violation <= mono_slack)
    return AuditReport(
        condition="Variation",
        passed=passed,
        worst_violation=max(bound_violation, mono_violation, 0.0),
        witness=None if passed else (i, a, float(v)),
        details={"variation": v, "budget": float(budget),
                 "lyapunov_start": float(series[a]),
                 "lyapunov_end": float(series[b - 1])},
    )


# -- TV weight gap -------------------------------------------------------------

def tv_weight_gap(g: Graph, i: int, j: int, r: float) -> float:
    """Total-variation distance between the uniform measure on N_j and the
    measure proportional to r^d(i,(j,k)) over k in N_j."""
    if not (0.0 < r < 1.0):
        raise AuditError("r must lie in (0, 1)")
    dist = g.distances_from(i)
    nbrs = g.neighbors(j)
    d_e = np.minimum(dist[j], dist[nbrs])
    w = np.power(float(r), d_e, dtype=np.float64)
    q = w / w.sum()
    u = np.full(nbrs.size, 1.0 / nbrs.size)
    return float(0.5 * np.sum(np.abs(u - q)))


# -- parameter calculators -----------------------------------------------------

def eps_degroot_params(eps: float, gamma: float) -> RobustnessParams:
    """Robustness triple of the clamped rule: eta = 2(eps - gamma)."""
    if not (0 < gamma < eps):
        raise AuditError("need 0 < gamma < eps")
    return RobustnessParams(eps=eps, gamma=gamma, eta=2.0 * (eps - gamma))


@dataclass(frozen=True)
class GranularParams:
    """Derived constants of a level set: covering radius (averaging slack is
    twice it), packing radius, and the robustness pair from the averaged
    level lattice."""

    eps_levels: float
    rho_levels: float
    gamma: float
    eta: float


def _exact_levels(levels) -> list[Fraction]:
    vals = sorted(Fraction(float(w)) for w in levels)
    if not vals:
        raise AuditError("levels must be nonempty")
    if vals[0] < 0 or vals[-1] > 1:
        raise AuditError("levels must lie within [0, 1]")
    if len(set(vals)) != len(vals):
        raise AuditError("levels must be distinct")
    return vals


def _packing_radius(values: list[Fraction]) -> Fraction:
    if len(values) < 2:
        return Fraction(1)  # degenerate set packs trivially
    gaps = [b - a for a, b in zip(values, values[1:])]
    return min(gaps) / 2


def granular_params(levels, d: int) -> GranularParams:
    """Covering/packing radii of the level set and the robustness pair
    gamma = eta = packing radius of the union of all k-term averages
    (k <= max(d, 2)); exact rational arithmetic throughout."""
    if d < 1:
        raise AuditError("degree bound d must be at least 1")
    vals = _exact_levels(levels)
    cover = max(vals[0] - Fraction(0), Fraction(1) - vals[-1],
                max((b - a for a, b in zip(vals, vals[1:])), default=Fraction(0)) / 2)
    averages: set[Fraction] = set()
    for k in range(1, max(d, 2) + 1):
        for combo in itertools.combinations_with_replacement(vals, k):
            averages.add(sum(combo) / k)
    rho_avg = _packing_radius(sorted(averages))
    return GranularParams(
        eps_levels=float(cover),
        rho_levels=float(_packing_radius(vals)),
        gamma=float(rho_avg),
        eta=float(rho_avg),
    )


def beta_reduction(params: RobustnessParams, beta: float) -> RobustnessParams:
    """Robustness triple seen through beta-distorted observation: averaging
    slack widens to eps+beta, the anchor interval narrows to gamma-beta."""
    if not (0 <= beta < params.gamma):
        raise AuditError("need 0 <= beta < gamma")
    return RobustnessParams(eps=params.eps + beta, gamma=params.gamma - beta,
                            eta=params.eta)
