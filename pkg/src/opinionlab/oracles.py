"""Exact and statistical oracles for the averaging dynamics.

Random-walk occupation distributions (plain and absorbing) are computed by
exact dynamic programming on the transition matrix; plain neighbor
averaging equals walk-averaging of the initial opinions, which gives an
independent closed form to check trajectories against.  On top of these
sit the 1/sqrt(t) decay fit, Hoeffding tail bounds, finite-horizon limit
detection, and the Monte Carlo learning estimator.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.sparse import csr_matrix

from .dynamics import SimConfig, run
from .graphs import Graph, generate


class OracleError(ValueError):
    """Oracle called outside its precondition."""


# -- random walks ---------------------------------------------------------------

@dataclass
class WalkDistribution:
    """Occupation probabilities of a walk after t steps from the origin."""

    origin: int
    t: int
    probs: np.ndarray
    absorbed: float = 0.0  # probability mass sitting on absorbing nodes

    @property
    def p_max(self) -> float:
        return float(self.probs.max())


def _transition(g: Graph, absorbing: set[int] | None = None) -> csr_matrix:
    """Row-stochastic single-step matrix; absorbing nodes self-loop."""
    absorbing = absorbing or set()
    rows, cols, vals = [], [], []
    for j in range(g.n):
        if j in absorbing:
            rows.append(j)
            cols.append(j)
            vals.append(1.0)
        else:
            nbrs = g.neighbors(j)
            rows.extend([j] * nbrs.size)
            cols.extend(nbrs.tolist())
            vals.extend([1.0 / nbrs.size] * nbrs.size)
    return csr_matrix((vals, (rows, cols)), shape=(g.n, g.n))


def _propagate(g: Graph, origin: int, t: int,
               absorbing: set[int] | None = None) -> np.ndarray:
    if not (0 <= origin < g.n):
        raise OracleError(f"origin {origin} out of range")
    if t < 0:
        raise OracleError("t must be nonnegative")
    pt = _transition(g, absorbing).T.tocsr()
    probs = np.zeros(g.n)
    probs[origin] = 1.0
    for _ in range(t):
        probs = pt @ probs
    return probs


def walk_distribution(g: Graph, i: int, t: int) -> WalkDistribution:
    """Exact distribution of the simple random walk after t steps from i."""
    return WalkDistribution(origin=i, t=t, probs=_propagate(g, i, t))


def absorbing_walk_distribution(g: Graph, bots, i: int, t: int) -> WalkDistribution:
    """Walk distribution where bot nodes absorb; reports the absorbed mass."""
    bots = set(int(b) for b in bots)
    probs = _propagate(g, i, t, absorbing=bots)
    absorbed = float(sum(probs[b] for b in bots))
    return WalkDistribution(origin=i, t=t, probs=probs, absorbed=absorbed)


def degroot_closed_form(g: Graph, initial, bots, i: int, t: int) -> float:
    """Walk-averaging value of plain neighbor averaging at (i, t): the
    occupation distribution (absorbing at bots) applied to the initial
    opinions.  Bot entries of `initial` must hold the bot constants."""
    initial = np.asarray(initial, dtype=np.float64)
    if bots:
        dist = absorbing_walk_distribution(g, bots, i, t)
    else:
        dist = walk_distribution(g, i, t)
    return float(dist.probs @ initial)


# -- decay fit -------------------------------------------------------------------

@dataclass
class DecayFit:
    """Log-log least squares of p_t = max_j Pr(R_t = j) against t."""

    slope: float
    intercept: float
    empirical_constant: float  # max over t, j of Pr(R_t=j) * sqrt(t) / deg(j)
    t_values: np.ndarray
    p_values: np.ndarray

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "empirical_constant": self.empirical_constant,
            "t_values": self.t_values.tolist(),
            "p_values": self.p_values.tolist(),
        }


def p_t_decay_fit(g: Graph, i: int, t_range) -> DecayFit:
    """Fit the decay exponent of the walk's max occupation probability.

    Requires the origin's eccentricity to cover the largest queried time,
    so boundary effects cannot inflate the occupation mass."""
    ts = sorted(int(t) for t in t_range)
    if not ts or ts[0] < 1:
        raise OracleError("t_range must contain positive times")
    if g.eccentricity(i) < ts[-1]:
        raise OracleError(
            f"eccentricity {g.eccentricity(i)} of origin {i} is below max t {ts[-1]}")
    pt = _transition(g).T.tocsr()
    probs = np.zeros(g.n)
    probs[i] = 1.0
    wanted = set(ts)
    p_vals = {}
    c_emp = 0.0
    for t in range(1, ts[-1] + 1):
        probs = pt @ probs
        if t in wanted:
            p_vals[t] = float(probs.max())
            c_emp = max(c_emp, float(np.max(probs * math.sqrt(t) / g.degrees)))
    t_arr = np.array(ts, dtype=np.float64)
    p_arr = np.array([p_vals[t] for t in ts])
    slope, intercept = np.polyfit(np.log(t_arr), np.log(p_arr), 1)
    return DecayFit(slope=float(slope), intercept=float(intercept),
                    empirical_constant=c_emp, t_values=t_arr, p_values=p_arr)


# -- concentration ---------------------------------------------------------------

def hoeffding_tail_bound(delta: float, probs, weak: bool = False) -> float:
    """Tail bound exp(-delta^2 / (2 sum p^2)) for a [0,1]-valued weighted
    average with weights `probs`; the weak form replaces sum p^2 with max p."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.size == 0 or abs(float(probs.sum()) - 1.0) > 1e-9:
        raise OracleError("probs must form a distribution")
    denom = float(probs.max()) if weak else float(np.sum(probs * probs))
    return math.exp(-delta * delta / (2.0 * denom))


@dataclass
class HorizonParams:
    """Coupling horizon and the shape of the tail probability at it."""

    n: int
    rho1_exponent: float  # delta^2.5 / (d sqrt(eps)); multiply by a fitted constant
    rho1: float           # exp(-c1 * rho1_exponent)


def horizon_and_rho1(delta: float, eps: float, d: int, c1: float = 1.0) -> HorizonParams:
    """Horizon n = floor(delta/(3 eps) - 1) and the tail-probability shape
    at that horizon; c1 is a fitted constant, never a ground-truth value."""
    if delta <= 0 or eps <= 0:
        raise OracleError("delta and eps must be positive")
    n = math.floor(delta / (3.0 * eps) - 1.0)
    if n < 1:
        raise OracleError(f"horizon n = {n} < 1: delta too small relative to eps")
    exponent = delta ** 2.5 / (d * math.sqrt(eps))
    return HorizonParams(n=n, rho1_exponent=exponent, rho1=math.exp(-c1 * exponent))


def wilson_interval(successes: int, n: int, z: float = 1.96) -> tuple[float, float]:
    """95% (by default) Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise OracleError("need n > 0")
    phat = successes / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def wilson_half_width(successes: int, n: int, z: float = 1.96) -> float:
    lo, hi = wilson_interval(successes, n, z)
    return 0.5 * (hi - lo)


# -- limits -----------------------------------------------------------------------

@dataclass
class LimitEstimate:
    """Finite-horizon estimate of the even/odd limiting opinions."""

    z_even: np.ndarray | float
    z_odd: np.ndarray | float
    converged: bool
    window_delta: float


def limit_estimate(series, tolerance: float = 1e-6, window: int = 200) -> LimitEstimate:
    """Detect alternate convergence: over the last `window` time points no
    opinion moved more than `tolerance` relative to two steps earlier.

    `series` is (T+1,) for one agent or (T+1, k) for several."""
    arr = np.asarray(series, dtype=np.float64)
    T = arr.shape[0] - 1
    if arr.shape[0] < 2 * window:
        raise OracleError(f"trajectory length {arr.shape[0]} below 2*window = {2 * window}")
    deltas = np.abs(arr[2:] - arr[:-2])  # indexed by arrival time s = 2..T
    window_delta = float(np.max(deltas[-window:]))
    z_even = arr[T] if T % 2 == 0 else arr[T - 1]
    z_odd = arr[T - 1] if T % 2 == 0 else arr[T]
    if arr.ndim == 1:
        z_even, z_odd = float(z_even), float(z_odd)
    return LimitEstimate(z_even=z_even, z_odd=z_odd,
                         converged=window_delta <= tolerance,
                         window_delta=window_delta)


# -- learning estimation ------------------------------------------------------------

@dataclass(frozen=True)
class LearningCriterion:
    """Pass levels for limiting opinions: within delta of mu with empirical
    frequency of misses at most rho, for agents outside the exempt radius."""

    delta: float
    rho: float
    exempt_radius: int | None
    mu: float

    def __post_init__(self):
        if self.delta <= 0 or not (0 < self.rho < 1):
            raise OracleError("need delta > 0 and rho in (0, 1)")


def default_exempt_radius(gamma_prime: float, g: Graph) -> int:
    """ceil(gamma'^-1.00001), capped so the audited set is never empty."""
    if gamma_prime <= 0:
        raise OracleError("gamma_prime must be positive")
    r = math.ceil(gamma_prime ** -1.00001)
    return min(r, g.radius() - 1)


def audited_nodes(g: Graph, bots, exempt_radius: int) -> np.ndarray:
    """Nodes farther than the exempt radius from every bot."""
    mask = np.ones(g.n, dtype=bool)
    for b in bots:
        mask &= g.distances_from(int(b)) > exempt_radius
    return np.flatnonzero(mask)


@dataclass
class LearningEstimate:
    """Per-agent empirical miss frequencies over seeded replications."""

    audited_ids: np.ndarray
    frequencies: np.ndarray
    half_widths: np.ndarray
    mean_errors: np.ndarray      # per audited agent, averaged over replications
    replications: int
    seeds: tuple[int, ...]
    delta: float
    rho: float
    mu: float
    exempt_radius: int
    converged_reps: int
    max_frequency: float
    mean_error: float
    fraction_passing: float      # share of audited agents with freq + hw <= rho
    overall_pass: bool           # every audited agent passes freq + hw <= rho
    raw_z: np.ndarray | None = None  # (replications, audited, 2) even/odd values

    def to_dict(self) -> dict:
        return {
            "replications": self.replications,
            "delta": self.delta,
            "rho": self.rho,
            "mu": self.mu,
            "exempt_radius": self.exempt_radius,
            "audited_agents": int(self.audited_ids.size),
            "converged_reps": self.converged_reps,
            "max_frequency": self.max_frequency,
            "mean_error": self.mean_error,
            "fraction_passing": self.fraction_passing,
            "overall_pass": bool(self.overall_pass),
        }


def worker_count(requested: int | None = None) -> int:
    if requested is not None:
        return max(1, requested)
    env = os.environ.get("OPINIONLAB_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def _learning_rep(args) -> tuple[np.ndarray, np.ndarray, bool]:
    config, mask, tolerance, window = args
    g = generate(config.graph)
    traj = run(config, graph=g, audited_mask=mask)
    deltas = traj.audited_delta[-window:]
    converged = bool(np.max(deltas) <= tolerance)
    z_even, z_odd = traj.z_pair()
    return z_even[mask], z_odd[mask], converged


def learning_estimate(config: SimConfig, criterion: LearningCriterion,
                      replications: int, base_seed: int, *,
                      graph: Graph | None = None,
                      tolerance: float = 1e-6, window: int = 200,
                      workers: int | None = None,
                      keep_raw: bool = False) -> LearningEstimate:
    """Monte Carlo miss frequencies of the limiting opinions.

    Each replication reruns the config with an independent spawned seed; a
    replication that fails to alternately converge on the audited agents
    counts as a miss for all of them.  Audited agents are those farther
    than the exempt radius from every bot."""
    if replications < 1:
        raise OracleError("need at least one replication")
    g = graph if graph is not None else generate(config.graph)
    if config.horizon < max(2 * window, window + 2):
        raise OracleError("horizon too short for the convergence window")
    bots = [i for i, _ in config.bots]
    radius = criterion.exempt_radius
    if radius is None:
        raise OracleError("criterion.exempt_radius must be set (see default_exempt_radius)")
    ids = audited_nodes(g, bots, radius)
    if ids.size == 0:
        raise OracleError("exempt radius leaves no audited agents")
    mask = np.zeros(g.n, dtype=bool)
    mask[ids] = True

    seeds = tuple(int(s.generate_state(1)[0])
                  for s in np.random.SeedSequence(base_seed).spawn(replications))
    tasks = [(replace(config, seed=s, record="last_two"), mask, tolerance, window)
             for s in seeds]
    nw = min(worker_count(workers), replications)
    if nw > 1:
        with ProcessPoolExecutor(max_workers=nw) as pool:
            results = list(pool.map(_learning_rep, tasks))
    else:
        results = [_learning_rep(t) for t in tasks]

    miss_counts = np.zeros(ids.size, dtype=np.int64)
    err_sum = np.zeros(ids.size)
    converged_reps = 0
    raw = np.empty((replications, ids.size, 2)) if keep_raw else None
    for k, (z_even, z_odd, converged) in enumerate(results):
        if raw is not None:
            raw[k, :, 0] = z_even
            raw[k, :, 1] = z_odd
        err = np.maximum(np.abs(z_even - criterion.mu), np.abs(z_odd - criterion.mu))
        err_sum += err
        miss = err > criterion.delta
        if converged:
            converged_reps += 1
        else:
            miss = np.ones_like(miss)
        miss_counts += miss
    freqs = miss_counts / replications
    hws = np.array([wilson_half_width(int(k), replications) for k in miss_counts])
    mean_errors = err_sum / replications
    passing = (freqs + hws) <= criterion.rho
    return LearningEstimate(
        audited_ids=ids,
        frequencies=freqs,
        half_widths=hws,
        mean_errors=mean_errors,
        replications=replications,
        seeds=seeds,
        delta=criterion.delta,
        rho=criterion.rho,
        mu=criterion.mu,
        exempt_radius=radius,
        converged_reps=converged_reps,
        max_frequency=float(freqs.max()),
        mean_error=float(mean_errors.mean()),
        fraction_passing=float(np.mean(passing)),
        overall_pass=bool(np.all(passing)),
        raw_z=raw,
    )
