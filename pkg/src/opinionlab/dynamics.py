"""Synchronous opinion-update engine.

Rules supported: plain neighbor averaging (DeGroot), averaging clamped to
an eps-band around the neighbor average anchored at the agent's own
opinion two steps back (EpsilonDeGroot), and averaging discretized onto a
finite level set with own-history tie-breaking (GranularDeGroot).  Agents
may be bots (constant opinion) and observations may be distorted by a
bounded perturbation.

Conventions:
  * A step from time t produces layer t+1: each regular agent applies its
    rule to the perceived neighbor values at time t and (for the anchored
    rules) its own value at time t-1, which is two steps before t+1.
  * Layers at t = -1 and t = -2 equal the initial opinions, so the first
    two updates anchor on A_0.
  * All agents read the same pre-step layers; updates are simultaneous.
  * Trajectories are bit-reproducible given an identical config and seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, ClassVar

import numpy as np

from .graphs import Graph, GraphSpec, generate


class DynamicsError(ValueError):
    """Invalid dynamics configuration."""


# -- update rules -----------------------------------------------------------

def _segment_means(g: Graph, values: np.ndarray) -> np.ndarray:
    sums = np.add.reduceat(values, g.indptr[:-1])
    return sums / g.degrees


@dataclass(frozen=True)
class DeGroot:
    """Adopt the arithmetic mean of the perceived neighbor values."""

    kind: ClassVar[str] = "degroot"
    deterministic: ClassVar[bool] = True

    def validate(self) -> list[str]:
        return []

    def update(self, g: Graph, own_anchor: np.ndarray, perceived: np.ndarray) -> np.ndarray:
        return _segment_means(g, perceived)


@dataclass(frozen=True)
class EpsilonDeGroot:
    """Project the opinion from two steps back onto [mean-eps, mean+eps]."""

    eps: float
    kind: ClassVar[str] = "eps_degroot"
    deterministic: ClassVar[bool] = True

    def validate(self) -> list[str]:
        return ["eps must be positive"] if self.eps <= 0 else []

    def update(self, g: Graph, own_anchor: np.ndarray, perceived: np.ndarray) -> np.ndarray:
        y = _segment_means(g, perceived)
        return np.minimum(np.maximum(own_anchor, y - self.eps), y + self.eps)


@dataclass(frozen=True)
class GranularDeGroot:
    """Level-set averaging: project observations onto the levels, average,
    project the average back onto the levels anchored at the agent's own
    value from two steps back."""

    levels: tuple[float, ...]
    kind: ClassVar[str] = "granular"
    deterministic: ClassVar[bool] = True

    def validate(self) -> list[str]:
        problems = []
        if len(self.levels) == 0:
            problems.append("levels must be nonempty")
            return problems
        arr = np.asarray(self.levels, dtype=np.float64)
        if np.any(np.diff(arr) <= 0):
            problems.append("levels must be strictly increasing")
        if arr.min() < 0.0 or arr.max() > 1.0:
            problems.append("levels must lie within [0, 1]")
        return problems

    def level_array(self) -> np.ndarray:
        return np.asarray(self.levels, dtype=np.float64)

    def update(self, g: Graph, own_anchor: np.ndarray, perceived: np.ndarray) -> np.ndarray:
        levels = self.level_array()
        inner = project_to_levels(levels, perceived, 0.0)
        y = _segment_means(g, inner)
        return project_to_levels(levels, y, own_anchor)


UpdateRule = DeGroot | EpsilonDeGroot | GranularDeGroot


def rule_from_dict(d: dict) -> UpdateRule:
    kind = d.get("kind")
    if kind == "degroot":
        return DeGroot()
    if kind == "eps_degroot":
        return EpsilonDeGroot(eps=float(d["eps"]))
    if kind == "granular":
        return GranularDeGroot(levels=tuple(float(w) for w in d["levels"]))
    raise DynamicsError(f"unknown rule kind {kind!r}")


def rule_to_dict(rule) -> dict:
    if isinstance(rule, DeGroot):
        return {"kind": "degroot"}
    if isinstance(rule, EpsilonDeGroot):
        return {"kind": "eps_degroot", "eps": rule.eps}
    if isinstance(rule, GranularDeGroot):
        return {"kind": "granular", "levels": list(rule.levels)}
    raise DynamicsError(f"cannot serialize rule {rule!r}")


# -- projections and scalar rule values --------------------------------------

def project_to_levels(levels: np.ndarray, x, anchor) -> np.ndarray:
    """Nearest element of a sorted level set, exact two-way ties broken
    toward the anchor; if both candidates are equidistant from the anchor,
    the smaller wins."""
    levels = np.asarray(levels, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    anchor = np.asarray(anchor, dtype=np.float64)
    m = levels.shape[0]
    idx = np.searchsorted(levels, x)
    lo = levels[np.clip(idx - 1, 0, m - 1)]
    hi = levels[np.clip(idx, 0, m - 1)]
    dlo = x - lo
    dhi = hi - x
    tie = (dlo == dhi) & (lo != hi)
    take_hi = (dhi < dlo) | (tie & (np.abs(hi - anchor) < np.abs(lo - anchor)))
    return np.where(take_hi, hi, lo)


def degroot_value(neighbor_values) -> float:
    """Arithmetic mean of the observed neighbor opinions."""
    vals = np.asarray(neighbor_values, dtype=np.float64)
    if vals.size == 0:
        raise DynamicsError("no neighbors to average (isolated node)")
    return float(np.add.reduce(vals) / vals.size)

def eps_degroot_value(x_prev2: float, y: float, eps: float) -> float:
    """Projection of x_prev2 onto [y-eps, y+eps]."""
    if eps <= 0:
        raise DynamicsError("eps must be positive")
    return float(min(max(y - eps, x_prev2), y + eps))


def granular_project(w: float, x: float, levels) -> float:
    """Nearest level to x, ties toward w (then the smaller level)."""
    arr = np.asarray(sorted(levels), dtype=np.float64)
    return float(project_to_levels(arr, x, w))


def granular_value(x_prev2: float, neighbor_obs, levels) -> float:
    """Level-set update: inner-project observations at anchor 0, average,
    outer-project at the agent's own two-steps-back value."""
    arr = np.asarray(sorted(levels), dtype=np.float64)
    obs = np.asarray(neighbor_obs, dtype=np.float64)
    if obs.size == 0:
        raise DynamicsError("no neighbors to average (isolated node)")
    inner = project_to_levels(arr, obs, 0.0)
    y = float(np.add.reduce(inner) / inner.size)
    return float(project_to_levels(arr, y, x_prev2))


# -- distortion ---------------------------------------------------------------

_DISTORTION_KINDS = ("none", "plus_bias", "minus_bias", "uniform_noise",
                     "per_step_adversarial")
_DETERMINISTIC_DISTORTIONS = ("none", "plus_bias", "minus_bias")


@dataclass(frozen=True)
class DistortionModel:
    """Bounded observation error: every perceived neighbor value stays
    within beta of the true one; self-observations are never distorted."""

    kind: str = "none"
    beta: float = 0.0
    seed: int | None = None  # only used by per_step_adversarial

    def validate(self) -> list[str]:
        problems = []
        if self.kind not in _DISTORTION_KINDS:
            problems.append(f"unknown distortion kind {self.kind!r}")
        if self.beta < 0:
            problems.append("beta must be nonnegative")
        if self.kind != "none" and self.beta == 0:
            problems.append(f"{self.kind} distortion requires beta > 0")
        return problems

    @property
    def deterministic(self) -> bool:
        return self.kind in _DETERMINISTIC_DISTORTIONS

    def offsets(self, rng: np.random.Generator, size: int) -> np.ndarray | float | None:
        if self.kind == "none":
            return None
        if self.kind == "plus_bias":
            return self.beta
        if self.kind == "minus_bias":
            return -self.beta
        if self.kind == "uniform_noise":
            return rng.uniform(-self.beta, self.beta, size)
        if self.kind == "per_step_adversarial":
            return self.beta * (2.0 * rng.integers(0, 2, size) - 1.0)
        raise DynamicsError(f"unknown distortion kind {self.kind!r}")

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "beta": self.beta}
        if self.seed is not None:
            out["seed"] = self.seed
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "DistortionModel":
        return cls(kind=d.get("kind", "none"), beta=float(d.get("beta", 0.0)),
                   seed=d.get("seed"))


# -- initial opinions ---------------------------------------------------------

_NOISE_KINDS = ("uniform", "two_point", "degenerate")


@dataclass(frozen=True)
class InitialDistribution:
    """Initial opinions mu + x_i with i.i.d. zero-mean noise bounded by k."""

    mu: float
    noise: str = "degenerate"
    k: float = 0.0
    clip_range: tuple[float, float] | None = None

    def validate(self) -> list[str]:
        problems = []
        if self.noise not in _NOISE_KINDS:
            problems.append(f"unknown noise kind {self.noise!r}")
        if self.noise in ("uniform", "two_point") and self.k <= 0:
            problems.append(f"{self.noise} noise requires k > 0")
        if self.clip_range is not None:
            lo, hi = self.clip_range
            if not (lo <= self.mu - self.k and self.mu + self.k <= hi):
                problems.append(
                    f"mu +- k = [{self.mu - self.k}, {self.mu + self.k}] "
                    f"escapes clip_range [{lo}, {hi}]"
                )
        return problems

    def to_dict(self) -> dict:
        out = {"mu": self.mu, "noise": self.noise, "k": self.k}
        if self.clip_range is not None:
            out["clip_range"] = list(self.clip_range)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "InitialDistribution":
        clip = d.get("clip_range")
        return cls(mu=float(d["mu"]), noise=d.get("noise", "degenerate"),
                   k=float(d.get("k", 0.0)),
                   clip_range=tuple(clip) if clip is not None else None)


# -- state and config ---------------------------------------------------------

@dataclass
class OpinionState:
    """Opinions at times t, t-1 and t-2: the full memory the rules need."""

    t: int
    now: np.ndarray
    prev: np.ndarray
    prev2: np.ndarray

    def copy(self) -> "OpinionState":
        return OpinionState(self.t, self.now.copy(), self.prev.copy(),
                            self.prev2.copy())


RECORD_KINDS = ("full", "last_two", "probes")


@dataclass(frozen=True)
class SimConfig:
    """Everything needed to reproduce one trajectory bit-for-bit."""

    graph: GraphSpec
    rule: UpdateRule
    init: InitialDistribution
    horizon: int
    seed: int
    bots: tuple[tuple[int, float], ...] = ()
    distortion: DistortionModel = DistortionModel()
    record: str = "last_two"
    probes: tuple[int, ...] = ()

    def validate(self) -> list[str]:
        problems = []
        problems.extend(self.graph.validate())
        problems.extend(self.rule.validate())
        problems.extend(self.init.validate())
        problems.extend(self.distortion.validate())
        if self.horizon < 0:
            problems.append("horizon must be nonnegative")
        if self.record not in RECORD_KINDS:
            problems.append(f"unknown record policy {self.record!r}")
        return problems

    def bot_map(self) -> dict[int, float]:
        return dict(self.bots)

    def to_dict(self) -> dict:
        return {
            "graph": self.graph.to_dict(),
            "rule": rule_to_dict(self.rule),
            "init": self.init.to_dict(),
            "horizon": self.horizon,
            "seed": self.seed,
            "bots": [[int(i), float(c)] for i, c in self.bots],
            "distortion": self.distortion.to_dict(),
            "record": self.record,
            "probes": list(self.probes),
        }


def sample_initial(g: Graph, init: InitialDistribution, seed,
                   bots: dict[int, float] | None = None) -> OpinionState:
    """Draw i.i.d. initial opinions; bots are overridden to their constant.

    All three layers equal the initial opinions (the t = -1 and t = -2
    layers are pinned to A_0)."""
    problems = init.validate()
    if problems:
        raise DynamicsError("; ".join(problems))
    rng = np.random.default_rng(seed)
    if init.noise == "uniform":
        x = rng.uniform(-init.k, init.k, g.n)
    elif init.noise == "two_point":
        x = init.k * (2.0 * rng.integers(0, 2, g.n) - 1.0)
    else:
        x = np.zeros(g.n)
    opinions = init.mu + x
    if bots:
        for i, c in bots.items():
            opinions[i] = c
    return OpinionState(t=0, now=opinions, prev=opinions.copy(),
                        prev2=opinions.copy())


def perceive(state: OpinionState, g: Graph, i: int,
             distortion: DistortionModel,
             rng: np.random.Generator | None = None) -> np.ndarray:
    """Perceived values of i's neighbors in the layer the next update reads."""
    nbrs = g.neighbors(i)
    vals = state.now[nbrs].astype(np.float64, copy=True)
    off = distortion.offsets(rng if rng is not None else np.random.default_rng(),
                             nbrs.size)
    if off is not None:
        vals = vals + off
    return vals


# -- simulation ---------------------------------------------------------------

class Simulation:
    """Mutable stepper over immutable per-step layers.

    Once a deterministic run reaches an exactly two-periodic state the
    stepper stops recomputing updates and just rotates the two layers;
    the produced trajectory is bit-identical to stepping through.
    """

    def __init__(self, g: Graph, config: SimConfig,
                 initial: np.ndarray | None = None):
        self.g = g
        self.config = config
        self.rule = config.rule
        self.distortion = config.distortion
        root = np.random.SeedSequence(config.seed)
        init_ss, dist_ss = root.spawn(2)
        bots = config.bot_map()
        if initial is not None:
            now = np.asarray(initial, dtype=np.float64).copy()
            if now.shape != (g.n,):
                raise DynamicsError("initial opinions must have one value per node")
        else:
            now = sample_initial(g, config.init, init_ss, bots).now
        if isinstance(self.rule, GranularDeGroot):
            problems = self.rule.validate()
            if problems:
                raise DynamicsError("; ".join(problems))
            now = project_to_levels(self.rule.level_array(), now, 0.0)
        if bots:
            self.bot_idx = np.array(sorted(bots), dtype=np.int64)
            self.bot_vals = np.array([bots[i] for i in sorted(bots)])
            now[self.bot_idx] = self.bot_vals
        else:
            self.bot_idx = None
            self.bot_vals = None
        self.now = now
        self.prev = now.copy()
        self.prev2 = now.copy()
        self.t = 0
        self.dist_rng = np.random.default_rng(
            dist_ss if config.distortion.seed is None
            else np.random.SeedSequence(config.distortion.seed))
        self._can_freeze = (config.distortion.deterministic
                            and getattr(self.rule, "deterministic", False))
        self.frozen_at: int | None = None
        self._eq_last = False

    @property
    def frozen(self) -> bool:
        return self.frozen_at is not None

    def state(self) -> OpinionState:
        return OpinionState(self.t, self.now, self.prev, self.prev2)

    def advance(self) -> None:
        """Produce the layer at t+1 and shift."""
        if self.frozen:
            new = self.prev
        else:
            vals = self.now[self.g.indices]
            off = self.distortion.offsets(self.dist_rng, vals.size)
            if off is not None:
                vals = vals + off
            new = self.rule.update(self.g, self.prev, vals)
            if self.bot_idx is not None:
                new[self.bot_idx] = self.bot_vals
            if self._can_freeze:
                eq = bool(np.array_equal(new, self.prev))
                if eq and self._eq_last:
                    self.frozen_at = self.t + 1
                self._eq_last = eq
        self.prev2 = self.prev
        self.prev = self.now
        self.now = new
        self.t += 1

    def parity_delta(self) -> float:
        """max_i |A_{i,t} - A_{i,t-2}| for the current layers."""
        if self.now is self.prev2:
            return 0.0
        return float(np.max(np.abs(self.now - self.prev2)))


def step(state: OpinionState, g: Graph, rule: UpdateRule,
         bots: dict[int, float] | None = None,
         distortion: DistortionModel = DistortionModel(),
         rng: np.random.Generator | None = None) -> OpinionState:
    """One synchronous update: every regular agent applies the rule to the
    perceived neighbor values, bots keep their constant, layers shift."""
    vals = state.now[g.indices].astype(np.float64, copy=True)
    off = distortion.offsets(rng if rng is not None else np.random.default_rng(),
                             vals.size)
    if off is not None:
        vals = vals + off
    new = rule.update(g, state.prev, vals)
    if bots:
        idx = np.array(sorted(bots), dtype=np.int64)
        new[idx] = np.array([bots[i] for i in sorted(bots)])
    return OpinionState(t=state.t + 1, now=new, prev=state.now,
                        prev2=state.prev)


# -- trajectories --------------------------------------------------------------

@dataclass
class Trajectory:
    """Recorded output of one run."""

    config: SimConfig
    n_steps: int
    final: OpinionState
    full: np.ndarray | None = None            # (n_steps+1, n) when record="full"
    probe_ids: tuple[int, ...] = ()
    probes: np.ndarray | None = None          # (n_steps+1, len(probe_ids))
    parity_delta: np.ndarray | None = None    # delta[t] = max_i |A_t - A_{t-2}|
    audited_delta: np.ndarray | None = None   # same, restricted to a mask
    frozen_at: int | None = None
    stopped_at: int | None = None             # step where a stop predicate fired

    def layer(self, t: int) -> np.ndarray:
        if self.full is None:
            raise DynamicsError("layer() requires record='full'")
        return self.full[t]

    def z_pair(self) -> tuple[np.ndarray, np.ndarray]:
        """(even-time, odd-time) final layers, the per-agent limit estimates."""
        if self.final.t % 2 == 0:
            return self.final.now, self.final.prev
        return self.final.prev, self.final.now


def run(config: SimConfig, *, graph: Graph | None = None,
        initial: np.ndarray | None = None,
        audited_mask: np.ndarray | None = None,
        stop: Callable[[Simulation], bool] | None = None) -> Trajectory:
    """Run `horizon` synchronous steps, recording per the record policy.

    audited_mask: optional boolean mask over nodes; the max two-step change
    restricted to the mask is tracked alongside the global one.
    stop: optional predicate evaluated after every step; when it fires the
    run ends early and the recorded arrays are truncated.
    """
    problems = config.validate()
    if problems:
        raise DynamicsError("; ".join(problems))
    g = graph if graph is not None else generate(config.graph)
    for i, _ in config.bots:
        if not (0 <= i < g.n):
            raise DynamicsError(f"bot node {i} out of range")
    for p in config.probes:
        if not (0 <= p < g.n):
            raise DynamicsError(f"probe node {p} out of range")

    sim = Simulation(g, config, initial=initial)
    T = config.horizon
    full = None
    probes = None
    probe_ids = tuple(config.probes)
    if config.record == "full":
        full = np.empty((T + 1, g.n))
        full[0] = sim.now
    elif config.record == "probes":
        pidx = np.array(probe_ids, dtype=np.int64)
        probes = np.empty((T + 1, len(probe_ids)))
        probes[0] = sim.now[pidx]
    parity_delta = np.zeros(T + 1)
    audited_delta = np.zeros(T + 1) if audited_mask is not None else None

    stopped_at = None
    steps_done = 0
    for s in range(1, T + 1):
        sim.advance()
        steps_done = s
        if full is not None:
            full[s] = sim.now
        elif probes is not None:
            probes[s] = sim.now[pidx]
        if s >= 2:
            parity_delta[s] = sim.parity_delta()
            if audited_delta is not None:
                if sim.now is sim.prev2:
                    audited_delta[s] = 0.0
                else:
                    audited_delta[s] = float(np.max(np.abs(
                        sim.now[audited_mask] - sim.prev2[audited_mask])))
        if stop is not None and stop(sim):
            stopped_at = s
            break

    if stopped_at is not None:
        if full is not None:
            full = full[:steps_done + 1]
        if probes is not None:
            probes = probes[:steps_done + 1]
        parity_delta = parity_delta[:steps_done + 1]
        if audited_delta is not None:
            audited_delta = audited_delta[:steps_done + 1]

    final = OpinionState(sim.t, sim.now.copy(), sim.prev.copy(), sim.prev2.copy())
    return Trajectory(config=config, n_steps=steps_done, final=final,
                      full=full, probe_ids=probe_ids, probes=probes,
                      parity_delta=parity_delta, audited_delta=audited_delta,
                      frozen_at=sim.frozen_at, stopped_at=stopped_at)
