"""Reproducible experiment scenarios.

Each scenario wires graphs, dynamics, audits and oracles into one
deterministic run with a pass/fail verdict derived only from audit reports
and learning estimates.  Configs are human-editable YAML; results are JSON
plus CSV series, byte-identical across reruns of the same config.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from . import __version__
from .audit import (
    AuditReport,
    audit_a2_trajectory,
    audit_a3_trajectory,
    check_variation_bound,
    eps_degroot_params,
    granular_params,
    lyapunov_series,
    LyapunovConfig,
)
from .dynamics import (
    DeGroot,
    DistortionModel,
    EpsilonDeGroot,
    GranularDeGroot,
    InitialDistribution,
    SimConfig,
    Simulation,
    rule_from_dict,
    rule_to_dict,
)
from .graphs import Graph, GraphSpec, generate
from .oracles import (
    LearningCriterion,
    default_exempt_radius,
    degroot_closed_form,
    horizon_and_rho1,
    learning_estimate,
    p_t_decay_fit,
    worker_count,
)
from .recording import atomic_write_text, write_json


class ExperimentError(ValueError):
    """Bad experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    graph: GraphSpec
    init: InitialDistribution
    seed: int
    horizon: int = 1000
    replications: int = 1
    rule: object | None = None
    bots: tuple[tuple[int, float], ...] = ()
    distortion: DistortionModel = DistortionModel()
    delta: float = 0.2
    rho: float = 0.1
    exempt_radius: int | None = None
    output_dir: str | None = None
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "scenario": self.scenario,
            "graph": self.graph.to_dict(),
            "init": self.init.to_dict(),
            "seed": self.seed,
            "horizon": self.horizon,
            "replications": self.replications,
            "bots": [[int(i), float(c)] for i, c in self.bots],
            "distortion": self.distortion.to_dict(),
            "criterion": {"delta": self.delta, "rho": self.rho,
                          "exempt_radius": self.exempt_radius},
            "params": self.params,
        }
        if self.rule is not None:
            out["rule"] = rule_to_dict(self.rule)
        if self.output_dir is not None:
            out["output_dir"] = self.output_dir
        return out


def config_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    crit = d.pop("criterion", {}) or {}
    rule = d.pop("rule", None)
    return ExperimentConfig(
        scenario=d.pop("scenario"),
        graph=GraphSpec.from_dict(d.pop("graph")),
        init=InitialDistribution.from_dict(d.pop("init")),
        seed=int(d.pop("seed")),
        horizon=int(d.pop("horizon", 1000)),
        replications=int(d.pop("replications", 1)),
        rule=rule_from_dict(rule) if rule else None,
        bots=tuple((int(i), float(c)) for i, c in d.pop("bots", [])),
        distortion=DistortionModel.from_dict(d.pop("distortion", {"kind": "none"})),
        delta=float(crit.get("delta", 0.2)),
        rho=float(crit.get("rho", 0.1)),
        exempt_radius=crit.get("exempt_radius"),
        output_dir=d.pop("output_dir", None),
        params=d.pop("params", {}) or {},
    )


def load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ExperimentError(f"{path}: config must be a mapping")
    return config_from_dict(data)


def validate(config: ExperimentConfig) -> list[str]:
    """All constraint violations, without running anything."""
    diags: list[str] = []
    if config.scenario not in SCENARIOS:
        diags.append(f"unknown scenario {config.scenario!r} "
                     f"(registered: {sorted(SCENARIOS)})")
    diags.extend(config.graph.validate())
    diags.extend(config.init.validate())
    diags.extend(config.distortion.validate())
    if config.rule is not None:
        diags.extend(config.rule.validate())
    if config.horizon < 1:
        diags.append("horizon must be at least 1")
    if config.replications < 1:
        diags.append("replications must be at least 1")
    if config.delta <= 0:
        diags.append("criterion delta must be positive")
    if not (0 < config.rho < 1):
        diags.append("criterion rho must lie in (0, 1)")

    p = config.params
    gamma_factor = float(p.get("gamma_factor", 0.95))
    beta_factor = float(p.get("beta_factor", 0.9))
    if not (0 < gamma_factor < 1):
        diags.append("gamma_factor must lie in (0, 1): gamma <= eps is required")
    if beta_factor >= gamma_factor:
        diags.append("beta must be < gamma: beta lies in [0, gamma)")
    gamma = p.get("gamma")
    if gamma is not None and isinstance(config.rule, EpsilonDeGroot):
        if not (0 < float(gamma) < config.rule.eps):
            diags.append("gamma <= eps required (need 0 < gamma < eps)")
    beta = config.distortion.beta
    if config.distortion.kind != "none" and gamma is not None and beta >= float(gamma):
        diags.append("beta must be < gamma (beta in [0, gamma))")
    sweep = p.get("eps_sweep")
    if sweep is not None:
        if not sweep or any(e <= 0 for e in sweep):
            diags.append("eps_sweep must be a nonempty list of positive eps values")
    if "coupling_horizon" in p:
        ch = p["coupling_horizon"]
        try:
            horizon_and_rho1(float(ch.get("delta", config.delta)),
                             float(ch["eps"]), int(ch.get("d", 4)))
        except Exception:
            diags.append("coupling horizon n < 1: delta too small relative to eps")
    if config.exempt_radius is not None and config.graph.validate() == []:
        g = generate(config.graph)
        if config.exempt_radius >= g.radius():
            diags.append(
                f"exempt radius {config.exempt_radius} must stay below graph radius {g.radius()}")
    return diags


@dataclass
class ScenarioResult:
    scenario: str
    passed: bool
    metrics: dict
    audits: list[AuditReport]
    provenance: dict
    series: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "passed": bool(self.passed),
            "metrics": self.metrics,
            "audits": [a.to_dict() for a in self.audits],
            "provenance": self.provenance,
            "series_files": sorted(self.series),
        }


def _config_hash(config: ExperimentConfig) -> str:
    payload = json.dumps(config.to_dict(), sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _provenance(config: ExperimentConfig) -> dict:
    return {"config": config.to_dict(), "config_hash": _config_hash(config),
            "seed": config.seed, "version": __version__}


def _json_scalar(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def write_result(result: ScenarioResult, out_dir: str) -> str:
    """result.json, metrics.csv and one CSV per series, written atomically."""
    os.makedirs(out_dir, exist_ok=True)
    write_json(os.path.join(out_dir, "result.json"), result.to_dict())
    lines = ["key,value"]
    for k in sorted(result.metrics):
        lines.append(f"{k},{_json_scalar(result.metrics[k])!r}")
    atomic_write_text(os.path.join(out_dir, "metrics.csv"), "\n".join(lines) + "\n")
    for name in sorted(result.series):
        table = result.series[name]
        cols = sorted(table)
        rows = len(table[cols[0]])
        body = ["".join([",".join(cols)])]
        for r in range(rows):
            body.append(",".join(repr(_json_scalar(table[c][r])) for c in cols))
        atomic_write_text(os.path.join(out_dir, f"series_{name}.csv"),
                          "\n".join(body) + "\n")
    return os.path.join(out_dir, "result.json")


# -- shared pieces ---------------------------------------------------------------

def _spread_probes(n: int, count: int = 8) -> tuple[int, ...]:
    idx = np.unique(np.linspace(0, n - 1, num=min(count, n), dtype=np.int64))
    return tuple(int(i) for i in idx)


def _sim_config(config: ExperimentConfig, rule, distortion=None,
                record="last_two", probes=(), horizon=None, seed=None) -> SimConfig:
    return SimConfig(
        graph=config.graph,
        rule=rule,
        init=config.init,
        horizon=config.horizon if horizon is None else horizon,
        seed=config.seed if seed is None else seed,
        bots=config.bots,
        distortion=distortion if distortion is not None else config.distortion,
        record=record,
        probes=probes,
    )


def majority_vote_reference(g: Graph, initial: np.ndarray, steps: int) -> np.ndarray:
    """Integer-arithmetic majority vote with ties resolved to the agent's
    own value two steps back; layers (steps+1, n) of {0,1}."""
    a = np.asarray(initial)
    if not np.all((a == 0) | (a == 1)):
        raise ExperimentError("majority reference needs {0,1} initial opinions")
    cur = a.astype(np.int64)
    prev = cur.copy()
    layers = np.empty((steps + 1, g.n), dtype=np.int64)
    layers[0] = cur
    for t in range(1, steps + 1):
        ones = np.add.reduceat(cur[g.indices], g.indptr[:-1])
        twice = 2 * ones
        new = np.where(twice > g.degrees, 1, np.where(twice < g.degrees, 0, prev))
        prev, cur = cur, new
        layers[t] = cur
    return layers


# -- scenarios ---------------------------------------------------------------------

def _fragility_bot(config: ExperimentConfig) -> ScenarioResult:
    """One constant agent drags plain averaging to its value; the trajectory
    must match the absorbing-walk closed form at checkpoints."""
    if not config.bots:
        raise ExperimentError("fragility-bot needs at least one bot")
    g = generate(config.graph)
    c = config.bots[0][1]
    tol = float(config.params.get("consensus_tol", 1e-3))
    checkpoints = [int(t) for t in config.params.get("checkpoints", [10, 100, 1000])]
    checkpoints = [t for t in checkpoints if t <= config.horizon]
    oracle_tol = float(config.params.get("oracle_tol", 1e-9))
    probes = _spread_probes(g.n)

    sim = Simulation(g, _sim_config(config, DeGroot()))
    initial = sim.now.copy()
    snapshots: dict[int, np.ndarray] = {}
    probe_rows = [sim.now[list(probes)].copy()]
    stop_time = None
    for t in range(1, config.horizon + 1):
        sim.advance()
        if t in checkpoints:
            snapshots[t] = sim.now.copy()
        if t <= 2000 or t % 50 == 0:
            probe_rows.append(sim.now[list(probes)].copy())
        if float(np.max(np.abs(sim.now - c))) <= tol:
            stop_time = t
            break

    worst_oracle = 0.0
    bots = [i for i, _ in config.bots]
    for t, layer in snapshots.items():
        for i in range(g.n):
            cf = degroot_closed_form(g, initial, bots, i, t)
            worst_oracle = max(worst_oracle, abs(cf - layer[i]))

    reached = stop_time is not None
    audits = [AuditReport("BotConsensus", reached,
                          0.0 if reached else float(np.max(np.abs(sim.now - c))) - tol,
                          witness=None if reached else (int(np.argmax(np.abs(sim.now - c))),
                                                        sim.t, c)),
              AuditReport("WalkOracle", worst_oracle <= oracle_tol,
                          max(worst_oracle - oracle_tol, 0.0),
                          details={"checkpoints": sorted(snapshots)})]
    passed = all(a.passed for a in audits)
    metrics = {
        "bot_value": c,
        "consensus_tol": tol,
        "stop_time": stop_time if stop_time is not None else -1,
        "final_max_dev": float(np.max(np.abs(sim.now - c))),
        "oracle_worst_abs_err": worst_oracle,
    }
    series = {"probes": {"t": list(range(len(probe_rows))),
                         **{f"agent_{p}": [row[k] for row in probe_rows]
                            for k, p in enumerate(probes)}}}
    return ScenarioResult("fragility-bot", passed, metrics, audits,
                          _provenance(config), series)


def _fragility_bias(config: ExperimentConfig) -> ScenarioResult:
    """A uniform positive observation bias sends plain averaging off to
    infinity; pass when the minimum opinion clears initial max + gain."""
    g = generate(config.graph)
    beta = config.distortion.beta if config.distortion.kind == "plus_bias" else \
        float(config.params.get("beta", 0.01))
    distortion = DistortionModel("plus_bias", beta)
    gain = float(config.params.get("gain", 10.0))
    sim = Simulation(g, _sim_config(config, DeGroot(), distortion=distortion))
    threshold = float(sim.now.max()) + gain
    mins, maxs = [float(sim.now.min())], [float(sim.now.max())]
    stop_time = None
    for t in range(1, config.horizon + 1):
        sim.advance()
        mins.append(float(sim.now.min()))
        maxs.append(float(sim.now.max()))
        if mins[-1] > threshold:
            stop_time = t
            break
    passed = stop_time is not None
    audits = [AuditReport("BiasDivergence", passed,
                          0.0 if passed else threshold - mins[-1],
                          details={"threshold": threshold, "beta": beta})]
    metrics = {"beta": beta, "gain": gain, "threshold": threshold,
               "crossing_time": stop_time if stop_time is not None else -1,
               "final_min": mins[-1]}
    series = {"envelope": {"t": list(range(len(mins))), "min": mins, "max": maxs}}
    return ScenarioResult("fragility-bias", passed, metrics, audits,
                          _provenance(config), series)


def _sweep_radius(config: ExperimentConfig, g: Graph, eps: float,
                  beta: float = 0.0) -> int:
    if config.exempt_radius is not None:
        return config.exempt_radius
    gamma = float(config.params.get("gamma_factor", 0.95)) * eps
    return default_exempt_radius(gamma - beta, g)


def _robust_bot(config: ExperimentConfig) -> ScenarioResult:
    """Clamped averaging with a bot: audited agents (outside the exempt
    radius) must reach limits near mu, and the mean audited error must not
    increase as eps shrinks along the sweep."""
    g = generate(config.graph)
    sweep = [float(e) for e in config.params.get("eps_sweep", [0.05, 0.02, 0.01, 0.005])]
    rows = []
    estimates = {}
    for eps in sweep:
        radius = _sweep_radius(config, g, eps)
        crit = LearningCriterion(delta=config.delta, rho=config.rho,
                                 exempt_radius=radius, mu=config.init.mu)
        est = learning_estimate(
            _sim_config(config, EpsilonDeGroot(eps)), crit,
            config.replications, config.seed, graph=g)
        estimates[eps] = est
        rows.append({"eps": eps, "radius": radius,
                     "audited": int(est.audited_ids.size),
                     "max_frequency": est.max_frequency,
                     "mean_error": est.mean_error,
                     "converged_reps": est.converged_reps})
    smallest = min(sweep)
    est_s = estimates[smallest]
    errors = [r["mean_error"] for r in rows]  # sweep order: decreasing eps
    trend_ok = all(errors[k + 1] <= errors[k] + 1e-12 for k in range(len(errors) - 1))
    freq_ok = est_s.max_frequency <= config.rho
    conv_ok = all(estimates[e].converged_reps == config.replications for e in sweep)
    audits = [
        AuditReport("LearningFrequency", freq_ok,
                    max(est_s.max_frequency - config.rho, 0.0),
                    details={"eps": smallest, "max_frequency": est_s.max_frequency}),
        AuditReport("SweepTrend", trend_ok,
                    max((errors[k + 1] - errors[k] for k in range(len(errors) - 1)),
                        default=0.0) if not trend_ok else 0.0,
                    details={"mean_errors": errors}),
        AuditReport("AlternateConvergence", conv_ok,
                    0.0 if conv_ok else 1.0,
                    details={e: estimates[e].converged_reps for e in sweep}),
    ]
    passed = all(a.passed for a in audits)
    metrics = {"eps_sweep": sweep, "smallest_eps": smallest,
               "max_frequency_at_smallest": est_s.max_frequency,
               "mean_errors": errors,
               "audited_at_smallest": int(est_s.audited_ids.size)}
    series = {"sweep": {"eps": [r["eps"] for r in rows],
                        "mean_error": [r["mean_error"] for r in rows],
                        "max_frequency": [r["max_frequency"] for r in rows],
                        "audited": [r["audited"] for r in rows]}}
    return ScenarioResult("robust-bot", passed, metrics, audits,
                          _provenance(config), series)


_VARIANTS = ("uniform_noise", "plus_bias", "minus_bias")


def _distortion_rep(args):
    """One replication of the three coupled distortion variants.

    Runs noisy, plus-biased and minus-biased trajectories from the same
    seed in lockstep, checking the pointwise bracket
    minus <= noisy <= plus at every step."""
    config, eps, beta, mask, window, tolerance = args
    g = generate(config.graph)
    rule = EpsilonDeGroot(eps)
    sims = {
        "uniform_noise": Simulation(g, _sim_config(
            config, rule, distortion=DistortionModel("uniform_noise", beta))),
        "plus_bias": Simulation(g, _sim_config(
            config, rule, distortion=DistortionModel("plus_bias", beta))),
        "minus_bias": Simulation(g, _sim_config(
            config, rule, distortion=DistortionModel("minus_bias", beta))),
    }
    T = config.horizon
    deltas = {v: np.zeros(T + 1) for v in _VARIANTS}
    min_margin = np.inf
    for t in range(1, T + 1):
        for v in _VARIANTS:
            sims[v].advance()
        lo = float(np.min(sims["plus_bias"].now - sims["uniform_noise"].now))
        hi = float(np.min(sims["uniform_noise"].now - sims["minus_bias"].now))
        min_margin = min(min_margin, lo, hi)
        if t >= 2:
            for v in _VARIANTS:
                s = sims[v]
                if s.now is s.prev2:
                    deltas[v][t] = 0.0
                else:
                    deltas[v][t] = float(np.max(np.abs(s.now[mask] - s.prev2[mask])))
    out = {}
    for v in _VARIANTS:
        s = sims[v]
        z_even, z_odd = (s.now, s.prev) if s.t % 2 == 0 else (s.prev, s.now)
        converged = bool(np.max(deltas[v][-window:]) <= tolerance)
        out[v] = (z_even[mask].copy(), z_odd[mask].copy(), converged)
    return out, min_margin


def _robust_distortion(config: ExperimentConfig) -> ScenarioResult:
    """Distorted monitoring at beta = beta_factor * eps: learning must
    survive for all three variants and the biased runs must bracket the
    noisy run pointwise under shared seeds."""
    g = generate(config.graph)
    sweep = [float(e) for e in config.params.get("eps_sweep", [0.05, 0.02, 0.01, 0.005])]
    beta_factor = float(config.params.get("beta_factor", 0.9))
    window = int(config.params.get("window", 200))
    tolerance = float(config.params.get("tolerance", 1e-6))
    rows = []
    variant_errors = {v: [] for v in _VARIANTS}
    variant_maxfreq = {v: {} for v in _VARIANTS}
    variant_conv = {v: {} for v in _VARIANTS}
    min_margin = np.inf
    for eps in sweep:
        beta = beta_factor * eps
        radius = _sweep_radius(config, g, eps, beta=beta)
        ids = np.flatnonzero(_audited_mask(config, g, radius))
        mask = np.zeros(g.n, dtype=bool)
        mask[ids] = True
        seeds = tuple(int(s.generate_state(1)[0])
                      for s in np.random.SeedSequence(config.seed).spawn(config.replications))
        tasks = [(replace(config, seed=s), eps, beta, mask, window, tolerance)
                 for s in seeds]
        nw = min(worker_count(), config.replications)
        if nw > 1:
            with ProcessPoolExecutor(max_workers=nw) as pool:
                results = list(pool.map(_distortion_rep, tasks))
        else:
            results = [_distortion_rep(t) for t in tasks]
        for v in _VARIANTS:
            # The deterministic bias variants are the analyzable couplings:
            # their learning is gated on alternate convergence.  The noisy
            # run inherits learning through the pointwise bracket instead,
            # so its frequencies come from the bracketed final-layer
            # estimates and its convergence count is reported, not gating.
            gate = v != "uniform_noise"
            miss = np.zeros(ids.size, dtype=np.int64)
            err_sum = np.zeros(ids.size)
            conv = 0
            for out, _ in results:
                z_even, z_odd, converged = out[v]
                err = np.maximum(np.abs(z_even - config.init.mu),
                                 np.abs(z_odd - config.init.mu))
                err_sum += err
                bad = err > config.delta
                if converged:
                    conv += 1
                elif gate:
                    bad = np.ones_like(bad)
                miss += bad
            freq = miss / config.replications
            variant_errors[v].append(float((err_sum / config.replications).mean()))
            variant_maxfreq[v][eps] = float(freq.max())
            variant_conv[v][eps] = conv
        min_margin = min(min_margin, min(m for _, m in results))
        rows.append({"eps": eps, "beta": beta, "radius": radius,
                     "audited": int(ids.size)})
    smallest = min(sweep)
    freq_ok = all(variant_maxfreq[v][smallest] <= config.rho for v in _VARIANTS)
    biased = [v for v in _VARIANTS if v != "uniform_noise"]
    trend_ok = all(
        all(variant_errors[v][k + 1] <= variant_errors[v][k] + 1e-12
            for k in range(len(sweep) - 1))
        for v in biased)
    conv_ok = all(variant_conv[v][e] == config.replications
                  for v in biased for e in sweep)
    bracket_ok = min_margin >= 0.0
    audits = [
        AuditReport("LearningFrequency", freq_ok,
                    max(max(variant_maxfreq[v][smallest] for v in _VARIANTS)
                        - config.rho, 0.0),
                    details={v: variant_maxfreq[v][smallest] for v in _VARIANTS}),
        AuditReport("SweepTrend", trend_ok, 0.0 if trend_ok else 1.0,
                    details={v: variant_errors[v] for v in _VARIANTS}),
        AuditReport("Bracketing", bracket_ok, max(-min_margin, 0.0),
                    details={"min_margin": float(min_margin)}),
        AuditReport("AlternateConvergence", conv_ok, 0.0 if conv_ok else 1.0,
                    details={v: variant_conv[v] for v in _VARIANTS}),
    ]
    passed = all(a.passed for a in audits)
    metrics = {"eps_sweep": sweep, "beta_factor": beta_factor,
               "min_bracket_margin": float(min_margin),
               "mean_errors": {v: variant_errors[v] for v in _VARIANTS},
               "max_frequency_at_smallest": {v: variant_maxfreq[v][smallest]
                                             for v in _VARIANTS}}
    series = {"sweep": {"eps": sweep,
                        **{f"mean_error_{v}": variant_errors[v] for v in _VARIANTS}}}
    return ScenarioResult("robust-distortion", passed, metrics, audits,
                          _provenance(config), series)


def _audited_mask(config: ExperimentConfig, g: Graph, radius: int) -> np.ndarray:
    mask = np.ones(g.n, dtype=bool)
    for b, _ in config.bots:
        mask &= g.distances_from(int(b)) > radius
    return mask


def _granular_majority(config: ExperimentConfig) -> ScenarioResult:
    """Two-level granular averaging must reproduce an independently coded
    integer majority vote bit-exactly, and its derived robustness pair for
    a degree-2 graph must be 0.25."""
    n_graphs = int(config.params.get("n_graphs", 50))
    steps = int(config.params.get("steps", 100))
    sizes = config.params.get("sizes", [[24, 3], [30, 4]])
    mismatches = 0
    checked = 0
    witness = None
    for k in range(n_graphs):
        n, deg = sizes[k % len(sizes)]
        spec = GraphSpec("random_regular", n=int(n), degree=int(deg),
                         seed=config.seed + k)
        g = generate(spec)
        sim_cfg = SimConfig(graph=spec, rule=GranularDeGroot((0.0, 1.0)),
                            init=InitialDistribution(mu=0.5, noise="two_point", k=0.5),
                            horizon=steps, seed=config.seed * 31 + k, record="full")
        from .dynamics import run as run_dynamics
        traj = run_dynamics(sim_cfg, graph=g)
        ref = majority_vote_reference(g, traj.full[0], steps)
        checked += 1
        if not np.array_equal(traj.full, ref.astype(np.float64)):
            mismatches += 1
            if witness is None:
                bad = np.argwhere(traj.full != ref)
                witness = (int(bad[0][1]), int(bad[0][0]), float(traj.full[tuple(bad[0])]))
    gp = granular_params([0.0, 1.0], 2)
    params_ok = gp.gamma == 0.25 and gp.eta == 0.25
    audits = [
        AuditReport("MajorityEquivalence", mismatches == 0, float(mismatches),
                    witness=witness, details={"graphs": checked, "steps": steps}),
        AuditReport("GranularParams", params_ok,
                    abs(gp.gamma - 0.25) + abs(gp.eta - 0.25),
                    details={"gamma": gp.gamma, "eta": gp.eta}),
    ]
    passed = all(a.passed for a in audits)
    metrics = {"graphs": checked, "steps": steps, "mismatches": mismatches,
               "gamma": gp.gamma, "eta": gp.eta}
    return ScenarioResult("granular-majority", passed, metrics, audits,
                          _provenance(config))


def _rw_decay(config: ExperimentConfig) -> ScenarioResult:
    """Max occupation probability of the simple walk decays like 1/sqrt(t)
    on the long path: the fitted log-log slope must sit near -1/2."""
    g = generate(config.graph)
    origin = int(config.params.get("origin", g.n // 2))
    t_min = int(config.params.get("t_min", 100))
    t_max = int(config.params.get("t_max", 1000))
    lo = float(config.params.get("slope_lo", -0.55))
    hi = float(config.params.get("slope_hi", -0.45))
    fit = p_t_decay_fit(g, origin, range(t_min, t_max + 1))
    ok = lo <= fit.slope <= hi
    audits = [AuditReport("DecaySlope", ok,
                          0.0 if ok else min(abs(fit.slope - lo), abs(fit.slope - hi)),
                          details={"slope": fit.slope, "bounds": [lo, hi]})]
    metrics = {"slope": fit.slope, "intercept": fit.intercept,
               "empirical_constant": fit.empirical_constant,
               "t_min": t_min, "t_max": t_max, "origin": origin}
    series = {"pt_decay": {"t": fit.t_values.tolist(),
                           "p_t": fit.p_values.tolist()}}
    return ScenarioResult("rw-decay", ok, metrics, audits,
                          _provenance(config), series)


def _lyapunov_audit(config: ExperimentConfig) -> ScenarioResult:
    """Clamped averaging run with the full proof machinery checked on it:
    non-increasing weighted Lyapunov series at probe centers, variation
    bounds, and the per-update averaging/robustness conditions."""
    if not isinstance(config.rule, EpsilonDeGroot):
        raise ExperimentError("lyapunov-audit needs an eps_degroot rule")
    eps = config.rule.eps
    gamma = float(config.params.get("gamma", 0.95 * eps))
    params = eps_degroot_params(eps, gamma)
    g = generate(config.graph)
    centers = [int(c) for c in config.params.get("centers", _spread_probes(g.n, 5))]
    n_seeds = int(config.params.get("seeds", 1))
    from .dynamics import run as run_dynamics

    audits = []
    series = {}
    worst_mono = -np.inf
    for k in range(n_seeds):
        cfg = _sim_config(config, config.rule, record="full", seed=config.seed + k)
        traj = run_dynamics(cfg, graph=g)
        bots = [i for i, _ in config.bots]
        for c in centers:
            lcfg = LyapunovConfig(center=c, ratio=1.0 - gamma)
            ls = lyapunov_series(g, lcfg, traj.full)
            slack = 1e-9 * g.weight_mass(c, 1.0 - gamma)
            mono = float(np.max(np.diff(ls))) if ls.size >= 2 else 0.0
            worst_mono = max(worst_mono, mono)
            audits.append(AuditReport(
                "Lyapunov", mono <= slack, max(mono, 0.0),
                details={"center": c, "seed": config.seed + k, "slack": slack}))
            audits.append(check_variation_bound(
                g, c, gamma, params.eta, traj.full, 0, traj.n_steps))
            if k == 0:
                series[f"lyapunov_{c}"] = {"t": list(range(ls.size)),
                                           "L": ls.tolist()}
        audits.append(audit_a2_trajectory(g, traj.full, eps, skip=bots))
        audits.append(audit_a3_trajectory(g, traj.full, params, skip=bots))
    passed = all(a.passed for a in audits)
    metrics = {"eps": eps, "gamma": gamma, "eta": params.eta,
               "seeds": n_seeds, "centers": centers,
               "worst_lyapunov_increase": max(worst_mono, 0.0)}
    return ScenarioResult("lyapunov-audit", passed, metrics, audits,
                          _provenance(config), series)


def _eps_sweep(config: ExperimentConfig) -> ScenarioResult:
    """Learning error against eps on a bot-free graph: the audited error
    must not increase as eps shrinks."""
    g = generate(config.graph)
    sweep = [float(e) for e in config.params.get("eps_sweep", [0.05, 0.02, 0.01])]
    errors = []
    freqs = []
    conv = []
    for eps in sweep:
        radius = config.exempt_radius if config.exempt_radius is not None else 0
        crit = LearningCriterion(delta=config.delta, rho=config.rho,
                                 exempt_radius=radius, mu=config.init.mu)
        est = learning_estimate(_sim_config(config, EpsilonDeGroot(eps)), crit,
                                config.replications, config.seed, graph=g)
        errors.append(est.mean_error)
        freqs.append(est.max_frequency)
        conv.append(est.converged_reps)
    trend_ok = all(errors[k + 1] <= errors[k] + 1e-12 for k in range(len(errors) - 1))
    conv_ok = all(c == config.replications for c in conv)
    audits = [AuditReport("SweepTrend", trend_ok, 0.0 if trend_ok else 1.0,
                          details={"mean_errors": errors}),
              AuditReport("AlternateConvergence", conv_ok, 0.0 if conv_ok else 1.0)]
    passed = all(a.passed for a in audits)
    metrics = {"eps_sweep": sweep, "mean_errors": errors, "max_frequencies": freqs}
    series = {"sweep": {"eps": sweep, "mean_error": errors}}
    return ScenarioResult("eps-sweep", passed, metrics, audits,
                          _provenance(config), series)


SCENARIOS = {
    "fragility-bot": _fragility_bot,
    "fragility-bias": _fragility_bias,
    "robust-bot": _robust_bot,
    "robust-distortion": _robust_distortion,
    "granular-majority": _granular_majority,
    "rw-decay": _rw_decay,
    "lyapunov-audit": _lyapunov_audit,
    "eps-sweep": _eps_sweep,
}


def run_scenario(config: ExperimentConfig) -> ScenarioResult:
    """Validate, dispatch to the registered scenario, and (when an output
    directory is configured) write the result files atomically."""
    diags = validate(config)
    if diags:
        raise ExperimentError("; ".join(diags))
    result = SCENARIOS[config.scenario](config)
    if config.output_dir:
        write_result(result, config.output_dir)
    return result
