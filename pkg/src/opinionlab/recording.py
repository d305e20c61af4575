"""Trajectory file formats.

Full recordings go to a binary .npz bundle (row-major opinions array plus
the realized edge list and a JSON metadata header echoing config and
seed).  Probe recordings go to CSV with the same header as comment lines;
every run also gets a summary JSON of final-state statistics.
"""

from __future__ import annotations

import json
import os
import tempfile
from typing import Any

import numpy as np

from .dynamics import DynamicsError, Trajectory
from .graphs import Graph


def _atomic_write_bytes(path: str, data: bytes) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def atomic_write_text(path: str, text: str) -> None:
    _atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path: str, payload: Any) -> None:
    atomic_write_text(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")


def trajectory_meta(traj: Trajectory) -> dict:
    return {
        "config": traj.config.to_dict(),
        "seed": traj.config.seed,
        "n_steps": traj.n_steps,
        "frozen_at": traj.frozen_at,
        "stopped_at": traj.stopped_at,
    }


def save_trajectory(traj: Trajectory, g: Graph, path: str) -> None:
    """Binary bundle: opinions (n_steps+1, n) row-major, edge list, metadata."""
    if traj.full is None:
        raise DynamicsError("save_trajectory requires record='full'")
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    os.close(fd)
    try:
        with open(tmp, "wb") as fh:
            np.savez(fh,
                     opinions=np.ascontiguousarray(traj.full),
                     edges=g.edges,
                     n=np.int64(g.n),
                     meta=np.bytes_(json.dumps(trajectory_meta(traj), sort_keys=True)))
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def load_trajectory(path: str) -> tuple[np.ndarray, Graph, dict]:
    with np.load(path) as z:
        opinions = z["opinions"]
        g = Graph(int(z["n"]), z["edges"])
        meta = json.loads(bytes(z["meta"]).decode("utf-8"))
    return opinions, g, meta


def write_probe_csv(traj: Trajectory, path: str) -> None:
    """CSV of (t, agent_id, opinion) for the probed agents, config in header."""
    if traj.probes is None and traj.full is None:
        raise DynamicsError("write_probe_csv needs probe or full recording")
    if traj.probes is not None:
        ids = traj.probe_ids
        data = traj.probes
    else:
        ids = tuple(range(traj.full.shape[1]))
        data = traj.full
    lines = [f"# {json.dumps(trajectory_meta(traj), sort_keys=True)}",
             "t,agent_id,opinion"]
    for t in range(data.shape[0]):
        for col, agent in enumerate(ids):
            lines.append(f"{t},{agent},{data[t, col]!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_learning_z_csv(estimate, path: str) -> None:
    """Per-replication raw limit estimates of the audited agents as CSV:
    (replication, seed, agent_id, z_even, z_odd)."""
    if estimate.raw_z is None:
        raise ValueError("estimate was built without keep_raw=True")
    lines = ["replication,seed,agent_id,z_even,z_odd"]
    for k in range(estimate.replications):
        for col, agent in enumerate(estimate.audited_ids):
            ze, zo = estimate.raw_z[k, col]
            lines.append(f"{k},{estimate.seeds[k]},{agent},{ze!r},{zo!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_summary_json(traj: Trajectory, path: str) -> None:
    final = traj.final.now
    payload = {
        "meta": trajectory_meta(traj),
        "final": {
            "t": traj.final.t,
            "min": float(final.min()),
            "max": float(final.max()),
            "mean": float(final.mean()),
            "std": float(final.std()),
        },
    }
    write_json(path, payload)
