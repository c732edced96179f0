"""Run records: per-iteration sampler state, particle snapshots, persistence."""

import csv
import json
import time
from dataclasses import dataclass, field, asdict


@dataclass
class IterationRecord:
    l: int
    t: float
    alpha: float
    backend: str
    eps_r: float = None
    n_state: int = None
    n_adjoint: int = None
    n_enriched: int = 0
    certified_max_indicator: float = None
    clamped: int = 0
    flags: list = field(default_factory=list)
    timers: dict = field(default_factory=dict)
    timestamp: float = field(default_factory=time.time)


class RunLog:
    """Append-only record of one sampler run.

    Keeps one :class:`IterationRecord` per iteration plus particle
    snapshots (needed for trajectory comparisons), and serializes to
    JSON-lines / CSV.
    """

    def __init__(self, meta=None):
        self.meta = dict(meta or {})
        self.records = []
        self.snapshots = []  # (l, particles copy, eta copy)

    def add(self, record):
        if self.records and record.timestamp < self.records[-1].timestamp:
            record.timestamp = self.records[-1].timestamp
        self.records.append(record)

    def snapshot(self, l, particles, eta=None):
        self.snapshots.append((l, particles.copy(), None if eta is None else eta.copy()))

    @property
    def trajectory(self):
        """Particle snapshots stacked as a ``(n_snapshots, M, d)`` array."""
        import numpy as np

        return np.stack([p for _, p, _ in self.snapshots])

    @property
    def alphas(self):
        return [r.alpha for r in self.records]

    def final_particles(self):
        return self.snapshots[-1][1]

    # -- persistence ------------------------------------------------------

    def write_jsonl(self, path):
        with open(path, "w") as fh:
            fh.write(json.dumps({"meta": self.meta}) + "\n")
            for rec in self.records:
                fh.write(json.dumps(asdict(rec)) + "\n")

    def write_particles_csv(self, path):
        """One row per particle per snapshot: l, m, theta_1..theta_d, eta."""
        d = self.snapshots[0][1].shape[1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["l", "m"] + [f"theta_{j+1}" for j in range(d)] + ["eta"])
            for l, particles, eta in self.snapshots:
                for m, row in enumerate(particles):
                    vals = [repr(float(v)) for v in row]
                    e = "" if eta is None else repr(float(eta[m]))
                    writer.writerow([l, m] + vals + [e])

    def write_history_csv(self, path):
        cols = ["l", "t", "alpha", "eps_r", "n_state", "n_adjoint", "n_enriched", "clamped"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for rec in self.records:
                writer.writerow([getattr(rec, c) for c in cols])
