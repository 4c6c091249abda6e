"""Per-episode metrics: accumulation, CSV codec and summaries."""
from __future__ import annotations

import csv
import dataclasses
import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .domain import StepOutcome, TaskKind
from .errors import ComparisonError
from .reward import jain_index

logger = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "reward", "reliability", "energy_efficiency", "energy_per_task", "spectral_efficiency",
    "latency", "completion_time", "failure_rate", "offload_delay", "throughput_gbps",
    "fairness", "jain", "mac_success_rate",
)
CSV_COLUMNS = ("episode",) + METRIC_COLUMNS + ("comm_bytes", "divergence", "faults")


@dataclass
class MetricsRow:
    episode: int
    reward: float = 0.0
    reliability: float = 0.0
    energy_efficiency: float = 0.0
    energy_per_task: float = 0.0
    spectral_efficiency: float = 0.0
    latency: float = 0.0
    completion_time: float = 0.0
    failure_rate: float = 0.0
    offload_delay: float = 0.0
    throughput_gbps: float = 0.0
    fairness: float = 0.0
    jain: float = 0.0
    mac_success_rate: float = 0.0
    comm_bytes: int = 0
    divergence: float = 0.0
    faults: int = 0

    def values(self) -> Tuple:
        return tuple(getattr(self, c) for c in CSV_COLUMNS)


def _mean(xs):
    return float(np.mean(xs)) if len(xs) else 0.0


class EpisodeTally:
    """Collects step outcomes and rewards of one episode for all agents."""

    def __init__(self, num_agents: int, bandwidth_hz: float):
        self.num_agents = num_agents
        self.bandwidth_hz = bandwidth_hz
        self.rewards: List[float] = []
        self.fairness: List[float] = []
        self.latencies: List[float] = []
        self.completion: List[float] = []
        self.offload_delays: List[float] = []
        self.se: List[float] = []
        self.energy = 0.0
        self.megabytes = 0.0
        self.finished = 0
        self.succeeded = 0
        self.mac_attempts = 0
        self.mac_successes = 0
        self.mac_per_agent = np.zeros(num_agents)
        self.per_class = {kind: [0, 0] for kind in TaskKind}

    def add_step(self, outcomes: Sequence[StepOutcome], rewards: Sequence[float], fairness: float):
        self.rewards.extend(float(r) for r in rewards)
        self.fairness.append(float(fairness))
        for o in outcomes:
            self.energy += o.energy_spent
            self.megabytes += o.completed_mb
            if o.task_kind is not None:
                self.latencies.append(o.latency_s)
            if o.mac_attempted:
                self.mac_attempts += 1
            if o.mac_succeeded:
                self.mac_successes += 1
                self.mac_per_agent[o.agent] += 1
                self.se.append(o.se_bps_hz)
                self.offload_delays.append(o.latency_s)
            if o.task_finished:
                self.finished += 1
                self.per_class[o.task_kind][1] += 1
                if o.task_succeeded:
                    self.succeeded += 1
                    self.per_class[o.task_kind][0] += 1
                    self.completion.append(o.latency_s)
            self.finished += o.dropped

    @property
    def reliability(self) -> float:
        return self.succeeded / self.finished if self.finished else 0.0

    def class_reliability(self) -> Dict[str, float]:
        return {kind.name: (ok / n if n else 0.0) for kind, (ok, n) in self.per_class.items()}

    def row(self, episode: int, comm_bytes: int = 0, divergence: float = 0.0, faults: int = 0) -> MetricsRow:
        mean_se = _mean(self.se)
        return MetricsRow(
            episode=episode,
            reward=_mean(self.rewards),
            reliability=self.reliability,
            energy_efficiency=self.megabytes / self.energy if self.energy > 0 else 0.0,
            energy_per_task=self.energy / self.finished if self.finished else 0.0,
            spectral_efficiency=mean_se,
            latency=_mean(self.latencies),
            completion_time=_mean(self.completion),
            failure_rate=1.0 - self.reliability if self.finished else 0.0,
            offload_delay=_mean(self.offload_delays),
            throughput_gbps=mean_se * self.bandwidth_hz / 1e9,
            fairness=_mean(self.fairness),
            jain=jain_index(self.mac_per_agent),
            mac_success_rate=self.mac_successes / self.mac_attempts if self.mac_attempts else 0.0,
            comm_bytes=comm_bytes,
            divergence=divergence,
            faults=faults,
        )


def _format(value):
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def render_csv(rows: Iterable[MetricsRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([_format(v) for v in row.values()])
    return buf.getvalue()


def write_csv(path, rows: Iterable[MetricsRow]) -> Path:
    path = Path(path)
    path.write_text(render_csv(rows), encoding="utf-8")
    return path


def read_csv(path) -> List[MetricsRow]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ComparisonError(f"cannot read metrics from {path}: {e}") from e
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != CSV_COLUMNS:
        raise ComparisonError(f"{path}: unexpected metrics header {header}")
    types = {f.name: f.type for f in dataclasses.fields(MetricsRow)}
    rows = []
    for line_no, record in enumerate(reader, start=2):
        if len(record) != len(CSV_COLUMNS):
            raise ComparisonError(f"{path}:{line_no}: expected {len(CSV_COLUMNS)} fields, got {len(record)}")
        values = {}
        for name, raw in zip(CSV_COLUMNS, record):
            values[name] = int(raw) if types[name] in (int, "int") else float(raw)
        rows.append(MetricsRow(**values))
    return rows


def summarize(rows: Sequence[MetricsRow], columns: Sequence[str] = METRIC_COLUMNS,
              last: Optional[int] = None) -> Dict[str, Tuple[float, float]]:
    """Mean and population standard deviation of each column, optionally over the last rows only."""
    if last is not None:
        rows = rows[-last:]
    out = {}
    for c in columns:
        xs = np.array([getattr(r, c) for r in rows], dtype=np.float64)
        out[c] = (float(xs.mean()), float(xs.std())) if xs.size else (0.0, 0.0)
    return out


def moving_average(xs: Sequence[float], window: int) -> np.ndarray:
    """Trailing mean over up to ``window`` values at each position."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size == 0:
        return xs
    c = np.concatenate([[0.0], np.cumsum(xs)])
    idx = np.arange(1, xs.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def format_table(columns: Sequence[str], labels: Sequence[str],
                 summaries: Sequence[Dict[str, Tuple[float, float]]]) -> str:
    """Aligned text: one line per metric, one ``mean +- std`` cell per run."""
    cells = [[f"{s[c][0]:.4f} +- {s[c][1]:.4f}" for s in summaries] for c in columns]
    name_w = max(len("metric"), *(len(c) for c in columns))
    col_w = [max(len(labels[j]), *(len(row[j]) for row in cells)) for j in range(len(labels))]
    lines = ["  ".join(["metric".ljust(name_w)] + [l.rjust(w) for l, w in zip(labels, col_w)])]
    for c, row in zip(columns, cells):
        lines.append("  ".join([c.ljust(name_w)] + [v.rjust(w) for v, w in zip(row, col_w)]))
    return "\n".join(lines) + "\n"
