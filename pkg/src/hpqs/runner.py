"""Run experiments per seed, persist metrics, and build comparison tables."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from hpqs import __version__
from hpqs.config import ExperimentConfig
from hpqs.tasks.common import TaskResult


@dataclass
class RunRecord:
    task: str
    variant: str
    config_hash: str
    metric: str
    series: dict[int, list[dict]]  # seed -> per-epoch metrics
    n_params: int
    shots: str
    noise: str
    duration_s: float = 0.0
    version: str = __version__
    config: dict = field(default_factory=dict)

    @property
    def finals(self) -> np.ndarray:
        return np.array([epochs[-1][self.metric] for _, epochs in sorted(self.series.items())], dtype=np.float64)

    @property
    def mean(self) -> float:
        return float(self.finals.mean())

    @property
    def std(self) -> float:
        return float(self.finals.std()) if len(self.series) > 1 else 0.0

    def to_json(self) -> str:
        data = asdict(self)
        data["series"] = {str(k): v for k, v in sorted(self.series.items())}
        return json.dumps(data, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        data = json.loads(text)
        data["series"] = {int(k): v for k, v in data["series"].items()}
        return cls(**data)


def shot_label(config: ExperimentConfig) -> str:
    if config.variant == "nqs":
        return "-"
    if not config.finite:
        return "inf"
    return f"{config.shots:g}xHSS"


def run_dir(config: ExperimentConfig) -> Path:
    return Path(config.output_dir) / f"{config.task}-{config.variant}-{config.config_hash()}"


def execute(config: ExperimentConfig) -> TaskResult:
    from hpqs.tasks import qml, qpa, qt

    runner = {"qml": qml.run_qml, "qt": qt.run_qt, "qpa-gen": qpa.run_qpa_gen}[config.task]
    return runner(config)


def seed_metrics(config: ExperimentConfig, result: TaskResult, index: int) -> str:
    """Per-seed metrics file: a pure function of the config and seed (no timing)."""
    seed = result.seeds[index]
    body = {
        "config_hash": config.config_hash(),
        "epochs": {str(e["epoch"]): {k: v for k, v in e.items() if k != "epoch"} for e in seed.epochs},
        "n_params": seed.n_params,
        "seed": seed.seed,
        "task": config.task,
        "variant": config.variant,
        "version": __version__,
    }
    return json.dumps(body, indent=2, sort_keys=True) + "\n"


def run_experiment(config: ExperimentConfig, result: TaskResult | None = None) -> RunRecord:
    """Execute (unless ``result`` is supplied) and write seed JSONs, summary CSV and record."""
    start = time.perf_counter()
    result = execute(config) if result is None else result
    duration = time.perf_counter() - start
    record = RunRecord(
        task=config.task,
        variant=config.variant,
        config_hash=config.config_hash(),
        metric=result.metric,
        series={s.seed: s.epochs for s in result.seeds},
        n_params=result.n_params,
        shots=shot_label(config),
        noise=config.noise,
        duration_s=round(duration, 3),
        config=config.canonical(),
    )
    out = run_dir(config)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(config.to_yaml())
    for i, seed in enumerate(result.seeds):
        (out / f"seed_{seed.seed}.json").write_text(seed_metrics(config, result, i))
    csv_text, _ = emit_comparison([record])
    (out / "summary.csv").write_text(csv_text)
    (out / "record.json").write_text(record.to_json())
    return record


def load_record(path) -> RunRecord:
    path = Path(path)
    if path.is_dir():
        path = path / "record.json"
    return RunRecord.from_json(path.read_text())


def _format_metric(record: RunRecord) -> str:
    if record.metric == "accuracy":
        return f"{100 * record.mean:.2f} ± {100 * record.std:.2f}"
    return f"{record.mean:.4f} ± {record.std:.4f}"


COLUMNS = ("model", "metric", "mean_std", "n_params", "shots", "noise", "seeds")


def emit_comparison(records: list[RunRecord]) -> tuple[str, str]:
    """CSV text and an aligned plain-text table, one row per record sorted by variant."""
    if not records:
        raise ValueError("no records to compare")
    tasks = sorted({r.task for r in records})
    if len(tasks) > 1:
        raise ValueError(f"cannot compare records from different tasks: {tasks}")
    rows = [
        (r.variant, r.metric, _format_metric(r), str(r.n_params), r.shots, r.noise, str(len(r.series)))
        for r in sorted(records, key=lambda r: (r.variant, r.shots, r.noise, r.config_hash))
    ]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    writer.writerows(rows)
    widths = [max(len(c), *(len(row[i]) for row in rows)) for i, c in enumerate(COLUMNS)]
    lines = [" | ".join(c.ljust(w) for c, w in zip(COLUMNS, widths))]
    lines.append("-+-".join("-" * w for w in widths))
    lines += [" | ".join(v.ljust(w) for v, w in zip(row, widths)) for row in rows]
    return buf.getvalue(), f"{tasks[0]}\n" + "\n".join(lines) + "\n"
