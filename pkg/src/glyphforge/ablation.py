"""Train and score a list of configurations under one fixed split."""

import csv
import logging
import sys
from dataclasses import dataclass

from .model import count_parameters
from .trainer import evaluate, train

log = logging.getLogger(__name__)

HEADER = ["config_name", "params", "accuracy", "precision", "recall", "f1"]


@dataclass
class AblationRow:
    name: str
    params: int
    report: object = None  # EvalReport, None when the run failed
    error: str = ""
    artifact: object = None
    logs: list = None

    @property
    def failed(self):
        return self.report is None


def run_ablation(configs, train_set, val_set, test_set, out=sys.stdout, average="macro"):
    """One row per config, in config order; a failing run yields a failed row."""
    rows = []
    for cfg in configs:
        try:
            params = count_parameters(cfg)
        except Exception as exc:  # invalid config still gets a row
            rows.append(AblationRow(cfg.name, 0, error=str(exc)))
            continue
        try:
            if out is not None:
                print(f"# {cfg.name}: {params} parameters", file=out, flush=True)
            artifact, logs = train(cfg, train_set, val_set, out=out)
            rep = evaluate(artifact, *test_set, average=average)
            rows.append(AblationRow(cfg.name, params, rep, artifact=artifact, logs=logs))
        except Exception as exc:
            log.error("ablation run %s failed: %s", cfg.name, exc)
            rows.append(AblationRow(cfg.name, params, error=f"{type(exc).__name__}: {exc}"))
    return rows


def write_ablation_csv(rows, path):
    """Metrics are written as percentages with two decimals; failed rows say ``failed``."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HEADER)
        for r in rows:
            if r.failed:
                writer.writerow([r.name, r.params, "failed", "failed", "failed", "failed"])
                continue
            rep = r.report
            writer.writerow(
                [r.name, r.params]
                + [f"{100 * v:.2f}" for v in (rep.accuracy, rep.precision, rep.recall, rep.f1)]
            )
