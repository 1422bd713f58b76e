"""
Episode metrics and CSV export.
"""

import csv
import logging
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from fdialab.exceptions import DomainError, ExportError
from fdialab.models.report import MetricReport
from fdialab.simulation import EpisodeTrace

logger = logging.getLogger(__name__)

# 17 significant digits reproduce every double exactly
FLOAT_FORMAT = "{:.16e}"


def deviation_stats(reference: np.ndarray, actual: np.ndarray) -> Tuple[float, float]:
    """(max, RMS) of the per-step Euclidean deviation."""
    if reference.shape[0] == 0:
        return 0.0, 0.0
    dev = np.linalg.norm(np.asarray(reference) - np.asarray(actual), axis=1)
    return float(np.max(dev)), float(np.sqrt(np.mean(dev**2)))


def mean_effort(u: np.ndarray) -> float:
    if u.shape[0] == 0:
        return 0.0
    return float(np.mean(np.linalg.norm(u, axis=1)))


def compute_metrics(
    trace: EpisodeTrace,
    refs: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    window: Optional[Tuple[int, int]] = None,
) -> MetricReport:
    """
    Deviation and effort over the attack window (the whole episode when there is
    no attack); alarm and defence statistics over the whole episode.

    refs overrides the (nominal, attacker) planar references stored in the trace.
    """
    if len(trace) == 0:
        raise DomainError("Cannot compute metrics of an empty trace")
    pbar, pA = refs if refs is not None else (trace["pbar"], trace["pA"])
    k = trace["k"]
    if window is not None:
        mask = (k >= window[0]) & (k < window[1])
    elif trace.attack_end > trace.attack_start:
        mask = trace.attack_mask
    else:
        mask = np.ones_like(k, dtype=bool)

    p = trace["p"][mask]
    devmax_n, devrms_n = deviation_stats(pbar[mask], p)
    devmax_a, devrms_a = deviation_stats(pA[mask], p)
    alarms = trace["alarm"] > 0.5
    attack_mask = trace.attack_mask

    max_z_ratio = 0.0
    active_fraction = 0.0
    acc_error = 0.0
    if attack_mask.any():
        if trace.tau_prime > 0:
            max_z_ratio = float(np.max(trace["z"][attack_mask]) / trace.tau_prime)
        active_fraction = float(np.mean(trace["qcqp_active"][attack_mask]))
        acc_error = _prediction_error(trace)

    f = trace["f"]
    return MetricReport(
        mode=trace.mode,
        seed=trace.seed,
        steps=int(np.sum(mask)),
        devmax_nominal=devmax_n,
        devrms_nominal=devrms_n,
        devmax_attack=devmax_a,
        devrms_attack=devrms_a,
        mean_effort=mean_effort(trace["u"][mask]),
        alarm_count=int(np.sum(alarms)),
        attack_alarm_count=int(np.sum(alarms & attack_mask)),
        max_w_over_tau=float(np.max(trace["w"]) / trace.tau) if trace.tau > 0 else 0.0,
        max_z_over_tau_prime=max_z_ratio,
        f_min=float(np.min(f)),
        f_mean=float(np.mean(f)),
        qcqp_active_fraction=active_fraction,
        acc_pred_rms_error=acc_error,
    )


def _prediction_error(trace: EpisodeTrace) -> float:
    """RMS gap between the attacker's predicted pddot_{k+2} and the realized (pdot_{k+2} - pdot_{k+1}) / Ts."""
    pdot = trace["pdot"]
    pred = trace["acc_pred"]
    if pdot.shape[0] < 3:
        return 0.0
    realized = (pdot[2:] - pdot[1:-1]) / trace.Ts
    predicted = pred[:-2]
    ok = np.all(np.isfinite(predicted), axis=1)
    if not ok.any():
        return 0.0
    return float(np.sqrt(np.mean(np.sum((predicted[ok] - realized[ok]) ** 2, axis=1))))


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def _format(value) -> str:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, str):
        return value
    return FLOAT_FORMAT.format(float(value))


def export_csv(obj: Union[EpisodeTrace, MetricReport, Sequence[MetricReport]], path: Union[str, Path]) -> Path:
    """Trace: one row per step. Report(s): one row each. Header row always written."""
    path = Path(path)
    if isinstance(obj, EpisodeTrace):
        header = obj.header()
        rows = [[_format(v) for v in row] for row in obj.flat()]
    else:
        reports = [obj] if isinstance(obj, MetricReport) else list(obj)
        header = list(MetricReport.model_fields)
        rows = [[_format(getattr(r, name)) for name in header] for r in reports]
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as e:
        raise ExportError(f"Cannot write CSV ({e.strerror})", str(path)) from e
    logger.info(f"📦 Wrote {len(rows)} rows to {path}")
    return path


def read_csv(path: Union[str, Path]) -> Dict[str, Union[np.ndarray, List[str]]]:
    """Column name -> float array; non-numeric columns come back as lists of strings."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            raw = list(reader)
    except (OSError, StopIteration) as e:
        raise ExportError("Cannot read CSV", str(path)) from e

    columns: Dict[str, Union[np.ndarray, List[str]]] = {}
    for j, name in enumerate(header):
        values = [row[j] for row in raw]
        try:
            columns[name] = np.array([float(v) for v in values], dtype=float)
        except ValueError:
            columns[name] = values
    return columns

