#!/usr/bin/env python3
"""
Latency summaries per T-CONT class
"""

import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, Iterable, List

import numpy as np

from models import TcontClass

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClassSummary:
    tcont_class: TcontClass
    count: int
    mean_us: float
    p50_us: float
    p99_us: float


def summarize_latencies(latencies: Iterable[float], tcont_class: TcontClass) -> ClassSummary:
    values = np.asarray(list(latencies), dtype=float)
    if values.size == 0:
        return ClassSummary(tcont_class, 0, float("nan"), float("nan"), float("nan"))
    return ClassSummary(
        tcont_class=tcont_class,
        count=int(values.size),
        mean_us=float(np.mean(values)),
        p50_us=float(np.percentile(values, 50)),
        p99_us=float(np.percentile(values, 99)),
    )


def summarize(samples) -> Dict[TcontClass, ClassSummary]:
    """Group samples (anything with tcont_class and latency_us) by class"""
    grouped: Dict[TcontClass, List[float]] = defaultdict(list)
    for sample in samples:
        grouped[sample.tcont_class].append(sample.latency_us)
    summary = {
        cls: summarize_latencies(grouped[cls], cls) for cls in TcontClass if cls in grouped
    }
    for cls, stats in summary.items():
        logger.debug(
            f"{cls.value}: n={stats.count} mean={stats.mean_us:.2f} "
            f"p50={stats.p50_us:.2f} p99={stats.p99_us:.2f}"
        )
    return summary


def stage_means(samples, labels: Iterable[str]) -> Dict[str, float]:
    """Mean of each breakdown column over the samples"""
    labels = list(labels)
    if not samples:
        return {label: float("nan") for label in labels}
    matrix = np.array([[s.stages.get(label, 0.0) for label in labels] for s in samples])
    return dict(zip(labels, (float(v) for v in matrix.mean(axis=0))))
