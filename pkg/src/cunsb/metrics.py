"""Paired image-quality metrics and dataset-level evaluation.

PSNR and SSIM are computed in the dequantized [0, 1] domain with data_range 1.
evaluate_dataset pairs enhanced images with ground truth by filename stem
(an optional `_step<k>` suffix carries the sampling step), aggregates
per-step statistics, and writes CSV tables plus a metric-vs-step line plot.
The CSV is the contract; rows round-trip through read_metric_csv exactly.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import torch

from .dataio import list_images, read_image
from .errors import DataError
from .losses import ssim_index

_STEP_SUFFIX = re.compile(r"^(?P<id>.+?)_step(?P<k>\d+)$")


def psnr(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical images give math.inf."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if data_range <= 0:
        raise ValueError(f"data_range must be positive, got {data_range}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range**2 / mse)


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0,
         window: int = 11) -> float:
    """Single-scale structural similarity on (H, W) or (H, W, C) arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    ta = torch.from_numpy(np.moveaxis(a, -1, 0).copy() if a.ndim == 3 else a)
    tb = torch.from_numpy(np.moveaxis(b, -1, 0).copy() if b.ndim == 3 else b)
    return float(ssim_index(ta, tb, window=window, scales=1, data_range=data_range))


@dataclass
class MetricRecord:
    """Quality of one enhanced image against its ground truth."""

    image_id: str
    step_index: int
    psnr: float
    ssim: float

    CSV_HEADER = ("image_id", "step_index", "psnr", "ssim")

    def as_row(self) -> List[str]:
        return [self.image_id, str(self.step_index), str(self.psnr), str(self.ssim)]


@dataclass
class StepSummary:
    step_index: int
    count: int
    psnr_mean: float
    psnr_std: float
    ssim_mean: float
    ssim_std: float


@dataclass
class EvalSummary:
    """Aggregate statistics over all evaluated pairs."""

    count: int
    skipped: List[str]
    psnr_mean: float
    psnr_std: float
    ssim_mean: float
    ssim_std: float
    per_step: Optional[List[StepSummary]] = None


def write_metric_csv(records: List[MetricRecord], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MetricRecord.CSV_HEADER)
        for rec in records:
            writer.writerow(rec.as_row())


def read_metric_csv(path) -> List[MetricRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != MetricRecord.CSV_HEADER:
            raise DataError(f"unexpected metric CSV header in {path}: {header}")
        return [MetricRecord(row[0], int(row[1]), float(row[2]), float(row[3]))
                for row in reader]


def _stats(values: List[float]) -> Tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    # std over infinite PSNR sentinels is legitimately nan; keep that quiet
    with np.errstate(invalid="ignore"):
        return float(arr.mean()), float(arr.std())


def _summarize(records: List[MetricRecord], per_step: bool) -> EvalSummary:
    psnr_mean, psnr_std = _stats([r.psnr for r in records])
    ssim_mean, ssim_std = _stats([r.ssim for r in records])
    steps = None
    if per_step:
        steps = []
        for k in sorted({r.step_index for r in records}):
            group = [r for r in records if r.step_index == k]
            pm, ps = _stats([r.psnr for r in group])
            sm, ss = _stats([r.ssim for r in group])
            steps.append(StepSummary(k, len(group), pm, ps, sm, ss))
    return EvalSummary(len(records), [], psnr_mean, psnr_std, ssim_mean, ssim_std, steps)


def write_summary_csv(summary: EvalSummary, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("scope", "count", "psnr_mean", "psnr_std", "ssim_mean", "ssim_std"))
        writer.writerow(("overall", summary.count, str(summary.psnr_mean),
                         str(summary.psnr_std), str(summary.ssim_mean), str(summary.ssim_std)))
        for st in summary.per_step or []:
            writer.writerow((f"step_{st.step_index}", st.count, str(st.psnr_mean),
                             str(st.psnr_std), str(st.ssim_mean), str(st.ssim_std)))


def plot_per_step(summary: EvalSummary, path) -> None:
    """Line chart of mean PSNR and SSIM against sampling step."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    steps = [st.step_index for st in summary.per_step or []]
    fig, (ax_psnr, ax_ssim) = plt.subplots(1, 2, figsize=(9, 3.5))
    psnr_vals = [st.psnr_mean for st in summary.per_step or []]
    finite = [(k, v) for k, v in zip(steps, psnr_vals) if math.isfinite(v)]
    if finite:
        ax_psnr.plot([k for k, _ in finite], [v for _, v in finite], marker="o")
    ax_psnr.set_xlabel("step index")
    ax_psnr.set_ylabel("PSNR (dB)")
    ax_psnr.set_title("PSNR vs step")
    ax_ssim.plot(steps, [st.ssim_mean for st in summary.per_step or []], marker="o")
    ax_ssim.set_xlabel("step index")
    ax_ssim.set_ylabel("SSIM")
    ax_ssim.set_title("SSIM vs step")
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)


def split_step_suffix(stem: str) -> Tuple[str, int]:
    """'img_step3' -> ('img', 3); plain stems map to step 0."""
    m = _STEP_SUFFIX.match(stem)
    if m:
        return m.group("id"), int(m.group("k"))
    return stem, 0


def evaluate_dataset(enhanced_dir, truth_dir, per_step: bool = False,
                     output_dir=None) -> Tuple[List[MetricRecord], EvalSummary]:
    """Score every enhanced image against the ground truth sharing its id.

    Enhanced files missing a counterpart are skipped and listed in
    summary.skipped. With output_dir set, writes metrics.csv, summary.csv,
    and (when per_step) metrics_per_step.png.
    """
    truth_paths = {p.stem: p for p in list_images(truth_dir)}
    records = []
    skipped = []
    for path in list_images(enhanced_dir):
        image_id, step = split_step_suffix(path.stem)
        truth = truth_paths.get(image_id)
        if truth is None:
            skipped.append(path.stem)
            continue
        a = read_image(path)
        b = read_image(truth)
        if a.shape != b.shape:
            raise DataError(
                f"shape mismatch for id {image_id!r}: {a.shape} vs {b.shape}")
        records.append(MetricRecord(image_id, step, psnr(a, b, 1.0), ssim(a, b, 1.0)))
    if not records:
        raise DataError(
            f"no overlapping image ids between {enhanced_dir} and {truth_dir}")
    records.sort(key=lambda r: (r.image_id, r.step_index))
    summary = _summarize(records, per_step)
    summary.skipped = skipped
    if output_dir is not None:
        out = Path(output_dir)
        write_metric_csv(records, out / "metrics.csv")
        write_summary_csv(summary, out / "summary.csv")
        if per_step and summary.per_step:
            plot_per_step(summary, out / "metrics_per_step.png")
    return records, summary
