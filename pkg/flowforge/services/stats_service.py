import logging
from itertools import combinations
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from flowforge.core.exceptions import DimensionMismatchError, EmptyInputError, InvalidConfigError  # noqa: E402
from flowforge.core.raster import FlowField  # noqa: E402
from flowforge.models.dataset_models import Histogram, HistogramEntry, HistogramReport  # noqa: E402

logger = logging.getLogger(__name__)

HISTOGRAM_BINS = 24
MAX_MAGNITUDE = 256.0


def histogram_edges() -> np.ndarray:
    """[0, 1) first, then log-spaced up to 256 px; the last bin also takes everything beyond."""
    return np.concatenate([[0.0], np.geomspace(1.0, MAX_MAGNITUDE, HISTOGRAM_BINS)])


def _bin_counts(flow: FlowField, edges: np.ndarray) -> np.ndarray:
    mag = flow.magnitude().ravel()
    idx = np.searchsorted(edges, mag, side="right") - 1
    idx = np.clip(idx, 0, len(edges) - 2)
    return np.bincount(idx, minlength=len(edges) - 1).astype(np.int64)


def motion_histogram_counts(flows: Iterable[FlowField]) -> Tuple[np.ndarray, int]:
    edges = histogram_edges()
    counts = np.zeros(HISTOGRAM_BINS, np.int64)
    total = 0
    for flow in flows:
        counts += _bin_counts(flow, edges)
        total += flow.data.shape[0] * flow.data.shape[1]
    if total == 0:
        raise EmptyInputError("motion_histogram needs at least one flow field")
    return counts, total


def motion_histogram(flows: Iterable[FlowField]) -> Histogram:
    counts, total = motion_histogram_counts(flows)
    return Histogram(edges=histogram_edges().tolist(), masses=(counts / total).tolist())


def l1_distance(a: Histogram, b: Histogram) -> float:
    if len(a.masses) != len(b.masses):
        raise DimensionMismatchError(f"Histograms with {len(a.masses)} and {len(b.masses)} bins")
    return float(np.abs(np.asarray(a.masses) - np.asarray(b.masses)).sum())


def cumulative_masses(h: Histogram) -> List[float]:
    return np.cumsum(h.masses).tolist()


def endpoint_error(pred: FlowField, gt: FlowField) -> float:
    """Average end-point error between two flow fields."""
    if pred.data.shape != gt.data.shape:
        raise DimensionMismatchError(f"Flow shapes differ: {pred.data.shape} vs {gt.data.shape}")
    diff = pred.data.astype(np.float64) - gt.data.astype(np.float64)
    return float(np.hypot(diff[..., 0], diff[..., 1]).mean())


# --- Reports ---

def compare_histograms(named: Sequence[Tuple[str, Histogram, int]]) -> HistogramReport:
    """Masses, cumulative curves, first-bin mass and pairwise L1 distances for (name, histogram, pixels) entries."""
    if not named:
        raise EmptyInputError("compare_histograms needs at least one histogram")
    names = [name for name, _, _ in named]
    if len(set(names)) != len(names):
        raise InvalidConfigError(f"Histogram names must be unique, got {names}")
    entries = [
        HistogramEntry(
            name=name,
            masses=h.masses,
            cumulative=cumulative_masses(h),
            first_bin_mass=h.masses[0],
            pixel_count=pixels,
        )
        for name, h, pixels in named
    ]
    distances = {name: {} for name, _, _ in named}
    for (na, ha, _), (nb, hb, _) in combinations(named, 2):
        d = l1_distance(ha, hb)
        distances[na][nb] = d
        distances[nb][na] = d
    return HistogramReport(edges=named[0][1].edges, entries=entries, l1_distances=distances)


def render_histogram_chart(report: HistogramReport, path: Union[str, Path]) -> Path:
    """Grouped bar chart of the bin masses, one bar group per bin."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    edges = np.asarray(report.edges)
    bins = np.arange(len(edges) - 1)
    width = 0.8 / max(len(report.entries), 1)
    fig, ax = plt.subplots(figsize=(12, 5))
    try:
        for i, entry in enumerate(report.entries):
            ax.bar(bins + i * width, entry.masses, width=width, label=entry.name)
        ax.set_xticks(bins + 0.4 - width / 2)
        ax.set_xticklabels([f"{edges[k]:.3g}" for k in bins], rotation=60, fontsize=7)
        ax.set_xlabel("motion magnitude (px, bin lower edge)")
        ax.set_ylabel("fraction of pixels")
        ax.legend()
        fig.tight_layout()
        fig.savefig(p, dpi=100)
    finally:
        plt.close(fig)
    logger.info(f"Wrote histogram chart to {p}")
    return p
