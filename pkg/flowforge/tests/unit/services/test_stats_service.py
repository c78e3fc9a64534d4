import numpy as np
import pytest

from flowforge.core.exceptions import DimensionMismatchError, EmptyInputError, InvalidConfigError
from flowforge.core.raster import FlowField
from flowforge.models.dataset_models import Histogram
from flowforge.services.stats_service import (
    HISTOGRAM_BINS,
    MAX_MAGNITUDE,
    compare_histograms,
    cumulative_masses,
    endpoint_error,
    histogram_edges,
    l1_distance,
    motion_histogram,
    motion_histogram_counts,
    render_histogram_chart,
)


def _constant_flow(u: float, v: float, w: int = 8, h: int = 6) -> FlowField:
    return FlowField(data=np.broadcast_to(np.array([u, v]), (h, w, 2)))


# --- Tests for motion_histogram ---

def test_edges_are_increasing_and_start_at_zero():
    edges = histogram_edges()
    assert len(edges) == HISTOGRAM_BINS + 1
    assert edges[0] == 0.0 and edges[1] == 1.0
    assert edges[-1] == pytest.approx(MAX_MAGNITUDE)
    assert np.all(np.diff(edges) > 0)


def test_zero_flow_fills_first_bin():
    h = motion_histogram([FlowField.zeros(8, 6)])
    assert h.masses[0] == 1.0
    assert sum(h.masses) == pytest.approx(1.0)


def test_large_motion_lands_in_last_bin():
    h = motion_histogram([_constant_flow(600.0, 0.0)])
    assert h.masses[-1] == 1.0


def test_masses_pool_pixels_over_fields():
    counts, total = motion_histogram_counts([FlowField.zeros(4, 4), _constant_flow(3.0, 4.0, 4, 12)])
    assert total == 64
    assert counts[0] == 16
    five = np.searchsorted(histogram_edges(), 5.0, side="right") - 1
    assert counts[five] == 48


def test_empty_input_rejected():
    with pytest.raises(EmptyInputError):
        motion_histogram([])


# --- Tests for distances ---

def test_l1_distance_bounds():
    zero = motion_histogram([FlowField.zeros(8, 6)])
    fast = motion_histogram([_constant_flow(50.0, 0.0)])
    assert l1_distance(zero, zero) == 0.0
    assert l1_distance(zero, fast) == pytest.approx(2.0)


def test_l1_distance_rejects_different_binning():
    with pytest.raises(DimensionMismatchError):
        l1_distance(Histogram(edges=[0, 1, 2], masses=[0.5, 0.5]), Histogram(edges=[0, 1], masses=[1.0]))


def test_cumulative_masses_end_at_one():
    h = motion_histogram([_constant_flow(2.0, 0.0), FlowField.zeros(8, 6)])
    cum = cumulative_masses(h)
    assert cum[0] == pytest.approx(0.5)
    assert cum[-1] == pytest.approx(1.0)
    assert all(a <= b for a, b in zip(cum, cum[1:]))


def test_endpoint_error():
    assert endpoint_error(_constant_flow(3.0, 4.0), FlowField.zeros(8, 6)) == pytest.approx(5.0)
    with pytest.raises(DimensionMismatchError):
        endpoint_error(FlowField.zeros(8, 6), FlowField.zeros(6, 8))


# --- Tests for reports ---

def test_compare_histograms_is_symmetric():
    a = motion_histogram([FlowField.zeros(8, 6)])
    b = motion_histogram([_constant_flow(2.0, 0.0)])
    c = motion_histogram([_constant_flow(2.0, 0.0), FlowField.zeros(8, 6)])
    report = compare_histograms([("a", a, 48), ("b", b, 48), ("c", c, 96)])
    assert [e.name for e in report.entries] == ["a", "b", "c"]
    assert report.entries[0].first_bin_mass == 1.0
    assert report.l1_distances["a"]["b"] == report.l1_distances["b"]["a"] == pytest.approx(2.0)
    assert report.l1_distances["a"]["c"] == pytest.approx(1.0)
    assert "a" not in report.l1_distances["a"]


def test_compare_histograms_needs_input():
    with pytest.raises(EmptyInputError):
        compare_histograms([])


def test_compare_histograms_rejects_repeated_names():
    h = motion_histogram([FlowField.zeros(8, 6)])
    with pytest.raises(InvalidConfigError):
        compare_histograms([("a", h, 48), ("a", h, 48)])


def test_chart_is_written(tmp_path):
    h = motion_histogram([_constant_flow(2.0, 0.0)])
    path = render_histogram_chart(compare_histograms([("only", h, 48)]), tmp_path / "charts" / "hist.png")
    assert path.is_file()
    assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
