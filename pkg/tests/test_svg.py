"""Tests for the SVG chart writer"""

import math

import pytest

from frgflow.exceptions import PreconditionError
from frgflow.svg import Series, finite_series, render_svg


def test_single_series(tmp_path):
    path = tmp_path / "chart.svg"
    render_svg([Series("gamma", [0.5, 1.0, 2.0], [0.1, 0.2, 0.15])], path, title="Gamma_k")
    text = path.read_text()
    assert "<svg" in text
    assert text.count('id="series-') == 1
    assert "Gamma_k" in text


def test_one_group_per_series(tmp_path):
    path = tmp_path / "chart.svg"
    render_svg([Series("a", [0, 1], [0, 1]), Series("b", [0, 1], [1, 0])], path)
    text = path.read_text()
    assert 'id="series-0"' in text
    assert 'id="series-1"' in text


def test_deterministic_bytes(tmp_path):
    series = [Series("a", [0, 1, 2], [1, 4, 9]), ("b", [0, 2], [3, 3])]
    first, second = tmp_path / "first.svg", tmp_path / "second.svg"
    render_svg(series, first, x_label="k", y_label="value")
    render_svg(series, second, x_label="k", y_label="value")
    assert first.read_bytes() == second.read_bytes()


def test_labels_are_escaped(tmp_path):
    path = tmp_path / "chart.svg"
    render_svg([Series("a<b", [0, 1], [0, 1])], path, title="x & y")
    text = path.read_text()
    assert "a&lt;b" in text
    assert "x &amp; y" in text


def test_non_finite_points_skipped():
    (cleaned,) = finite_series([Series("a", [0, 1, 2], [1.0, math.nan, 3.0])])
    assert cleaned.x == [0.0, 2.0]
    assert cleaned.y == [1.0, 3.0]


def test_constant_series(tmp_path):
    path = tmp_path / "chart.svg"
    render_svg([Series("flat", [1, 1], [0, 0])], path)
    assert "nan" not in path.read_text()


def test_empty_input(tmp_path):
    with pytest.raises(PreconditionError):
        render_svg([], tmp_path / "chart.svg")
    with pytest.raises(PreconditionError):
        render_svg([Series("a", [math.nan], [1.0])], tmp_path / "chart.svg")


def test_mismatched_lengths(tmp_path):
    with pytest.raises(PreconditionError, match="mismatched"):
        render_svg([Series("a", [0, 1], [1.0])], tmp_path / "chart.svg")
