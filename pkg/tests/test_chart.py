import math

import pytest

from emorl.chart import emit_loss_chart, loss_chart_svg
from emorl.cli import main


class TestChart:
    def test_single_point(self):
        svg = loss_chart_svg([1], [0.5])
        assert "<circle" in svg and "<polyline" not in svg

    def test_polyline(self):
        svg = loss_chart_svg(range(1, 101), [0.01 * i for i in range(100)], "NFQ")
        assert svg.startswith("<svg") and svg.endswith("</svg>\n")
        assert svg.count(",") >= 100 and ">NFQ<" in svg

    def test_deterministic(self, tmp_path):
        emit_loss_chart([1, 2, 3], [3.0, 1.0, 2.0], tmp_path / "a.svg")
        emit_loss_chart([1, 2, 3], [3.0, 1.0, 2.0], tmp_path / "b.svg")
        assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()

    def test_non_finite_omitted(self):
        svg = loss_chart_svg([1, 2, 3], [1.0, math.nan, math.inf])
        assert "2 non-finite epoch(s) omitted" in svg

    def test_empty(self):
        assert "<svg" in loss_chart_svg([], [])

    def test_title_escaped(self):
        assert "a &lt; b" in loss_chart_svg([1], [1.0], "a < b")

    def test_cli(self, tmp_path):
        csv = tmp_path / "epochs.csv"
        csv.write_text("epoch,loss,v0\n1,0.25,0.0\n")
        assert main(["chart", "--epochs", str(csv), "--out", str(tmp_path / "c.svg")]) == 0
        assert "<circle" in (tmp_path / "c.svg").read_text()

    def test_cli_malformed(self, tmp_path):
        csv = tmp_path / "epochs.csv"
        csv.write_text("step,value\n1,2\n")
        assert main(["chart", "--epochs", str(csv)]) == 2
