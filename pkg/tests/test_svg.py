import xml.etree.ElementTree as ET

import numpy as np

from dirichlet_lab.svg import MAX_POINTS, line_chart, write_chart

NS = "{http://www.w3.org/2000/svg}"


def _polylines(text):
    return ET.fromstring(text).iter(NS + "polyline")


def test_wellformed_and_labelled():
    x = np.linspace(0, 1, 11)
    text = line_chart([("a", x, x**2), ("b", x, -x)], title="T & <t>", xlabel="t", ylabel="X")
    root = ET.fromstring(text)
    assert root.tag == NS + "svg"
    assert len(list(_polylines(text))) == 2
    assert "T &amp; &lt;t&gt;" in text


def test_thinning_and_nonfinite():
    x = np.linspace(0, 1, 10 * MAX_POINTS)
    y = np.sin(x)
    y[5] = np.nan
    (pl,) = _polylines(line_chart([("s", x, y)]))
    assert len(pl.get("points").split()) <= MAX_POINTS


def test_logx_and_constant_series(tmp_path):
    x = np.array([1e-3, 1e-2, 1e-1])
    write_chart(tmp_path / "c.svg", [("flat", x, np.ones(3))], logx=True)
    ET.parse(tmp_path / "c.svg")
