import json

import numpy as np

from teich_recur.models import SojournSequence
from teich_recur.services.reports import (
    VERSION_LINE,
    SOJOURN_HEADER,
    build_summary_text,
    format_cell,
    render_plot_script,
    sojourn_rows,
    write_csv,
    write_json,
    write_plot_script,
)


def test_format_cell():
    assert format_cell(None) == ""
    assert format_cell(True) == "true"
    assert format_cell(np.bool_(False)) == "false"
    assert format_cell(np.int64(3)) == "3"
    assert format_cell(0.1) == "0.1"
    assert format_cell(np.float64(1.0) / 3.0) == repr(1.0 / 3.0)
    assert format_cell("torus") == "torus"


def test_write_csv(tmp_path):
    path = write_csv(tmp_path / "nested" / "curve.csv", ["T", "fraction"], [(1.0, 0.5), (2.0, None)])
    lines = path.read_text().splitlines()
    assert lines[0] == VERSION_LINE
    assert lines[1] == "T,fraction"
    assert lines[2:] == ["1.0,0.5", "2.0,"]


def test_write_json_replaces_non_finite(tmp_path):
    payload = {"b": float("nan"), "a": [np.float64(1.5), np.inf], "flag": np.bool_(True)}
    path = write_json(tmp_path / "out.json", payload)
    text = path.read_text()
    assert json.loads(text) == {"a": [1.5, None], "b": None, "flag": True}
    assert text.index('"a"') < text.index('"b"')


def test_plot_script(tmp_path):
    script = render_plot_script("first-hit", "first-hit.csv", "T", ["fraction", "bound_overlay"])
    assert "first-hit.csv" in script
    assert "savefig" in script
    compile(script, "first-hit_plot.py", "exec")
    path = write_plot_script(tmp_path, "chernoff", "T", ["fraction"], log_y=False)
    assert path.name == "chernoff_plot.py"
    assert "chernoff.csv" in path.read_text()


def test_summary_text():
    text = build_summary_text("chernoff", {"gamma": 0.123456789, "nested": {"x": 1}}, {"a": True, "b": False})
    lines = text.splitlines()
    assert lines[0] == "Experiment: chernoff"
    assert "gamma: 0.123457" in lines
    assert not any(line.startswith("nested") for line in lines)
    assert "  b: FAIL" in lines
    assert lines[-1] == "1 check(s) failed."
    assert build_summary_text("fan", {}, {}).endswith("All checks passed.")


def test_sojourn_rows_alternate_and_restart():
    sequences = [SojournSequence(np.array([0.0, 1.5, 2.0])), SojournSequence(np.array([3.0, 0.5]), C_prime=1.0)]
    assert sojourn_rows(sequences) == [
        (0, "in", 0.0),
        (1, "out", 1.5),
        (2, "in", 2.0),
        (0, "in", 3.0),
        (1, "out", 0.5),
    ]
    assert SOJOURN_HEADER == ["idx", "kind", "tau"]
    assert sojourn_rows([]) == []
