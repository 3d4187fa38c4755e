import pytest

from teich_recur.exceptions import ConstructionError
from teich_recur.services.surface_io import (
    BUILTIN_SURFACES,
    builtin_surface,
    load_surface,
    parse_cycles,
    parse_surface_file,
    parse_surface_text,
)

SQUARE_POLYGON = """\
polygon
# unit square, opposite sides glued
edge 1 0 pair=2
edge 0 1 pair=3
edge -1 0 pair=0
edge 0 -1 pair=1
"""


@pytest.mark.parametrize(
    "text, n, expected",
    [
        ("(1 2 3)", 3, [1, 2, 0]),
        ("(2 3)", 3, [0, 2, 1]),
        ("(1,2)(3)", 3, [1, 0, 2]),
        ("id", 2, [0, 1]),
        ("", 4, [0, 1, 2, 3]),
    ],
)
def test_parse_cycles(text, n, expected):
    assert parse_cycles(text, n) == expected


@pytest.mark.parametrize("text", ["1 2", "(1 2)(2 3)", "(1 4)", "(a b)"])
def test_parse_cycles_rejects(text):
    with pytest.raises(ConstructionError):
        parse_cycles(text, 3)


def test_parse_origami_line():
    surface = parse_surface_text("origami n=3 h=(1 2 3) v=(2 3)")
    assert surface.genus == 2
    assert surface.area == pytest.approx(3.0)


def test_parse_polygon_block():
    surface = parse_surface_text(SQUARE_POLYGON)
    assert surface.genus == 1


@pytest.mark.parametrize(
    "text",
    [
        "",
        "# only a comment",
        "sphere",
        "origami n=3 h=(1 2 3)",
        "origami n=x h=id v=id",
        "polygon\nedge 1 0",
        "polygon\nedge 1 0 2",
    ],
)
def test_parse_surface_text_rejects(text):
    with pytest.raises(ConstructionError):
        parse_surface_text(text)


def test_parse_surface_file_names_by_stem(tmp_path):
    path = tmp_path / "square.surf"
    path.write_text(SQUARE_POLYGON)
    assert parse_surface_file(path).name == "square"


def test_load_surface_builtins_and_files(tmp_path):
    assert {"torus", "origami3", "octagon"} <= set(BUILTIN_SURFACES)
    assert load_surface("torus").name == "torus"
    path = tmp_path / "l_shape.txt"
    path.write_text("origami n=3 h=(1 2 3) v=(2 3)\n")
    assert load_surface(str(path)).genus == 2


def test_builtin_surface_lookup():
    assert builtin_surface("octagon").genus == 2
    assert builtin_surface("sphere") is None


def test_load_surface_unknown():
    with pytest.raises(ConstructionError, match="unknown surface"):
        load_surface("no-such-surface")
