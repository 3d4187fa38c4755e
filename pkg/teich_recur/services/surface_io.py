from __future__ import annotations

import logging
import math
import re
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

from teich_recur.exceptions import ConstructionError
from teich_recur.services.flat_surface import (
    TranslationSurface,
    build_origami,
    build_polygon,
)

logger = logging.getLogger(__name__)

_CYCLE_RE = re.compile(r"\(([^()]*)\)")
_KEY_VALUE_RE = re.compile(r"(\w+)=(\S+)")


def parse_cycles(text: str, n: int) -> List[int]:
    """Parse cycle notation over 1..n into a 0-based image list.

    ``(1 2 3)(4)`` and ``(1,2,3)`` are both accepted; points not mentioned
    are fixed. ``id`` or an empty string gives the identity.
    """

    images = list(range(n))
    body = text.strip()
    if body in ("", "id", "()"):
        return images
    if _CYCLE_RE.sub("", body).strip():
        raise ConstructionError(f"malformed cycle notation {text!r}")
    seen = set()
    for group in _CYCLE_RE.findall(body):
        tokens = [tok for tok in re.split(r"[,\s]+", group.strip()) if tok]
        try:
            cycle = [int(tok) - 1 for tok in tokens]
        except ValueError:
            raise ConstructionError(f"non-integer entry in cycle ({group})")
        for point in cycle:
            if not 0 <= point < n or point in seen:
                raise ConstructionError(f"cycle entry {point + 1} invalid for n={n}")
            seen.add(point)
        for k, point in enumerate(cycle):
            images[point] = cycle[(k + 1) % len(cycle)]
    return images


def _parse_origami_line(line: str) -> TranslationSurface:
    fields: Dict[str, str] = {}
    rest = line[len("origami"):]
    # cycle lists may contain spaces; capture h=... up to the next key
    for key in ("n", "h", "v"):
        match = re.search(rf"\b{key}=(.*?)(?=\s+\w+=|$)", rest)
        if match is None:
            raise ConstructionError(f"origami line is missing {key}=: {line!r}")
        fields[key] = match.group(1).strip()
    try:
        n = int(fields["n"])
    except ValueError:
        raise ConstructionError(f"n must be an integer, got {fields['n']!r}")
    return build_origami(parse_cycles(fields["h"], n), parse_cycles(fields["v"], n))


def _parse_polygon_lines(lines: List[str]) -> TranslationSurface:
    edges: List[Tuple[float, float]] = []
    pairing: List[int] = []
    for line in lines:
        parts = line.split()
        if len(parts) != 4 or parts[0] != "edge":
            raise ConstructionError(f"expected 'edge <x> <y> pair=<slot>', got {line!r}")
        options = dict(_KEY_VALUE_RE.findall(parts[3]))
        if "pair" not in options:
            raise ConstructionError(f"edge line lacks pair=: {line!r}")
        try:
            edges.append((float(parts[1]), float(parts[2])))
            pairing.append(int(options["pair"]))
        except ValueError:
            raise ConstructionError(f"non-numeric edge line {line!r}")
    return build_polygon(edges, pairing)


def parse_surface_text(text: str) -> TranslationSurface:
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ConstructionError("empty surface description")
    head = lines[0]
    if head.startswith("origami"):
        if len(lines) != 1:
            raise ConstructionError("origami descriptions are a single line")
        return _parse_origami_line(head)
    if head == "polygon":
        return _parse_polygon_lines(lines[1:])
    raise ConstructionError(f"unknown surface kind in line {head!r}")


def parse_surface_file(path: Path) -> TranslationSurface:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConstructionError(f"cannot read surface file {path}: {exc}")
    surface = parse_surface_text(text)
    surface.name = Path(path).stem
    return surface


def square_torus() -> TranslationSurface:
    return build_origami([0], [0], name="torus")


def three_square_origami() -> TranslationSurface:
    """Three squares in H(2): h = (1 2 3), v = (2 3)."""
    return build_origami([1, 2, 0], [0, 2, 1], name="origami3")


def regular_octagon() -> TranslationSurface:
    sides = [(math.cos(k * math.pi / 4.0), math.sin(k * math.pi / 4.0)) for k in range(8)]
    return build_polygon(sides, [(k + 4) % 8 for k in range(8)], name="octagon")


BUILTIN_SURFACES: Dict[str, Callable[[], TranslationSurface]] = {}


def register_builtin(name: str, factory: Callable[[], TranslationSurface]) -> None:
    BUILTIN_SURFACES[name] = factory


def builtin_surface(name: str) -> Optional[TranslationSurface]:
    factory = BUILTIN_SURFACES.get(name)
    return None if factory is None else factory()


def load_surface(name_or_path: str) -> TranslationSurface:
    surface = builtin_surface(name_or_path)
    if surface is not None:
        return surface
    path = Path(name_or_path)
    if not path.exists():
        known = ", ".join(sorted(BUILTIN_SURFACES)) or "none"
        raise ConstructionError(
            f"unknown surface {name_or_path!r} (builtins: {known}; no such file)"
        )
    logger.info("loading surface from %s", path)
    return parse_surface_file(path)
