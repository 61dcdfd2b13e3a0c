"""Plain-text formats for view graphs, locations, rotations and sidecars.

View graph::

    VG <n> <m>
    E <i> <j> <vx> <vy> <vz> <rot_residual>     (m lines)

Locations: ``T <i> <x> <y> <z>``; rotations: ``R <i> <r11> ... <r33>``
(row-major); sidecar: ``L <i> <cluster>`` and ``O <edge> <0|1>``.
Blank lines and lines starting with ``#`` are ignored on read.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable

import numpy as np

from .core import TransAvgError, ViewGraph, as_rotation

# repr() of a float round-trips exactly (17 significant digits when needed)
_fmt = repr


class ParseError(TransAvgError, ValueError):
    def __init__(self, path, lineno: int, message: str):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


def _lines(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            s = raw.strip()
            if s and not s.startswith("#"):
                yield lineno, s.split()


def _floats(path, lineno, toks):
    try:
        vals = [float(x) for x in toks]
    except ValueError as exc:
        raise ParseError(path, lineno, f"bad number ({exc})") from None
    if not all(np.isfinite(vals)):
        raise ParseError(path, lineno, "non-finite number")
    return vals


def _int(path, lineno, tok):
    try:
        return int(tok)
    except ValueError:
        raise ParseError(path, lineno, f"expected integer, got {tok!r}") from None


def format_view_graph(g: ViewGraph) -> str:
    out = [f"VG {g.n} {g.m}"]
    for k in range(g.m):
        vx, vy, vz = (float(x) for x in g.v[k])
        out.append(
            f"E {int(g.i[k])} {int(g.j[k])} {_fmt(vx)} {_fmt(vy)} {_fmt(vz)} "
            f"{_fmt(float(g.rot_residual[k]))}"
        )
    return "\n".join(out) + "\n"


def write_view_graph(path, g: ViewGraph) -> None:
    Path(path).write_text(format_view_graph(g), encoding="utf-8")


def read_view_graph(path) -> ViewGraph:
    header = None
    rows = []
    for lineno, toks in _lines(path):
        if header is None:
            if toks[0] != "VG" or len(toks) != 3:
                raise ParseError(path, lineno, "expected header 'VG <n> <m>'")
            header = (_int(path, lineno, toks[1]), _int(path, lineno, toks[2]), lineno)
            continue
        if toks[0] != "E" or len(toks) != 7:
            raise ParseError(path, lineno, "expected 'E <i> <j> <vx> <vy> <vz> <rot_residual>'")
        i, j = _int(path, lineno, toks[1]), _int(path, lineno, toks[2])
        vals = _floats(path, lineno, toks[3:])
        v = np.array(vals[:3])
        if abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise ParseError(path, lineno, "direction is not a unit vector")
        if vals[3] < 0:
            raise ParseError(path, lineno, "negative rotation residual")
        if not (0 <= i < header[0] and 0 <= j < header[0]) or i == j:
            raise ParseError(path, lineno, f"invalid edge endpoints ({i}, {j})")
        rows.append((lineno, i, j, v, vals[3]))
    if header is None:
        raise ParseError(path, 1, "empty view graph file")
    n, m, hline = header
    if len(rows) != m:
        raise ParseError(path, hline, f"header declares {m} edges, found {len(rows)}")
    seen = {}
    for lineno, i, j, _, _ in rows:
        key = (min(i, j), max(i, j))
        if key in seen:
            raise ParseError(path, lineno, f"duplicate edge {key} (first at line {seen[key]})")
        seen[key] = lineno
    return ViewGraph.from_edges(n, [(i, j, v, rr) for _, i, j, v, rr in rows])


def format_locations(t: np.ndarray) -> str:
    return "".join(
        f"T {k} {_fmt(float(x))} {_fmt(float(y))} {_fmt(float(z))}\n" for k, (x, y, z) in enumerate(t)
    )


def write_locations(path, t: np.ndarray) -> None:
    Path(path).write_text(format_locations(t), encoding="utf-8")


def _read_indexed(path, tag: str, width: int):
    got = {}
    for lineno, toks in _lines(path):
        if toks[0] != tag or len(toks) != width + 2:
            raise ParseError(path, lineno, f"expected '{tag} <i>' followed by {width} numbers")
        k = _int(path, lineno, toks[1])
        if k in got:
            raise ParseError(path, lineno, f"index {k} repeated")
        got[k] = (lineno, _floats(path, lineno, toks[2:]))
    if not got:
        raise ParseError(path, 1, "no records")
    n = len(got)
    for k, (lineno, _) in got.items():
        if not 0 <= k < n:
            raise ParseError(path, lineno, f"index {k} outside 0..{n - 1}")
    return np.array([got[k][1] for k in range(n)]), got


def read_locations(path) -> np.ndarray:
    return _read_indexed(path, "T", 3)[0]


def format_rotations(R: np.ndarray) -> str:
    return "".join(
        f"R {k} " + " ".join(_fmt(float(x)) for x in np.asarray(Rk).reshape(9)) + "\n"
        for k, Rk in enumerate(R)
    )


def write_rotations(path, R: np.ndarray) -> None:
    Path(path).write_text(format_rotations(R), encoding="utf-8")


def read_rotations(path) -> np.ndarray:
    flat, got = _read_indexed(path, "R", 9)
    out = flat.reshape(-1, 3, 3)
    for k, Rk in enumerate(out):
        try:
            as_rotation(Rk)
        except ValueError as exc:
            raise ParseError(path, got[k][0], str(exc)) from None
    return out


def format_sidecar(labels: Iterable[int] | None, outlier: Iterable[bool] | None) -> str:
    out = []
    if labels is not None:
        out += [f"L {k} {int(c)}\n" for k, c in enumerate(labels)]
    if outlier is not None:
        out += [f"O {k} {int(bool(f))}\n" for k, f in enumerate(outlier)]
    return "".join(out)


def read_sidecar(path):
    """Return ``(labels or None, outlier flags or None)``."""
    labels, flags = {}, {}
    for lineno, toks in _lines(path):
        if toks[0] not in ("L", "O") or len(toks) != 3:
            raise ParseError(path, lineno, "expected 'L <i> <cluster>' or 'O <edge> <0|1>'")
        k, val = _int(path, lineno, toks[1]), _int(path, lineno, toks[2])
        (labels if toks[0] == "L" else flags)[k] = val
    lab = np.array([labels[k] for k in sorted(labels)], dtype=int) if labels else None
    out = np.array([bool(flags[k]) for k in sorted(flags)]) if flags else None
    return lab, out
