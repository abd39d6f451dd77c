"""Triangular meshes with tagged boundary edges.

Tags: 1 = clamped part, 2 = traction part, 3 = contact part.

Text format (0-based ids, whitespace separated, ``#`` starts a comment)::

    <nodes> <triangles> <edges>
    id x y            # one line per node
    id n1 n2 n3       # one line per triangle
    id n1 n2 tag      # one line per boundary edge
"""

from __future__ import annotations

import io
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError

CLAMPED, TRACTION, CONTACT = 1, 2, 3
DEFAULT_SIDES = {"left": CLAMPED, "top": TRACTION, "bottom": CONTACT, "right": TRACTION}


@dataclass(frozen=True, eq=False)
class Mesh:
    nodes: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    edge_tags: np.ndarray

    def __post_init__(self):
        for name, dtype in (("nodes", float), ("triangles", np.int64), ("edges", np.int64),
                            ("edge_tags", np.int64)):
            a = np.array(getattr(self, name), dtype=dtype)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        self.validate()

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def edge_lengths(self) -> np.ndarray:
        p = self.nodes[self.edges]
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    def boundary_edges(self) -> set[frozenset]:
        """Edges that belong to exactly one triangle."""
        count = Counter()
        for tri in self.triangles:
            for a, b in ((0, 1), (1, 2), (2, 0)):
                count[frozenset((int(tri[a]), int(tri[b])))] += 1
        return {e for e, c in count.items() if c == 1}

    def validate(self):
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 2:
            raise ValidationError("nodes must be an (N, 2) array")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValidationError("triangles must be a (T, 3) array")
        if self.edges.shape != (len(self.edge_tags), 2):
            raise ValidationError("edges must be (E, 2) with one tag each")
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= self.n_nodes):
            raise ValidationError("triangle references an unknown node")
        if np.any(self.areas() <= 0):
            raise ValidationError("triangles must have positive area (counterclockwise order)")
        if not set(np.unique(self.edge_tags)) <= {CLAMPED, TRACTION, CONTACT}:
            raise ValidationError("edge tags must be 1, 2 or 3")
        tagged = [frozenset(map(int, e)) for e in self.edges]
        if len(set(tagged)) != len(tagged):
            raise ValidationError("a boundary edge is tagged more than once")
        boundary = self.boundary_edges()
        if set(tagged) != boundary:
            missing = len(boundary - set(tagged))
            extra = len(set(tagged) - boundary)
            raise ValidationError(
                f"tags must partition the boundary ({missing} untagged boundary edges, "
                f"{extra} tagged edges not on the boundary)")

    def tagged(self, tag: int) -> np.ndarray:
        return self.edges[self.edge_tags == tag]

    def outward_normals(self) -> np.ndarray:
        """Unit outward normal of every boundary edge."""
        owner = {}
        for tri in self.triangles:
            for a, b, c in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
                owner[frozenset((int(tri[a]), int(tri[b])))] = int(tri[c])
        out = np.empty((len(self.edges), 2))
        for i, (a, b) in enumerate(self.edges):
            pa, pb = self.nodes[a], self.nodes[b]
            t = pb - pa
            nrm = np.array([t[1], -t[0]]) / np.hypot(*t)
            opposite = self.nodes[owner[frozenset((int(a), int(b)))]]
            if nrm @ (opposite - pa) > 0:
                nrm = -nrm
            out[i] = nrm
        return out


def generate_rect_mesh(nx: int, ny: int, width: float = 1.0, height: float = 1.0,
                       sides: dict[str, int] | None = None) -> Mesh:
    """Structured mesh of ``[0, width] x [0, height]`` with alternating diagonals.

    Each cell is split into two triangles; the diagonal direction alternates in
    a checkerboard pattern. ``sides`` maps ``left/right/top/bottom`` to tags
    (default: left clamped, top and right traction, bottom contact).
    """
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be >= 1")
    if not (width > 0 and height > 0):
        raise ValueError("width and height must be positive")
    tags = dict(DEFAULT_SIDES)
    if sides:
        unknown = set(sides) - set(tags)
        if unknown:
            raise ValueError(f"unknown sides {sorted(unknown)}")
        tags.update(sides)

    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def nid(i, j):
        return j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)
            if (i + j) % 2 == 0:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]

    edges, etags = [], []
    for i in range(nx):
        edges.append((nid(i, 0), nid(i + 1, 0)))
        etags.append(tags["bottom"])
    for j in range(ny):
        edges.append((nid(nx, j), nid(nx, j + 1)))
        etags.append(tags["right"])
    for i in range(nx, 0, -1):
        edges.append((nid(i, ny), nid(i - 1, ny)))
        etags.append(tags["top"])
    for j in range(ny, 0, -1):
        edges.append((nid(0, j), nid(0, j - 1)))
        etags.append(tags["left"])
    return Mesh(nodes, np.array(tris), np.array(edges), np.array(etags))


def _content_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def parse_mesh(text: str) -> Mesh:
    lines = list(_content_lines(text))
    if not lines:
        raise ValidationError("empty mesh file")
    lineno, head = lines[0]
    if len(head) != 3:
        raise ValidationError(f"line {lineno}: expected '<nodes> <triangles> <edges>'")
    nn, nt, ne = (int(v) for v in head)
    body = lines[1:]
    if len(body) != nn + nt + ne:
        raise ValidationError(f"expected {nn + nt + ne} records after the header, found {len(body)}")

    def block(rows, width, kind, conv):
        out = np.empty((len(rows), width - 1), dtype=conv)
        seen = set()
        for ln, fields in rows:
            if len(fields) != width:
                raise ValidationError(f"line {ln}: {kind} record needs {width} fields")
            idx = int(fields[0])
            if not 0 <= idx < len(rows) or idx in seen:
                raise ValidationError(f"line {ln}: bad or duplicate {kind} id {idx}")
            seen.add(idx)
            out[idx] = [conv(v) for v in fields[1:]]
        return out

    nodes = block(body[:nn], 3, "node", float)
    tris = block(body[nn:nn + nt], 4, "triangle", int)
    edge_rows = block(body[nn + nt:], 4, "edge", int)
    return Mesh(nodes, tris, edge_rows[:, :2], edge_rows[:, 2])


def read_mesh(path: str | Path) -> Mesh:
    return parse_mesh(Path(path).read_text())


def format_mesh(mesh: Mesh) -> str:
    buf = io.StringIO()
    buf.write(f"{mesh.n_nodes} {len(mesh.triangles)} {len(mesh.edges)}\n")
    for i, (x, y) in enumerate(mesh.nodes):
        buf.write(f"{i} {float(x)!r} {float(y)!r}\n")
    for i, (a, b, c) in enumerate(mesh.triangles):
        buf.write(f"{i} {a} {b} {c}\n")
    for i, ((a, b), tag) in enumerate(zip(mesh.edges, mesh.edge_tags)):
        buf.write(f"{i} {a} {b} {tag}\n")
    return buf.getvalue()


def write_mesh(mesh: Mesh, path: str | Path):
    Path(path).write_text(format_mesh(mesh))
