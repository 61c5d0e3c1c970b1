"""Immersed geometries: closed surfaces with a kept side.

Every geometry answers two vectorized queries used when carving the mesh
and assembling shifted boundary terms:

``kept(points)``
    Which side of the surface each point is on. With ``outer_boundary``
    (the default) the surface encloses the computational domain and the
    inside is kept; otherwise the surface bounds a void and the outside
    is kept.

``closest(points)``
    The nearest surface point, the unit normal there (pointing out of the
    kept region), and the unsigned distance.

Analytic shapes resolve both exactly, ties on the surface counting as
kept. Faceted shapes (polylines from Gmsh meshes, triangle surfaces from
STL) classify by ray parity; points lying exactly on a facet may land on
either side.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError

__all__ = [
    "ClosestPoint", "Geometry", "Ball", "Polyline", "TriSurface",
    "load_geometry", "read_gmsh_lines", "read_stl", "write_stl",
]


@dataclass(frozen=True)
class ClosestPoint:
    points: np.ndarray      # (n, dim) projections onto the surface
    normals: np.ndarray     # (n, dim) unit normals out of the kept region
    distances: np.ndarray   # (n,) unsigned distances


class Geometry:
    """Base class; subclasses fill in dimension, kept, and closest."""

    dimension = None
    outer_boundary = True

    def kept(self, points):
        raise NotImplementedError

    def closest(self, points):
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Analytic ball (circle in 2-D, sphere in 3-D)

class Ball(Geometry):
    def __init__(self, center, radius, outer_boundary=True):
        center = tuple(float(c) for c in center)
        if len(center) not in (2, 3):
            raise GeometryError("ball center must have 2 or 3 components")
        if radius <= 0:
            raise GeometryError("ball radius must be positive")
        self.dimension = len(center)
        self.center = np.asarray(center, float)
        self.radius = float(radius)
        self.outer_boundary = bool(outer_boundary)

    def kept(self, points):
        points = np.asarray(points, float)
        dist = np.linalg.norm(points - self.center, axis=-1)
        if self.outer_boundary:
            return dist <= self.radius
        return dist >= self.radius

    def closest(self, points):
        points = np.asarray(points, float)
        offset = points - self.center
        dist = np.linalg.norm(offset, axis=-1)
        direction = np.zeros_like(offset)
        direction[:, 0] = 1.0
        ok = dist > 0
        direction[ok] = offset[ok] / dist[ok, None]
        projections = self.center + self.radius * direction
        normals = direction if self.outer_boundary else -direction
        return ClosestPoint(projections, normals, np.abs(dist - self.radius))


# ---------------------------------------------------------------------------
# Polyline boundary in 2-D

class Polyline(Geometry):
    """Closed polygonal chains, counterclockwise, outward edge normals."""

    dimension = 2

    def __init__(self, points, segments, outer_boundary=True):
        points = np.asarray(points, float)
        segments = np.asarray(segments, int)
        if len(segments) == 0:
            raise GeometryError("polyline has no segments")
        self.points, self.segments = _chain_loops(points, segments)
        self.outer_boundary = bool(outer_boundary)
        a = self.points[self.segments[:, 0]]
        b = self.points[self.segments[:, 1]]
        tangents = b - a
        lengths = np.linalg.norm(tangents, axis=1)
        if np.any(lengths == 0):
            raise GeometryError("polyline has a zero-length segment")
        tangents /= lengths[:, None]
        # CCW loop: outward normal is the tangent rotated clockwise.
        self.edge_normals = np.column_stack([tangents[:, 1], -tangents[:, 0]])
        if not self.outer_boundary:
            self.edge_normals = -self.edge_normals
        # Pseudo-normal at each endpoint: mean of the adjacent edge normals.
        accum = np.zeros_like(self.points)
        np.add.at(accum, self.segments[:, 0], self.edge_normals)
        np.add.at(accum, self.segments[:, 1], self.edge_normals)
        norms = np.linalg.norm(accum, axis=1)
        norms[norms == 0] = 1.0
        self.vertex_normals = accum / norms[:, None]

    def _inside(self, points):
        a = self.points[self.segments[:, 0]]
        b = self.points[self.segments[:, 1]]
        inside = np.zeros(len(points), bool)
        chunk = max(1, int(4e6 / len(a)))
        for start in range(0, len(points), chunk):
            p = points[start:start + chunk]
            py = p[:, 1, None]
            px = p[:, 0, None]
            straddles = (a[None, :, 1] > py) != (b[None, :, 1] > py)
            with np.errstate(divide="ignore", invalid="ignore"):
                tcross = (py - a[None, :, 1]) / (b[None, :, 1] - a[None, :, 1])
                xcross = a[None, :, 0] + tcross * (b[None, :, 0] - a[None, :, 0])
            hits = straddles & (px < xcross)
            inside[start:start + chunk] = hits.sum(axis=1) % 2 == 1
        return inside

    def kept(self, points):
        points = np.asarray(points, float)
        inside = self._inside(points)
        return inside if self.outer_boundary else ~inside

    def closest(self, points):
        points = np.asarray(points, float)
        n = len(points)
        a = self.points[self.segments[:, 0]]
        b = self.points[self.segments[:, 1]]
        ab = b - a
        ab2 = np.einsum("ij,ij->i", ab, ab)
        projections = np.empty((n, 2))
        normals = np.empty((n, 2))
        distances = np.empty(n)
        chunk = max(1, int(2e6 / max(len(a), 1)))
        for start in range(0, n, chunk):
            p = points[start:start + chunk]
            t = np.einsum("pj,sj->ps", p, ab) - np.einsum("sj,sj->s", a, ab)
            t = np.clip(t / ab2, 0.0, 1.0)
            cand = a[None, :, :] + t[:, :, None] * ab[None, :, :]
            d2 = ((cand - p[:, None, :]) ** 2).sum(axis=2)
            best = np.argmin(d2, axis=1)
            rows = np.arange(len(p))
            tb = t[rows, best]
            projections[start:start + chunk] = cand[rows, best]
            distances[start:start + chunk] = np.sqrt(d2[rows, best])
            nrm = self.edge_normals[best].copy()
            at_a = tb <= 1e-12
            at_b = tb >= 1.0 - 1e-12
            nrm[at_a] = self.vertex_normals[self.segments[best[at_a], 0]]
            nrm[at_b] = self.vertex_normals[self.segments[best[at_b], 1]]
            normals[start:start + chunk] = nrm
        return ClosestPoint(projections, normals, distances)


def _chain_loops(points, segments):
    """Weld coincident endpoints, chain segments into loops, orient CCW."""
    unique, inverse = np.unique(points, axis=0, return_inverse=True)
    segments = inverse[segments]
    if np.any(segments[:, 0] == segments[:, 1]):
        raise GeometryError("polyline has a degenerate segment")
    # successor map: each vertex must have exactly one outgoing and one
    # incoming segment once directions are fixed; treat segments as
    # undirected while chaining.
    adjacency = {}
    for index, (i, j) in enumerate(segments):
        adjacency.setdefault(int(i), []).append((index, int(j)))
        adjacency.setdefault(int(j), []).append((index, int(i)))
    for vertex, links in adjacency.items():
        if len(links) != 2:
            raise GeometryError(
                f"polyline vertex {vertex} joins {len(links)} segments; loops "
                "must be closed and non-branching")
    used = np.zeros(len(segments), bool)
    loops = []
    for seed in range(len(segments)):
        if used[seed]:
            continue
        loop = [int(segments[seed, 0]), int(segments[seed, 1])]
        used[seed] = True
        while True:
            here = loop[-1]
            step = next(((idx, other) for idx, other in adjacency[here]
                         if not used[idx]), None)
            if step is None:
                break
            used[step[0]] = True
            loop.append(step[1])
        if loop[0] != loop[-1]:
            raise GeometryError("polyline contains an open chain")
        loop.pop()
        coords = unique[loop]
        nxt = np.roll(coords, -1, axis=0)
        area2 = (coords[:, 0] * nxt[:, 1] - coords[:, 1] * nxt[:, 0]).sum()
        if area2 == 0:
            raise GeometryError("polyline loop has zero area")
        if area2 < 0:
            loop.reverse()
        loops.append(loop)
    out_segments = []
    for loop in loops:
        for k in range(len(loop)):
            out_segments.append((loop[k], loop[(k + 1) % len(loop)]))
    return unique, np.asarray(out_segments, int)


def read_gmsh_lines(path):
    """2-node line elements and nodes from a Gmsh ASCII v2.2 file."""
    with open(path, "r", encoding="utf-8") as handle:
        lines = [line.strip() for line in handle]
    try:
        fmt = lines.index("$MeshFormat")
        if not lines[fmt + 1].startswith("2.2"):
            raise GeometryError(f"{path}: unsupported Gmsh format {lines[fmt + 1]!r}")
        nstart = lines.index("$Nodes")
        count = int(lines[nstart + 1])
        ids = {}
        coords = []
        for row in lines[nstart + 2:nstart + 2 + count]:
            parts = row.split()
            ids[int(parts[0])] = len(coords)
            coords.append((float(parts[1]), float(parts[2])))
        estart = lines.index("$Elements")
        ecount = int(lines[estart + 1])
        segments = []
        for row in lines[estart + 2:estart + 2 + ecount]:
            parts = [int(p) for p in row.split()]
            etype, ntags = parts[1], parts[2]
            if etype == 1:
                n0, n1 = parts[3 + ntags], parts[4 + ntags]
                segments.append((ids[n0], ids[n1]))
    except (ValueError, IndexError, KeyError) as err:
        raise GeometryError(f"{path}: malformed Gmsh file ({err})") from None
    if not segments:
        raise GeometryError(f"{path}: no line elements found")
    return np.asarray(coords, float), np.asarray(segments, int)


# ---------------------------------------------------------------------------
# Triangle surface in 3-D

class TriSurface(Geometry):
    """Closed triangle mesh, outward-oriented, with feature pseudo-normals."""

    dimension = 3

    def __init__(self, vertices, faces, outer_boundary=True):
        vertices = np.asarray(vertices, float)
        faces = np.asarray(faces, int)
        if len(faces) == 0:
            raise GeometryError("triangle surface has no faces")
        vertices, faces = _weld(vertices, faces)
        faces = _orient_outward(vertices, faces)
        self.vertices = vertices
        self.faces = faces
        self.outer_boundary = bool(outer_boundary)

        a, b, c = (vertices[faces[:, k]] for k in range(3))
        cross = np.cross(b - a, c - a)
        area2 = np.linalg.norm(cross, axis=1)
        if np.any(area2 == 0):
            raise GeometryError("triangle surface has a degenerate face")
        self.face_normals = cross / area2[:, None]
        self.vertex_normals = _angle_weighted_normals(vertices, faces,
                                                      self.face_normals)
        self.edge_slot_normals = _edge_slot_normals(faces, self.face_normals)
        if not self.outer_boundary:
            self.face_normals = -self.face_normals
            self.vertex_normals = -self.vertex_normals
            self.edge_slot_normals = -self.edge_slot_normals

    # -- side classification ------------------------------------------------

    def _inside(self, points):
        """Ray parity along +z, one shared ray per (x, y) column."""
        columns, inverse = np.unique(points[:, :2], axis=0, return_inverse=True)
        inside = np.zeros(len(points), bool)
        order = np.argsort(inverse, kind="stable")
        bounds = np.searchsorted(inverse[order], np.arange(len(columns) + 1))
        for ci in range(len(columns)):
            rows = order[bounds[ci]:bounds[ci + 1]]
            crossings = self._column_crossings(columns[ci])
            if len(crossings) == 0:
                continue
            above = len(crossings) - np.searchsorted(crossings, points[rows, 2],
                                                     side="left")
            inside[rows] = above % 2 == 1
        return inside

    def _column_crossings(self, column):
        cx, cy = column
        scale = max(1.0, float(np.abs(self.vertices).max()))
        for attempt in range(8):
            zs, ambiguous = self._crossings_once(cx, cy)
            if not ambiguous:
                return np.sort(zs)
            # A crossing grazes an edge or vertex; nudge the ray sideways.
            delta = scale * 1e-9 * (3.0 ** attempt)
            cx, cy = column[0] + delta, column[1] + 0.7 * delta
        raise GeometryError("side classification failed: ray through the "
                            "triangle surface keeps hitting edges")

    def _crossings_once(self, cx, cy):
        a, b, c = (self.vertices[self.faces[:, k]] for k in range(3))
        e1 = b[:, :2] - a[:, :2]
        e2 = c[:, :2] - a[:, :2]
        denom = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        rel = np.array([cx, cy]) - a[:, :2]
        scale = max(1.0, float(np.abs(self.vertices).max()))
        flat = np.abs(denom) <= 1e-14 * scale * scale
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (rel[:, 0] * e2[:, 1] - rel[:, 1] * e2[:, 0]) / denom
            t = (e1[:, 0] * rel[:, 1] - e1[:, 1] * rel[:, 0]) / denom
        s = np.where(flat, -1.0, s)
        t = np.where(flat, -1.0, t)
        # Crossings counted strictly inside; anything in the eps band around
        # a projected edge forces a retry with a nudged ray.
        eps = 1e-10
        loose = (s >= -eps) & (t >= -eps) & (s + t <= 1 + eps)
        strict = (s > eps) & (t > eps) & (s + t < 1 - eps)
        ambiguous = bool((loose & ~strict).any())
        if not ambiguous and flat.any():
            # Edge-on triangles project to slivers; only grazing them matters.
            margin = 1e-9 * scale
            point = np.array([cx, cy])
            corners = (a[flat, :2], b[flat, :2], c[flat, :2])
            for u, v in ((0, 1), (1, 2), (2, 0)):
                seg = corners[v] - corners[u]
                length2 = np.einsum("ij,ij->i", seg, seg)
                length2[length2 == 0] = 1.0
                frac = np.einsum("ij,ij->i", point - corners[u], seg) / length2
                foot = corners[u] + np.clip(frac, 0.0, 1.0)[:, None] * seg
                gap = np.linalg.norm(point - foot, axis=1)
                if bool((gap <= margin).any()):
                    ambiguous = True
                    break
        zs = (a[:, 2] + s * (b[:, 2] - a[:, 2]) + t * (c[:, 2] - a[:, 2]))[strict]
        return zs, ambiguous

    def kept(self, points):
        points = np.asarray(points, float)
        inside = self._inside(points)
        return inside if self.outer_boundary else ~inside

    # -- closest point -------------------------------------------------------

    def closest(self, points):
        points = np.asarray(points, float)
        n = len(points)
        projections = np.empty((n, 3))
        normals = np.empty((n, 3))
        distances = np.empty(n)
        chunk = max(1, int(2e6 / len(self.faces)))
        for start in range(0, n, chunk):
            p = points[start:start + chunk]
            cand, feature = _closest_on_triangles(p, self.vertices, self.faces)
            d2 = ((cand - p[:, None, :]) ** 2).sum(axis=2)
            best = np.argmin(d2, axis=1)
            rows = np.arange(len(p))
            projections[start:start + chunk] = cand[rows, best]
            distances[start:start + chunk] = np.sqrt(d2[rows, best])
            normals[start:start + chunk] = self._feature_normal(
                best, feature[rows, best])
        return ClosestPoint(projections, normals, distances)

    def _feature_normal(self, face_index, feature):
        out = np.empty((len(face_index), 3))
        for code in range(7):
            rows = feature == code
            if not rows.any():
                continue
            faces = face_index[rows]
            if code == 6:
                out[rows] = self.face_normals[faces]
            elif code < 3:
                out[rows] = self.vertex_normals[self.faces[faces, code]]
            else:
                out[rows] = self.edge_slot_normals[faces, code - 3]
        norms = np.linalg.norm(out, axis=1)
        return out / norms[:, None]


def _closest_on_triangles(p, vertices, faces):
    """Closest point from each of p onto every triangle, plus the feature.

    Feature codes: 0, 1, 2 the triangle's corners; 3, 4, 5 the edges
    (01), (02), (12); 6 the interior.
    """
    a = vertices[faces[:, 0]][None, :, :]
    b = vertices[faces[:, 1]][None, :, :]
    c = vertices[faces[:, 2]][None, :, :]
    p = p[:, None, :]
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("pti,pti->pt", ab, ap)
    d2 = np.einsum("pti,pti->pt", ac, ap)
    bp = p - b
    d3 = np.einsum("pti,pti->pt", ab, bp)
    d4 = np.einsum("pti,pti->pt", ac, bp)
    cp = p - c
    d5 = np.einsum("pti,pti->pt", ab, cp)
    d6 = np.einsum("pti,pti->pt", ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    shape = d1.shape
    feature = np.full(shape, 6, dtype=np.int8)
    done = np.zeros(shape, bool)

    def claim(mask, code):
        take = mask & ~done
        feature[take] = code
        done[take] = True

    claim((d1 <= 0) & (d2 <= 0), 0)
    claim((d3 >= 0) & (d4 <= d3), 1)
    claim((vc <= 0) & (d1 >= 0) & (d3 <= 0), 3)
    claim((d6 >= 0) & (d5 <= d6), 2)
    claim((vb <= 0) & (d2 >= 0) & (d6 <= 0), 4)
    claim((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0), 5)

    with np.errstate(divide="ignore", invalid="ignore"):
        t_ab = np.where(d1 - d3 != 0, d1 / (d1 - d3), 0.0)
        t_ac = np.where(d2 - d6 != 0, d2 / (d2 - d6), 0.0)
        seam = (d4 - d3) + (d5 - d6)
        t_bc = np.where(seam != 0, (d4 - d3) / seam, 0.0)
        total = va + vb + vc
        v = np.where(total != 0, vb / total, 0.0)
        w = np.where(total != 0, vc / total, 0.0)

    cand = a + v[..., None] * ab + w[..., None] * ac      # interior default
    for code, point in (
        (0, a), (1, b), (2, c),
        (3, a + t_ab[..., None] * ab),
        (4, a + t_ac[..., None] * ac),
        (5, b + t_bc[..., None] * (c - b)),
    ):
        cand = np.where((feature == code)[..., None], point, cand)
    return cand, feature


def _weld(vertices, faces):
    unique, inverse = np.unique(vertices, axis=0, return_inverse=True)
    faces = inverse[faces]
    if np.any((faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2])
              | (faces[:, 0] == faces[:, 2])):
        raise GeometryError("triangle surface has a degenerate face")
    return unique, faces


def _orient_outward(vertices, faces):
    """Flip the whole surface if its signed volume is negative.

    Assumes the input winding is already internally consistent, as STL
    files produced by sane tools are.
    """
    a, b, c = (vertices[faces[:, k]] for k in range(3))
    volume6 = np.einsum("ij,ij->i", a, np.cross(b, c)).sum()
    if volume6 == 0:
        raise GeometryError("triangle surface encloses no volume")
    if volume6 < 0:
        faces = faces[:, ::-1].copy()
    return faces


def _angle_weighted_normals(vertices, faces, face_normals):
    normals = np.zeros_like(vertices)
    corners = [vertices[faces[:, k]] for k in range(3)]
    for k in range(3):
        u = corners[(k + 1) % 3] - corners[k]
        v = corners[(k + 2) % 3] - corners[k]
        cosine = np.einsum("ij,ij->i", u, v) / (
            np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        angles = np.arccos(np.clip(cosine, -1.0, 1.0))
        np.add.at(normals, faces[:, k], angles[:, None] * face_normals)
    lengths = np.linalg.norm(normals, axis=1)
    lengths[lengths == 0] = 1.0
    return normals / lengths[:, None]


def _edge_slot_normals(faces, face_normals):
    """Per-face, per-edge-slot pseudo-normals (mean of the two face normals).

    Slots follow the feature codes: 0 edge (01), 1 edge (02), 2 edge (12).
    """
    edge_faces = {}
    slots = ((0, 1), (0, 2), (1, 2))
    for f, face in enumerate(faces):
        for s, (i, j) in enumerate(slots):
            key = tuple(sorted((int(face[i]), int(face[j]))))
            edge_faces.setdefault(key, []).append(f)
    out = np.empty((len(faces), 3, 3))
    for f, face in enumerate(faces):
        for s, (i, j) in enumerate(slots):
            key = tuple(sorted((int(face[i]), int(face[j]))))
            adjacent = edge_faces[key]
            if len(adjacent) != 2:
                raise GeometryError(
                    "triangle surface is not watertight: an edge borders "
                    f"{len(adjacent)} faces")
            normal = face_normals[adjacent].sum(axis=0)
            length = np.linalg.norm(normal)
            out[f, s] = normal / length if length > 0 else face_normals[f]
    return out


def read_stl(path):
    """Vertices and faces from a binary or ASCII STL file."""
    with open(path, "rb") as handle:
        blob = handle.read()
    if len(blob) >= 84:
        (count,) = struct.unpack_from("<I", blob, 80)
        if len(blob) == 84 + 50 * count:
            data = np.frombuffer(blob, dtype=np.uint8, offset=84)
            records = data.reshape(count, 50)[:, :48]
            floats = records.copy().view("<f4").reshape(count, 12).astype(float)
            tris = floats[:, 3:].reshape(count, 3, 3)
            return _stl_arrays(tris, path)
    try:
        text = blob.decode("ascii")
    except UnicodeDecodeError:
        raise GeometryError(f"{path}: not a valid STL file") from None
    coords = []
    for line in text.splitlines():
        parts = line.split()
        if parts[:1] == ["vertex"]:
            if len(parts) != 4:
                raise GeometryError(f"{path}: malformed vertex line")
            coords.append([float(p) for p in parts[1:]])
    if not coords or len(coords) % 3 != 0:
        raise GeometryError(f"{path}: not a valid STL file")
    tris = np.asarray(coords, float).reshape(-1, 3, 3)
    return _stl_arrays(tris, path)


def _stl_arrays(tris, path):
    if len(tris) == 0:
        raise GeometryError(f"{path}: STL file contains no triangles")
    vertices = tris.reshape(-1, 3)
    faces = np.arange(len(vertices)).reshape(-1, 3)
    return vertices, faces


def write_stl(path, vertices, faces):
    """Write a binary STL file."""
    vertices = np.asarray(vertices, float)
    faces = np.asarray(faces, int)
    a, b, c = (vertices[faces[:, k]] for k in range(3))
    normals = np.cross(b - a, c - a)
    lengths = np.linalg.norm(normals, axis=1)
    lengths[lengths == 0] = 1.0
    normals /= lengths[:, None]
    records = np.zeros(len(faces), dtype=[("n", "<f4", 3), ("v", "<f4", (3, 3)),
                                          ("attr", "<u2")])
    records["n"] = normals
    records["v"][:, 0] = a
    records["v"][:, 1] = b
    records["v"][:, 2] = c
    with open(path, "wb") as handle:
        handle.write(b"\0" * 80)
        handle.write(struct.pack("<I", len(faces)))
        handle.write(records.tobytes())


# ---------------------------------------------------------------------------

def load_geometry(spec, dimension, base_dir="."):
    """Build the runtime geometry for one script ``[geometry]`` block."""
    import os

    if spec.kind == "circle":
        return Ball(spec.center, spec.radius, spec.outer_boundary)
    if spec.kind == "sphere":
        return Ball(spec.center, spec.radius, spec.outer_boundary)
    assert spec.kind == "mesh"
    path = spec.mesh_file
    if not os.path.isabs(path):
        path = os.path.join(base_dir, path)
    offset = np.asarray(spec.position if spec.position is not None
                        else (0.0,) * dimension, float)
    if dimension == 2:
        points, segments = read_gmsh_lines(path)
        return Polyline(points + offset, segments, spec.outer_boundary)
    vertices, faces = read_stl(path)
    return TriSurface(vertices + offset, faces, spec.outer_boundary)
