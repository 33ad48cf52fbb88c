"""Prefractal curves, snowflake and ramified polygonal domains, triangulation.

All objects built here are treated as immutable once constructed. Vertex
arrays are marked read-only so they can be shared between solvers.
"""

from dataclasses import dataclass, field
from itertools import product

import numpy as np
import shapely
import triangle
from shapely.geometry import LinearRing, MultiPoint, Polygon
from shapely.geometry.polygon import orient

from .errors import GeometryError, ResourceError, ValidationError

SNAP_TOL = 1e-12
KOCH_MAX_LEVEL = 8
RAMIFIED_MAX_LEVEL = 6
TAU_STAR = 0.593465

FRACTAL = "fractal"
TRUNCATION = "truncation"


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def snap(points, tol=SNAP_TOL):
    """Round coordinates to an absolute grid of spacing `tol`."""
    return np.round(np.asarray(points, dtype=float) / tol) * tol


@dataclass(frozen=True, eq=False)
class Similitude:
    """Affine map x -> A x + b where A is a ratio times an orthogonal matrix."""

    linear_part: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        A = _frozen(self.linear_part)
        b = _frozen(self.translation)
        if A.shape != (2, 2) or b.shape != (2,):
            raise ValidationError("similitude needs a 2x2 matrix and a 2-vector")
        r = np.linalg.norm(A, 2)
        if not 0.0 < r < 1.0:
            raise ValidationError("contraction ratio must lie in (0, 1), got %g" % r)
        if not np.allclose(A.T @ A, r * r * np.eye(2), atol=1e-12):
            raise ValidationError("linear part is not a scaled orthogonal matrix")
        object.__setattr__(self, "linear_part", A)
        object.__setattr__(self, "translation", b)

    @property
    def ratio(self):
        return float(np.linalg.norm(self.linear_part, 2))

    def __call__(self, points):
        P = np.asarray(points, dtype=float)
        return P @ self.linear_part.T + self.translation

    def compose(self, inner):
        """Return the map ``self o inner``."""
        return Similitude(self.linear_part @ inner.linear_part,
                          self.linear_part @ inner.translation + self.translation)


# ---------------------------------------------------------------- Koch curve

def koch_maps():
    """The four ratio-1/3 maps of the Koch curve joining (0,0) to (1,0).

    The middle bump points to the right of the direction of travel, so the
    snowflake built on a counter-clockwise triangle bulges outwards.
    """
    c, s = 0.5, np.sqrt(3.0) / 2.0
    third = 1.0 / 3.0
    rot_m = third * np.array([[c, s], [-s, c]])    # rotation by -60 degrees
    rot_p = third * np.array([[c, -s], [s, c]])    # rotation by +60 degrees
    eye = third * np.eye(2)
    return [
        Similitude(eye, [0.0, 0.0]),
        Similitude(rot_m, [third, 0.0]),
        Similitude(rot_p, [0.5, -np.sqrt(3.0) / 6.0]),
        Similitude(eye, [2.0 * third, 0.0]),
    ]


@dataclass(frozen=True, eq=False)
class PrefractalCurve:
    """Level-h polygonal approximation of a chain IFS attractor."""

    level: int
    vertices: np.ndarray
    generator: tuple

    def __post_init__(self):
        object.__setattr__(self, "vertices", _frozen(self.vertices))
        object.__setattr__(self, "generator", tuple(self.generator))

    @property
    def edges(self):
        n = len(self.vertices)
        return np.column_stack([np.arange(n - 1), np.arange(1, n)])

    def edge_lengths(self):
        return np.linalg.norm(np.diff(self.vertices, axis=0), axis=1)


def chain_refine(vertices, maps):
    """Apply chain maps to an ordered vertex list and drop shared junctions."""
    parts = [maps[0](vertices)]
    for m in maps[1:]:
        parts.append(m(vertices)[1:])
    return np.vstack(parts)


def ifs_vertex_set(vertices, maps, tol=SNAP_TOL):
    """Deduplicated union of the images of `vertices` under `maps`.

    Returns a set of snapped coordinate tuples; used as the attractor
    consistency oracle.
    """
    pts = np.vstack([m(vertices) for m in maps])
    return {tuple(p) for p in snap(pts, tol)}


def koch_curve(level, max_level=KOCH_MAX_LEVEL):
    """Koch prefractal curve V_h between (0, 0) and (1, 0).

    Parameters
    ----------
    level : int
        Refinement level h >= 0; the curve has 4**h equal edges.
    max_level : int
        Resource guard.
    """
    level = int(level)
    if level < 0:
        raise ValidationError("level must be nonnegative")
    if level > max_level:
        raise ResourceError("Koch level %d above maximum %d" % (level, max_level))
    maps = koch_maps()
    V = np.array([[0.0, 0.0], [1.0, 0.0]])
    for _ in range(level):
        V = chain_refine(V, maps)
    return PrefractalCurve(level, V, maps)


# ------------------------------------------------------------------ domains

@dataclass(frozen=True, eq=False)
class PolygonalDomain:
    """Simple closed polygon with per-edge tags.

    Edge ``i`` joins ``vertices[i]`` and ``vertices[(i + 1) % n]``. Vertices
    are stored counter-clockwise.
    """

    vertices: np.ndarray
    edge_tags: tuple
    level: int = 0
    family: str = "polygon"
    tau: float = None
    dimension: float = 1.0
    edge_cells: np.ndarray = None   # self-similar cell weight per edge, or nan

    def __post_init__(self):
        V = np.asarray(self.vertices, dtype=float)
        if V.ndim != 2 or V.shape[1] != 2 or len(V) < 3:
            raise GeometryError("polygon needs at least three 2-D vertices")
        if _signed_area(V) < 0:
            # edge i of the reversed polygon is edge n-2-i of the original
            V = V[::-1].copy()
            n = len(V)
            perm = [(n - 2 - i) % n for i in range(n)]
            object.__setattr__(self, "edge_tags",
                               tuple(self.edge_tags[j] for j in perm))
            if self.edge_cells is not None:
                object.__setattr__(self, "edge_cells",
                                   np.asarray(self.edge_cells)[perm])
        if len(self.edge_tags) != len(V):
            raise GeometryError("one tag per polygon edge is required")
        if abs(_signed_area(V)) < 1e-14:
            raise GeometryError("polygon has zero area")
        if not LinearRing(V).is_simple:
            raise GeometryError("polygon boundary self-intersects")
        object.__setattr__(self, "vertices", _frozen(V))
        object.__setattr__(self, "edge_tags", tuple(self.edge_tags))
        if self.edge_cells is not None:
            object.__setattr__(self, "edge_cells", _frozen(self.edge_cells))

    @property
    def n_edges(self):
        return len(self.vertices)

    @property
    def edges(self):
        n = len(self.vertices)
        return np.column_stack([np.arange(n), (np.arange(n) + 1) % n])

    def edge_lengths(self):
        V = self.vertices
        return np.linalg.norm(np.roll(V, -1, axis=0) - V, axis=1)

    def perimeter(self):
        return float(self.edge_lengths().sum())

    def area(self):
        return _signed_area(self.vertices)

    def diameter(self):
        V = self.vertices
        d = np.linalg.norm(V[:, None, :] - V[None, :, :], axis=2)
        return float(d.max())

    def contains(self, points):
        """Boolean mask of points strictly inside the polygon."""
        P = np.atleast_2d(points)
        return shapely.contains_xy(Polygon(self.vertices), P[:, 0], P[:, 1])

    def tag_mask(self, tag):
        return np.array([t == tag for t in self.edge_tags])


def _signed_area(V):
    x, y = V[:, 0], V[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_domain(vertices, tag=FRACTAL):
    """Plain polygon with every edge carrying the same tag."""
    V = np.asarray(vertices, dtype=float)
    return PolygonalDomain(V, (tag,) * len(V))


def unit_square():
    return polygon_domain([[0, 0], [1, 0], [1, 1], [0, 1]])


def regular_polygon(n, radius=1.0):
    """Regular n-gon inscribed in the circle of given radius."""
    t = 2.0 * np.pi * np.arange(n) / n
    return polygon_domain(radius * np.column_stack([np.cos(t), np.sin(t)]))


def koch_snowflake(level, max_level=KOCH_MAX_LEVEL):
    """Snowflake domain bounded by three Koch curves on a unit triangle.

    The triangle A1=(0,0), A3=(1,0), A5=(1/2, sqrt(3)/2) is traversed
    counter-clockwise. Each polygon edge is one level-h cell of a curve
    and carries the self-similar weight 4**-h.
    """
    curve = koch_curve(level, max_level)
    A = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3.0) / 2.0]])
    parts = []
    for i in range(3):
        p, q = A[i], A[(i + 1) % 3]
        d = q - p
        R = np.array([[d[0], -d[1]], [d[1], d[0]]])
        parts.append((curve.vertices @ R.T + p)[:-1])
    V = np.vstack(parts)
    n = len(V)
    cells = np.full(n, 4.0 ** (-level))
    return PolygonalDomain(V, (FRACTAL,) * n, level=level, family="snowflake",
                           dimension=np.log(4.0) / np.log(3.0), edge_cells=cells)


def snowflake_curve_index(domain):
    """Index (0, 1, 2) of the Koch curve that owns each snowflake edge."""
    per = domain.n_edges // 3
    return np.repeat(np.arange(3), per)


# ---------------------------------------------------------- ramified domains

def ramified_maps(family, tau=None):
    """The pair of similitudes F_1, F_2 or G_1, G_2."""
    if family == "F":
        A = 0.5 * np.eye(2)
        return [Similitude(A, [(-1) ** i * 1.5, 3.0]) for i in (1, 2)]
    if family == "G":
        check_tau(tau)
        t = tau / np.sqrt(2.0)
        maps = []
        for i in (1, 2):
            s = (-1) ** i
            A = t * np.array([[1.0, s], [-s, 1.0]])
            b = [s * (1.0 - t), 1.0 + t]
            maps.append(Similitude(A, b))
        return maps
    raise ValidationError("family must be 'F' or 'G'")


def check_tau(tau):
    if tau is None:
        raise ValidationError("tau is required for the G family")
    tau = float(tau)
    if not 0.5 <= tau < TAU_STAR:
        raise ValidationError(
            "tau=%g outside the admissible range 1/2 <= tau < tau* = %g"
            % (tau, TAU_STAR))
    return tau


def ramified_base_cell(family, tau=None):
    """Vertices (counter-clockwise) of the base cell V_1 or V_2."""
    if family == "F":
        return np.array([[-1, 0], [1, 0], [1, 2], [2, 2], [2, 3],
                         [-2, 3], [-2, 2], [-1, 2]], dtype=float)
    G1, G2 = ramified_maps("G", tau)
    P1, P2 = np.array([-1.0, 0.0]), np.array([1.0, 0.0])
    pts = np.array([P1, P2, G1(P1), G2(P2), G1(P2), G2(P1)])
    hull = orient(MultiPoint(pts).convex_hull, 1.0)
    return np.array(hull.exterior.coords)[:-1]


def _word_image(points, maps, word):
    P = points
    for i in reversed(word):
        P = maps[i](P)
    return P


def ramified_domain(family, tau=None, level=0, max_level=RAMIFIED_MAX_LEVEL):
    """Level-n truncation of the ramified domain Omega_1 (F) or Omega_2 (G).

    The polygon is the union of the base cell and all its images under
    words of length 1..level. Edges are tagged ``fractal`` when they lie on
    an attachment site of the next generation (the images of the base
    bottom edge under words of length level+1) and ``truncation`` otherwise.
    """
    level = int(level)
    if level < 0:
        raise ValidationError("level must be nonnegative")
    if level > max_level:
        raise ResourceError("ramified level %d above maximum %d" % (level, max_level))
    if family == "F":
        tau = None
    maps = ramified_maps(family, tau)
    base = ramified_base_cell(family, tau)
    cells = [Polygon(base)]
    for n in range(1, level + 1):
        for word in product(range(2), repeat=n):
            cells.append(Polygon(_word_image(base, maps, word)))
    union = shapely.unary_union(cells)
    if union.geom_type != "Polygon" or len(union.interiors) > 0:
        raise GeometryError("ramified union is not a simple polygon")
    union = orient(union, 1.0)
    V = np.array(union.exterior.coords)[:-1]
    V = _drop_collinear(V)

    bottom = np.array([[-1.0, 0.0], [1.0, 0.0]])
    sites = [_word_image(bottom, maps, w)
             for w in product(range(2), repeat=level + 1)]
    V, tags = _split_and_tag(V, sites)
    cell = 2.0 ** (-(level + 1))
    weights = np.where(np.array(tags) == FRACTAL, cell, np.nan)
    d = 1.0 if family == "F" else -np.log(2.0) / np.log(tau)
    return PolygonalDomain(V, tuple(tags), level=level, family=family, tau=tau,
                           dimension=d, edge_cells=weights)


def _drop_collinear(V, tol=1e-12):
    keep = []
    n = len(V)
    for i in range(n):
        a, b, c = V[i - 1], V[i], V[(i + 1) % n]
        cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
        if abs(cross) > tol:
            keep.append(i)
    return V[keep]


def _point_on_segment(p, a, b, tol=1e-10):
    ab = b - a
    L2 = ab @ ab
    t = ((p - a) @ ab) / L2
    if t < -tol or t > 1 + tol:
        return False, t
    return np.linalg.norm(a + t * ab - p) <= tol * max(1.0, np.sqrt(L2)), t


def _split_and_tag(V, sites):
    """Insert site endpoints lying on polygon edges and tag each piece."""
    site_pts = np.vstack(sites)
    out, tags = [], []
    n = len(V)
    for i in range(n):
        a, b = V[i], V[(i + 1) % n]
        ts = []
        for p in site_pts:
            on, t = _point_on_segment(p, a, b)
            if on and 1e-10 < t < 1 - 1e-10:
                ts.append(t)
        ts = sorted(set(np.round(ts, 12)))
        knots = [a] + [a + t * (b - a) for t in ts]
        ends = knots[1:] + [b]
        for p, q in zip(knots, ends):
            mid = 0.5 * (p + q)
            on_site = any(_point_on_segment(mid, s[0], s[1])[0] for s in sites)
            out.append(p)
            tags.append(FRACTAL if on_site else TRUNCATION)
    return np.array(out), tags


# ------------------------------------------------------------- triangulation

@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation of a polygonal domain.

    Attributes
    ----------
    nodes : (n, 2) array
    triangles : (m, 3) int array, counter-clockwise
    boundary_edges : (b, 2) int array
    boundary_tags : tuple of str, one per boundary edge
    boundary_parent : (b,) int array, index of the polygon edge refined
    n_polygon_vertices : int
        The first nodes coincide with the polygon vertices, in order.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: tuple
    boundary_parent: np.ndarray
    n_polygon_vertices: int
    domain: PolygonalDomain = field(default=None, repr=False)

    def __post_init__(self):
        for name, dt in (("nodes", float), ("triangles", np.int64),
                         ("boundary_edges", np.int64), ("boundary_parent", np.int64)):
            object.__setattr__(self, name, _frozen(getattr(self, name), dt))
        object.__setattr__(self, "boundary_tags", tuple(self.boundary_tags))

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def areas(self):
        P = self.nodes[self.triangles]
        e1, e2 = P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @property
    def node_on_boundary(self):
        flag = np.zeros(self.n_nodes, dtype=bool)
        flag[self.boundary_edges.ravel()] = True
        return flag

    @property
    def boundary_nodes(self):
        return np.flatnonzero(self.node_on_boundary)

    @property
    def interior_nodes(self):
        return np.flatnonzero(~self.node_on_boundary)

    def boundary_edge_lengths(self):
        P = self.nodes[self.boundary_edges]
        return np.linalg.norm(P[:, 1] - P[:, 0], axis=1)

    def edges(self):
        """Unique undirected edges as sorted index pairs."""
        T = self.triangles
        E = np.vstack([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]])
        E.sort(axis=1)
        return np.unique(E, axis=0)

    def max_edge_length(self):
        E = self.edges()
        return float(np.linalg.norm(self.nodes[E[:, 1]] - self.nodes[E[:, 0]], axis=1).max())

    def nodes_with_tag(self, tag):
        mask = np.array([t == tag for t in self.boundary_tags])
        return np.unique(self.boundary_edges[mask].ravel())

    def euler_characteristic(self):
        return self.n_nodes - len(self.edges()) + len(self.triangles)


def triangulate(domain, target_h, min_angle=25.0, max_rounds=12):
    """Constrained Delaunay triangulation with maximum edge length `target_h`.

    Polygon edges are first subdivided uniformly so that no input segment
    exceeds `target_h`; the mesher may split them further but never merges
    them. The first ``len(domain.vertices)`` nodes are the polygon vertices.
    """
    if not target_h > 0:
        raise ValidationError("target_h must be positive")
    V = np.asarray(domain.vertices, dtype=float)
    n = len(V)
    pts = [V]
    segs, marks = [], []
    next_id = n
    for i in range(n):
        a, b = V[i], V[(i + 1) % n]
        k = max(1, int(np.ceil(np.linalg.norm(b - a) / target_h - 1e-9)))
        ids = [i]
        if k > 1:
            t = np.arange(1, k)[:, None] / k
            pts.append(a + t * (b - a))
            ids += list(range(next_id, next_id + k - 1))
            next_id += k - 1
        ids.append((i + 1) % n)
        for p, q in zip(ids[:-1], ids[1:]):
            segs.append((p, q))
            marks.append(i + 2)
    data = {"vertices": np.vstack(pts), "segments": np.array(segs),
            "segment_markers": np.array(marks)[:, None]}
    area = np.sqrt(3.0) / 4.0 * target_h ** 2
    for _ in range(max_rounds):
        out = triangle.triangulate(data, "pq%gDQa%.20f" % (min_angle, area))
        T = out["triangles"]
        X = out["vertices"]
        E = np.vstack([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]])
        hmax = np.linalg.norm(X[E[:, 1]] - X[E[:, 0]], axis=1).max()
        if hmax <= target_h * (1 + 1e-12):
            break
        area *= 0.6
    else:
        raise GeometryError("could not reach the requested edge length")
    if not np.allclose(X[:n], V, atol=0, rtol=0):
        raise GeometryError("mesher reordered the polygon vertices")
    P = X[T]
    e1, e2 = P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]
    sa = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    T = np.where((sa < 0)[:, None], T[:, [0, 2, 1]], T)
    if np.min(np.abs(sa)) <= 0:
        raise GeometryError("degenerate triangle produced")
    S = np.asarray(out["segments"])
    M = out["segment_markers"].ravel() - 2
    # orient boundary edges like their (counter-clockwise) triangle
    directed = {(int(a), int(b)) for a, b in np.vstack(
        [T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]])}
    flip = np.array([(int(a), int(b)) not in directed for a, b in S])
    S = np.where(flip[:, None], S[:, ::-1], S)
    order = np.lexsort((S.min(axis=1), M))
    S, M = S[order], M[order]
    tags = tuple(domain.edge_tags[m] for m in M)
    return Mesh(X, T, S, tags, M, n, domain)


# ------------------------------------------------------------------ export

def mesh_to_text(mesh):
    """Plain-text export with NODES, TRIANGLES and BOUNDARY sections."""
    lines = ["NODES %d" % mesh.n_nodes]
    for i, (x, y) in enumerate(mesh.nodes):
        lines.append("%d %.17g %.17g" % (i, x, y))
    lines.append("TRIANGLES %d" % len(mesh.triangles))
    for t in mesh.triangles:
        lines.append("%d %d %d" % tuple(t))
    lines.append("BOUNDARY %d" % len(mesh.boundary_edges))
    for (i, j), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        lines.append("%d %d %s" % (i, j, tag))
    return "\n".join(lines) + "\n"
