"""Boundary measures on prefractal polygons and the upper Ahlfors diagnostic."""

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .geometry import (FRACTAL, PolygonalDomain, PrefractalCurve, check_tau,
                       koch_curve)


@dataclass(frozen=True, eq=False)
class BoundaryMeasure:
    """Measure on a polygonal curve, uniform on each edge.

    Attributes
    ----------
    segments : (m, 2, 2) array
        Edge endpoints.
    edge_weights : (m,) array
        Mass carried by each edge.
    dimension_d : float
    """

    segments: np.ndarray
    edge_weights: np.ndarray
    dimension_d: float

    def __post_init__(self):
        S = np.array(self.segments, dtype=float)
        w = np.array(self.edge_weights, dtype=float)
        if S.ndim != 3 or S.shape[1:] != (2, 2) or len(S) != len(w):
            raise ValidationError("one weight per segment is required")
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise ValidationError("edge weights must be positive and finite")
        S.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "segments", S)
        object.__setattr__(self, "edge_weights", w)

    @property
    def total_mass(self):
        return float(np.sum(self.edge_weights))

    def edge_lengths(self):
        return np.linalg.norm(self.segments[:, 1] - self.segments[:, 0], axis=1)

    def density(self):
        """Mass per unit length on each edge."""
        return self.edge_weights / self.edge_lengths()

    def scaled(self, c):
        return BoundaryMeasure(self.segments, c * self.edge_weights, self.dimension_d)

    def refine(self, maps):
        """Push the weights one level down a chain IFS (equal split)."""
        m = len(maps)
        segs = [mp(s) for s in self.segments for mp in maps]
        # children of edge e are ordered by map index
        w = np.repeat(self.edge_weights / m, m)
        return BoundaryMeasure(np.array(segs), w, self.dimension_d)

    def to_text(self):
        return "".join("%d %.17g\n" % (i, w) for i, w in enumerate(self.edge_weights))


def _segments(obj):
    if isinstance(obj, PrefractalCurve):
        V = obj.vertices
        return np.stack([V[:-1], V[1:]], axis=1)
    V = obj.vertices
    return np.stack([V, np.roll(V, -1, axis=0)], axis=1)


def self_similar_measure(obj, level=None):
    """Self-similar measure realized on the level-h edges.

    For a curve generated by m maps every edge carries m**-h (probability
    measure). For the snowflake the three curve measures are summed, so the
    total mass is 3. On a ramified truncation the attachment edges carry
    2**-(n+1) and the truncation edges, which are not part of the fractal
    boundary, carry their arc length.
    """
    if level is not None and int(level) != obj.level:
        raise ValidationError("level %s does not match object level %d" % (level, obj.level))
    S = _segments(obj)
    if isinstance(obj, PrefractalCurve):
        m = len(obj.generator)
        w = np.full(len(S), float(m) ** (-obj.level))
        d = np.log(m) / -np.log(obj.generator[0].ratio)
        return BoundaryMeasure(S, w, d)
    if not isinstance(obj, PolygonalDomain) or obj.edge_cells is None:
        raise ValidationError("object carries no self-similar structure")
    cells = np.asarray(obj.edge_cells, dtype=float)
    lengths = np.linalg.norm(S[:, 1] - S[:, 0], axis=1)
    w = np.where(np.isnan(cells), lengths, cells)
    return BoundaryMeasure(S, w, float(obj.dimension))


def arc_length_measure(obj):
    """One-dimensional Hausdorff (arc length) measure on the polygon edges."""
    S = _segments(obj)
    return BoundaryMeasure(S, np.linalg.norm(S[:, 1] - S[:, 0], axis=1), 1.0)


def koch_curve_measure(level):
    return self_similar_measure(koch_curve(level))


@dataclass(frozen=True)
class AhlforsReport:
    radii: np.ndarray
    sup_ratio: np.ndarray
    d: float

    @property
    def M0_estimate(self):
        return float(np.max(self.sup_ratio))

    @property
    def spread(self):
        """max/min of the sup ratios across radii."""
        return float(np.max(self.sup_ratio) / np.min(self.sup_ratio))

    def to_csv(self):
        rows = ["r,sup_ratio"]
        rows += ["%.17g,%.17g" % (r, s) for r, s in zip(self.radii, self.sup_ratio)]
        return "\n".join(rows) + "\n"


def ball_mass(measure, centers, r):
    """mu(B(x, r)) for each center, prorating edges by intersected length."""
    S = measure.segments
    p, v = S[:, 0], S[:, 1] - S[:, 0]
    a = np.einsum("ij,ij->i", v, v)
    dens_w = measure.edge_weights
    out = np.empty(len(centers))
    for start in range(0, len(centers), 256):
        X = centers[start:start + 256]
        w = p[None, :, :] - X[:, None, :]
        b = 2.0 * np.einsum("ij,kij->ki", v, w)
        c = np.einsum("kij,kij->ki", w, w) - r * r
        disc = b * b - 4.0 * a[None, :] * c
        sq = np.sqrt(np.maximum(disc, 0.0))
        t1 = np.clip((-b - sq) / (2.0 * a), 0.0, 1.0)
        t2 = np.clip((-b + sq) / (2.0 * a), 0.0, 1.0)
        frac = np.where(disc > 0, t2 - t1, 0.0)
        out[start:start + 256] = frac @ dens_w
    return out


def ahlfors_diagnostic(measure, d=None, radii=None, centers=None):
    """Sup over boundary vertices of mu(B(x, r)) / r**d for each radius.

    Parameters
    ----------
    measure : BoundaryMeasure
    d : float, optional
        Exponent tested; defaults to the measure's dimension.
    radii : sequence of float
    centers : (k, 2) array, optional
        Defaults to all edge endpoints.
    """
    if radii is None or len(radii) == 0:
        raise ValidationError("at least one radius is required")
    radii = np.asarray(radii, dtype=float)
    if np.any(radii <= 0):
        raise ValidationError("radii must be positive")
    d = measure.dimension_d if d is None else float(d)
    if centers is None:
        centers = np.unique(measure.segments.reshape(-1, 2), axis=0)
    sup = np.array([ball_mass(measure, centers, r).max() / r ** d for r in radii])
    return AhlforsReport(radii, sup, d)


def hausdorff_dimension(family, tau=None):
    """Dimension of the Koch curve or of the ramified boundary of Omega_2."""
    if family == "koch":
        return np.log(4.0) / np.log(3.0)
    if family == "ramified_G":
        tau = check_tau(tau)
        return -np.log(2.0) / np.log(tau)
    if family == "ramified_F":
        return 1.0
    raise ValidationError("unknown family %r" % family)


def boundary_density_on_mesh(mesh, measure):
    """Density of `measure` on every mesh boundary edge.

    The measure must live on the polygon of ``mesh.domain`` (one weight per
    polygon edge); mesh boundary edges inherit the density of their parent.
    """
    n = len(mesh.domain.vertices)
    if len(measure.edge_weights) != n:
        raise ValidationError("measure does not match the mesh polygon")
    return measure.density()[mesh.boundary_parent]


__all__ = ["BoundaryMeasure", "AhlforsReport", "self_similar_measure",
           "arc_length_measure", "ahlfors_diagnostic", "hausdorff_dimension",
           "ball_mass", "boundary_density_on_mesh", "FRACTAL"]
