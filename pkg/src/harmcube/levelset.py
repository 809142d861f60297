"""Level-surface extraction and discrete surface geometry.

The extractor marches over the six-tetrahedra split of every grid cell.
Tetrahedra admit no ambiguous sign configuration, so the welded
triangulation is watertight and deterministic for a given field, and the
split induces matching face diagonals in neighbouring cells.  Crossing
vertices are keyed by their grid edge, so shared vertices weld exactly;
boundary polylines fall on the cube walls, and triangle orientation
follows the field gradient.

Curvature is sampled from the smooth fields (interpolated Hessian and
exact metric at triangle centroids) rather than estimated from the mesh;
the triangulation carries only quadrature points and topology.  Boundary
vertices of a solved field lie on the four side walls; synthetic fields
may also produce boundary on the top and bottom caps.
"""

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .grid import trapezoid_weights, trilinear
from .metrics import (christoffel, inverse_metric, scalar_curvature,
                      sectional_curvature)

__all__ = [
    "LevelSurface",
    "SurfaceGeometryData",
    "SurfaceGeometrySample",
    "LoopGeometry",
    "BoundaryReport",
    "GaussBonnetReport",
    "CoareaReport",
    "TopologyError",
    "DegenerateLoopError",
    "NearCriticalError",
    "extract_level_set",
    "surface_topology",
    "surface_geometry",
    "second_fundamental_form",
    "boundary_geometry",
    "gauss_bonnet_check",
    "level_family",
    "coarea_scan",
    "write_off",
]

REG_FACTOR = 1e-6      # delta_reg = REG_FACTOR * max |du|_g
WALL_TOL = 1e-9


class TopologyError(ValueError):
    """Mesh violates the manifold-with-boundary contract."""


class DegenerateLoopError(ValueError):
    """Boundary loop with fewer than three vertices."""


class NearCriticalError(RuntimeError):
    """Requested geometry at a triangle where |du| < delta_reg."""


# six tetrahedra around the main diagonal; corners are cube-vertex
# bitmasks (bit0 = x1, bit1 = x2, bit2 = x3)
_TETS = ((0, 1, 3, 7), (0, 1, 5, 7), (0, 2, 3, 7),
         (0, 2, 6, 7), (0, 4, 5, 7), (0, 4, 6, 7))


def _node_coords(grid, ids):
    n = grid.n
    c = grid.coords
    return np.stack([c[ids % n], c[(ids // n) % n], c[ids // (n * n)]],
                    axis=-1)


def _marching_mesh(grid, values):
    """Triangulate the zero level of a node field.

    Returns welded vertex positions and triangle index triples with
    arbitrary per-triangle orientation.
    """
    n = grid.n
    s = np.asarray(values, dtype=float).reshape(-1, order="F")
    scale = np.max(np.abs(s))
    if scale == 0.0:
        return np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)
    eps = 1e-12 * scale
    s = np.where(np.abs(s) < eps, eps, s)

    idx = np.arange(n - 1, dtype=np.int64)
    ii, jj, kk = np.meshgrid(idx, idx, idx, indexing="ij")
    base = (ii + n * jj + n * n * kk).ravel()
    off = np.array([(b & 1) + n * ((b >> 1) & 1) + n * n * ((b >> 2) & 1)
                    for b in range(8)], dtype=np.int64)

    blocks = []
    for tet in _TETS:
        corners = base[:, None] + off[list(tet)][None, :]
        sg = s[corners] > 0
        count = sg.sum(axis=1)
        for odd_count, flag in ((1, sg), (3, ~sg)):
            rows = np.flatnonzero(count == odd_count)
            if rows.size == 0:
                continue
            f = flag[rows]
            cc = corners[rows]
            order = np.argsort(f, axis=1, kind="stable")
            others = np.take_along_axis(cc, order[:, :3], axis=1)
            odd = np.take_along_axis(cc, order[:, 3:], axis=1)
            odd3 = np.broadcast_to(odd, others.shape)
            blocks.append(np.stack([odd3, others], axis=-1))
        rows = np.flatnonzero(count == 2)
        if rows.size:
            f = sg[rows]
            cc = corners[rows]
            order = np.argsort(~f, axis=1, kind="stable")
            p = np.take_along_axis(cc, order[:, :2], axis=1)
            q = np.take_along_axis(cc, order[:, 2:], axis=1)
            e11 = np.stack([p[:, 0], q[:, 0]], axis=1)
            e12 = np.stack([p[:, 0], q[:, 1]], axis=1)
            e22 = np.stack([p[:, 1], q[:, 1]], axis=1)
            e21 = np.stack([p[:, 1], q[:, 0]], axis=1)
            blocks.append(np.stack([e11, e12, e22], axis=1))
            blocks.append(np.stack([e11, e22, e21], axis=1))

    if not blocks:
        return np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)
    pairs = np.concatenate(blocks, axis=0)            # (M, 3, 2) node ids
    lo = pairs.min(axis=2)
    hi = pairs.max(axis=2)
    enc = lo.astype(np.int64) * (n * n * n) + hi
    uniq, inv = np.unique(enc.ravel(), return_inverse=True)
    tri = inv.reshape(-1, 3).astype(np.int64)

    a = uniq // (n * n * n)
    b = uniq % (n * n * n)
    sa, sb = s[a], s[b]
    t = sa / (sa - sb)
    pa = _node_coords(grid, a)
    pb = _node_coords(grid, b)
    verts = pa + t[:, None] * (pb - pa)
    return verts, tri


def _merge_close_vertices(verts, tri, tol=1e-9):
    """Collapse vertex clusters closer than ``tol``.

    Sign snapping makes crossings hug a grid node when the level passes
    exactly through it, one copy per incident cell edge.  Each cluster
    collapses to its centroid; triangles that lose rank are dropped.
    Collapsing the sliver disk around a cluster preserves the Euler
    characteristic.
    """
    if len(verts) == 0:
        return verts, tri
    pairs = cKDTree(verts).query_pairs(tol, output_type="ndarray")
    if len(pairs) == 0:
        return verts, tri
    m = len(verts)
    adj = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])),
                     shape=(m, m))
    groups, labels = connected_components(adj, directed=False)
    sums = np.zeros((groups, 3))
    np.add.at(sums, labels, verts)
    counts = np.bincount(labels, minlength=groups).astype(float)
    tri = labels[tri]
    keep = ((tri[:, 0] != tri[:, 1]) & (tri[:, 1] != tri[:, 2])
            & (tri[:, 0] != tri[:, 2]))
    return sums / counts[:, None], tri[keep]


def _metric_matrices(metric, pts):
    if metric is None:
        return np.broadcast_to(np.eye(3), pts.shape[:-1] + (3, 3))
    return metric.matrix(pts)


def _triangle_areas(metric, vertices, triangles):
    p0 = vertices[triangles[:, 0]]
    p1 = vertices[triangles[:, 1]]
    p2 = vertices[triangles[:, 2]]
    cent = (p0 + p1 + p2) / 3.0
    g = _metric_matrices(metric, cent)
    e1 = p1 - p0
    e2 = p2 - p0
    a11 = np.einsum("...i,...ij,...j->...", e1, g, e1)
    a22 = np.einsum("...i,...ij,...j->...", e2, g, e2)
    a12 = np.einsum("...i,...ij,...j->...", e1, g, e2)
    areas = 0.5 * np.sqrt(np.clip(a11 * a22 - a12 ** 2, 0.0, None))
    return areas, cent


def _edge_table(triangles, n_vertices):
    directed = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]],
                               triangles[:, [2, 0]]])
    lo = directed.min(axis=1).astype(np.int64)
    hi = directed.max(axis=1).astype(np.int64)
    enc = lo * n_vertices + hi
    uniq, first, inverse, counts = np.unique(
        enc, return_index=True, return_inverse=True, return_counts=True)
    if np.any(counts > 2):
        where = int(np.flatnonzero(counts > 2)[0])
        va, vb = divmod(int(uniq[where]), n_vertices)
        raise TopologyError(
            f"non-manifold edge ({va}, {vb}) shared by {counts[where]}"
            " triangles")
    return directed, inverse, uniq, first, counts


def _boundary_loops(directed, first, counts):
    """Ordered boundary loops using each edge's orientation in its
    unique triangle (surface kept on the left)."""
    bidx = first[counts == 1]
    succ = {}
    for va, vb in directed[bidx]:
        va, vb = int(va), int(vb)
        if va in succ:
            raise TopologyError(f"boundary branches at vertex {va}")
        succ[va] = vb
    loops = []
    seen = set()
    for start in sorted(succ):
        if start in seen:
            continue
        walk = [start]
        seen.add(start)
        cur = succ[start]
        while cur != start:
            if cur not in succ:
                raise TopologyError(f"open boundary chain at vertex {cur}")
            walk.append(cur)
            seen.add(cur)
            cur = succ[cur]
        if len(walk) < 3:
            raise DegenerateLoopError(
                f"boundary loop through vertex {start} has only"
                f" {len(walk)} vertices")
        loops.append(np.array(walk, dtype=np.int64))
    return loops


def _loop_length(metric, vertices, loop):
    pts = vertices[loop]
    nxt = np.roll(pts, -1, axis=0)
    mid = 0.5 * (pts + nxt)
    g = _metric_matrices(metric, mid)
    seg = nxt - pts
    return float(np.sum(np.sqrt(
        np.einsum("...i,...ij,...j->...", seg, g, seg))))


@dataclass
class LevelSurface:
    """Triangulated level set with g-measured size and topology."""

    theta: float
    vertices: np.ndarray          # (V, 3)
    triangles: np.ndarray         # (F, 3) int
    boundary_loops: list          # ordered index arrays, implicitly closed
    area: float
    chi: int
    boundary_length: float
    components: int
    regular: bool = True

    @classmethod
    def from_mesh(cls, theta, vertices, triangles, metric=None,
                  regular=True):
        vertices = np.asarray(vertices, dtype=float).reshape(-1, 3)
        triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        if len(triangles) == 0:
            return cls(theta=float(theta), vertices=vertices,
                       triangles=triangles, boundary_loops=[], area=0.0,
                       chi=0, boundary_length=0.0, components=0,
                       regular=regular)
        directed, inverse, uniq, first, counts = _edge_table(
            triangles, len(vertices))
        n_ref = len(np.unique(triangles))
        chi = n_ref - len(uniq) + len(triangles)
        loops = _boundary_loops(directed, first, counts)
        areas, _ = _triangle_areas(metric, vertices, triangles)
        length = sum(_loop_length(metric, vertices, lp) for lp in loops)

        order = np.argsort(inverse, kind="stable")
        tri_ids = np.tile(np.arange(len(triangles), dtype=np.int64), 3)
        tri_sorted = tri_ids[order]
        starts = np.concatenate([[0], np.cumsum(counts)])[:-1]
        pair = np.flatnonzero(counts == 2)
        graph = coo_matrix(
            (np.ones(len(pair)),
             (tri_sorted[starts[pair]], tri_sorted[starts[pair] + 1])),
            shape=(len(triangles),) * 2)
        n_comp, _ = connected_components(graph, directed=False)
        return cls(theta=float(theta), vertices=vertices,
                   triangles=triangles, boundary_loops=loops,
                   area=float(areas.sum()), chi=int(chi),
                   boundary_length=length, components=int(n_comp),
                   regular=regular)


def surface_topology(surface):
    """(Euler characteristic, component count, boundary loop count),
    recomputed from the triangle array."""
    if len(surface.triangles) == 0:
        return 0, 0, 0
    rebuilt = LevelSurface.from_mesh(surface.theta, surface.vertices,
                                     surface.triangles)
    return rebuilt.chi, rebuilt.components, len(rebuilt.boundary_loops)


def critical_values(solution):
    """u-values at nodes where |du|_g < delta_reg, with delta_reg."""
    gn = solution.grad_norm
    delta = REG_FACTOR * float(gn.max())
    vals = np.unique(solution.u[gn < delta])
    return vals, delta


def extract_level_set(solution, theta):
    """Triangulate u^{-1}(theta), oriented by the field gradient.

    Levels within one cell's field variation of a detected critical
    value are returned with ``regular=False`` instead of raising.
    """
    theta = float(theta)
    if not 0.0 < theta < 1.0:
        raise ValueError(f"level must lie strictly inside (0, 1), got"
                         f" {theta}")
    grid = solution.grid
    crit, _ = critical_values(solution)
    crit_tol = grid.h * float(solution.grad_norm.max())
    regular = not (len(crit) and np.min(np.abs(crit - theta)) <= crit_tol)

    verts, tri = _marching_mesh(grid, solution.u - theta)
    if regular:
        # near a critical value the snapped mesh may only be manifold
        # because sign snapping pulls crossing sheets apart; merging
        # would glue them back, so dedup regular levels only
        verts, tri = _merge_close_vertices(verts, tri)
    if len(tri):
        cent = verts[tri].mean(axis=1)
        du_c = trilinear(grid, solution.du, cent)
        e1 = verts[tri[:, 1]] - verts[tri[:, 0]]
        e2 = verts[tri[:, 2]] - verts[tri[:, 0]]
        flip = np.einsum("ij,ij->i", np.cross(e1, e2), du_c) < 0.0
        tri[flip] = tri[flip][:, [0, 2, 1]]
    return LevelSurface.from_mesh(theta, verts, tri,
                                  metric=solution.metric, regular=regular)


@dataclass
class SurfaceGeometryData:
    """Vectorized curvature samples at triangle centroids."""

    triangle_ids: np.ndarray
    second_fundamental: np.ndarray   # (m, 2, 2)
    gauss: np.ndarray                # ambient sectional + det k
    mean: np.ndarray                 # trace k
    areas: np.ndarray
    excluded: np.ndarray             # |du| < delta_reg on the triangle
    delta_reg: float


@dataclass
class SurfaceGeometrySample:
    triangle: int
    second_fundamental_form: np.ndarray
    gauss_curvature: float
    mean_curvature: float


def _project_tangent(vec, nu, g):
    comp = np.einsum("...i,...ij,...j->...", vec, g, nu)
    return vec - comp[..., None] * nu


def _g_normalize(vec, g, fallback):
    norm = np.sqrt(np.clip(
        np.einsum("...i,...ij,...j->...", vec, g, vec), 0.0, None))
    bad = norm < 1e-14
    safe = np.where(bad, 1.0, norm)
    out = vec / safe[..., None]
    return out, bad | fallback


def surface_geometry(solution, surface, triangle_ids=None):
    """Second fundamental form, Gauss and mean curvature per triangle.

    k = Hess u(t_a, t_b)/|du|_g in a g-orthonormal tangent basis, with
    normal du/|du|; Gauss curvature adds the ambient sectional term.
    Triangles under the regularization threshold are masked, not
    dropped, so callers can weigh the excluded mass.
    """
    metric = solution.metric
    tri = surface.triangles
    if triangle_ids is None:
        triangle_ids = np.arange(len(tri), dtype=np.int64)
    else:
        triangle_ids = np.asarray(triangle_ids, dtype=np.int64)
    sel = tri[triangle_ids]
    areas, cent = _triangle_areas(metric, surface.vertices, sel)

    grid = solution.grid
    du = trilinear(grid, solution.du, cent)
    hess = trilinear(grid, solution.hessian, cent)
    g = metric.matrix(cent)
    g_inv = inverse_metric(g, location=cent)
    gn = np.sqrt(np.clip(
        np.einsum("...ij,...i,...j->...", g_inv, du, du), 0.0, None))
    delta = REG_FACTOR * float(solution.grad_norm.max())
    excluded = gn < delta
    safe_gn = np.where(excluded, 1.0, gn)

    nu = np.einsum("...ij,...j->...i", g_inv, du) / safe_gn[..., None]
    e1 = surface.vertices[sel[:, 1]] - surface.vertices[sel[:, 0]]
    e2 = surface.vertices[sel[:, 2]] - surface.vertices[sel[:, 0]]
    t1, bad1 = _g_normalize(_project_tangent(e1, nu, g), g, excluded)
    e2p = _project_tangent(e2, nu, g)
    comp = np.einsum("...i,...ij,...j->...", e2p, g, t1)
    t2, bad2 = _g_normalize(e2p - comp[..., None] * t1, g, bad1)
    excluded = excluded | bad1 | bad2
    # placeholder frame on masked rows keeps the arithmetic finite
    t1 = np.where(excluded[..., None], np.array([1.0, 0.0, 0.0]), t1)
    t2 = np.where(excluded[..., None], np.array([0.0, 1.0, 0.0]), t2)

    k = np.empty(sel.shape[:1] + (2, 2))
    k[:, 0, 0] = np.einsum("...i,...ij,...j->...", t1, hess, t1) / safe_gn
    k[:, 1, 1] = np.einsum("...i,...ij,...j->...", t2, hess, t2) / safe_gn
    k[:, 0, 1] = np.einsum("...i,...ij,...j->...", t1, hess, t2) / safe_gn
    k[:, 1, 0] = k[:, 0, 1]
    sec = sectional_curvature(metric, cent, t1, t2)
    gauss = np.where(excluded, np.nan,
                     sec + k[:, 0, 0] * k[:, 1, 1] - k[:, 0, 1] ** 2)
    mean = np.where(excluded, np.nan, k[:, 0, 0] + k[:, 1, 1])
    k[excluded] = np.nan
    return SurfaceGeometryData(triangle_ids=triangle_ids,
                               second_fundamental=k, gauss=gauss,
                               mean=mean, areas=areas, excluded=excluded,
                               delta_reg=delta)


def second_fundamental_form(solution, surface, triangle):
    """Curvature sample for one triangle; raises near critical points."""
    data = surface_geometry(solution, surface, [int(triangle)])
    if bool(data.excluded[0]):
        raise NearCriticalError(
            f"triangle {int(triangle)}: |du|_g below the regularization"
            f" threshold {data.delta_reg:.3e}")
    return SurfaceGeometrySample(
        triangle=int(triangle),
        second_fundamental_form=data.second_fundamental[0],
        gauss_curvature=float(data.gauss[0]),
        mean_curvature=float(data.mean[0]))


@dataclass
class LoopGeometry:
    """Per-vertex boundary data for one ordered loop.

    ``kappa`` is the signed geodesic curvature at non-corner vertices
    (NaN at corners); ``turning_angles`` are the signed defects where the
    loop crosses a vertical cube edge.  ``edge_gradient_angle`` is the
    g-angle between that cube edge and the gradient: zero exactly when
    the level surface meets the edge at right angles.
    """

    vertex_indices: np.ndarray
    points: np.ndarray
    arc_weights: np.ndarray
    kappa: np.ndarray
    corner_mask: np.ndarray
    turning_angles: np.ndarray
    edge_gradient_angle: np.ndarray
    length: float


@dataclass
class BoundaryReport:
    loops: list

    @property
    def turning_angles(self):
        if not self.loops:
            return np.zeros(0)
        return np.concatenate([lp.turning_angles for lp in self.loops])

    @property
    def turning_sum(self):
        return float(self.turning_angles.sum())


def boundary_geometry(solution, surface):
    """Geodesic curvature and turning angles along boundary loops.

    The angle defect is measured in the oriented g-orthonormal tangent
    frame (t, nu x t), so a counterclockwise convex corner has positive
    turning; on the Euclidean square slice every corner gives +pi/2.
    """
    metric = solution.metric
    grid = solution.grid
    loops = []
    for loop in surface.boundary_loops:
        if len(loop) < 3:
            raise DegenerateLoopError(
                f"loop of {len(loop)} vertices cannot carry curvature")
        pts = surface.vertices[loop]
        prv = np.roll(pts, 1, axis=0)
        nxt = np.roll(pts, -1, axis=0)
        a = pts - prv
        b = nxt - pts

        g = metric.matrix(pts)
        g_inv = inverse_metric(g, location=pts)
        sqrt_det = np.sqrt(np.linalg.det(g))
        du = trilinear(grid, solution.du, pts)
        gn = np.sqrt(np.clip(
            np.einsum("...ij,...i,...j->...", g_inv, du, du), 0.0, None))
        gn = np.maximum(gn, 1e-300)
        nu = np.einsum("...ij,...j->...i", g_inv, du) / gn[..., None]

        a_t = _project_tangent(a, nu, g)
        b_t = _project_tangent(b, nu, g)
        t1, bad = _g_normalize(a_t, g, np.zeros(len(pts), dtype=bool))
        t2 = np.einsum("...ij,...j->...i",
                       g_inv, sqrt_det[:, None] * np.cross(nu, t1))
        cos_b = np.einsum("...i,...ij,...j->...", b_t, g, t1)
        sin_b = np.einsum("...i,...ij,...j->...", b_t, g, t2)
        defect = np.arctan2(sin_b, cos_b)
        defect[bad] = 0.0

        # covariant turning rate: the angle defect sees only the bend of
        # the embedded polyline; the Christoffel term adds the metric
        # connection (a straight coordinate line is not a g-geodesic)
        t_out, _ = _g_normalize(b_t, g, np.zeros(len(pts), dtype=bool))
        tm, _ = _g_normalize(t1 + t_out, g, np.zeros(len(pts), dtype=bool))
        gam = christoffel(metric, pts)
        acc = np.einsum("...kij,...i,...j->...k", gam, tm, tm)
        conn = np.einsum("...k,...kl,...l->...", acc, g, t2)

        mid_in = 0.5 * (prv + pts)
        mid_out = 0.5 * (pts + nxt)
        g_in = metric.matrix(mid_in)
        g_out = metric.matrix(mid_out)
        len_in = np.sqrt(np.einsum("...i,...ij,...j->...", a, g_in, a))
        len_out = np.sqrt(np.einsum("...i,...ij,...j->...", b, g_out, b))
        arc = 0.5 * (len_in + len_out)

        on_wall1 = (np.abs(pts[:, 0]) < WALL_TOL) | \
                   (np.abs(pts[:, 0] - 1.0) < WALL_TOL)
        on_wall2 = (np.abs(pts[:, 1]) < WALL_TOL) | \
                   (np.abs(pts[:, 1] - 1.0) < WALL_TOL)
        corner = on_wall1 & on_wall2

        kappa = np.where(corner, np.nan,
                         defect / np.maximum(arc, 1e-300) + conn)
        cos_tau = du[:, 2] / (np.sqrt(g[:, 2, 2]) * gn)
        edge_angle = np.arccos(np.clip(np.abs(cos_tau), 0.0, 1.0))

        loops.append(LoopGeometry(
            vertex_indices=loop, points=pts, arc_weights=arc,
            kappa=kappa, corner_mask=corner,
            turning_angles=defect[corner],
            edge_gradient_angle=edge_angle[corner],
            length=float(len_out.sum())))
    return BoundaryReport(loops=loops)


@dataclass
class GaussBonnetReport:
    """Closure of int K dA + int kappa ds + sum gamma against 2 pi chi."""

    theta: float
    chi: int
    curvature_integral: float
    geodesic_integral: float
    turning_sum: float
    residual: float
    excluded_fraction: float
    reliable: bool


def gauss_bonnet_check(solution, surface):
    geo = surface_geometry(solution, surface)
    total_area = float(geo.areas.sum())
    if total_area > 0.0:
        excluded_fraction = float(geo.areas[geo.excluded].sum()) / total_area
    else:
        excluded_fraction = 0.0
    keep = ~geo.excluded
    curv = float(np.sum(geo.gauss[keep] * geo.areas[keep]))

    bnd = boundary_geometry(solution, surface)
    geod = 0.0
    turning = 0.0
    for lp in bnd.loops:
        smooth = ~lp.corner_mask
        geod += float(np.sum(lp.kappa[smooth] * lp.arc_weights[smooth]))
        turning += float(lp.turning_angles.sum())

    residual = abs(curv + geod + turning - 2.0 * np.pi * surface.chi)
    return GaussBonnetReport(theta=surface.theta, chi=surface.chi,
                             curvature_integral=curv,
                             geodesic_integral=geod, turning_sum=turning,
                             residual=residual,
                             excluded_fraction=excluded_fraction,
                             reliable=excluded_fraction <= 0.10)


def level_family(solution, thetas=None, count=32):
    """Extract surfaces at given levels, or at ``count`` midpoints."""
    if thetas is None:
        thetas = (np.arange(count) + 0.5) / count
    return [extract_level_set(solution, t) for t in np.asarray(thetas)]


def _default_test_function(p):
    return np.cos(np.pi * p[..., 0]) * p[..., 1] + p[..., 2] ** 2


@dataclass
class CoareaReport:
    """Volume integrals of phi |du| dV against level-area averages."""

    thetas: np.ndarray
    areas: np.ndarray
    chis: np.ndarray
    boundary_lengths: np.ndarray
    discrepancies: dict               # name -> {lhs, rhs, abs, rel}
    critical_values: np.ndarray
    flagged_thetas: np.ndarray
    excluded_mass: float
    delta_reg: float


def coarea_scan(solution, theta_samples=32, test_function=None,
                surfaces=None):
    """Check int phi |du|_g dV = int_0^1 (int_Sigma phi dA) d theta.

    Test densities: 1, the scalar curvature, and a smooth generic
    function.  The midpoint rule is used in theta; nodes below the
    regularization threshold contribute to ``excluded_mass`` and their
    u-values form the critical exclusion list.
    """
    if theta_samples < 16:
        raise ValueError("need at least 16 level samples")
    grid = solution.grid
    metric = solution.metric
    pts = grid.points()
    w = trapezoid_weights(grid)
    sqrt_det = np.sqrt(np.linalg.det(metric.matrix(pts)))
    gn = solution.grad_norm
    density = w * gn * sqrt_det

    crit, delta = critical_values(solution)
    excluded_mass = float(density[gn < delta].sum())

    funcs = {
        "one": lambda p: np.ones(p.shape[:-1]),
        "scalar_curvature": lambda p: scalar_curvature(metric, p),
        "test": test_function or _default_test_function,
    }

    if surfaces is None:
        thetas = (np.arange(theta_samples) + 0.5) / theta_samples
        surfaces = level_family(solution, thetas=thetas)
    else:
        thetas = np.array([s.theta for s in surfaces])

    rhs_acc = {name: 0.0 for name in funcs}
    areas = np.empty(len(surfaces))
    chis = np.empty(len(surfaces), dtype=int)
    lengths = np.empty(len(surfaces))
    for i, surf in enumerate(surfaces):
        areas[i] = surf.area
        chis[i] = surf.chi
        lengths[i] = surf.boundary_length
        if len(surf.triangles) == 0:
            continue
        tri_areas, cent = _triangle_areas(metric, surf.vertices,
                                          surf.triangles)
        for name, fn in funcs.items():
            rhs_acc[name] += float(np.sum(fn(cent) * tri_areas))

    discrepancies = {}
    for name, fn in funcs.items():
        lhs = float(np.sum(fn(pts) * density))
        rhs = rhs_acc[name] / len(surfaces)
        gap = abs(lhs - rhs)
        scale = max(abs(lhs), abs(rhs))
        discrepancies[name] = {
            "lhs": lhs, "rhs": rhs, "abs": gap,
            "rel": gap / scale if scale > 0 else 0.0,
        }

    crit_tol = grid.h * float(gn.max())
    if len(crit):
        flagged = thetas[np.min(np.abs(thetas[:, None] - crit[None, :]),
                                axis=1) <= crit_tol]
    else:
        flagged = np.zeros(0)
    return CoareaReport(thetas=thetas, areas=areas, chis=chis,
                        boundary_lengths=lengths,
                        discrepancies=discrepancies, critical_values=crit,
                        flagged_thetas=flagged,
                        excluded_mass=excluded_mass, delta_reg=delta)


def write_off(surface, path):
    """Write the triangulation as an OFF text mesh."""
    tri = surface.triangles
    if len(tri):
        _, _, uniq, _, _ = _edge_table(tri, max(len(surface.vertices), 1))
        n_edges = len(uniq)
    else:
        n_edges = 0
    lines = ["OFF", f"{len(surface.vertices)} {len(tri)} {n_edges}"]
    lines.extend("%.17g %.17g %.17g" % tuple(v) for v in surface.vertices)
    lines.extend("3 %d %d %d" % tuple(t) for t in tri)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
