"""Riemannian metrics on the unit cube and their differential geometry.

A :class:`MetricField` evaluates a symmetric positive-definite 3x3 matrix
g_ij at points of [0,1]^3, together with first and second coordinate
derivatives.  Metrics built from expression strings (the builtins and any
custom entry table) carry exact symbolic derivatives; callable metrics fall
back to fourth-order finite differences with one-sided stencils at the
boundary.

Derived quantities follow the classical coordinate formulas:

    Gamma^k_ij = 1/2 g^{kl} (d_i g_jl + d_j g_il - d_l g_ij)
    R^m_kij    = d_i Gamma^m_jk - d_j Gamma^m_ik
                 + Gamma^m_il Gamma^l_jk - Gamma^m_jl Gamma^l_ik
    Ric_jk     = R^i_kij contracted over the first slot
    R          = g^{jk} Ric_jk

Face geometry uses the outward g-unit normal nu^j = s g^{ja}/sqrt(g^{aa})
of a coordinate face {x_a = 0 or 1} and the foliation-extension identity
H = div_g(nu), so a flat cube face has H = 0 and a convex boundary has
H > 0.  Dihedral angles are interior angles: pi - arccos(g(nu1, nu2)).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .expressions import Expression, evaluate

# Face naming: B/T are the Dirichlet bottom/top, F1..F4 the Neumann sides.
# F1 = {x1=0}, F2 = {x2=0}, F3 = {x1=1}, F4 = {x2=1}: consecutive F faces
# share a vertical edge.
FACES = ("B", "T", "F1", "F2", "F3", "F4")
FACE_AXIS = {"B": 2, "T": 2, "F1": 0, "F2": 1, "F3": 0, "F4": 1}
FACE_SIDE = {"B": 0, "T": 1, "F1": 0, "F2": 0, "F3": 1, "F4": 1}

VERTICAL_EDGES = (("F1", "F2"), ("F2", "F3"), ("F3", "F4"), ("F4", "F1"))
HORIZONTAL_EDGES = tuple((cap, f) for cap in ("B", "T")
                         for f in ("F1", "F2", "F3", "F4"))
EDGES = VERTICAL_EDGES + HORIZONTAL_EDGES


def edge_id(face_a, face_b):
    pair = (face_a, face_b)
    for e in EDGES:
        if pair == e or pair == e[::-1]:
            return "|".join(e)
    raise ValueError(f"faces {face_a!r} and {face_b!r} do not share an edge")


class DegenerateMetricError(ValueError):
    """Metric fails positive-definiteness at some sampled point."""


def _as_points(x):
    pts = np.asarray(x, dtype=float)
    if pts.shape[-1] != 3:
        raise ValueError(f"points must have trailing dimension 3, got {pts.shape}")
    return pts


def inverse_metric(g, location=None):
    """Invert symmetric 3x3 matrices with a positive-definiteness gate.

    ``g`` has shape (..., 3, 3).  Raises :class:`DegenerateMetricError`
    naming the smallest eigenvalue and the offending location (index or
    coordinates if ``location`` is given).
    """
    g = np.asarray(g, dtype=float)
    eig = np.linalg.eigvalsh(g)
    small = eig[..., 0]
    bad = small <= 1e-10
    if np.any(bad):
        idx = np.unravel_index(np.argmin(small), small.shape)
        where = ""
        if location is not None:
            where = f" at point {np.asarray(location)[idx]}"
        elif small.ndim:
            where = f" at sample index {idx}"
        raise DegenerateMetricError(
            f"metric is not positive definite: smallest eigenvalue "
            f"{small[idx]:.3e}{where}")
    return np.linalg.inv(g)


# ---------------------------------------------------------------------------
# finite-difference fallback stencils (fourth order, one-sided at walls)

_D1_CENTRAL = ((-2, -1, 1, 2), (1.0 / 12, -8.0 / 12, 8.0 / 12, -1.0 / 12))
_D1_FORWARD = ((0, 1, 2, 3, 4),
               (-25.0 / 12, 48.0 / 12, -36.0 / 12, 16.0 / 12, -3.0 / 12))
_D2_CENTRAL = ((-2, -1, 0, 1, 2),
               (-1.0 / 12, 16.0 / 12, -30.0 / 12, 16.0 / 12, -1.0 / 12))
_D2_FORWARD = ((0, 1, 2, 3, 4, 5),
               (45.0 / 12, -154.0 / 12, 214.0 / 12, -156.0 / 12,
                61.0 / 12, -10.0 / 12))


def _flip(rule):
    offs, wts = rule
    return tuple(-o for o in offs), wts


def _fd_apply(fn, points, axis, h, rule_central, rule_forward, power):
    """Apply a 1-D stencil along ``axis`` to a matrix-valued ``fn``."""
    pts = np.asarray(points, dtype=float)
    coord = pts[..., axis]
    lo_margin = -min(rule_central[0]) * h
    hi_margin = max(rule_central[0]) * h
    mode = np.zeros(coord.shape, dtype=np.int8)          # 0 central
    mode[coord < lo_margin] = 1                          # 1 forward
    mode[coord > 1.0 - hi_margin] = 2                    # 2 backward
    out = None
    for m, rule in ((0, rule_central), (1, rule_forward), (2, _flip(rule_forward))):
        mask = mode == m
        if not np.any(mask):
            continue
        sub = pts[mask]
        acc = None
        for off, w in zip(*rule):
            shifted = sub.copy()
            shifted[..., axis] += off * h
            val = w * fn(shifted)
            acc = val if acc is None else acc + val
        acc = acc / h ** power
        if out is None:
            out = np.zeros(coord.shape + acc.shape[sub.ndim - 1:])
        out[mask] = acc
    return out


# ---------------------------------------------------------------------------


@dataclass
class GeometrySample:
    """Pointwise metric data bundle."""

    points: np.ndarray
    g: np.ndarray
    g_inv: np.ndarray
    sqrt_det: np.ndarray
    christoffel: np.ndarray


@dataclass
class FaceGeometrySample:
    """Outward normal and mean curvature on a coordinate face."""

    face: str
    points: np.ndarray
    normal: np.ndarray          # contravariant components of the g-unit normal
    mean_curvature: np.ndarray  # trace of the shape operator w.r.t. outward nu
    offdiagonal: np.ndarray     # g(d_axis, d_tangent) for the two tangent axes


@dataclass
class ValidationReport:
    """Right-angled chart check: face orthogonality plus edge angles."""

    face_offdiagonal: dict
    edge_angle_deviation: dict
    max_offdiagonal: float
    max_angle_deviation: float
    tolerance: float
    passed: bool


class MetricField:
    """Symmetric 3x3 metric evaluator with derivative access.

    ``entries`` is a dict of :class:`Expression` keyed by (i, j) with
    i <= j, or ``None`` for callable-backed metrics.
    """

    def __init__(self, name, entries=None, evaluator=None,
                 derivative_mode=None, h_g=1e-3):
        self.name = name
        self.entries = entries
        self._evaluator = evaluator
        if derivative_mode is None:
            derivative_mode = "analytic" if entries is not None else "fd"
        if derivative_mode == "analytic" and entries is None:
            raise ValueError("analytic derivatives need expression entries")
        self.derivative_mode = derivative_mode
        self.h_g = float(h_g)

    # -- constructors -------------------------------------------------------

    @staticmethod
    def euclidean():
        one, zero = Expression.constant(1.0), Expression.constant(0.0)
        ent = {(i, j): (one if i == j else zero) for i in range(3)
               for j in range(i, 3)}
        return MetricField("euclidean", entries=ent)

    @staticmethod
    def conformal(f_expr):
        """g = exp(2 f) * delta for an expression f(x1, x2, x3)."""
        f = Expression(f_expr)
        factor = ("call", "exp", ("mul", ("num", 2.0), f.ast))
        ent = {}
        for i in range(3):
            for j in range(i, 3):
                if i == j:
                    e = Expression.__new__(Expression)
                    e.source = f"exp(2*({f.source}))"
                    e.ast = factor
                    e._grad = None
                    e._hess = None
                    ent[(i, j)] = e
                else:
                    ent[(i, j)] = Expression.constant(0.0)
        m = MetricField("conformal", entries=ent)
        m.conformal_factor = f
        return m

    @staticmethod
    def warped(phi_expr="1 + 0.2*x1"):
        """g = dx1^2 + dx2^2 + phi(x1)^2 dx3^2."""
        phi = Expression(phi_expr)
        sq = Expression.__new__(Expression)
        sq.source = f"({phi.source})^2"
        sq.ast = ("pow", phi.ast, ("num", 2.0))
        sq._grad = None
        sq._hess = None
        ent = {(i, j): Expression.constant(1.0 if i == j else 0.0)
               for i in range(3) for j in range(i, 3)}
        ent[(2, 2)] = sq
        m = MetricField("warped", entries=ent)
        m.warp_profile = phi
        return m

    @staticmethod
    def diagonal(d1, d2, d3):
        ent = {(i, j): Expression.constant(0.0) for i in range(3)
               for j in range(i, 3) if i != j}
        for k, d in enumerate((d1, d2, d3)):
            ent[(k, k)] = d if isinstance(d, Expression) else Expression(str(d))
        return MetricField("diagonal", entries=ent)

    @staticmethod
    def from_entries(table, name="custom"):
        """Entries keyed 'g11', 'g12', ... (missing off-diagonals are 0)."""
        ent = {}
        for i in range(3):
            for j in range(i, 3):
                key = f"g{i + 1}{j + 1}"
                if key in table:
                    ent[(i, j)] = Expression(table[key])
                elif i == j:
                    raise ValueError(f"metric entry {key} is required")
                else:
                    ent[(i, j)] = Expression.constant(0.0)
        return MetricField(name, entries=ent)

    @staticmethod
    def from_callable(fn, name="callable", h_g=1e-3):
        return MetricField(name, evaluator=fn, derivative_mode="fd", h_g=h_g)

    # -- evaluation ---------------------------------------------------------

    def matrix(self, x):
        """g_ij at points, shape (..., 3, 3)."""
        pts = _as_points(x)
        if self.entries is None:
            return np.asarray(self._evaluator(pts), dtype=float)
        out = np.empty(pts.shape[:-1] + (3, 3))
        for (i, j), e in self.entries.items():
            val = e(pts)
            out[..., i, j] = val
            out[..., j, i] = val
        return out

    def dmatrix(self, x):
        """d_k g_ij, shape (..., 3, 3, 3) indexed [..., k, i, j]."""
        pts = _as_points(x)
        if self.derivative_mode == "analytic":
            out = np.zeros(pts.shape[:-1] + (3, 3, 3))
            for (i, j), e in self.entries.items():
                grads = e.gradient_asts()
                for k in range(3):
                    if grads[k] == ("num", 0.0):
                        continue
                    val = evaluate(grads[k], pts)
                    out[..., k, i, j] = val
                    out[..., k, j, i] = val
            return out
        out = np.empty(pts.shape[:-1] + (3, 3, 3))
        for k in range(3):
            out[..., k, :, :] = _fd_apply(self.matrix, pts, k, self.h_g,
                                          _D1_CENTRAL, _D1_FORWARD, 1)
        return out

    def d2matrix(self, x):
        """d_k d_l g_ij, shape (..., 3, 3, 3, 3) indexed [..., k, l, i, j]."""
        pts = _as_points(x)
        if self.derivative_mode == "analytic":
            out = np.zeros(pts.shape[:-1] + (3, 3, 3, 3))
            for (i, j), e in self.entries.items():
                hs = e.hessian_asts()
                for k in range(3):
                    for l in range(k, 3):
                        node = hs[k][l]
                        if node == ("num", 0.0):
                            continue
                        val = evaluate(node, pts)
                        out[..., k, l, i, j] = val
                        out[..., k, l, j, i] = val
                        if l != k:
                            out[..., l, k, i, j] = val
                            out[..., l, k, j, i] = val
            return out
        out = np.empty(pts.shape[:-1] + (3, 3, 3, 3))
        for k in range(3):
            out[..., k, k, :, :] = _fd_apply(self.matrix, pts, k, self.h_g,
                                             _D2_CENTRAL, _D2_FORWARD, 2)
            for l in range(k + 1, 3):
                def dk(p, _k=k):
                    return _fd_apply(self.matrix, p, _k, self.h_g,
                                     _D1_CENTRAL, _D1_FORWARD, 1)
                mixed = _fd_apply(dk, pts, l, self.h_g,
                                  _D1_CENTRAL, _D1_FORWARD, 1)
                out[..., k, l, :, :] = mixed
                out[..., l, k, :, :] = mixed
        return out

    def flux_coefficients(self, x):
        """(sqrt(det g) * g^{ij}, sqrt(det g)) for divergence-form assembly."""
        g = self.matrix(x)
        det = np.linalg.det(g)
        if np.any(det <= 1e-12):
            # slow path only to produce a precise report
            inverse_metric(g, location=x)
        sqrt_det = np.sqrt(det)
        ginv = np.linalg.inv(g)
        return sqrt_det[..., None, None] * ginv, sqrt_det

    def __repr__(self):
        return f"MetricField({self.name!r}, mode={self.derivative_mode!r})"


# ---------------------------------------------------------------------------
# derived geometry


def geometry_sample(metric, x):
    pts = _as_points(x)
    g = metric.matrix(pts)
    g_inv = inverse_metric(g, location=pts)
    sqrt_det = np.sqrt(np.linalg.det(g))
    gam = christoffel(metric, pts, _g_inv=g_inv)
    return GeometrySample(points=pts, g=g, g_inv=g_inv, sqrt_det=sqrt_det,
                          christoffel=gam)


def christoffel(metric, x, _g_inv=None):
    """Gamma^k_ij, shape (..., 3, 3, 3) indexed [..., k, i, j]."""
    pts = _as_points(x)
    if _g_inv is None:
        _g_inv = inverse_metric(metric.matrix(pts), location=pts)
    dg = metric.dmatrix(pts)
    # term_lij = d_i g_jl + d_j g_il - d_l g_ij
    term = (np.einsum("...ijl->...lij", dg) +
            np.einsum("...jil->...lij", dg) - dg)
    return 0.5 * np.einsum("...kl,...lij->...kij", _g_inv, term)


def _christoffel_with_derivative(metric, pts):
    g = metric.matrix(pts)
    g_inv = inverse_metric(g, location=pts)
    dg = metric.dmatrix(pts)
    d2g = metric.d2matrix(pts)
    term = (np.einsum("...ijl->...lij", dg) +
            np.einsum("...jil->...lij", dg) - dg)
    gam = 0.5 * np.einsum("...kl,...lij->...kij", g_inv, term)
    dginv = -np.einsum("...ka,...mab,...bl->...mkl", g_inv, dg, g_inv)
    # dterm_mlij = d_m (d_i g_jl + d_j g_il - d_l g_ij)
    dterm = (np.einsum("...mijl->...mlij", d2g) +
             np.einsum("...mjil->...mlij", d2g) -
             np.einsum("...mlij->...mlij", d2g))
    dgam = (0.5 * np.einsum("...mkl,...lij->...mkij", dginv, term) +
            0.5 * np.einsum("...kl,...mlij->...mkij", g_inv, dterm))
    return g, g_inv, gam, dgam


def curvature(metric, x, need="scalar"):
    """Curvature tensors at points.

    ``need`` is one of "scalar", "ricci", "riemann"; higher levels include
    the lower ones.  Returns a dict with keys among
    {"g", "g_inv", "riemann", "ricci", "scalar"}.  The Riemann entry is the
    fully lowered R_ijkl = <R(d_i, d_j) d_k, d_l>.
    """
    pts = _as_points(x)
    g, g_inv, gam, dgam = _christoffel_with_derivative(metric, pts)
    # Rup[..., i, j, k, m] = R^m_kij
    rup = (np.einsum("...imjk->...ijkm", dgam) -
           np.einsum("...jmik->...ijkm", dgam) +
           np.einsum("...mil,...ljk->...ijkm", gam, gam) -
           np.einsum("...mjl,...lik->...ijkm", gam, gam))
    out = {"g": g, "g_inv": g_inv}
    ric = np.einsum("...ijki->...jk", rup)
    out["ricci"] = ric
    out["scalar"] = np.einsum("...jk,...jk->...", g_inv, ric)
    if need == "riemann":
        out["riemann"] = np.einsum("...ijkm,...ml->...ijkl", rup, g)
    return out


def scalar_curvature(metric, x):
    """Scalar curvature R at points, shape (...)."""
    return curvature(metric, x, need="scalar")["scalar"]


def ricci_quadratic(metric, x, du):
    """Ric(grad u, grad u) for covariant gradient components du (..., 3)."""
    data = curvature(metric, x, need="ricci")
    upper = np.einsum("...ij,...j->...i", data["g_inv"], du)
    return np.einsum("...ij,...i,...j->...", data["ricci"], upper, upper)


def sectional_curvature(metric, x, v, w, _data=None):
    """Sectional curvature of the plane spanned by vectors v, w (..., 3)."""
    data = _data if _data is not None else curvature(metric, x, need="riemann")
    g, riem = data["g"], data["riemann"]
    num = np.einsum("...ijkl,...i,...j,...k,...l->...", riem, v, w, w, v)
    vv = np.einsum("...ij,...i,...j->...", g, v, v)
    ww = np.einsum("...ij,...i,...j->...", g, w, w)
    vw = np.einsum("...ij,...i,...j->...", g, v, w)
    return num / (vv * ww - vw ** 2)


def _face_points(face, grid1, grid2):
    """Tensor points on a face from two 1-D parameter arrays."""
    axis = FACE_AXIS[face]
    side = float(FACE_SIDE[face])
    a, b = [t for t in range(3) if t != axis]
    u, v = np.meshgrid(grid1, grid2, indexing="ij")
    pts = np.empty(u.shape + (3,))
    pts[..., axis] = side
    pts[..., a] = u
    pts[..., b] = v
    return pts


def face_geometry(metric, face, x):
    """Outward unit normal, mean curvature and tangential couplings."""
    if face not in FACES:
        raise ValueError(f"unknown face {face!r}; faces are {FACES}")
    pts = _as_points(x)
    axis = FACE_AXIS[face]
    sign = 1.0 if FACE_SIDE[face] == 1 else -1.0
    if not np.allclose(pts[..., axis], float(FACE_SIDE[face]), atol=1e-12):
        raise ValueError(f"points are not on face {face}")

    g = metric.matrix(pts)
    g_inv = inverse_metric(g, location=pts)
    dg = metric.dmatrix(pts)
    dginv = -np.einsum("...ka,...mab,...bl->...mkl", g_inv, dg, g_inv)
    # d_m log sqrt(det g) = 1/2 tr(g^{-1} d_m g)
    dlogs = 0.5 * np.einsum("...kl,...mlk->...m", g_inv, dg)

    gaa = g_inv[..., axis, axis]
    sq = np.sqrt(gaa)
    nu = sign * g_inv[..., :, axis] / sq[..., None]
    # divergence of the foliation-extended unit normal field
    dgaa = dginv[..., :, axis, axis]                       # d_m g^{aa}
    div = sign * (np.einsum("...jj->...", dginv[..., :, :, axis]) / sq -
                  np.einsum("...j,...j->...",
                            g_inv[..., :, axis], dgaa) / (2 * gaa * sq))
    H = div + np.einsum("...j,...j->...", nu, dlogs)

    tangents = [t for t in range(3) if t != axis]
    offdiag = np.stack([g[..., axis, t] for t in tangents], axis=-1)
    return FaceGeometrySample(face=face, points=pts, normal=nu,
                              mean_curvature=H, offdiagonal=offdiag)


def dihedral_angle(metric, edge, x):
    """Interior angle between the two faces meeting at ``edge``.

    ``edge`` is either an "Fa|Fb" string or a (face, face) pair.  Returns
    pi - arccos(g(nu_a, nu_b)) for the outward g-unit normals, so a flat
    cube edge gives pi/2.
    """
    if isinstance(edge, str):
        fa, fb = edge.split("|")
    else:
        fa, fb = edge
    edge_id(fa, fb)  # validates adjacency
    pts = _as_points(x)
    g_inv = inverse_metric(metric.matrix(pts), location=pts)
    a, sa = FACE_AXIS[fa], (1.0 if FACE_SIDE[fa] == 1 else -1.0)
    b, sb = FACE_AXIS[fb], (1.0 if FACE_SIDE[fb] == 1 else -1.0)
    cos_ext = sa * sb * g_inv[..., a, b] / np.sqrt(
        g_inv[..., a, a] * g_inv[..., b, b])
    return np.pi - np.arccos(np.clip(cos_ext, -1.0, 1.0))


def validate_right_angled_metric(metric, samples_per_axis=9, tolerance=1e-8):
    """Check the right-angled chart conditions.

    On each face the metric must be orthogonal to the face normal
    (g(d_axis, d_tangent) = 0) and every edge must meet at interior angle
    pi/2.  Returns a :class:`ValidationReport` with per-face and per-edge
    maxima.
    """
    s = np.linspace(0.0, 1.0, samples_per_axis)
    face_off = {}
    for face in FACES:
        pts = _face_points(face, s, s)
        sample = face_geometry(metric, face, pts.reshape(-1, 3))
        face_off[face] = float(np.max(np.abs(sample.offdiagonal)))
    edge_dev = {}
    for fa, fb in EDGES:
        axis_a, axis_b = FACE_AXIS[fa], FACE_AXIS[fb]
        free_axis = [t for t in range(3) if t not in (axis_a, axis_b)][0]
        pts = np.zeros((samples_per_axis, 3))
        pts[:, axis_a] = FACE_SIDE[fa]
        pts[:, axis_b] = FACE_SIDE[fb]
        pts[:, free_axis] = s
        ang = dihedral_angle(metric, (fa, fb), pts)
        edge_dev[edge_id(fa, fb)] = float(np.max(np.abs(ang - np.pi / 2)))
    max_off = max(face_off.values())
    max_dev = max(edge_dev.values())
    return ValidationReport(face_offdiagonal=face_off,
                            edge_angle_deviation=edge_dev,
                            max_offdiagonal=max_off,
                            max_angle_deviation=max_dev,
                            tolerance=tolerance,
                            passed=(max_off <= tolerance
                                    and max_dev <= tolerance))
