"""Integral inequality assembly, identity residuals and bound arithmetic.

The central report compares the quadratic-plus-curvature volume terms
and the boundary mean-curvature term of the solved field against the
topological side assembled from a family of level surfaces (Euler
characteristics and corner turning angles).  In the flat and product
cases every analytic term vanishes and the two sides cancel exactly;
curved metrics earn a nonzero budget on both sides and the slack stays
nonnegative up to the reported discretization estimate.

All reductions use numpy's pairwise summation over arrays in fixed
index order, so a report is reproducible bit for bit on one platform.
"""

import math
from dataclasses import dataclass

import numpy as np

from .grid import face_weights_2d, trilinear
from .levelset import (REG_FACTOR, boundary_geometry, critical_values,
                       gauss_bonnet_check, level_family)
from .metrics import (FACE_AXIS, FACE_SIDE, FACES, face_geometry,
                      inverse_metric, ricci_quadratic, scalar_curvature)
from .solver import _d1_field, _d2_field

__all__ = [
    "InequalityReport",
    "VerificationResult",
    "BochnerResidual",
    "RigidityDiagnostics",
    "TorusBoundInput",
    "TorusBounds",
    "FlowEscapeError",
    "compute_inequality_terms",
    "verify_inequality",
    "bochner_residual",
    "rigidity_diagnostics",
    "torus_bounds",
]

_CAPS = ("B", "T")
_SIDES = ("F1", "F2", "F3", "F4")


class FlowEscapeError(RuntimeError):
    """Gradient-flow trajectory left the unit cube."""


def _weights_1d(n, h, rule):
    if rule == "trapezoid":
        w = np.full(n, h)
        w[0] = w[-1] = h / 2
        return w
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * h / 3.0


def _volume_weights(grid, rule):
    w = _weights_1d(grid.n, grid.h, rule)
    return w[:, None, None] * w[None, :, None] * w[None, None, :]


def _face_slice(field, face):
    axis = FACE_AXIS[face]
    index = 0 if FACE_SIDE[face] == 0 else -1
    return np.take(field, index, axis=axis)


def _face_integrals(solution, face):
    """(trapezoid, simpson) values of the face integral of H |du| dA."""
    grid = solution.grid
    metric = solution.metric
    pts = _face_slice(grid.points(), face)
    gn = _face_slice(solution.grad_norm, face)
    sample = face_geometry(metric, face, pts.reshape(-1, 3))
    mean_curv = sample.mean_curvature.reshape(pts.shape[:-1])
    g = metric.matrix(pts)
    ta, tb = [t for t in range(3) if t != FACE_AXIS[face]]
    det2 = g[..., ta, ta] * g[..., tb, tb] - g[..., ta, tb] ** 2
    integrand = mean_curv * gn * np.sqrt(np.clip(det2, 0.0, None))
    w1t = _weights_1d(grid.n, grid.h, "trapezoid")
    w1s = _weights_1d(grid.n, grid.h, "simpson")
    trap = float(np.sum(integrand * (w1t[:, None] * w1t[None, :])))
    simp = float(np.sum(integrand * (w1s[:, None] * w1s[None, :])))
    return trap, simp


def _lower_order_bound(solution):
    """Max g-norm over the cube of the first-order drift coefficient.

    The divergence form of the operator is g^{ij} d_ij u + b^j d_j u
    with b^j = (det g)^{-1/2} d_i ((det g)^{1/2} g^{ij}); the drift is
    assembled from the analytic metric derivatives.
    """
    metric = solution.metric
    pts = solution.grid.points()
    g = metric.matrix(pts)
    g_inv = inverse_metric(g, location=pts)
    dg = metric.dmatrix(pts)
    dginv = -np.einsum("...ka,...mab,...bl->...mkl", g_inv, dg, g_inv)
    dlogs = 0.5 * np.einsum("...kl,...mlk->...m", g_inv, dg)
    b = (np.einsum("...i,...ij->...j", dlogs, g_inv)
         + np.einsum("...iij->...j", dginv))
    norm = np.sqrt(np.clip(
        np.einsum("...i,...ij,...j->...", b, g, b), 0.0, None))
    return float(norm.max())


@dataclass
class InequalityReport:
    """Every term of the level-set integral inequality for one run.

    ``lhs`` collects the analytic side (quadratic, scalar-curvature and
    boundary mean-curvature integrals); ``rhs`` is the topological side
    (Euler term minus the turning-angle integral for the cube variant)
    plus the near-critical allowance.  ``side_groupings`` reports the
    side-wall term in both arrangements of the derivation: the wall mean
    curvature weighted by |du|, and the level-averaged geodesic
    curvature of the wall curves.
    """

    variant: str
    hess_term: float
    scalar_term: float
    boundary_mean_term: float
    euler_term: float
    gamma_integral: float
    turning_term: float
    excluded_mass: float
    error_estimate: float
    slack: float
    delta_reg: float
    lower_order_bound: float
    theta_samples: int
    thetas: np.ndarray
    chis: np.ndarray
    areas: np.ndarray
    corner_counts: np.ndarray
    flagged_thetas: np.ndarray
    boundary_parts: dict
    side_groupings: dict
    gb_residual_mean: float

    @property
    def lhs(self):
        return self.hess_term + self.scalar_term + self.boundary_mean_term

    @property
    def rhs(self):
        base = self.euler_term + self.excluded_mass
        if self.variant == "cube":
            base -= self.gamma_integral
        return base

    def to_record(self):
        """Flat scalar record for regression tracking."""
        return {
            "variant": self.variant,
            "hess_term": self.hess_term,
            "scalar_term": self.scalar_term,
            "boundary_mean_term": self.boundary_mean_term,
            "euler_term": self.euler_term,
            "gamma_integral": self.gamma_integral,
            "turning_term": self.turning_term,
            "excluded_mass": self.excluded_mass,
            "error_estimate": self.error_estimate,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "slack": self.slack,
            "delta_reg": self.delta_reg,
            "lower_order_bound": self.lower_order_bound,
            "theta_samples": self.theta_samples,
            "side_mean": self.side_groupings["mean"],
            "side_geodesic": self.side_groupings["geodesic"],
            "gb_residual_mean": self.gb_residual_mean,
        }

    def to_text(self):
        rec = self.to_record()
        width = max(len(k) for k in rec)
        lines = [f"{k.ljust(width)}  {v}" for k, v in rec.items()]
        return "\n".join(lines)


def compute_inequality_terms(solution, family=None, variant="cube",
                             theta_samples=32, delta_reg=None):
    """Assemble the inequality report from a solved field.

    The volume terms use the composite trapezoid rule with the metric
    volume element; the 1/|du| factor is floored at ``delta_reg``
    (default ``REG_FACTOR * max |du|``).  ``error_estimate`` combines
    the trapezoid-versus-Simpson quadrature gap (doubled as a safety
    factor), the coarea defect of the extracted family, and the mean
    Gauss-Bonnet closure residual; every component is a measured
    second-order quantity, so the bar shrinks with the grid.
    """
    if variant not in ("dirichlet", "cube"):
        raise ValueError(f"unknown variant {variant!r}")
    if family is None:
        family = level_family(solution, count=theta_samples)
    if not family:
        raise ValueError("the level family is empty")
    grid = solution.grid
    metric = solution.metric

    pts = grid.points()
    g = metric.matrix(pts)
    g_inv = inverse_metric(g, location=pts)
    sqrt_det = np.sqrt(np.linalg.det(g))
    gn = solution.grad_norm
    if delta_reg is None:
        delta_reg = REG_FACTOR * float(gn.max())

    hess2 = np.einsum("...ia,...jb,...ij,...ab->...",
                      g_inv, g_inv, solution.hessian, solution.hessian)
    hess_density = 0.5 * hess2 / np.maximum(gn, delta_reg) * sqrt_det
    scalar_density = 0.5 * scalar_curvature(metric, pts) * gn * sqrt_det
    coarea_density = gn * sqrt_det

    w_trap = _volume_weights(grid, "trapezoid")
    w_simp = _volume_weights(grid, "simpson")
    hess_term = float(np.sum(w_trap * hess_density))
    scalar_term = float(np.sum(w_trap * scalar_density))
    volume_quad_gap = (
        abs(hess_term - float(np.sum(w_simp * hess_density)))
        + abs(scalar_term - float(np.sum(w_simp * scalar_density))))

    boundary_parts = {"caps": 0.0, "sides": 0.0}
    boundary_quad_gap = 0.0
    for face in FACES:
        trap, simp = _face_integrals(solution, face)
        part = "caps" if face in _CAPS else "sides"
        boundary_parts[part] += trap
        boundary_quad_gap += abs(trap - simp)
    boundary_mean_term = boundary_parts["caps"] + boundary_parts["sides"]

    thetas = np.array([s.theta for s in family])
    chis = np.array([s.chi for s in family], dtype=int)
    areas = np.array([s.area for s in family])
    d_theta = 1.0 / len(family)

    turning_sums = np.empty(len(family))
    corner_counts = np.empty(len(family), dtype=int)
    geodesic = np.empty(len(family))
    gb_residuals = np.empty(len(family))
    for i, surf in enumerate(family):
        gb = gauss_bonnet_check(solution, surf)
        angles = boundary_geometry(solution, surf).turning_angles
        turning_sums[i] = gb.turning_sum
        corner_counts[i] = len(angles)
        geodesic[i] = gb.geodesic_integral
        gb_residuals[i] = gb.residual

    euler_term = 2.0 * np.pi * float(chis.sum()) * d_theta
    gamma_integral = float(turning_sums.sum()) * d_theta
    turning_term = float(
        np.sum(corner_counts * (np.pi / 2.0) - turning_sums)) * d_theta

    crit, _ = critical_values(solution)
    crit_tol = grid.h * float(gn.max())
    if len(crit):
        gaps = np.min(np.abs(thetas[:, None] - crit[None, :]), axis=1)
        flagged = gaps <= crit_tol
    else:
        flagged = np.zeros(len(family), dtype=bool)
    lower_order = _lower_order_bound(solution)
    lengths = np.array([s.boundary_length for s in family])
    excluded_mass = lower_order * float(
        np.sum((areas + lengths)[flagged])) * d_theta

    coarea_gap = abs(float(np.sum(w_trap * coarea_density))
                     - float(areas.sum()) * d_theta)
    gb_mean = float(gb_residuals.sum()) * d_theta
    error_estimate = (2.0 * (volume_quad_gap + boundary_quad_gap)
                      + coarea_gap + gb_mean)

    lhs = hess_term + scalar_term + boundary_mean_term
    rhs = euler_term + excluded_mass
    if variant == "cube":
        rhs -= gamma_integral

    return InequalityReport(
        variant=variant, hess_term=hess_term, scalar_term=scalar_term,
        boundary_mean_term=boundary_mean_term, euler_term=euler_term,
        gamma_integral=gamma_integral, turning_term=turning_term,
        excluded_mass=excluded_mass, error_estimate=error_estimate,
        slack=rhs - lhs, delta_reg=float(delta_reg),
        lower_order_bound=lower_order, theta_samples=len(family),
        thetas=thetas, chis=chis, areas=areas,
        corner_counts=corner_counts, flagged_thetas=thetas[flagged],
        boundary_parts=boundary_parts,
        side_groupings={
            "mean": boundary_parts["sides"],
            "geodesic": float(geodesic.sum()) * d_theta,
            "difference": float(geodesic.sum()) * d_theta
            - boundary_parts["sides"],
        },
        gb_residual_mean=gb_mean)


@dataclass
class VerificationResult:
    passed: bool
    margin: float
    checks: dict
    tol: float
    effective_tol: float


def verify_inequality(report, tol=1e-6):
    """Check the inequality chain of a report.

    The effective tolerance is ``tol`` plus the report's discretization
    estimate.  A negative quadratic term marks a corrupted report and
    fails the well-formedness check regardless of the chain.
    """
    eff = tol + report.error_estimate
    checks = {"hess_nonnegative": report.hess_term + eff}
    rhs0 = report.euler_term
    if report.variant == "cube":
        rhs0 -= report.gamma_integral
    checks["chain"] = rhs0 + report.excluded_mass + eff - report.lhs
    if report.variant == "cube":
        checks["euler_vs_turning"] = report.turning_term + eff - rhs0
        checks["conclusion"] = eff + report.excluded_mass - report.lhs
    margin = min(checks.values())
    return VerificationResult(passed=bool(margin >= 0.0),
                              margin=float(margin), checks=checks,
                              tol=float(tol), effective_tol=float(eff))


@dataclass
class BochnerResidual:
    """Pointwise residual of the gradient-square identity."""

    values: np.ndarray           # NaN outside the interior mask
    mask: np.ndarray
    max_norm: float


def bochner_residual(solution, margin=2):
    """Residual of Delta_g(|grad u|^2/2) = |Hess u|^2 + Ric(grad, grad).

    Evaluated at nodes at least ``margin`` cells from every wall, where
    all finite differences are central.  The Laplacian splits into
    g^{ij} d_ij (compact second differences) plus the analytic drift
    b^j d_j, keeping the stencil error at h^2/12 per axis.
    """
    grid = solution.grid
    metric = solution.metric
    n, h = grid.n, grid.h
    if n <= 2 * margin + 1:
        raise ValueError(f"grid too coarse for margin {margin}")

    pts = grid.points()
    g = metric.matrix(pts)
    g_inv = inverse_metric(g, location=pts)
    dg = metric.dmatrix(pts)
    dginv = -np.einsum("...ka,...mab,...bl->...mkl", g_inv, dg, g_inv)
    dlogs = 0.5 * np.einsum("...kl,...mlk->...m", g_inv, dg)
    drift = (np.einsum("...i,...ij->...j", dlogs, g_inv)
             + np.einsum("...iij->...j", dginv))

    w = 0.5 * solution.grad_norm ** 2
    dw = np.stack([_d1_field(w, a, h) for a in range(3)], axis=-1)
    lap = np.einsum("...j,...j->...", drift, dw)
    for a in range(3):
        lap += g_inv[..., a, a] * _d2_field(w, a, h)
        for b in range(a + 1, 3):
            lap += 2.0 * g_inv[..., a, b] * _d1_field(dw[..., a], b, h)

    hess2 = np.einsum("...ia,...jb,...ij,...ab->...",
                      g_inv, g_inv, solution.hessian, solution.hessian)
    ric = ricci_quadratic(metric, pts, solution.du)
    resid = lap - hess2 - ric

    mask = np.zeros((n, n, n), dtype=bool)
    mask[margin:n - margin, margin:n - margin, margin:n - margin] = True
    values = np.where(mask, resid, np.nan)
    return BochnerResidual(values=values, mask=mask,
                           max_norm=float(np.max(np.abs(resid[mask]))))


@dataclass
class RigidityDiagnostics:
    """Deviation of a solved field from the flat equality case.

    Every number is zero (to discretization) exactly when the metric is
    flat with totally geodesic faces; the thresholds in
    ``equality_case`` are a numerical proxy, not a proof.
    """

    max_hessian: float
    max_scalar_curvature: float
    max_boundary_mean: float
    max_turning_deviation: float
    flow_isometry_defect: float
    flow_distance: float
    theta_span: tuple

    def equality_case(self, threshold=1e-5):
        return max(self.max_hessian, self.max_scalar_curvature,
                   self.max_boundary_mean, self.max_turning_deviation,
                   self.flow_isometry_defect) <= threshold


def _sample_triangles(surface, h, max_count):
    """Well-shaped interior triangles for flow transport."""
    verts = surface.vertices
    tris = surface.triangles
    if len(tris) == 0:
        raise ValueError("surface has no triangles")
    cent = verts[tris].mean(axis=1)
    wall = np.minimum.reduce([cent[:, 0], 1.0 - cent[:, 0],
                              cent[:, 1], 1.0 - cent[:, 1]])
    edges = verts[tris] - verts[np.roll(tris, 1, axis=1)]
    min_edge = np.min(np.linalg.norm(edges, axis=-1), axis=-1)
    good = np.flatnonzero((wall >= 2 * h) & (min_edge >= 0.5 * h))
    if len(good) == 0:
        good = np.argsort(min_edge)[::-1][:max_count]
    if len(good) > max_count:
        good = good[np.linspace(0, len(good) - 1, max_count).astype(int)]
    return tris[good]


def rigidity_diagnostics(solution, family, steps_per_cell=2,
                         max_triangles=256):
    """Curvature maxima, corner-angle deviation and flow transport defect.

    The normalized gradient flow is parametrized by the level value
    (velocity grad u / |grad u|^2, trajectories identical to the
    unit-speed flow) and integrated with classical Runge-Kutta from the
    first family level to the last, step h/``steps_per_cell``.  The
    defect is the worst relative change of the g-lengths of transported
    triangle edges.
    """
    if len(family) < 2:
        raise ValueError("need at least two levels for the flow defect")
    grid = solution.grid
    metric = solution.metric
    pts = grid.points()
    g = metric.matrix(pts)
    g_inv = inverse_metric(g, location=pts)

    hess_norm = np.sqrt(np.clip(np.einsum(
        "...ia,...jb,...ij,...ab->...",
        g_inv, g_inv, solution.hessian, solution.hessian), 0.0, None))
    max_hessian = float(hess_norm.max())
    max_scalar = float(np.max(np.abs(scalar_curvature(metric, pts))))
    max_mean = 0.0
    for face in FACES:
        fpts = _face_slice(pts, face)
        sample = face_geometry(metric, face, fpts.reshape(-1, 3))
        max_mean = max(max_mean, float(np.max(np.abs(
            sample.mean_curvature))))

    max_turn = 0.0
    for surf in family:
        angles = boundary_geometry(solution, surf).turning_angles
        if len(angles):
            max_turn = max(max_turn, float(
                np.max(np.abs(angles - np.pi / 2.0))))

    start, goal = family[0], family[-1]
    if not start.theta < goal.theta:
        raise ValueError("family levels must increase")
    tris = _sample_triangles(start, grid.h, max_triangles)
    uniq = np.unique(tris)
    local = np.searchsorted(uniq, tris)
    x = start.vertices[uniq]

    def velocity(y):
        q = np.clip(y, 0.0, 1.0)
        du = trilinear(grid, solution.du, q)
        gi = inverse_metric(metric.matrix(q), location=q)
        grad = np.einsum("...ij,...j->...i", gi, du)
        gn2 = np.maximum(np.einsum("...i,...i->...", du, grad), 1e-300)
        return grad / gn2[..., None], 1.0 / np.sqrt(gn2)

    span = goal.theta - start.theta
    steps = max(1, math.ceil(span / (grid.h / steps_per_cell)))
    dt = span / steps
    dist = np.zeros(len(x))
    for _ in range(steps):
        k1, s1 = velocity(x)
        k2, s2 = velocity(x + 0.5 * dt * k1)
        k3, s3 = velocity(x + 0.5 * dt * k2)
        k4, s4 = velocity(x + dt * k3)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        dist += dt / 6.0 * (s1 + 2 * s2 + 2 * s3 + s4)
        if np.any(x < -1e-6) or np.any(x > 1.0 + 1e-6):
            raise FlowEscapeError(
                "gradient-flow trajectory left the cube; the field is"
                " corrupted or the levels are not interior")

    def edge_lengths(coords):
        p = coords[local]
        e = p - np.roll(p, 1, axis=1)
        mid = 0.5 * (p + np.roll(p, 1, axis=1))
        gm = metric.matrix(mid)
        return np.sqrt(np.clip(
            np.einsum("...i,...ij,...j->...", e, gm, e), 0.0, None))

    before = edge_lengths(start.vertices[uniq])
    after = edge_lengths(x)
    defect = float(np.max(np.abs(after - before) / before))
    return RigidityDiagnostics(
        max_hessian=max_hessian, max_scalar_curvature=max_scalar,
        max_boundary_mean=max_mean, max_turning_deviation=max_turn,
        flow_isometry_defect=defect, flow_distance=float(dist.max()),
        theta_span=(start.theta, goal.theta))


@dataclass
class TorusBoundInput:
    """Inputs for the mapping-torus genus and entropy bounds.

    ``volume`` is always required; each bound consumes the subset of
    the remaining fields it needs, and fields left as None simply skip
    that bound.  ``width_constant`` compares the fundamental-domain
    width to the translation length; ``bilipschitz`` is the model
    comparison constant in the entropy upper bound.  Both are existence
    constants supplied by the user.
    """

    volume: float
    width: float = None
    translation_length: float = None
    width_constant: float = None
    euler: float = None
    bilipschitz: float = None


@dataclass
class TorusBounds:
    genus_from_width: float
    genus_from_translation: float
    entropy_lower: float
    entropy_upper: float


def _positive(value, name):
    if value <= 0.0:
        raise ValueError(f"{name} must be positive, got {value}")
    return float(value)


def torus_bounds(inp):
    """Genus bounds and the entropy sandwich from volume data.

    genus <= 3 vol / (4 pi W) + 1, genus <= 3 vol / (4 C pi L) + 1, and
    vol / (3 pi |chi|) <= entropy <= 3 vol / (2 pi |chi| K).
    """
    vol = _positive(inp.volume, "volume")
    genus_w = genus_t = ent_lo = ent_hi = None
    if inp.width is not None:
        w = _positive(inp.width, "width")
        genus_w = 3.0 * vol / (4.0 * math.pi * w) + 1.0
    if inp.translation_length is not None:
        length = _positive(inp.translation_length, "translation_length")
        if inp.width_constant is None:
            raise ValueError("the translation-length bound needs"
                             " width_constant")
        c = _positive(inp.width_constant, "width_constant")
        genus_t = 3.0 * vol / (4.0 * c * math.pi * length) + 1.0
    if inp.euler is not None:
        chi = _positive(inp.euler, "euler")
        ent_lo = vol / (3.0 * math.pi * chi)
        if inp.bilipschitz is not None:
            k = _positive(inp.bilipschitz, "bilipschitz")
            ent_hi = 3.0 * vol / (2.0 * math.pi * chi * k)
    return TorusBounds(genus_from_width=genus_w,
                       genus_from_translation=genus_t,
                       entropy_lower=ent_lo, entropy_upper=ent_hi)
