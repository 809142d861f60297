"""Closed-form reference machinery on ball-type model domains.

The unit ball's Green function is built from one spherical image charge;
adding plane reflections of the pole produces kernels for the half ball
{x1 > 0} and the quarter ball {x1 > 0, x2 > 0} that vanish on the
spherical boundary and have zero normal derivative on the flat faces.
Mixed problems

    laplacian u = f,  du/dx1 = f1 on the x1-flat,  du/dx2 = f2 on the
    x2-flat,  u = f3 on the spherical cap

are then evaluated pointwise from the representation formula: a volume
integral of the Green kernel against f, single layers of the Neumann
data over the flat faces, and a Poisson-kernel integral of the cap data
symmetrized over the reflection images.  Everything here is independent
of the grid solver, which is the point: these values cross-check the
solver's boundary-condition handling.

Quadrature: origin-centered tensor Gauss-Legendre rules whose total
weight equals the domain measure to roundoff, and a pole-centered
spherical rule for the singular volume integral (the kernel's 1/r pole
is cancelled by the r^2 Jacobian).  Each evaluation is done at two
resolutions; the difference is reported as the error estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.polynomial.legendre import leggauss

DOMAINS = ("ball", "half_ball", "quarter_ball")
_FOUR_PI = 4.0 * np.pi


class OracleDomainError(ValueError):
    pass


class OracleDataError(ValueError):
    def __init__(self, message, violation=None):
        super().__init__(message)
        self.violation = violation


def _pts(y):
    arr = np.asarray(y, dtype=float)
    if arr.shape[-1] != 3:
        raise OracleDomainError(f"points need 3 components, got {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# reflections and kernels


@dataclass(frozen=True)
class ReflectedPoints:
    y: np.ndarray
    y_bar: np.ndarray     # spherical image y / |y|^2
    y_tilde: np.ndarray   # (-y1, y2, y3)
    y_hat: np.ndarray     # (y1, -y2, y3)


def tilde(y):
    y = _pts(y)
    return y * np.array([-1.0, 1.0, 1.0])


def hat(y):
    y = _pts(y)
    return y * np.array([1.0, -1.0, 1.0])


def reflect(y):
    """All images of a point: spherical, x1-plane, x2-plane."""
    y = _pts(y)
    norm2 = np.sum(y * y, axis=-1, keepdims=True)
    if np.any(norm2 == 0.0):
        raise OracleDomainError("spherical reflection undefined at the origin")
    return ReflectedPoints(y=y, y_bar=y / norm2, y_tilde=tilde(y),
                           y_hat=hat(y))


def _newton(x, y):
    """Free-space kernel -1/(4 pi |x-y|)."""
    d = np.linalg.norm(x - y, axis=-1)
    return -1.0 / (_FOUR_PI * d)


def _ball_image(x, y):
    """Image term 1/(4 pi |y| |x - y/|y|^2|), smooth in y (even at 0).

    |y|^2 |x - y/|y|^2|^2 expands to |x|^2 |y|^2 - 2 x.y + 1.
    """
    x2 = np.sum(x * x, axis=-1)
    y2 = np.sum(y * y, axis=-1)
    xy = np.sum(x * y, axis=-1)
    return 1.0 / (_FOUR_PI * np.sqrt(x2 * y2 - 2.0 * xy + 1.0))


def _green_ball(x, y):
    return _newton(x, y) + _ball_image(x, y)


def _poles(kind, y):
    if kind == "ball":
        return [y]
    if kind == "half_ball":
        return [y, tilde(y)]
    if kind == "quarter_ball":
        return [y, tilde(y), hat(y), tilde(hat(y))]
    raise OracleDomainError(f"unknown domain kind {kind!r}; "
                            f"expected one of {DOMAINS}")


def green_function(kind, x, y):
    """Green function of the ball / half-ball / quarter-ball.

    Vanishes for |x| = 1; even across the flat faces, so the normal
    derivative vanishes there.  Raises for (near-)coincident pole pairs.
    """
    x, y = _pts(x), _pts(y)
    poles = _poles(kind, y)
    dmin = np.min([np.linalg.norm(x - p, axis=-1) for p in poles])
    if dmin < 1e-12:
        raise OracleDomainError("green_function evaluated at a pole")
    out = sum(_green_ball(x, p) for p in poles)
    return float(out) if np.ndim(out) == 0 else out


def plane_neumann_kernel(x, y):
    """Half-space Neumann kernel: the pole and its x1-plane image.

    psi(x, y) = -1/(4 pi |x-y|) - 1/(4 pi |x-y_tilde|).  The half-ball
    Green function regroups as psi(x, y) - |y|^{-1} psi(x, y/|y|^2).
    """
    x, y = _pts(x), _pts(y)
    out = _newton(x, y) + _newton(x, tilde(y))
    return float(out) if np.ndim(out) == 0 else out


def kelvin_extend(f1, tol=1e-8, check_points=64):
    """Extend disk Neumann data past the unit circle by inversion.

    The extension is -|x|^{-1} f1(x/|x|^2) for |x| >= 1 and is
    continuous (C^1 in the radial direction) exactly when f1 vanishes
    on the unit circle; that compatibility is checked up front.
    """
    ang = np.linspace(0.0, 2.0 * np.pi, check_points, endpoint=False)
    circle = np.stack([np.zeros_like(ang), np.cos(ang), np.sin(ang)],
                      axis=-1)
    vals = np.asarray(f1(circle), dtype=float)
    worst = float(np.max(np.abs(vals)))
    if worst > tol:
        raise OracleDataError(
            f"disk data must vanish on the unit circle; max violation "
            f"{worst:.3e}", violation=worst)

    def extended(pts):
        pts = _pts(pts)
        r2 = np.sum(pts * pts, axis=-1)
        inside = r2 <= 1.0
        out = np.empty(r2.shape)
        if np.any(inside):
            out[inside] = f1(pts[inside])
        if np.any(~inside):
            p = pts[~inside]
            pr2 = r2[~inside]
            out[~inside] = -f1(p / pr2[..., None]) / np.sqrt(pr2)
        return out
    return extended


# ---------------------------------------------------------------------------
# quadrature rules


@dataclass(frozen=True)
class QuadratureRule:
    """Resolution knobs for the representation-formula integrals."""

    kind: str = "tensor_gl"
    n_radial: int = 24
    n_polar: int = 24
    n_azimuth: int = 48
    refine_factor: float = 1.5
    singularity: str = "pole_centered"

    def refined(self):
        f = self.refine_factor
        return QuadratureRule(kind=self.kind,
                              n_radial=int(np.ceil(self.n_radial * f)),
                              n_polar=int(np.ceil(self.n_polar * f)),
                              n_azimuth=int(np.ceil(self.n_azimuth * f)),
                              refine_factor=f,
                              singularity=self.singularity)


def _gl(n, a, b):
    x, w = leggauss(n)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * x, half * w


_PHI_RANGE = {"ball": (0.0, 2.0 * np.pi),
              "half_ball": (-0.5 * np.pi, 0.5 * np.pi),
              "quarter_ball": (0.0, 0.5 * np.pi)}


def ball_rule(kind, n_radial, n_polar, n_azimuth):
    """Origin-centered tensor rule; total weight = measure to roundoff.

    Polar axis e3; the azimuth range carves out the half/quarter body.
    """
    r, wr = _gl(n_radial, 0.0, 1.0)
    mu, wmu = _gl(n_polar, -1.0, 1.0)
    phi, wphi = _gl(n_azimuth, *_PHI_RANGE[kind])
    s = np.sqrt(1.0 - mu ** 2)
    omega = np.stack([
        np.multiply.outer(s, np.cos(phi)),
        np.multiply.outer(s, np.sin(phi)),
        np.broadcast_to(mu[:, None], (n_polar, n_azimuth)).copy()],
        axis=-1)
    pts = r[:, None, None, None] * omega[None, :, :, :]
    w = ((wr * r ** 2)[:, None, None]
         * wmu[None, :, None] * wphi[None, None, :])
    return pts.reshape(-1, 3), w.ravel()


_DISK_ALPHA = {("x1", None): (0.0, 2.0 * np.pi),
               ("x1", "x2"): (-0.5 * np.pi, 0.5 * np.pi),
               ("x2", "x1"): (-0.5 * np.pi, 0.5 * np.pi)}


def disk_rule(plane, half, n_radial, n_azimuth):
    """Polar rule on a unit disk or half disk inside a flat face.

    ``plane`` names the vanishing coordinate ("x1" or "x2"); ``half``
    optionally restricts to the positive side of the other flat axis.
    """
    rho, wr = _gl(n_radial, 0.0, 1.0)
    a0, a1 = _DISK_ALPHA[(plane, half)]
    alpha, wa = _gl(n_azimuth, a0, a1)
    ca, sa = np.cos(alpha), np.sin(alpha)
    zero = np.zeros((n_radial, n_azimuth))
    u = np.multiply.outer(rho, ca)
    v = np.multiply.outer(rho, sa)
    if plane == "x1":
        pts = np.stack([zero, u, v], axis=-1)
    else:
        pts = np.stack([u, zero, v], axis=-1)
    w = np.multiply.outer(wr * rho, wa)
    return pts.reshape(-1, 3), w.ravel()


def cap_rule(kind, n_polar, n_azimuth):
    """Rule on the spherical cap of a half/quarter ball (area dm dphi)."""
    mu, wmu = _gl(n_polar, -1.0, 1.0)
    phi, wphi = _gl(n_azimuth, *_PHI_RANGE[kind])
    s = np.sqrt(1.0 - mu ** 2)
    omega = np.stack([
        np.multiply.outer(s, np.cos(phi)),
        np.multiply.outer(s, np.sin(phi)),
        np.broadcast_to(mu[:, None], (n_polar, n_azimuth)).copy()],
        axis=-1)
    w = np.multiply.outer(wmu, wphi)
    return omega.reshape(-1, 3), w.ravel()


def pole_rule(kind, x, n_radial, n_polar, n_azimuth):
    """Spherical rule centered at the probe point x.

    Along each direction the radial extent runs to the first boundary
    crossing (sphere or flat wall); the r^2 Jacobian in the weights
    cancels the Green kernel's 1/r pole, so integrands stay bounded.
    """
    x = _pts(x)
    mu, wmu = _gl(n_polar, -1.0, 1.0)
    phi, wphi = _gl(n_azimuth, 0.0, 2.0 * np.pi)
    s = np.sqrt(1.0 - mu ** 2)
    omega = np.stack([
        np.multiply.outer(s, np.cos(phi)),
        np.multiply.outer(s, np.sin(phi)),
        np.broadcast_to(mu[:, None], (n_polar, n_azimuth)).copy()],
        axis=-1).reshape(-1, 3)
    w_ang = np.multiply.outer(wmu, wphi).ravel()

    xo = float(np.dot(x, x))
    xw = omega @ x
    t_sphere = -xw + np.sqrt(np.maximum(xw ** 2 + 1.0 - xo, 0.0))
    R = t_sphere
    walls = {"ball": (), "half_ball": (0,), "quarter_ball": (0, 1)}[kind]
    for axis in walls:
        wa = omega[:, axis]
        with np.errstate(divide="ignore"):
            t_wall = np.where(wa < 0.0, -x[axis] / wa, np.inf)
        R = np.minimum(R, t_wall)

    xi, wxi = leggauss(n_radial)
    r = 0.5 * np.multiply.outer(R, xi + 1.0)
    wr = 0.5 * np.multiply.outer(R, wxi)
    pts = x + r[..., None] * omega[:, None, :]
    w = w_ang[:, None] * wr * r ** 2
    return pts.reshape(-1, 3), w.ravel()


# ---------------------------------------------------------------------------
# representation-formula evaluation


@dataclass(frozen=True)
class ModelProblem:
    """Mixed problem data on a model domain.

    ``f`` is the interior source; ``f1``/``f2`` give du/dx1 on the
    x1-flat and du/dx2 on the x2-flat; ``f3`` is the Dirichlet trace on
    the spherical cap.  Any entry may be None (meaning zero).
    """

    domain: str
    f: object = None
    f1: object = None
    f2: object = None
    f3: object = None

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise OracleDomainError(f"unknown domain {self.domain!r}")


@dataclass(frozen=True)
class OracleValue:
    value: float
    error_estimate: float
    parts: dict = field(default_factory=dict)


def _poisson(x, omega):
    """Poisson kernel of the unit ball, harmonic in x."""
    x2 = np.sum(x * x, axis=-1)
    d = np.linalg.norm(x - omega, axis=-1)
    return (1.0 - x2) / (_FOUR_PI * d ** 3)


def _cap_kernel(kind, x, omega):
    images = [x] if kind == "ball" else (
        [x, tilde(x)] if kind == "half_ball"
        else [x, tilde(x), hat(x), tilde(hat(x))])
    return sum(_poisson(p, omega) for p in images)


def _check_probe(kind, x):
    x = _pts(x)
    if np.linalg.norm(x) > 1.0 + 1e-12:
        raise OracleDomainError(f"probe {x} outside the unit ball")
    if kind in ("half_ball", "quarter_ball") and x[0] < -1e-12:
        raise OracleDomainError(f"probe {x} outside the half ball")
    if kind == "quarter_ball" and x[1] < -1e-12:
        raise OracleDomainError(f"probe {x} outside the quarter ball")
    return x


def _rim_compatibility(problem, tol=1e-8):
    if problem.f3 is not None:
        return
    ang = np.linspace(0.0, np.pi, 65)
    rim1 = np.stack([np.zeros_like(ang), np.cos(ang), np.sin(ang)], axis=-1)
    rim2 = np.stack([np.cos(ang), np.zeros_like(ang), np.sin(ang)], axis=-1)
    for data, name, rim in ((problem.f1, "f1", rim1),
                            (problem.f2, "f2", rim2)):
        if data is None:
            continue
        worst = float(np.max(np.abs(np.asarray(data(rim), dtype=float))))
        if worst > tol:
            raise OracleDataError(
                f"{name} must vanish on the rim when the cap data is "
                f"zero; max violation {worst:.3e}", violation=worst)


def _corner_compatibility(problem, tol=1e-6, delta=1e-5):
    """Quarter-ball mixed Neumann data must satisfy d2 f1 = d1 f2 on
    the corner line x1 = x2 = 0."""
    z = np.linspace(-0.9, 0.9, 21)
    zero = np.zeros_like(z)

    def eval_or_zero(fn, pts):
        return np.zeros(len(pts)) if fn is None else \
            np.asarray(fn(pts), dtype=float)

    base1 = np.stack([zero, zero, z], axis=-1)
    step1 = np.stack([zero, zero + delta, z], axis=-1)
    d2f1 = (eval_or_zero(problem.f1, step1)
            - eval_or_zero(problem.f1, base1)) / delta
    base2 = np.stack([zero, zero, z], axis=-1)
    step2 = np.stack([zero + delta, zero, z], axis=-1)
    d1f2 = (eval_or_zero(problem.f2, step2)
            - eval_or_zero(problem.f2, base2)) / delta
    worst = float(np.max(np.abs(d2f1 - d1f2)))
    if worst > tol:
        raise OracleDataError(
            f"corner compatibility d2 f1 = d1 f2 violated; residual "
            f"{worst:.3e}", violation=worst)


def _volume_part(kind, x, f, rule):
    pts, w = pole_rule(kind, x, rule.n_radial, rule.n_polar, rule.n_azimuth)
    kern = green_function(kind, x, pts)
    return float(np.sum(w * kern * np.asarray(f(pts), dtype=float)))


def _flat_part(kind, x, data, plane, half, rule):
    pts, w = disk_rule(plane, half, rule.n_radial, rule.n_azimuth)
    kern = green_function(kind, x, pts)
    return float(np.sum(w * kern * np.asarray(data(pts), dtype=float)))


def _cap_part(kind, x, f3, rule):
    omega, w = cap_rule(kind, rule.n_polar, rule.n_azimuth)
    kern = _cap_kernel(kind, x, omega)
    return float(np.sum(w * kern * np.asarray(f3(omega), dtype=float)))


def _evaluate(kind, problem, quad, x):
    parts_plan = []
    if problem.f is not None:
        parts_plan.append(("volume",
                           lambda r: _volume_part(kind, x, problem.f, r)))
    if problem.f1 is not None:
        half = "x2" if kind == "quarter_ball" else None
        parts_plan.append(("flat_x1",
                           lambda r: _flat_part(kind, x, problem.f1,
                                                "x1", half, r)))
    if problem.f2 is not None:
        parts_plan.append(("flat_x2",
                           lambda r: _flat_part(kind, x, problem.f2,
                                                "x2", "x1", r)))
    if problem.f3 is not None:
        parts_plan.append(("cap",
                           lambda r: _cap_part(kind, x, problem.f3, r)))
    fine_rule = quad.refined()
    value, err = 0.0, 0.0
    parts = {}
    for name, evaluate in parts_plan:
        coarse = evaluate(quad)
        fine = evaluate(fine_rule)
        value += fine
        err += abs(fine - coarse)
        parts[name] = fine
    return OracleValue(value=value, error_estimate=err, parts=parts)


def solve_half_ball(problem, quad, x):
    """Representation-formula value of the half-ball mixed problem."""
    if problem.domain != "half_ball":
        raise OracleDomainError(
            f"problem is for {problem.domain!r}, not half_ball")
    x = _check_probe("half_ball", x)
    if problem.f2 is not None:
        raise OracleDataError("half ball has a single flat face; f2 unused")
    _rim_compatibility(problem)
    return _evaluate("half_ball", problem, quad, x)


def solve_quarter_ball(problem, quad, x):
    """Representation-formula value of the quarter-ball mixed problem."""
    if problem.domain != "quarter_ball":
        raise OracleDomainError(
            f"problem is for {problem.domain!r}, not quarter_ball")
    x = _check_probe("quarter_ball", x)
    _rim_compatibility(problem)
    _corner_compatibility(problem)
    return _evaluate("quarter_ball", problem, quad, x)


# ---------------------------------------------------------------------------
# independent finite-difference oracle (Shortley-Weller on a fitted grid)


def fd_poisson_oracle(kind, f, probes, m=32, tol=1e-10):
    """Poisson solve on the half/quarter ball by an unrelated method.

    Cartesian grid of spacing 1/m over the bounding box; nodes outside
    the sphere are eliminated by shortened boundary arms with Dirichlet
    value 0; flat faces use reflection (zero Neumann).  Returns values
    interpolated at the probe points.  Deliberately shares nothing with
    the image-kernel machinery above.
    """
    if kind not in ("half_ball", "quarter_ball"):
        raise OracleDomainError(f"fd oracle supports half/quarter, got {kind}")
    h = 1.0 / m
    ax_lo = [0.0, 0.0 if kind == "quarter_ball" else -1.0, -1.0]
    dims = [int(round((1.0 - lo) / h)) + 1 for lo in ax_lo]
    coords = [lo + h * np.arange(d) for lo, d in zip(ax_lo, dims)]
    X = np.meshgrid(*coords, indexing="ij")
    R2 = X[0] ** 2 + X[1] ** 2 + X[2] ** 2
    inside = R2 < 1.0 - 1e-12
    idx = -np.ones(inside.shape, dtype=np.int64)
    idx[inside] = np.arange(int(inside.sum()))
    nunk = int(inside.sum())

    reflect_axes = (0,) if kind == "half_ball" else (0, 1)
    ii = np.nonzero(inside)
    node_idx = idx[inside]
    pos = np.stack([X[0][inside], X[1][inside], X[2][inside]], axis=-1)

    # arm weights of the Shortley-Weller second difference:
    # u'' ~ 2/h^2 [u_+/(a_+(a_++a_-)) + u_-/(a_-(a_++a_-)) - u_c/(a_+a_-)]
    # with boundary values 0; flat faces mirror the inner neighbor
    rows, cols, vals = [], [], []
    diag = np.zeros(nunk)
    rhs = np.asarray(f(pos), dtype=float).copy()

    for axis in range(3):
        arm = {}
        link = {}
        for s in (1, -1):
            nb = [a.copy() for a in ii]
            nb[axis] = nb[axis] + s
            in_box = (nb[axis] >= 0) & (nb[axis] < dims[axis])
            nb_clipped = [np.clip(a, 0, dims[t] - 1)
                          for t, a in enumerate(nb)]
            nb_inside = np.where(in_box, inside[tuple(nb_clipped)], False)
            nb_index = np.where(nb_inside, idx[tuple(nb_clipped)], -1)

            others2 = R2[inside] - pos[:, axis] ** 2
            t = np.sqrt(np.maximum(1.0 - others2, 0.0)) - s * pos[:, axis]
            alpha = np.where(nb_inside, 1.0, np.clip(t / h, 1e-6, 1.0))

            if axis in reflect_axes and s == -1:
                at_wall = pos[:, axis] < 0.5 * h
                # mirror: couple back to the +s neighbor
                mirror = [a.copy() for a in ii]
                mirror[axis] = mirror[axis] + 1
                mir_index = idx[tuple(np.clip(a, 0, dims[t] - 1)
                                      for t, a in enumerate(mirror))]
                nb_index = np.where(at_wall, mir_index, nb_index)
                nb_inside = np.where(at_wall, mir_index >= 0, nb_inside)
                alpha = np.where(at_wall, 1.0, alpha)
            arm[s] = alpha
            link[s] = (nb_inside, nb_index)

        denom = arm[1] * arm[-1]
        total = arm[1] + arm[-1]
        diag -= 2.0 / (h * h * denom)
        for s in (1, -1):
            nb_inside, nb_index = link[s]
            coef = 2.0 / (h * h * arm[s] * total)
            sel = nb_inside
            rows.append(node_idx[sel])
            cols.append(nb_index[sel])
            vals.append(coef[sel])

    rows.append(node_idx)
    cols.append(node_idx)
    vals.append(diag)
    A = sp.coo_matrix((np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(nunk, nunk)).tocsr()

    ilu = spla.spilu(A.tocsc(), drop_tol=1e-5, fill_factor=12)
    M = spla.LinearOperator((nunk, nunk), ilu.solve)
    u, info = spla.bicgstab(A, rhs, rtol=tol, atol=0.0, maxiter=2000, M=M)
    if info != 0:
        raise OracleDomainError(f"fd oracle solve failed (info={info})")

    ugrid = np.zeros(inside.shape)
    ugrid[inside] = u

    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    out = np.empty(len(probes))
    for pi, p in enumerate(probes):
        loc = [(p[a] - ax_lo[a]) / h for a in range(3)]
        base = [min(int(loc[a]), dims[a] - 2) for a in range(3)]
        frac = [loc[a] - base[a] for a in range(3)]
        acc = 0.0
        for di in (0, 1):
            for dj in (0, 1):
                for dk in (0, 1):
                    wgt = ((frac[0] if di else 1 - frac[0])
                           * (frac[1] if dj else 1 - frac[1])
                           * (frac[2] if dk else 1 - frac[2]))
                    acc += wgt * ugrid[base[0] + di, base[1] + dj,
                                       base[2] + dk]
        out[pi] = acc
    return out
