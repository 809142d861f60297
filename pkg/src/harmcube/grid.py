"""Structured grid on [0,1]^3: node classification, fields, serialization.

Grids are uniform with an odd node count n >= 9 per axis and spacing
h = 1/(n-1).  Scalar fields live on nodes as (n, n, n) arrays indexed
[i, j, k] for (x1, x2, x3); serialized layouts are x-fastest (Fortran
order on that index convention).
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from .metrics import FACE_AXIS, FACE_SIDE, FACES

NODE_INTERIOR = 0
NODE_FACE = {face: 1 + idx for idx, face in enumerate(FACES)}
NODE_EDGE = 7
NODE_VERTEX = 8

_MAGIC = b"HCGF0001"


@dataclass(frozen=True)
class Grid:
    """Uniform node grid with n odd, n >= 9."""

    n: int

    def __post_init__(self):
        if self.n < 9 or self.n % 2 == 0:
            raise ValueError(f"grid needs an odd node count n >= 9, got {self.n}")

    @property
    def h(self):
        return 1.0 / (self.n - 1)

    @property
    def coords(self):
        return np.linspace(0.0, 1.0, self.n)

    def points(self):
        """Node coordinates, shape (n, n, n, 3)."""
        c = self.coords
        x1, x2, x3 = np.meshgrid(c, c, c, indexing="ij")
        return np.stack([x1, x2, x3], axis=-1)

    def classify(self):
        """Node class codes, shape (n, n, n).

        Exactly one class per node: vertices beat edges beat faces beat
        interior.
        """
        n = self.n
        idx = np.arange(n)
        wall = ((idx == 0) | (idx == n - 1)).astype(np.int8)
        wall_count = (wall[:, None, None] + wall[None, :, None]
                      + wall[None, None, :])
        cls = np.full((n, n, n), NODE_INTERIOR, dtype=np.uint8)
        cls[wall_count == 2] = NODE_EDGE
        cls[wall_count == 3] = NODE_VERTEX
        for face in FACES:
            axis, side = FACE_AXIS[face], FACE_SIDE[face]
            sl = [slice(None)] * 3
            sl[axis] = 0 if side == 0 else n - 1
            sub = cls[tuple(sl)]
            sub[sub == NODE_INTERIOR] = NODE_FACE[face]
        return cls

    def face_mask(self, face):
        """Boolean mask of all nodes lying on a closed face."""
        n = self.n
        mask = np.zeros((n, n, n), dtype=bool)
        sl = [slice(None)] * 3
        sl[FACE_AXIS[face]] = 0 if FACE_SIDE[face] == 0 else n - 1
        mask[tuple(sl)] = True
        return mask


def metric_signature(metric):
    """Stable short hash of a metric definition for container headers."""
    if getattr(metric, "entries", None) is not None:
        desc = metric.name + "|" + "|".join(
            f"{k}:{e.source}" for k, e in sorted(metric.entries.items()))
    else:
        desc = metric.name + "|callable"
    return hashlib.sha256(desc.encode()).hexdigest()[:16]


def save_fields(path, grid, fields, metric=None, metric_name="",
                metric_hash=""):
    """Write named node fields to the binary grid-field container.

    Layout: magic, little-endian uint32 header length, JSON header
    {n, metric_name, metric_hash, fields}, then each field as float64
    in x-fastest order.
    """
    if metric is not None:
        metric_name = metric.name
        metric_hash = metric_signature(metric)
    names = list(fields.keys())
    header = json.dumps({"n": grid.n, "metric_name": metric_name,
                         "metric_hash": metric_hash, "fields": names},
                        sort_keys=True).encode()
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(np.uint32(len(header)).tobytes())
        fh.write(header)
        for name in names:
            arr = np.asarray(fields[name], dtype=np.float64)
            if arr.shape != (grid.n,) * 3:
                raise ValueError(f"field {name!r} has shape {arr.shape}, "
                                 f"expected {(grid.n,) * 3}")
            fh.write(arr.ravel(order="F").tobytes())
    os.replace(tmp, path)


def load_fields(path):
    """Read a grid-field container; returns (grid, fields, header dict)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a grid-field container")
        (hlen,) = np.frombuffer(fh.read(4), dtype=np.uint32)
        header = json.loads(fh.read(int(hlen)).decode())
        n = int(header["n"])
        grid = Grid(n)
        fields = {}
        for name in header["fields"]:
            raw = np.frombuffer(fh.read(8 * n ** 3), dtype=np.float64)
            fields[name] = raw.reshape((n, n, n), order="F").copy()
    return grid, fields, header


def write_slice_csv(path, grid, field, axis=2, index=None):
    """Write one coordinate slice of a node field as CSV."""
    n = grid.n
    if index is None:
        index = n // 2
    arr = np.asarray(field)
    sl = [slice(None)] * 3
    sl[axis] = index
    plane = arr[tuple(sl)]
    axes = [a for a in range(3) if a != axis]
    c = grid.coords
    lines = [f"x{axes[0] + 1},x{axes[1] + 1},value"]
    for a in range(n):
        for b in range(n):
            lines.append(f"{c[a]:.17g},{c[b]:.17g},{plane[a, b]:.17g}")
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def trapezoid_weights(grid):
    """Composite trapezoid node weights, shape (n, n, n), summing to 1."""
    w = np.full(grid.n, grid.h)
    w[0] = w[-1] = grid.h / 2
    return w[:, None, None] * w[None, :, None] * w[None, None, :]


def simpson_weights(grid):
    """Composite Simpson node weights (n odd), shape (n, n, n)."""
    n = grid.n
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    w *= grid.h / 3.0
    return w[:, None, None] * w[None, :, None] * w[None, None, :]


def face_weights_2d(grid):
    """Trapezoid weights for a face grid, shape (n, n), summing to 1."""
    w = np.full(grid.n, grid.h)
    w[0] = w[-1] = grid.h / 2
    return w[:, None] * w[None, :]


def trilinear(grid, field, pts):
    """Trilinear interpolation of node data at points (..., 3).

    ``field`` may carry extra trailing component axes after (n, n, n).
    """
    arr = np.asarray(field)
    pts = np.asarray(pts, dtype=float)
    n, h = grid.n, grid.h
    scaled = np.clip(pts, 0.0, 1.0) / h
    base = np.minimum(scaled.astype(int), n - 2)
    frac = scaled - base
    i, j, k = base[..., 0], base[..., 1], base[..., 2]
    fx, fy, fz = (frac[..., 0], frac[..., 1], frac[..., 2])
    comp_shape = arr.shape[3:]
    expand = (...,) + (None,) * len(comp_shape)
    fx, fy, fz = fx[expand], fy[expand], fz[expand]
    out = np.zeros(pts.shape[:-1] + comp_shape)
    for di, wi in ((0, 1 - fx), (1, fx)):
        for dj, wj in ((0, 1 - fy), (1, fy)):
            for dk, wk in ((0, 1 - fz), (1, fz)):
                out += wi * wj * wk * arr[i + di, j + dj, k + dk]
    return out
