"""Independent reference computations used by the tests.

Nothing here imports the solver internals; the QP oracle is a dense grid
search, written with numpy so it stays fast enough for hundreds of cases.
"""

from __future__ import annotations

import math

import numpy as np


def grid_qp_min(u_nom, constraints, v_max: float, step: float = 1e-3, tol: float = 0.0):
    """Minimum of ||u - u_nom||^2 over grid points of the v_max disk satisfying every halfplane.

    Returns ``(objective, point)`` or ``(inf, None)`` when no grid point is feasible.
    """
    n = int(math.ceil(v_max / step))
    axis = np.arange(-n, n + 1) * step
    X, Y = np.meshgrid(axis, axis, indexing="ij")
    ok = X * X + Y * Y <= v_max * v_max + tol
    for (ax, ay), b, *_ in constraints:
        ok &= ax * X + ay * Y >= b - tol
    if not ok.any():
        return math.inf, None
    obj = (X - u_nom[0]) ** 2 + (Y - u_nom[1]) ** 2
    obj = np.where(ok, obj, np.inf)
    i = int(np.argmin(obj))
    return float(obj.flat[i]), (float(X.flat[i]), float(Y.flat[i]))


def random_feasible_instance(rng: np.random.Generator, v_max: float, max_planes: int = 4):
    """u_nom uniform in the disk, 0..max_planes halfplanes all satisfied by a hidden witness."""
    def disk_point():
        r = v_max * math.sqrt(rng.random())
        th = rng.uniform(-math.pi, math.pi)
        return (r * math.cos(th), r * math.sin(th))

    u_nom = disk_point()
    witness = disk_point()
    planes = []
    for _ in range(int(rng.integers(0, max_planes + 1))):
        th = rng.uniform(-math.pi, math.pi)
        scale = rng.uniform(0.2, 3.0)
        a = (scale * math.cos(th), scale * math.sin(th))
        slack = rng.uniform(0.0, 0.3) * scale
        planes.append((a, a[0] * witness[0] + a[1] * witness[1] - slack))
    return u_nom, planes, witness


def objective(u, u_nom) -> float:
    return (u[0] - u_nom[0]) ** 2 + (u[1] - u_nom[1]) ** 2
