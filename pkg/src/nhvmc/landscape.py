"""Closed-form single-qubit loss landscape for the energy-as-a-parameter
baseline.

For H = sigma_z and the one-parameter family psi(theta) = sin(theta)|0> +
cos(theta)|1>, the right variance loss with a real energy parameter eps is

    L(eps, theta) = 1 + 2 eps cos(2 theta) + eps^2.

Treating eps as a free optimization variable introduces a saddle at
(eps, theta) = (0, pi/4) with Hessian determinant -16, while the genuine
zeros of the loss sit at (-1, 0) and (+1, pi/2) (the two eigenpairs).
The scan and the stationary-point report below verify this analytically
and by grid search; gradient descent started near the saddle illustrates
the slow escape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "loss",
    "gradient",
    "hessian",
    "StationaryPoint",
    "find_stationary_points",
    "scan_grid",
    "landscape_report",
    "gradient_descent_path",
]

DOMAIN = ((-2.0, 2.0), (0.0, np.pi / 2))


def loss(eps, theta):
    return 1.0 + 2.0 * eps * np.cos(2.0 * theta) + eps ** 2


def gradient(eps, theta):
    return (2.0 * eps + 2.0 * np.cos(2.0 * theta),
            -4.0 * eps * np.sin(2.0 * theta))


def hessian(eps, theta):
    d_ee = 2.0
    d_et = -4.0 * np.sin(2.0 * theta)
    d_tt = -8.0 * eps * np.cos(2.0 * theta)
    return np.array([[d_ee, d_et], [d_et, d_tt]])


@dataclass
class StationaryPoint:
    eps: float
    theta: float
    loss: float
    hessian_det: float
    kind: str       # "minimum" | "saddle" | "maximum"


def _classify(det, d_ee):
    if det < 0:
        return "saddle"
    return "minimum" if d_ee > 0 else "maximum"


def _newton_polish(eps, theta, iterations=40):
    for _ in range(iterations):
        g = np.asarray(gradient(eps, theta))
        h = hessian(eps, theta)
        try:
            step = np.linalg.solve(h, g)
        except np.linalg.LinAlgError:
            break
        eps, theta = eps - step[0], theta - step[1]
    return float(eps), float(theta)


def find_stationary_points(resolution=1e-3):
    """Locate gradient zeros by grid scan at ``resolution`` plus Newton
    polish; duplicates within 1e-6 are merged."""
    (e_lo, e_hi), (t_lo, t_hi) = DOMAIN
    eps = np.arange(e_lo, e_hi + resolution / 2, resolution)
    theta = np.arange(t_lo, t_hi + resolution / 2, resolution)
    ee, tt = np.meshgrid(eps, theta, indexing="ij")
    g_e = 2.0 * ee + 2.0 * np.cos(2.0 * tt)
    g_t = -4.0 * ee * np.sin(2.0 * tt)
    norm2 = g_e ** 2 + g_t ** 2

    # local minima of |grad|^2 on the grid (including the boundary)
    candidates = np.ones_like(norm2, dtype=bool)
    shifted = np.pad(norm2, 1, constant_values=np.inf)
    for de in (-1, 0, 1):
        for dt in (-1, 0, 1):
            if de == dt == 0:
                continue
            neighbor = shifted[1 + de:1 + de + norm2.shape[0],
                               1 + dt:1 + dt + norm2.shape[1]]
            candidates &= norm2 <= neighbor

    points = []
    for i, j in zip(*np.nonzero(candidates)):
        e0, t0 = _newton_polish(float(ee[i, j]), float(tt[i, j]))
        g = np.asarray(gradient(e0, t0))
        if np.linalg.norm(g) > 1e-9:
            continue
        if not (e_lo - 1e-9 <= e0 <= e_hi + 1e-9
                and t_lo - 1e-9 <= t0 <= t_hi + 1e-9):
            continue
        if any(abs(p.eps - e0) < 1e-6 and abs(p.theta - t0) < 1e-6
               for p in points):
            continue
        h = hessian(e0, t0)
        det = float(np.linalg.det(h))
        points.append(StationaryPoint(e0, t0, float(loss(e0, t0)), det,
                                      _classify(det, h[0, 0])))
    points.sort(key=lambda p: (p.eps, p.theta))
    return points


def scan_grid(resolution=1e-3):
    """(eps axis, theta axis, loss grid, global grid minimum) at the given
    resolution."""
    (e_lo, e_hi), (t_lo, t_hi) = DOMAIN
    eps = np.arange(e_lo, e_hi + resolution / 2, resolution)
    theta = np.arange(t_lo, t_hi + resolution / 2, resolution)
    grid = loss(eps[:, None], theta[None, :])
    flat = int(np.argmin(grid))
    i, j = np.unravel_index(flat, grid.shape)
    return eps, theta, grid, (float(eps[i]), float(theta[j]),
                              float(grid[i, j]))


def landscape_report(resolution=1e-3):
    """Stationary points, loss zeros, and a consistency note, as a dict."""
    points = find_stationary_points(resolution)
    zeros = [p for p in points if abs(p.loss) < 1e-12]
    quoted = (-1.0, np.pi / 2)
    report = {
        "loss_form": "1 + 2*eps*cos(2*theta) + eps^2",
        "domain": {"eps": list(DOMAIN[0]), "theta": list(DOMAIN[1])},
        "resolution": resolution,
        "stationary_points": [
            {"eps": p.eps, "theta": p.theta, "loss": p.loss,
             "hessian_det": p.hessian_det, "kind": p.kind}
            for p in points
        ],
        "zeros": [{"eps": p.eps, "theta": p.theta} for p in zeros],
        "consistency_note": (
            "The global-minimum location sometimes quoted as (eps, theta) "
            f"= ({quoted[0]}, pi/2) is inconsistent with this closed form: "
            f"the loss there equals {loss(*quoted):.1f}, not 0.  The "
            "actual zeros are (eps, theta) = (-1, 0) and (+1, pi/2)."),
    }
    return report


def gradient_descent_path(eps0, theta0, learning_rate=0.01, steps=1000):
    """Plain gradient descent on the closed-form loss; started near the
    saddle (0, pi/4) it lingers before escaping along the negative-
    curvature direction."""
    path = np.empty((steps + 1, 3))
    e, t = float(eps0), float(theta0)
    for i in range(steps + 1):
        path[i] = (e, t, loss(e, t))
        g_e, g_t = gradient(e, t)
        e -= learning_rate * g_e
        t -= learning_rate * g_t
    return path
