"""Brute-force references for the calibration solvers. Slow on purpose."""
import numpy as np


def signed_binary(notion, pred, a, y):
    """Group-vs-group signed rate difference straight from cell averages."""
    pred = np.asarray(pred, dtype=float)

    def m(g, lab=None):
        sel = a == g if lab is None else (a == g) & (y == lab)
        return pred[..., sel].sum(axis=-1) / sel.sum()

    if notion == "dp":
        return m(1) - m(2)
    if notion == "eoo":
        return m(1, 1) - m(2, 1)
    if notion == "pe":
        return m(1, 0) - m(2, 0)
    if notion == "oae":
        return (m(1, 1) - m(1, 0)) - (m(2, 1) - m(2, 0))
    raise ValueError(notion)


def binary_grid_oracle(notion, u, phi, a, y, bound):
    """Smallest feasible ``lam`` on a dense grid along the plug-in sign.

    The grid steps by half the smallest gap between distinct nonnegative
    breakpoints (0 included) and also holds the breakpoints themselves.
    Returns ``(s, lam, breakpoints)``; ``lam`` is None when nothing is feasible.
    """
    s = 1 if signed_binary(notion, (u > 0).astype(float), a, y) >= 0 else -1
    psi = s * phi
    nz = psi != 0
    r = np.unique((u[nz] / psi[nz]))
    r = r[r > 0]
    pts = np.concatenate([[0.0], r])
    h = 0.5 * np.min(np.diff(pts)) if pts.size > 1 else 0.5
    top = pts[-1] + 1.0
    grid = np.union1d(np.arange(0.0, top + h, h), r)
    for lo in range(0, grid.size, 2048):
        lam = grid[lo:lo + 2048]
        ok = s * signed_binary(notion, u[None, :] > lam[:, None] * psi[None, :], a, y) <= bound
        if ok.any():
            return s, float(lam[np.argmax(ok)]), r
    return s, None, r


def same_piece(x, z, r):
    """True when ``x`` and ``z`` induce the same predictions: same number of
    breakpoints strictly below, and both or neither on a breakpoint."""
    def key(v):
        return int(np.sum(r < v)), bool(np.any(r == v))
    return key(x) == key(z)


def arrangement_points(u, Phi, delta=1e-7):
    """One point inside every face of the line arrangement ``Phi_i . lam = u_i`` in 2-D."""
    lines = [(Phi[i], u[i]) for i in range(len(u)) if np.any(Phi[i] != 0)]
    pts = [np.zeros(2)]
    if not lines:
        return np.array(pts)
    verts = []
    for i in range(len(lines)):
        for j in range(i + 1, len(lines)):
            A = np.array([lines[i][0], lines[j][0]])
            if abs(np.linalg.det(A)) > 1e-14:
                verts.append(np.linalg.solve(A, [lines[i][1], lines[j][1]]))
    pts += verts
    scale = 1.0 + max([np.max(np.abs(v)) for v in verts], default=0.0)
    for normal, c in lines:
        nn = normal / np.dot(normal, normal)
        base = c * nn
        direc = np.array([-normal[1], normal[0]])
        ts = sorted(float(np.dot(v - base, direc) / np.dot(direc, direc)) for v in verts
                    if abs(np.dot(normal, v) - c) <= 1e-9 * (1 + abs(c)))
        if ts:
            params = [ts[0] - scale] + [0.5 * (p + q) for p, q in zip(ts[:-1], ts[1:])] + [ts[-1] + scale]
        else:
            params = [0.0]
        unit_n = normal / np.linalg.norm(normal)
        for t in params:
            p = base + t * direc
            pts += [p, p + delta * unit_n, p - delta * unit_n]
    return np.array(pts)
