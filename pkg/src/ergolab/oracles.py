"""
Brute-force counting oracles for the dimension module.

Everything here is quadratic and deliberately naive: dense distance
matrices, explicit lattice shifts for periodic boxes, full rescans of the
overflow table. They exist to be compared against the fast routes.
"""

import itertools

import numpy as np

from .manifold import Torus

KEY_DECIMALS = 12


def dense_distances(manifold, points):
    P = np.asarray(points, dtype=float)
    return manifold.distance(P[:, None, :], P[None, :, :])


def brute_ball_masses(manifold, points, weights, r):
    """Mass of every open atom-centred ball of radius r."""
    D = dense_distances(manifold, points)
    return (D < r).astype(float) @ np.asarray(weights, dtype=float)


def brute_greedy(manifold, points, weights, scales, caps):
    """Reference greedy: rescan all (atom, scale) overflows after every cut,
    cut the largest (ties to the lowest atom, then scale index)."""
    w = np.array(weights, dtype=float)
    D = dense_distances(manifold, points)
    incid = [(D < r).astype(float) for r in scales]
    masses = np.stack([A @ w for A in incid])  # (scales, atoms)
    caps = np.asarray(caps, dtype=float)
    cuts = 0
    while True:
        over = np.round(masses - caps[:, None], KEY_DECIMALS)
        best = over.max()
        if best <= 0:
            break
        ks, iis = np.nonzero(over == best)
        order = np.lexsort((ks, iis))
        k, i = int(ks[order[0]]), int(iis[order[0]])
        S = incid[k][i] > 0
        factor = caps[k] / w[S].sum()
        dw = np.zeros_like(w)
        dw[S] = w[S] * (1.0 - factor)
        w -= dw
        masses -= np.stack([A @ dw for A in incid])
        masses[k, i] = caps[k]
        cuts += 1
    return w, cuts


def brute_box_mass(manifold, points, weights, basis, half_widths, center):
    """Mass of the closed box by testing every lattice translate on the torus."""
    P = np.asarray(points, dtype=float)
    w = np.asarray(weights, dtype=float)
    B = np.asarray(basis, dtype=float)
    h = np.asarray(half_widths, dtype=float)
    c = np.asarray(center, dtype=float)
    d = P.shape[1]
    shifts = (
        [np.array(s, dtype=float) for s in itertools.product((-1, 0, 1), repeat=d)]
        if isinstance(manifold, Torus)
        else [np.zeros(d)]
    )
    total = 0.0
    for p, wt in zip(P, w):
        inside = False
        for s in shifts:
            v = p + s - c
            if all(abs(float(v @ B[:, j])) <= h[j] for j in range(d)):
                inside = True
                break
        if inside:
            total += wt
    return total
