"""Simplex geometry: Euclidean projection and floor-constrained rescaling."""
from __future__ import annotations

import numpy as np


def project_simplex(v) -> np.ndarray:
    """Euclidean projection of ``v`` onto the probability simplex.

    Sort-and-threshold method: find the largest active support whose common
    shift keeps all entries positive, then clip.  O(K log K), exact.
    """
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    cumsum = np.cumsum(u)
    ranks = np.arange(1, v.size + 1)
    rho = np.nonzero(u + (1.0 - cumsum) / ranks > 0)[0][-1]
    shift = (1.0 - cumsum[rho]) / (rho + 1.0)
    return np.maximum(v + shift, 0.0)


def project_simplex_floor(psi, eps: float) -> np.ndarray:
    """L-infinity projection of a simplex point onto {x in simplex: x >= eps}.

    The projection has the form x_i = max(eps, psi_i - c) with c chosen so the
    result sums to one; c is found by bisection.  Requires eps <= 1/K.
    """
    psi = np.asarray(psi, dtype=np.float64)
    if eps * psi.size > 1.0 + 1e-12:
        raise ValueError("floor eps must not exceed 1/K")
    if np.all(psi >= eps):
        return psi.copy()

    def total(c: float) -> float:
        return float(np.maximum(eps, psi - c).sum())

    lo, hi = 0.0, float(psi.max())
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if total(mid) > 1.0:
            lo = mid
        else:
            hi = mid
    out = np.maximum(eps, psi - hi)
    return out / out.sum()


def simplex_lattice(n_arms: int, units: int, chunk: int = 200_000):
    """Yield all lattice points of the simplex with coordinates m/units.

    Points are emitted as float arrays of shape (n, n_arms) in chunks of at
    most ``chunk`` rows.  The enumeration is exhaustive: every composition of
    ``units`` into ``n_arms`` nonnegative parts appears exactly once.  The
    leading coordinates are enumerated in Python; the final two are filled
    vectorized, which keeps the per-point overhead negligible.
    """
    if n_arms < 1:
        raise ValueError("need at least one arm")
    if n_arms == 1:
        yield np.ones((1, 1))
        return

    def prefixes(remaining: int, slots: int):
        if slots == 0:
            yield (), remaining
            return
        for first in range(remaining + 1):
            for rest, left in prefixes(remaining - first, slots - 1):
                yield (first, *rest), left

    rows: list[np.ndarray] = []
    size = 0
    for prefix, left in prefixes(units, n_arms - 2):
        second_last = np.arange(left + 1, dtype=np.float64)
        block = np.empty((left + 1, n_arms))
        block[:, : n_arms - 2] = prefix
        block[:, n_arms - 2] = second_last
        block[:, n_arms - 1] = left - second_last
        rows.append(block)
        size += block.shape[0]
        if size >= chunk:
            yield np.concatenate(rows) / units
            rows, size = [], 0
    if rows:
        yield np.concatenate(rows) / units
