"""Independent brute-force implementations used only to cross-check results.

Everything here is deliberately written against the numpy/scipy-based
production code paths: plain Python loops, fsum accumulation, and
queue-based flood fill.
"""

from __future__ import annotations

import math
from collections import deque


def dice_counts(labels_a, labels_b, n_codes: int = 7):
    """Per-code (|A|, |B|, |A^B|) from two flat label sequences."""
    count_a = [0] * n_codes
    count_b = [0] * n_codes
    inter = [0] * n_codes
    for ca, cb in zip(labels_a, labels_b):
        count_a[ca] += 1
        count_b[cb] += 1
        if ca == cb:
            inter[ca] += 1
    return count_a, count_b, inter


def dice_bruteforce(labels_a, labels_b, code: int) -> float:
    """Dice by explicit voxel counting; both-empty agrees at 1.0."""
    count_a, count_b, inter = dice_counts(labels_a, labels_b)
    denom = count_a[code] + count_b[code]
    if denom == 0:
        return 1.0
    return 2.0 * inter[code] / denom


_NEIGHBOURS_26 = [
    (dx, dy, dz)
    for dx in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dz in (-1, 0, 1)
    if (dx, dy, dz) != (0, 0, 0)
]


def flood_fill_components(mask3d) -> int:
    """Count 26-connected components by breadth-first flood fill."""
    nx = len(mask3d)
    ny = len(mask3d[0])
    nz = len(mask3d[0][0])
    seen = [[[False] * nz for _ in range(ny)] for _ in range(nx)]
    count = 0
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                if not mask3d[x][y][z] or seen[x][y][z]:
                    continue
                count += 1
                queue = deque([(x, y, z)])
                seen[x][y][z] = True
                while queue:
                    cx, cy, cz = queue.popleft()
                    for dx, dy, dz in _NEIGHBOURS_26:
                        px, py, pz = cx + dx, cy + dy, cz + dz
                        if 0 <= px < nx and 0 <= py < ny and 0 <= pz < nz:
                            if mask3d[px][py][pz] and not seen[px][py][pz]:
                                seen[px][py][pz] = True
                                queue.append((px, py, pz))
    return count


def field_stats_twopass(vectors) -> tuple[float, float, float]:
    """Deformation statistics by fsum two-pass formulas over (n, 3) rows."""
    n = len(vectors)
    means = [math.fsum(v[axis] for v in vectors) / n for axis in range(3)]
    sds = [
        math.sqrt(math.fsum((v[axis] - means[axis]) ** 2 for v in vectors) / n)
        for axis in range(3)
    ]
    bias = math.sqrt(math.fsum(m * m for m in means))
    mean_of_means = math.fsum(means) / 3.0
    directional = math.sqrt(math.fsum((m - mean_of_means) ** 2 for m in means) / 3.0)
    per_axis = math.fsum(sds) / 3.0
    return bias, directional, per_axis


def pearson_direct(x, y) -> float:
    """Correlation by the direct summation formula with fsum accumulation."""
    n = len(x)
    sx = math.fsum(x)
    sy = math.fsum(y)
    sxx = math.fsum(v * v for v in x)
    syy = math.fsum(v * v for v in y)
    sxy = math.fsum(a * b for a, b in zip(x, y))
    num = n * sxy - sx * sy
    den = math.sqrt((n * sxx - sx * sx) * (n * syy - sy * sy))
    return num / den


def permutation_p_value(x, y, n_perm: int, seed: int) -> float:
    """Two-sided permutation p-value for the observed |r| of (x, y).

    Vectorized over numpy permutations but independent of the analytic
    t-distribution path it checks.
    """
    import numpy as np

    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.size
    xs = (x - x.mean()) / x.std()
    ys = (y - y.mean()) / y.std()
    r_obs = abs(float(np.dot(xs, ys) / n))

    rng = np.random.default_rng(seed)
    hits = 0
    chunk = 100_000
    done = 0
    while done < n_perm:
        m = min(chunk, n_perm - done)
        perms = rng.permuted(np.tile(ys, (m, 1)), axis=1)
        r = np.abs(perms @ xs) / n
        hits += int(np.count_nonzero(r >= r_obs - 1e-15))
        done += m
    return hits / n_perm
