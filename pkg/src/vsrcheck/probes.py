"""Deterministic point and pair samples in Euclidean balls.

Every estimator that takes a maximum of difference quotients draws its points
from here, so that certificates can be regenerated from ``(seed, n)`` alone.
Points come from a scrambled Sobol sequence mapped into the ball, topped up
with points on the bounding sphere and near the origin; pairs mix far pairs
with near-coincident pairs at separations ``radius * 10**-k``, ``k = 1..6``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

NEAR_SCALES = tuple(10.0 ** -k for k in range(1, 7))


def rng_for(seed: int, *tags: int) -> np.random.Generator:
    """Independent generator for a (seed, tag...) stream."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, tags)]))


def _directions(u: np.ndarray, dim: int) -> np.ndarray:
    if dim == 1:
        return np.where(u[:, :1] < 0.5, -1.0, 1.0)
    z = ndtri(np.clip(u[:, :dim], 1e-12, 1 - 1e-12))
    norm = np.linalg.norm(z, axis=1, keepdims=True)
    norm[norm == 0] = 1.0
    return z / norm


def unit_directions(n: int, dim: int, seed: int) -> np.ndarray:
    return _directions(rng_for(seed, 7).random((n, max(dim, 1))), dim)


def ball_points(n: int, dim: int, radius: float, seed: int,
                shell_fraction: float = 0.125, origin_fraction: float = 0.0625) -> np.ndarray:
    """``n`` points with norm <= ``radius``.

    A share of the points lies exactly on the sphere and a share on shells
    ``radius * 10**-k`` around the origin, where difference quotients of
    non-smooth or fast-varying laws tend to peak.
    """
    if dim == 0 or radius == 0:
        return np.zeros((n, dim))
    m = int(np.ceil(np.log2(max(n, 2))))
    sob = qmc.Sobol(dim + 1, scramble=True, rng=rng_for(seed, 1)).random_base2(m)[:n]
    dirs = _directions(sob, dim)
    r = radius * sob[:, dim] ** (1.0 / dim)
    n_shell = int(shell_fraction * n)
    n_origin = int(origin_fraction * n)
    r[:n_shell] = radius
    if n_origin:
        ks = 1 + np.arange(n_origin) % len(NEAR_SCALES)
        r[n_shell:n_shell + n_origin] = radius * 10.0 ** -ks
    return dirs * r[:, None]


def _clip_to_ball(p: np.ndarray, radius: float) -> np.ndarray:
    nrm = np.linalg.norm(p, axis=1)
    over = nrm > radius
    if over.any():
        p = p.copy()
        p[over] *= (radius / nrm[over])[:, None]
    return p


def pair_sample(n: int, dim: int, radius: float, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pairs ``(X[i], Y[i])`` inside the ball.

    Returns ``X, Y, scale`` with ``scale[i]`` the nominal separation of a
    near pair (0 for far pairs).  ``n`` far pairs, ``n`` near pairs cycling
    through :data:`NEAR_SCALES`, plus pairs against the origin at each scale.
    """
    base = ball_points(n, dim, radius, seed)
    rng = rng_for(seed, 2)
    far = base[rng.permutation(n)]
    ks = np.arange(n) % len(NEAR_SCALES)
    sep = radius * np.asarray(NEAR_SCALES)[ks]
    d = _directions(rng.random((n, max(dim, 1))), dim) if dim else np.zeros((n, 0))
    near = _clip_to_ball(base + d * sep[:, None], radius)
    n_o = 4 * len(NEAR_SCALES)
    ko = np.arange(n_o) % len(NEAR_SCALES)
    do = _directions(rng.random((n_o, max(dim, 1))), dim) if dim else np.zeros((n_o, 0))
    orig_y = do * (radius * np.asarray(NEAR_SCALES)[ko])[:, None]
    X = np.vstack([base, base, np.zeros((n_o, dim))])
    Y = np.vstack([far, near, orig_y])
    scale = np.concatenate([np.zeros(n), sep, radius * np.asarray(NEAR_SCALES)[ko]])
    return X, Y, scale
