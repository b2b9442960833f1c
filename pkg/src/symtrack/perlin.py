"""Classic 2-D gradient-lattice (Perlin) noise with a seedable permutation table."""
from __future__ import annotations

import numpy as np

_GRADIENTS = np.array(
    [(np.cos(a), np.sin(a)) for a in np.arange(8) * (np.pi / 4)], dtype=np.float64
)


def _fade(t):
    return t * t * t * (t * (t * 6 - 15) + 10)


class Perlin2D:
    def __init__(self, rng: np.random.Generator):
        perm = rng.permutation(256)
        self._perm = np.concatenate([perm, perm]).astype(np.int64)

    def __call__(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        xi = np.floor(x).astype(np.int64)
        yi = np.floor(y).astype(np.int64)
        xf, yf = x - xi, y - yi
        xi &= 255
        yi &= 255
        p = self._perm

        def corner(ox, oy):
            g = _GRADIENTS[p[p[xi + ox] + yi + oy] & 7]
            return g[..., 0] * (xf - ox) + g[..., 1] * (yf - oy)

        u, v = _fade(xf), _fade(yf)
        bottom = corner(0, 0) + u * (corner(1, 0) - corner(0, 0))
        top = corner(0, 1) + u * (corner(1, 1) - corner(0, 1))
        return bottom + v * (top - bottom)

    def fractal(self, x, y, octaves: int = 2, persistence: float = 0.5):
        total = np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)
        amp, freq = 1.0, 1.0
        for _ in range(octaves):
            total = total + amp * self(np.asarray(x) * freq, np.asarray(y) * freq)
            amp *= persistence
            freq *= 2.0
        return total


def closed_loop_profile(rng: np.random.Generator, n_angles: int = 360, octaves: int = 2,
                        persistence: float = 0.5, loop_radius: float = 1.5) -> np.ndarray:
    """Noise sampled around a circle in noise space, scaled to ``max |v| == 1``.

    Sampling on a circle makes the profile periodic in the angle, so a shape
    built from it closes without a seam.
    """
    noise = Perlin2D(rng)
    theta = np.linspace(0.0, 2 * np.pi, n_angles, endpoint=False)
    cx, cy = rng.uniform(0, 200, size=2)
    vals = noise.fractal(cx + loop_radius * np.cos(theta), cy + loop_radius * np.sin(theta),
                         octaves=octaves, persistence=persistence)
    peak = np.abs(vals).max()
    return vals / peak if peak > 0 else vals
