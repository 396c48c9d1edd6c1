"""Argument-principle zero counting on rectangles.

Functions passed in here are vectorised: ``f(z)`` takes an array of complex
points. The winding number is taken from the image polyline, refining a
segment until the phase increment along it is small.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class ContourError(RuntimeError):
    """The contour passes through (or too close to) a zero."""


@dataclass(frozen=True)
class Rect:
    x0: float
    x1: float
    y0: float
    y1: float

    def corners(self):
        return [complex(self.x0, self.y0), complex(self.x1, self.y0),
                complex(self.x1, self.y1), complex(self.x0, self.y1)]

    def contains(self, z: complex) -> bool:
        return self.x0 <= z.real <= self.x1 and self.y0 <= z.imag <= self.y1

    @property
    def size(self) -> float:
        return max(self.x1 - self.x0, self.y1 - self.y0)

    def split(self, frac: float = 0.5):
        if self.x1 - self.x0 >= self.y1 - self.y0:
            xm = self.x0 + frac * (self.x1 - self.x0)
            return Rect(self.x0, xm, self.y0, self.y1), Rect(xm, self.x1, self.y0, self.y1)
        ym = self.y0 + frac * (self.y1 - self.y0)
        return Rect(self.x0, self.x1, self.y0, ym), Rect(self.x0, self.x1, ym, self.y1)


def _phase_steps(w):
    return np.angle(w[1:] / w[:-1])


def winding_along(f, pts, df=None, max_step=0.3, max_depth=16, zero_tol=1e-12):
    """Total phase change of ``f`` along the polyline through ``pts`` / 2pi.

    Segments whose phase increment exceeds ``max_step`` radians are
    bisected. If ``df`` is given, segments are also bisected while
    ``|f'/f| |dz| > 0.5`` at an endpoint, so a loop cannot hide between
    two samples. ``ContourError`` if ``|f|`` drops below ``zero_tol``
    times its typical size on the contour.

    Returns ``(winding, min |f| / median |f|)``.
    """
    pts = np.asarray(pts, dtype=complex)

    def ev(z):
        w = f(z)
        if df is None:
            return w, None
        with np.errstate(divide="ignore", invalid="ignore"):
            return w, np.abs(df(z) / w)

    w, lg = ev(pts)
    scale = np.median(np.abs(w))
    for _ in range(max_depth):
        if np.min(np.abs(w)) <= zero_tol * max(scale, 1e-300):
            raise ContourError("contour passes through a zero")
        bad_mask = np.abs(_phase_steps(w)) > max_step
        if lg is not None:
            h = np.abs(np.diff(pts))
            bad_mask |= np.maximum(lg[1:], lg[:-1]) * h > 0.5
        bad = np.nonzero(bad_mask)[0]
        if bad.size == 0:
            break
        mids = 0.5 * (pts[bad] + pts[bad + 1])
        wm, lm = ev(mids)
        pts = np.insert(pts, bad + 1, mids)
        w = np.insert(w, bad + 1, wm)
        if lg is not None:
            lg = np.insert(lg, bad + 1, lm)
    else:
        if np.max(np.abs(_phase_steps(w))) > 2.5:
            raise ContourError("phase not resolved along contour")
    return float(np.sum(_phase_steps(w)) / (2.0 * math.pi)), float(np.min(np.abs(w)) / max(scale, 1e-300))


def rect_path(r: Rect, n_side: int = 64) -> np.ndarray:
    c = r.corners() + [r.corners()[0]]
    segs = [np.linspace(c[i], c[i + 1], n_side, endpoint=False) for i in range(4)]
    return np.append(np.concatenate(segs), c[0])


def count_zeros(f, r: Rect, n_side: int = 64, df=None, **kw) -> int:
    """Number of zeros of ``f`` inside ``r`` (``f`` analytic, no poles)."""
    wind, _ = winding_along(f, rect_path(r, n_side), df=df, **kw)
    n = int(round(wind))
    if abs(wind - n) > 0.05:
        raise ContourError(f"non-integer winding {wind:.3f}")
    return n


def newton(f, df, z0: complex, tol: float = 1e-12, maxit: int = 60) -> complex:
    z = complex(z0)
    for _ in range(maxit):
        fz = complex(f(np.array([z]))[0])
        dz = fz / complex(df(np.array([z]))[0])
        z -= dz
        if abs(dz) <= tol * max(1.0, abs(z)):
            break
    return z


def find_zeros(f, df, r: Rect, count: int | None = None, min_size: float = 0.05,
               n_side: int = 32, depth: int = 0) -> list[complex]:
    """Locate every zero inside ``r`` by recursive bisection plus Newton."""
    if count is None:
        count = count_zeros(f, r, n_side, df=df)
    if count == 0:
        return []
    if count == 1 and (r.size <= 4 * min_size or depth > 30):
        z = newton(f, df, complex(0.5 * (r.x0 + r.x1), 0.5 * (r.y0 + r.y1)))
        if r.contains(z) or depth > 30:
            return [z]
    if r.size <= min_size * 1e-6:
        z = newton(f, df, complex(0.5 * (r.x0 + r.x1), 0.5 * (r.y0 + r.y1)))
        return [z] * count
    for frac in (0.5, 0.47, 0.53, 0.41):
        a, b = r.split(frac)
        try:
            ca = count_zeros(f, a, n_side, df=df)
            cb = count - ca
            break
        except ContourError:
            continue
    else:
        raise ContourError("could not split rectangle away from zeros")
    return (find_zeros(f, df, a, ca, min_size, n_side, depth + 1)
            + find_zeros(f, df, b, cb, min_size, n_side, depth + 1))
