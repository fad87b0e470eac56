"""Convex generation / procurement cost functions.

Two shapes are supported: a quadratic ``c2*P**2 + c1*P + c0`` with ``c2 >= 0``
and a convex piecewise-linear curve given by breakpoints.  Both expose the
pieces the dispatch solvers need: value, marginal cost, and the minimiser set of
the "net cost" ``C(P) - lam * P`` over an interval.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridkitError


@dataclass(frozen=True)
class CostFunction:
    c2: float = 0.0
    c1: float = 0.0
    c0: float = 0.0
    breakpoints: tuple[tuple[float, float], ...] | None = field(default=None)

    def __post_init__(self):
        if self.breakpoints is None:
            if self.c2 < 0:
                raise GridkitError(f"quadratic cost must be convex, got c2={self.c2}")
            return
        pts = tuple((float(p), float(c)) for p, c in self.breakpoints)
        if len(pts) < 2:
            raise GridkitError("piecewise-linear cost needs at least two breakpoints")
        xs = np.array([p for p, _ in pts])
        if np.any(np.diff(xs) <= 0):
            raise GridkitError("breakpoints must have strictly increasing power")
        slopes = np.diff([c for _, c in pts]) / np.diff(xs)
        if np.any(np.diff(slopes) < -1e-12):
            raise GridkitError("piecewise-linear cost is not convex (slopes decrease)")
        object.__setattr__(self, "breakpoints", pts)

    @classmethod
    def from_dict(cls, d: dict) -> "CostFunction":
        if "breakpoints" in d:
            return cls(breakpoints=tuple(tuple(bp) for bp in d["breakpoints"]))
        return cls(float(d.get("c2", 0.0)), float(d.get("c1", 0.0)), float(d.get("c0", 0.0)))

    def to_dict(self) -> dict:
        if self.breakpoints is not None:
            return {"breakpoints": [list(bp) for bp in self.breakpoints]}
        return {"c2": self.c2, "c1": self.c1, "c0": self.c0}

    @property
    def is_quadratic(self) -> bool:
        return self.breakpoints is None

    @property
    def segments(self) -> list[tuple[float, float, float, float]]:
        """(p_lo, p_hi, slope, intercept) for each linear piece."""
        out = []
        for (p0, c0), (p1, c1) in zip(self.breakpoints, self.breakpoints[1:]):
            slope = (c1 - c0) / (p1 - p0)
            out.append((p0, p1, slope, c0 - slope * p0))
        return out

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        if self.is_quadratic:
            return self.c2 * p * p + self.c1 * p + self.c0
        xs = np.array([bp[0] for bp in self.breakpoints])
        cs = np.array([bp[1] for bp in self.breakpoints])
        # linear extrapolation outside the breakpoint range
        slopes = np.diff(cs) / np.diff(xs)
        val = np.interp(p, xs, cs)
        val = np.where(p < xs[0], cs[0] + slopes[0] * (p - xs[0]), val)
        val = np.where(p > xs[-1], cs[-1] + slopes[-1] * (p - xs[-1]), val)
        return val

    def marginal(self, p: float) -> tuple[float, float]:
        """Left and right derivative at ``p`` (equal for smooth costs)."""
        if self.is_quadratic:
            d = 2 * self.c2 * p + self.c1
            return d, d
        segs = self.segments
        left = segs[0][2]
        right = segs[-1][2]
        for lo, hi, slope, _ in segs:
            if lo < p <= hi:
                left = slope
            if lo <= p < hi:
                right = slope
                break
        return left, right

    def net_argmin(self, lam: float, lo: float, hi: float) -> tuple[float, float]:
        """Smallest and largest minimiser of ``C(P) - lam*P`` on ``[lo, hi]``."""
        if hi <= lo:
            return lo, lo
        if self.is_quadratic:
            if self.c2 > 0:
                p = min(max((lam - self.c1) / (2 * self.c2), lo), hi)
                return p, p
            if lam > self.c1:
                return hi, hi
            if lam < self.c1:
                return lo, lo
            return lo, hi
        # convex PWL: minimisers are where the subdifferential contains lam
        pts = [lo] + [bp[0] for bp in self.breakpoints if lo < bp[0] < hi] + [hi]
        p_lo, p_hi = hi, lo
        for a, b in zip(pts, pts[1:]):
            slope = (float(self(b)) - float(self(a))) / (b - a) if b > a else 0.0
            if slope > lam:
                p_lo = min(p_lo, a)
                p_hi = max(p_hi, a)
                break
            if slope == lam:
                p_lo = min(p_lo, a)
                p_hi = max(p_hi, b)
            # slope < lam: keep moving right
        else:
            p_lo = min(p_lo, pts[-1])
            p_hi = max(p_hi, pts[-1])
        return p_lo, p_hi
