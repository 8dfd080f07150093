"""Histories on [-delta, 0]: storage, interpolation, norms and random sampling.

A history is a continuous function phi: [-delta, 0] -> R^n represented by its
values on a strictly increasing grid with either piecewise-linear or
cubic-Hermite interpolation between nodes. Evaluation at grid nodes
reproduces the stored values exactly.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, PreconditionError

LINEAR = "linear"
CUBIC = "cubic-hermite"

_DOMAIN_TOL = 1e-9


def _hermite_basis(theta: np.ndarray):
    t2 = theta * theta
    t3 = t2 * theta
    h00 = 2.0 * t3 - 3.0 * t2 + 1.0
    h10 = t3 - 2.0 * t2 + theta
    h01 = -2.0 * t3 + 3.0 * t2
    h11 = t3 - t2
    return h00, h10, h01, h11


def _hermite_basis_deriv(theta: np.ndarray):
    t2 = theta * theta
    d00 = 6.0 * t2 - 6.0 * theta
    d10 = 3.0 * t2 - 4.0 * theta + 1.0
    d01 = -6.0 * t2 + 6.0 * theta
    d11 = 3.0 * t2 - 2.0 * theta
    return d00, d10, d01, d11


def fd_slopes(grid: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Node slopes from three-point finite differences, exact for quadratics."""
    n_nodes = grid.shape[0]
    if n_nodes == 2:
        d = (values[1] - values[0]) / (grid[1] - grid[0])
        return np.stack([d, d])
    h = np.diff(grid)
    d = np.diff(values, axis=0) / h[:, None]
    slopes = np.empty_like(values)
    hl, hr = h[:-1, None], h[1:, None]
    slopes[1:-1] = (d[:-1] * hr + d[1:] * hl) / (hl + hr)
    slopes[0] = ((2.0 * h[0] + h[1]) * d[0] - h[0] * d[1]) / (h[0] + h[1])
    slopes[-1] = ((2.0 * h[-1] + h[-2]) * d[-1] - h[-1] * d[-2]) / (h[-1] + h[-2])
    return slopes


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class HistorySegment:
    """A function [-delta, 0] -> R^n on a grid with interpolation.

    Immutable after construction; safe to share between threads. kink_times
    marks known derivative discontinuities inside [-delta, 0]; the integrator
    seeds its breakpoint propagation with them so steps never straddle a kink.
    """

    delta: float
    grid: np.ndarray
    values: np.ndarray
    interp: str = CUBIC
    slopes: np.ndarray | None = field(default=None)
    kink_times: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        delta = float(self.delta)
        if not delta > 0.0:
            raise PreconditionError(f"horizon must be positive, got {delta}")
        grid = np.asarray(self.grid, dtype=float).ravel()
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] != grid.shape[0]:
            raise DimensionError(
                f"values shape {values.shape} incompatible with grid of {grid.shape[0]} nodes"
            )
        if grid.shape[0] < 2:
            raise PreconditionError("grid needs at least the two endpoints")
        if not np.all(np.diff(grid) > 0):
            raise PreconditionError("grid must be strictly increasing")
        tol = _DOMAIN_TOL * max(1.0, delta)
        if abs(grid[0] + delta) > tol or abs(grid[-1]) > tol:
            raise PreconditionError(
                f"grid must span [-{delta}, 0], got [{grid[0]}, {grid[-1]}]"
            )
        grid = grid.copy()
        grid[0] = -delta
        grid[-1] = 0.0
        if not np.all(np.isfinite(values)):
            raise PreconditionError("history values must be finite")
        if self.interp not in (LINEAR, CUBIC):
            raise PreconditionError(f"unknown interpolation kind {self.interp!r}")
        slopes = self.slopes
        if self.interp == CUBIC:
            if slopes is None:
                slopes = fd_slopes(grid, values)
            else:
                slopes = np.asarray(slopes, dtype=float)
                if slopes.ndim == 1:
                    slopes = slopes[:, None]
                if slopes.shape != values.shape:
                    raise DimensionError("slopes shape must match values shape")
            object.__setattr__(self, "slopes", _freeze(slopes))
        else:
            object.__setattr__(self, "slopes", None)
        kinks = self.kink_times
        if kinks is None:
            kinks = np.empty(0)
        else:
            kinks = np.unique(np.asarray(kinks, dtype=float).ravel())
            kinks = kinks[(kinks >= -delta) & (kinks <= 0.0)]
        object.__setattr__(self, "kink_times", _freeze(kinks))
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "grid", _freeze(grid))
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "_grid_list", grid.tolist())

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def num_nodes(self) -> int:
        return self.grid.shape[0]

    def _locate(self, s: np.ndarray):
        tol = _DOMAIN_TOL * max(1.0, self.delta)
        if np.any(s < -self.delta - tol) or np.any(s > tol):
            raise PreconditionError(
                f"evaluation outside [-{self.delta}, 0]: range [{np.min(s)}, {np.max(s)}]"
            )
        s = np.clip(s, -self.delta, 0.0)
        idx = np.searchsorted(self.grid, s, side="right") - 1
        idx = np.clip(idx, 0, self.num_nodes - 2)
        length = self.grid[idx + 1] - self.grid[idx]
        theta = (s - self.grid[idx]) / length
        return idx, theta, length

    def eval(self, s) -> np.ndarray:
        """Value at s in [-delta, 0]; scalar s gives (n,), array (m,) gives (m, n)."""
        scalar = np.isscalar(s) or np.ndim(s) == 0
        if scalar:
            return self.eval_scalar(float(s))
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        idx, theta, length = self._locate(s_arr)
        y0 = self.values[idx]
        y1 = self.values[idx + 1]
        if self.interp == LINEAR:
            out = y0 + theta[:, None] * (y1 - y0)
        else:
            h00, h10, h01, h11 = _hermite_basis(theta)
            m0 = self.slopes[idx] * length[:, None]
            m1 = self.slopes[idx + 1] * length[:, None]
            out = (
                h00[:, None] * y0
                + h10[:, None] * m0
                + h01[:, None] * y1
                + h11[:, None] * m1
            )
        return out[0] if scalar else out

    def eval_scalar(self, s: float) -> np.ndarray:
        """Fast scalar-time evaluation (same result as eval)."""
        s = float(s)
        tol = _DOMAIN_TOL * max(1.0, self.delta)
        if s < -self.delta - tol or s > tol:
            raise PreconditionError(f"evaluation outside [-{self.delta}, 0]: {s}")
        s = min(max(s, -self.delta), 0.0)
        gl = self._grid_list
        i = bisect.bisect_right(gl, s) - 1
        i = min(max(i, 0), len(gl) - 2)
        length = gl[i + 1] - gl[i]
        theta = (s - gl[i]) / length
        y0 = self.values[i]
        y1 = self.values[i + 1]
        if self.interp == LINEAR:
            return y0 + theta * (y1 - y0)
        t2 = theta * theta
        t3 = t2 * theta
        return (
            (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + theta) * (self.slopes[i] * length)
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * (self.slopes[i + 1] * length)
        )

    def deriv_scalar(self, s: float, side: str = "+") -> np.ndarray:
        """Fast scalar-time derivative (same result as deriv)."""
        s = float(s)
        s = min(max(s, -self.delta), 0.0)
        gl = self._grid_list
        i = bisect.bisect_right(gl, s) - 1
        i = min(max(i, 0), len(gl) - 2)
        if side == "-" and i > 0 and s == gl[i]:
            i -= 1
        length = gl[i + 1] - gl[i]
        theta = (s - gl[i]) / length
        y0, y1 = self.values[i], self.values[i + 1]
        if self.interp == LINEAR:
            return (y1 - y0) / length
        t2 = theta * theta
        m0 = self.slopes[i] * length
        m1 = self.slopes[i + 1] * length
        return (
            (6.0 * t2 - 6.0 * theta) * y0
            + (3.0 * t2 - 4.0 * theta + 1.0) * m0
            + (-6.0 * t2 + 6.0 * theta) * y1
            + (3.0 * t2 - 2.0 * theta) * m1
        ) / length

    def deriv(self, s, side: str = "+") -> np.ndarray:
        """Interpolant derivative at s. `side` picks the branch at interior nodes
        (relevant for linear interpolation, where the slope jumps at nodes)."""
        scalar = np.isscalar(s) or np.ndim(s) == 0
        if scalar:
            return self.deriv_scalar(float(s), side)
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        idx, theta, length = self._locate(s_arr)
        if side == "-":
            at_node = (theta == 0.0) & (idx > 0)
            idx = np.where(at_node, idx - 1, idx)
            length = self.grid[idx + 1] - self.grid[idx]
            theta = (s_arr.clip(-self.delta, 0.0) - self.grid[idx]) / length
        y0 = self.values[idx]
        y1 = self.values[idx + 1]
        if self.interp == LINEAR:
            out = (y1 - y0) / length[:, None]
        else:
            d00, d10, d01, d11 = _hermite_basis_deriv(theta)
            m0 = self.slopes[idx] * length[:, None]
            m1 = self.slopes[idx + 1] * length[:, None]
            out = (
                d00[:, None] * y0
                + d10[:, None] * m0
                + d01[:, None] * y1
                + d11[:, None] * m1
            ) / length[:, None]
        return out[0] if scalar else out

    def quad_panels(self) -> np.ndarray:
        """Panel boundaries for quadrature against this history."""
        return self.grid

    def refined_grid(self, refine: int = 10) -> np.ndarray:
        pieces = [self.grid]
        for k in range(1, refine):
            frac = k / refine
            pieces.append(self.grid[:-1] + frac * np.diff(self.grid))
        return np.sort(np.concatenate(pieces))

    def sup_norm(self, refine: int = 10) -> float:
        """Sup of |phi(s)| (Euclidean) estimated on a `refine`-times finer grid."""
        pts = self.eval(self.refined_grid(refine))
        return float(np.max(np.linalg.norm(pts, axis=1)))

    @classmethod
    def constant(cls, value, delta: float, interp: str = CUBIC) -> "HistorySegment":
        v = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(delta, np.array([-delta, 0.0]), np.stack([v, v]), interp)

    @classmethod
    def zero(cls, n: int, delta: float, interp: str = CUBIC) -> "HistorySegment":
        return cls.constant(np.zeros(n), delta, interp)

    @classmethod
    def from_function(
        cls, fn, delta: float, num: int = 33, interp: str = CUBIC
    ) -> "HistorySegment":
        grid = np.linspace(-delta, 0.0, num)
        values = np.stack([np.atleast_1d(np.asarray(fn(s), dtype=float)) for s in grid])
        return cls(delta, grid, values, interp)


def combine(a: float, phi: HistorySegment, b: float, psi: HistorySegment) -> HistorySegment:
    """a*phi + b*psi sampled on the union grid of the two operands."""
    if abs(phi.delta - psi.delta) > _DOMAIN_TOL * max(1.0, phi.delta):
        raise PreconditionError("histories must share the same horizon")
    if phi.n != psi.n:
        raise DimensionError("histories must share the same dimension")
    grid = np.union1d(phi.grid, psi.grid)
    values = a * phi.eval(grid) + b * psi.eval(grid)
    interp = CUBIC if CUBIC in (phi.interp, psi.interp) else LINEAR
    return HistorySegment(phi.delta, grid, values, interp)


def sup_norm_diff(phi: HistorySegment, psi: HistorySegment, refine: int = 10) -> float:
    """Sup-norm of phi - psi on the refined union grid."""
    grid = np.union1d(phi.refined_grid(refine), psi.refined_grid(refine))
    diff = phi.eval(grid) - psi.eval(grid)
    return float(np.max(np.linalg.norm(diff, axis=1)))


def sample_history(
    n: int, delta: float, bound: float, roughness: int, seed: int
) -> HistorySegment:
    """Draw a random history with sup-norm <= bound, deterministic per seed.

    roughness 0 always yields a constant history. For roughness >= 1 the draw
    mixes constants, random piecewise-cubic profiles and truncated Fourier
    series with decaying coefficients; the result is rescaled so that its
    sup-norm (measured on a 20x refined grid) lands in (0, bound].
    """
    if bound <= 0.0:
        raise PreconditionError("bound must be positive")
    if roughness < 0:
        raise PreconditionError("roughness must be >= 0")
    rng = np.random.default_rng(seed)
    amplitude = bound * rng.uniform(0.3, 1.0)
    if roughness == 0:
        direction = rng.standard_normal(n)
        direction /= max(np.linalg.norm(direction), 1e-300)
        return HistorySegment.constant(amplitude * direction, delta)

    kind = rng.choice(["constant", "fourier", "piecewise-cubic"], p=[0.15, 0.45, 0.4])
    if kind == "constant":
        direction = rng.standard_normal(n)
        direction /= max(np.linalg.norm(direction), 1e-300)
        return HistorySegment.constant(amplitude * direction, delta)

    num = max(17, 8 * roughness + 1)
    grid = np.linspace(-delta, 0.0, num)
    if kind == "fourier":
        values = np.zeros((num, n))
        values += rng.standard_normal(n)[None, :]
        for k in range(1, roughness + 1):
            decay = 1.0 / (1.0 + k * k)
            phase = 2.0 * np.pi * k * (grid + delta) / delta
            values += decay * np.outer(np.cos(phase), rng.standard_normal(n))
            values += decay * np.outer(np.sin(phase), rng.standard_normal(n))
        seg = HistorySegment(delta, grid, values)
    else:
        knots = np.linspace(-delta, 0.0, roughness + 2)
        kv = rng.standard_normal((roughness + 2, n))
        ks = rng.standard_normal((roughness + 2, n)) / delta
        seg = HistorySegment(delta, knots, kv, CUBIC, ks)
        seg = HistorySegment(delta, grid, seg.eval(grid), CUBIC)

    sup = seg.sup_norm(refine=20)
    if sup < 1e-300:
        return HistorySegment.zero(n, delta)
    scale = amplitude / sup
    return HistorySegment(delta, grid, seg.values * scale, CUBIC, seg.slopes * scale)
