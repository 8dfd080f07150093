"""Method-of-steps integration of d/dt D x_t = f(x_t [, u(t)]).

The integrated quantity is z(t) = D x_t, which is continuously differentiable
between breakpoints; the state is reconstructed algebraically as
x(t) = z(t) + sum_j A_j x(t - Delta_j) from the dense store. A classical
4-stage explicit step advances z; delayed arguments always read the dense
store (cubic Hermite between accepted nodes, the initial history for t <= 0)
and never extrapolate. Breakpoints sum_j k_j Delta_j are inserted into the
mesh so derivative jumps stay aligned with step boundaries.
"""
from __future__ import annotations

import bisect
import heapq
from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError
from .histories import CUBIC, HistorySegment
from .operators import NfdeSystem, dop_apply, rhs_eval
from .signals import InputSignal

_BP_TOL = 1e-9


@dataclass(frozen=True)
class StepPolicy:
    """Fixed-step mesh parameters. step defaults to min positive delay / 8."""

    step: float | None = None
    breakpoint_limit: int = 20000
    blowup_bound: float = 1e12


def propagation_breakpoints(delays, horizon: float, limit: int = 20000, seeds=(0.0,)):
    """Sums seed + nonnegative integer multiples of the delays, up to horizon.

    Seeds below zero model derivative kinks inside the initial history; only
    the nonnegative part of their lattice is reported. Returns (breakpoints,
    truncated). Sums closer than 1e-9 are merged, which covers rationally
    commensurate delays; if the lattice has more than `limit` points below
    the horizon the enumeration stops and `truncated` is True (callers fall
    back to the plain mesh, reducing observed order).
    """
    delays = sorted({float(d) for d in delays if d > 0})
    out = []
    seen = set()
    heap = []
    for s in seeds:
        key = int(round(float(s) / _BP_TOL))
        if key not in seen:
            seen.add(key)
            heapq.heappush(heap, float(s))
    truncated = False
    while heap:
        v = heapq.heappop(heap)
        if v > horizon + _BP_TOL:
            break
        if v >= -_BP_TOL:
            out.append(max(v, 0.0))
            if len(out) > limit:
                truncated = True
                break
        for d in delays:
            w = v + d
            key = int(round(w / _BP_TOL))
            if w <= horizon + _BP_TOL and key not in seen:
                seen.add(key)
                heapq.heappush(heap, w)
    return np.asarray(out), truncated


def _build_mesh(step: float, horizon: float, anchors: np.ndarray) -> np.ndarray:
    anchors = np.unique(np.concatenate([[0.0], anchors]))
    anchors = anchors[(anchors >= 0.0) & (anchors < horizon - _BP_TOL)]
    keep = np.r_[True, np.diff(anchors) > _BP_TOL]
    anchors = np.append(anchors[keep], horizon)
    mesh = [np.array([0.0])]
    for a, b in zip(anchors[:-1], anchors[1:]):
        k = max(1, int(np.ceil((b - a) / step - 1e-12)))
        mesh.append(a + (b - a) * np.arange(1, k + 1) / k)
    return np.concatenate(mesh)


class _DenseStore:
    """Accepted knots of x and z with sided Hermite slopes for x."""

    def __init__(self, xi0: HistorySegment, n: int):
        self.xi0 = xi0
        self.n = n
        self.times: list[float] = []
        self.x: list[np.ndarray] = []
        self.z: list[np.ndarray] = []
        self.zdot_left: list[np.ndarray] = []
        self.zdot_right: list[np.ndarray] = []
        self.xdot_left: list[np.ndarray] = []
        self.xdot_right: list[np.ndarray] = []

    @property
    def _t_arr(self) -> np.ndarray:
        return np.asarray(self.times)

    def append(self, t, x, z, zdl, zdr, xdl, xdr):
        self.times.append(float(t))
        self.x.append(np.asarray(x, float))
        self.z.append(np.asarray(z, float))
        self.zdot_left.append(np.asarray(zdl, float))
        self.zdot_right.append(np.asarray(zdr, float))
        self.xdot_left.append(np.asarray(xdl, float))
        self.xdot_right.append(np.asarray(xdr, float))

    def set_last_slopes(self, zdl, zdr, xdl, xdr):
        self.zdot_left[-1] = np.asarray(zdl, float)
        self.zdot_right[-1] = np.asarray(zdr, float)
        self.xdot_left[-1] = np.asarray(xdl, float)
        self.xdot_right[-1] = np.asarray(xdr, float)

    def _interval(self, t: float) -> int:
        i = bisect.bisect_right(self.times, t) - 1
        return min(max(i, 0), len(self.times) - 2)

    def _hermite(self, i: int, t: float, want_deriv: bool, side: str):
        t0, t1 = self.times[i], self.times[i + 1]
        length = t1 - t0
        theta = (t - t0) / length
        y0, y1 = self.x[i], self.x[i + 1]
        m0 = self.xdot_right[i] * length
        m1 = self.xdot_left[i + 1] * length
        return _cubic(theta, y0, y1, m0, m1, length, want_deriv)

    def x_at(self, t: float) -> np.ndarray:
        if t <= 0.0:
            return self.xi0.eval_scalar(t)
        i = self._interval(t)
        if t == self.times[i]:
            return self.x[i]
        if t == self.times[i + 1]:
            return self.x[i + 1]
        return self._hermite(i, t, want_deriv=False, side="+")

    def xdot_at(self, t: float, side: str = "+") -> np.ndarray:
        if t < 0.0 or (t == 0.0 and side == "-"):
            return self.xi0.deriv(min(t, 0.0), side)
        if t == 0.0:
            return self.xdot_right[0]
        i = self._interval(t)
        if t == self.times[i]:
            return self.xdot_right[i] if side == "+" else self.xdot_left[i]
        if t == self.times[i + 1]:
            return self.xdot_left[i + 1] if side == "-" else self.xdot_right[i + 1]
        return self._hermite(i, t, want_deriv=True, side=side)

    def z_at(self, t: float) -> np.ndarray:
        if t < 0.0:
            raise PreconditionError("z is defined for t >= 0 only")
        i = self._interval(t)
        if t == self.times[i]:
            return self.z[i]
        if t == self.times[i + 1]:
            return self.z[i + 1]
        t0, t1 = self.times[i], self.times[i + 1]
        length = t1 - t0
        theta = (t - t0) / length
        return _cubic(
            theta,
            self.z[i],
            self.z[i + 1],
            self.zdot_right[i] * length,
            self.zdot_left[i + 1] * length,
            length,
            False,
        )


def _cubic(theta, y0, y1, m0, m1, length, want_deriv):
    t2 = theta * theta
    t3 = t2 * theta
    if want_deriv:
        d00 = 6.0 * t2 - 6.0 * theta
        d10 = 3.0 * t2 - 4.0 * theta + 1.0
        d01 = -d00
        d11 = 3.0 * t2 - 2.0 * theta
        return (d00 * y0 + d10 * m0 + d01 * y1 + d11 * m1) / length
    h00 = 2.0 * t3 - 3.0 * t2 + 1.0
    h10 = t3 - 2.0 * t2 + theta
    h01 = -2.0 * t3 + 3.0 * t2
    h11 = t3 - t2
    return h00 * y0 + h10 * m0 + h01 * y1 + h11 * m1


class _StageView:
    """History x_s seen by the right-hand side during a stage evaluation.

    Times at or before the anchor (last accepted node) read the dense store;
    the sliver (anchor, s] interpolates linearly to the stage tip. Only rhs
    delays shorter than one step ever read the sliver.
    """

    def __init__(self, store: _DenseStore, delta: float, tip_t: float, tip_x, anchor_t: float):
        self.store = store
        self.delta = delta
        self.tip_t = tip_t
        self.tip_x = np.asarray(tip_x, float)
        self.anchor_t = anchor_t
        self.anchor_x = store.x[-1]
        self.interp = CUBIC

    def _eval_scalar(self, tau: float) -> np.ndarray:
        t = self.tip_t + tau
        if t <= self.anchor_t:
            return self.store.x_at(t)
        if t >= self.tip_t or self.tip_t == self.anchor_t:
            return self.tip_x
        w = (t - self.anchor_t) / (self.tip_t - self.anchor_t)
        return (1.0 - w) * self.anchor_x + w * self.tip_x

    def eval(self, tau):
        if np.isscalar(tau) or np.ndim(tau) == 0:
            return self._eval_scalar(float(tau))
        taus = np.asarray(tau, dtype=float).ravel()
        out = np.empty((taus.size, self.store.n))
        for k, tv in enumerate(taus):
            out[k] = self._eval_scalar(float(tv))
        return out

    def quad_panels(self) -> np.ndarray:
        lo = self.tip_t - self.delta
        past = self.store.xi0.grid + 0.0
        past = past[(past >= lo) & (past <= 0.0)]
        accepted = self.store._t_arr
        accepted = accepted[(accepted >= lo) & (accepted <= self.anchor_t)]
        pts = np.concatenate([past, accepted, [self.anchor_t, self.tip_t]])
        taus = np.unique(np.clip(pts - self.tip_t, -self.delta, 0.0))
        return taus


@dataclass
class Trajectory:
    """Dense solution on [-Delta, t_end] plus the z = D x_t store."""

    system: NfdeSystem
    xi0: HistorySegment
    times: np.ndarray
    x: np.ndarray
    z: np.ndarray
    breakpoints: np.ndarray
    t_end: float
    blowup: bool
    order_reduced: bool
    input: InputSignal | None
    _store: _DenseStore = field(repr=False)

    def x_at(self, t):
        if np.ndim(t) == 0:
            return self._store.x_at(float(t))
        return np.stack([self._store.x_at(float(tv)) for tv in np.asarray(t).ravel()])

    def z_at(self, t):
        if np.ndim(t) == 0:
            return self._store.z_at(float(t))
        return self.z_dense(np.asarray(t, dtype=float).ravel())

    def z_dense(self, ts: np.ndarray) -> np.ndarray:
        """Vectorized Hermite evaluation of z on times in [0, t_end]."""
        times = self.times
        idx = np.clip(np.searchsorted(times, ts, side="right") - 1, 0, times.size - 2)
        length = times[idx + 1] - times[idx]
        theta = (ts - times[idx]) / length
        zdr = np.asarray(self._store.zdot_right)
        zdl = np.asarray(self._store.zdot_left)
        t2 = theta * theta
        t3 = t2 * theta
        h00 = 2.0 * t3 - 3.0 * t2 + 1.0
        h10 = t3 - 2.0 * t2 + theta
        h01 = -2.0 * t3 + 3.0 * t2
        h11 = t3 - t2
        ln = length[:, None]
        return (
            h00[:, None] * self.z[idx]
            + h10[:, None] * (zdr[idx] * ln)
            + h01[:, None] * self.z[idx + 1]
            + h11[:, None] * (zdl[idx + 1] * ln)
        )

    def xdot_at(self, t, side: str = "+"):
        return self._store.xdot_at(float(t), side)


def integrate(
    system: NfdeSystem,
    xi0: HistorySegment,
    horizon: float,
    step: StepPolicy | float | None = None,
    u: InputSignal | None = None,
) -> Trajectory:
    """Integrate the system from initial history xi0 over [0, horizon].

    The step must not exceed a quarter of the smallest positive delay, so
    that stage-time reconstructions only ever read already-accepted history.
    Non-finite or overflowing states truncate the trajectory with the blowup
    flag set rather than raising.
    """
    policy = step if isinstance(step, StepPolicy) else StepPolicy(step=step)
    if horizon <= 0.0:
        raise PreconditionError("horizon must be positive")
    if abs(xi0.delta - system.delta) > _BP_TOL * max(1.0, system.delta):
        raise PreconditionError(
            f"initial history horizon {xi0.delta} != system horizon {system.delta}"
        )
    if xi0.n != system.n:
        raise PreconditionError("initial history dimension disagrees with system")
    if system.m > 0 and u is None:
        u = InputSignal.zero(system.m)
    if system.m == 0 and u is not None:
        raise PreconditionError("input signal passed to an input-free system")
    min_delay = system.min_positive_delay()
    h = policy.step if policy.step is not None else min_delay / 8.0
    if h is None or h <= 0.0:
        raise PreconditionError("step must be positive")
    if h > min_delay / 4.0 + _BP_TOL:
        raise PreconditionError(
            f"step {h} exceeds min positive delay / 4 = {min_delay / 4.0}"
        )

    all_delays = list(system.dop.delays) + system.rhs.positive_delays()
    seeds = [0.0] + [float(s) for s in xi0.kink_times if s > -system.delta]
    bps, truncated = propagation_breakpoints(
        all_delays, horizon, policy.breakpoint_limit, seeds=seeds
    )
    anchors = bps if not truncated else np.array([0.0, horizon])
    if u is not None:
        anchors = np.concatenate([anchors, u.jump_times(horizon)])
    mesh = _build_mesh(h, horizon, anchors)

    dop = system.dop
    rhs = system.rhs
    store = _DenseStore(xi0, system.n)

    def recon(t: float, z_val: np.ndarray) -> np.ndarray:
        out = np.asarray(z_val, float).copy()
        for j in range(dop.p):
            out += dop.matrices[j] @ store.x_at(t - dop.delays[j])
        return out

    def delayed_slope_sum(t: float, side: str) -> np.ndarray:
        out = np.zeros(system.n)
        for j in range(dop.p):
            out += dop.matrices[j] @ store.xdot_at(t - dop.delays[j], side)
        return out

    def u_at(t: float, side: str = "+"):
        return u.eval(t, side) if u is not None else None

    def f_for(view, t: float, side: str = "+") -> np.ndarray:
        return rhs.eval(view, u_at(t, side))

    # seed node at t = 0
    z0 = dop_apply(dop, xi0)
    x0 = xi0.eval(0.0)
    zdr0 = rhs.eval(xi0, u_at(0.0, "+"))
    xdl0 = xi0.deriv(0.0, "-")
    store.append(0.0, x0, z0, zdr0, zdr0, xdl0, xdl0)
    xdr0 = zdr0 + delayed_slope_sum(0.0, "+")
    store.set_last_slopes(zdr0, zdr0, xdl0, xdr0)

    blowup = False
    u_jumps = set(np.round(u.jump_times(horizon) / _BP_TOL).astype(np.int64)) if u is not None else set()

    for i in range(mesh.size - 1):
        t = mesh[i]
        t_next = mesh[i + 1]
        hh = t_next - t
        z_cur = store.z[-1]
        k1 = store.zdot_right[-1]

        s_mid = t + 0.5 * hh
        z2 = z_cur + 0.5 * hh * k1
        k2 = f_for(_StageView(store, system.delta, s_mid, recon(s_mid, z2), t), s_mid)
        z3 = z_cur + 0.5 * hh * k2
        k3 = f_for(_StageView(store, system.delta, s_mid, recon(s_mid, z3), t), s_mid)
        z4 = z_cur + hh * k3
        # the step integrates the u-branch active on (t, t_next): left limit at t_next
        k4 = f_for(_StageView(store, system.delta, t_next, recon(t_next, z4), t), t_next, "-")

        z_new = z_cur + (hh / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        x_new = recon(t_next, z_new)
        mag2 = float(x_new @ x_new)
        if not np.isfinite(mag2) or mag2 > policy.blowup_bound**2:
            blowup = True
            break

        # provisional slopes from the last stage; refreshed right below
        tail_left = delayed_slope_sum(t_next, "-")
        store.append(t_next, x_new, z_new, k4, k4, k4 + tail_left, k4 + tail_left)

        node_view = _StageView(store, system.delta, t_next, x_new, t_next)
        zdr_new = f_for(node_view, t_next, "+")
        key = int(round(t_next / _BP_TOL))
        zdl_new = f_for(node_view, t_next, "-") if key in u_jumps else zdr_new
        xdl_new = zdl_new + tail_left
        xdr_new = zdr_new + delayed_slope_sum(t_next, "+")
        store.set_last_slopes(zdl_new, zdr_new, xdl_new, xdr_new)

    times = np.asarray(store.times)
    return Trajectory(
        system=system,
        xi0=xi0,
        times=times,
        x=np.asarray(store.x),
        z=np.asarray(store.z),
        breakpoints=bps[bps <= times[-1] + _BP_TOL],
        t_end=float(times[-1]),
        blowup=blowup,
        order_reduced=truncated,
        input=u,
        _store=store,
    )


def segment(traj: Trajectory, t: float) -> HistorySegment:
    """History of horizon Delta ending at time t, node-exact at store knots.

    Interior nodes carry right-sided slopes; a derivative kink strictly inside
    the window is therefore smoothed within its single mesh interval.
    """
    delta = traj.system.delta
    if t < -_BP_TOL or t > traj.t_end + _BP_TOL:
        raise PreconditionError(f"segment time {t} outside [0, {traj.t_end}]")
    t = min(max(t, 0.0), traj.t_end)
    if t == 0.0:
        return traj.xi0
    lo = t - delta
    knots = [lo]
    past = traj.xi0.grid + 0.0
    knots.extend(past[(past > lo) & (past < t)])
    pos = traj.times
    knots.extend(pos[(pos > lo) & (pos < t) & (pos > 0.0)])
    knots.append(t)
    grid = np.unique(np.asarray(knots))
    keep = np.r_[True, np.diff(grid) > _BP_TOL * max(1.0, delta)]
    grid = grid[keep]
    grid[-1] = t
    values = np.stack([traj._store.x_at(float(g)) for g in grid])
    slopes = np.empty_like(values)
    for k, g in enumerate(grid):
        side = "-" if k == grid.size - 1 else "+"
        slopes[k] = traj._store.xdot_at(float(g), side)
    return HistorySegment(delta, grid - t, values, CUBIC, slopes)


def residual_check(traj: Trajectory, sample_count: int = 50) -> float:
    """Max |centered difference of D x_t - f(x_t)| at midpoints between breakpoints.

    Candidate times keep at least two mesh steps away from every breakpoint;
    the centered difference of the dense z store is compared against a direct
    right-hand-side evaluation on the extracted segment.
    """
    if traj.blowup:
        raise PreconditionError("residual check on a blown-up trajectory")
    times = traj.times
    if times.size < 5:
        raise PreconditionError("trajectory too short for a residual check")
    h_local = np.min(np.diff(times))
    mids = 0.5 * (times[:-1] + times[1:])
    guard = 2.0 * h_local
    bps = np.concatenate([traj.breakpoints, [0.0, traj.t_end]])
    ok = np.array([np.min(np.abs(bps - tm)) >= guard for tm in mids])
    cand = mids[ok]
    if cand.size == 0:
        return 0.0
    sel = cand[np.unique(np.linspace(0, cand.size - 1, min(sample_count, cand.size)).astype(int))]
    worst = 0.0
    for tm in sel:
        d = min(h_local, 0.25 * guard)
        zdot_fd = (traj.z_at(tm + d) - traj.z_at(tm - d)) / (2.0 * d)
        fval = rhs_eval(
            traj.system.rhs,
            segment(traj, tm),
            traj.input.eval(tm) if traj.input is not None else None,
        )
        worst = max(worst, float(np.linalg.norm(zdot_fd - fval)))
    return worst
