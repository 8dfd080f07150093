"""Certificate verification, constant fitting, and empirical stability probes.

Sampling-based checks of the certificate inequalities

    gas:           alpha1(|D phi|) <= V(phi) <= alpha2(||phi||),
                   D+V(phi) <= -alpha3(|D phi|)
    ges:           a1 |D phi| <= V(phi) <= a2 ||phi||,
                   D+V(phi) <= -a3 V(phi)
    ges-seminorm:  a1 |D phi| <= V(phi) <= a2 ||phi||_a,
                   D+V(phi) <= -a3 ||phi||_a,  ||phi||_a <= a4 ||phi||

over histories drawn from nested sup-norm shells. Derivative conditions are
judged against the ladder error band: a sample only counts as a violation
when the whole band sits on the wrong side, bands straddling the threshold
are counted as inconclusive. Verdicts are therefore certificates of
non-falsification, not proofs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .comparison import ComparisonFunction, K, K_INF, TAIL_EXTRAPOLATE, monotone_envelope
from .errors import EvaluationBlowupError, FitImpossibleError, PreconditionError
from .functionals import (
    DerivativeEstimate,
    Functional,
    LadderSpec,
    SemiNorm,
    driver_derivative,
)
from .histories import HistorySegment, sample_history, sup_norm_diff
from .integrate import StepPolicy, Trajectory, integrate
from .operators import NfdeSystem, dop_apply, rhs_eval
from .signals import InputSignal

DEFAULT_SHELLS = (0.1, 1.0, 10.0)
_SLACK = 1e-9


# -- certificate data ------------------------------------------------------------

@dataclass(frozen=True)
class CertificateConstants:
    """Witness constants for one certificate variant.

    variant "gas" uses alpha1/alpha2 (class K-infinity) and alpha3 (class K);
    "ges" uses positive reals a1, a2, a3; "ges-seminorm" adds a4 and a
    semi-norm reference.
    """

    variant: str
    a1: float | None = None
    a2: float | None = None
    a3: float | None = None
    a4: float | None = None
    alpha1: ComparisonFunction | None = None
    alpha2: ComparisonFunction | None = None
    alpha3: ComparisonFunction | None = None
    seminorm: SemiNorm | None = None

    def __post_init__(self):
        if self.variant == "gas":
            for name in ("alpha1", "alpha2", "alpha3"):
                if getattr(self, name) is None:
                    raise PreconditionError(f"gas variant needs {name}")
            if self.alpha1.kind != K_INF or self.alpha2.kind != K_INF:
                raise PreconditionError("alpha1 and alpha2 must be class K-infinity")
            if self.alpha3.kind not in (K, K_INF):
                raise PreconditionError("alpha3 must be class K")
        elif self.variant == "ges":
            if any(v is None or v <= 0 for v in (self.a1, self.a2, self.a3)):
                raise PreconditionError("ges variant needs positive a1, a2, a3")
        elif self.variant == "ges-seminorm":
            if any(v is None or v <= 0 for v in (self.a1, self.a2, self.a3, self.a4)):
                raise PreconditionError("ges-seminorm needs positive a1..a4")
            if self.seminorm is None:
                raise PreconditionError("ges-seminorm needs a semi-norm")
        else:
            raise PreconditionError(f"unknown certificate variant {self.variant!r}")


@dataclass
class ConditionStats:
    name: str
    checked: int = 0
    violations: int = 0
    inconclusive: int = 0
    worst_margin: float = -np.inf  # max of lhs - rhs; positive means violated


@dataclass
class Counterexample:
    condition: str
    history: HistorySegment
    details: dict = field(default_factory=dict)


@dataclass
class CertificateReport:
    samples_checked: int = 0
    conditions: list[ConditionStats] = field(default_factory=list)
    counterexamples: list[Counterexample] = field(default_factory=list)
    fitted: CertificateConstants | None = None
    lipschitz_estimate: float | None = None
    failure: str | None = None
    margins: list[dict] = field(default_factory=list)

    @property
    def violations(self) -> int:
        return sum(c.violations for c in self.conditions)

    @property
    def inconclusive(self) -> int:
        return sum(c.inconclusive for c in self.conditions)

    @property
    def passed(self) -> bool:
        return self.failure is None and self.violations == 0

    def stats(self, name: str) -> ConditionStats:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)


class _Check:
    """One inequality lhs <= rhs with an optional +/- band on the lhs."""

    def __init__(self, report: CertificateReport, name: str, max_counterexamples: int = 10):
        self.stats = ConditionStats(name)
        report.conditions.append(self.stats)
        self.report = report
        self.cap = max_counterexamples

    def record(self, phi: HistorySegment, lhs: float, rhs: float, band: float = 0.0, details=None):
        self.stats.checked += 1
        slack = _SLACK * max(1.0, abs(lhs), abs(rhs))
        margin = lhs - rhs
        self.stats.worst_margin = max(self.stats.worst_margin, margin - band)
        if lhs - band > rhs + slack:
            self.stats.violations += 1
            if len(self.report.counterexamples) < self.cap:
                info = {"lhs": lhs, "rhs": rhs, "band": band}
                info.update(details or {})
                self.report.counterexamples.append(
                    Counterexample(self.stats.name, phi, info)
                )
            return "violation"
        if lhs + band > rhs + slack:
            self.stats.inconclusive += 1
            return "inconclusive"
        return "pass"


def sample_shells(
    n: int,
    delta: float,
    per_shell: int,
    seed: int,
    shells=DEFAULT_SHELLS,
    max_roughness: int = 4,
    include_boundary: bool = True,
) -> list[HistorySegment]:
    """Histories over nested sup-norm shells, deterministic per seed.

    Seeds partition as seed + i so batches can be split across workers. When
    `include_boundary` is set, each shell starts with constant histories
    pinned at the shell radius (the worst case for several estimates).
    """
    out = []
    counter = 0
    for shell in shells:
        if include_boundary:
            rng = np.random.default_rng(seed + counter)
            direction = rng.standard_normal(n)
            direction /= max(np.linalg.norm(direction), 1e-300)
            out.append(HistorySegment.constant(shell * direction, delta))
            counter += 1
        for k in range(per_shell - (1 if include_boundary else 0)):
            roughness = k % (max_roughness + 1)
            out.append(sample_history(n, delta, shell, roughness, seed + counter))
            counter += 1
    return out


def _derivative(system, V, phi, ladder, u=None) -> DerivativeEstimate:
    return driver_derivative(system, V, phi, u, ladder)


# -- condition verification -------------------------------------------------------

def verify_gas_conditions(
    system: NfdeSystem,
    V: Functional,
    constants: CertificateConstants,
    samples: list[HistorySegment],
    ladder: LadderSpec = LadderSpec(),
) -> CertificateReport:
    """Check the asymptotic-stability certificate conditions on a sample set."""
    if constants.variant != "gas":
        raise PreconditionError("verify_gas_conditions needs gas-variant constants")
    report = CertificateReport(samples_checked=len(samples))
    lower = _Check(report, "lower-bound")
    upper = _Check(report, "upper-bound")
    decay = _Check(report, "derivative")
    for phi in samples:
        dnorm = float(np.linalg.norm(dop_apply(system.dop, phi)))
        sup = phi.sup_norm()
        v = V(phi)
        lower.record(phi, float(constants.alpha1(dnorm)), v, details={"|Dphi|": dnorm})
        upper.record(phi, v, float(constants.alpha2(sup)), details={"sup": sup})
        est = _derivative(system, V, phi, ladder)
        decay.record(
            phi,
            est.value,
            -float(constants.alpha3(dnorm)),
            band=est.error_band,
            details={"|Dphi|": dnorm, "V": v},
        )
        report.margins.append(
            {"|Dphi|": dnorm, "sup": sup, "V": v, "D+V": est.value, "band": est.error_band}
        )
    return report


def verify_ges_conditions(
    system: NfdeSystem,
    V: Functional,
    constants: CertificateConstants,
    samples: list[HistorySegment],
    ladder: LadderSpec = LadderSpec(),
) -> CertificateReport:
    """Check the exponential-stability certificate conditions on a sample set.

    Also estimates a global Lipschitz constant for V from difference quotients
    across all shells and reports it alongside the verdicts.
    """
    if constants.variant != "ges":
        raise PreconditionError("verify_ges_conditions needs ges-variant constants")
    report = CertificateReport(samples_checked=len(samples))
    lower = _Check(report, "lower-bound")
    upper = _Check(report, "upper-bound")
    decay = _Check(report, "derivative")
    vvals = []
    for phi in samples:
        dnorm = float(np.linalg.norm(dop_apply(system.dop, phi)))
        sup = phi.sup_norm()
        v = V(phi)
        vvals.append(v)
        lower.record(phi, constants.a1 * dnorm, v, details={"|Dphi|": dnorm})
        upper.record(phi, v, constants.a2 * sup, details={"sup": sup})
        est = _derivative(system, V, phi, ladder)
        decay.record(
            phi,
            est.value,
            -constants.a3 * v,
            band=est.error_band,
            details={"V": v},
        )
        report.margins.append(
            {"|Dphi|": dnorm, "sup": sup, "V": v, "D+V": est.value, "band": est.error_band}
        )
    lip = 0.0
    for i in range(len(samples) - 1):
        gap = sup_norm_diff(samples[i], samples[i + 1])
        if gap > 1e-9:
            lip = max(lip, abs(vvals[i] - vvals[i + 1]) / gap)
    report.lipschitz_estimate = lip
    return report


def verify_ges_seminorm(
    system: NfdeSystem,
    V: Functional,
    seminorm: SemiNorm,
    constants: CertificateConstants,
    samples: list[HistorySegment],
    ladder: LadderSpec = LadderSpec(),
) -> CertificateReport:
    """Check the semi-norm certificate variant (three conditions per sample)."""
    if constants.variant != "ges-seminorm":
        raise PreconditionError("verify_ges_seminorm needs ges-seminorm constants")
    report = CertificateReport(samples_checked=len(samples))
    lower = _Check(report, "lower-bound")
    upper = _Check(report, "upper-bound")
    decay = _Check(report, "derivative")
    domination = _Check(report, "domination")
    for phi in samples:
        dnorm = float(np.linalg.norm(dop_apply(system.dop, phi)))
        sup = phi.sup_norm()
        a_norm = float(seminorm(phi))
        v = V(phi)
        lower.record(phi, constants.a1 * dnorm, v, details={"|Dphi|": dnorm})
        upper.record(phi, v, constants.a2 * a_norm, details={"seminorm": a_norm})
        est = _derivative(system, V, phi, ladder)
        decay.record(phi, est.value, -constants.a3 * a_norm, band=est.error_band)
        domination.record(phi, a_norm, constants.a4 * sup, details={"sup": sup})
        report.margins.append(
            {"|Dphi|": dnorm, "sup": sup, "seminorm": a_norm, "V": v,
             "D+V": est.value, "band": est.error_band}
        )
    return report


def reverify_counterexample(
    system: NfdeSystem,
    V: Functional,
    constants: CertificateConstants,
    ce: Counterexample,
    ladder: LadderSpec = LadderSpec(),
    seminorm: SemiNorm | None = None,
) -> bool:
    """Re-evaluate the violated condition on the stored history."""
    phi = ce.history
    dnorm = float(np.linalg.norm(dop_apply(system.dop, phi)))
    sup = phi.sup_norm()
    v = V(phi)
    slack = lambda a, b: _SLACK * max(1.0, abs(a), abs(b))
    if ce.condition == "lower-bound":
        if constants.variant == "gas":
            lhs = float(constants.alpha1(dnorm))
        else:
            lhs = constants.a1 * dnorm
        return lhs > v + slack(lhs, v)
    if ce.condition == "upper-bound":
        if constants.variant == "gas":
            rhs = float(constants.alpha2(sup))
        elif constants.variant == "ges-seminorm":
            rhs = constants.a2 * float((seminorm or constants.seminorm)(phi))
        else:
            rhs = constants.a2 * sup
        return v > rhs + slack(v, rhs)
    if ce.condition == "derivative":
        est = _derivative(system, V, phi, ladder)
        if constants.variant == "gas":
            rhs = -float(constants.alpha3(dnorm))
        elif constants.variant == "ges-seminorm":
            rhs = -constants.a3 * float((seminorm or constants.seminorm)(phi))
        else:
            rhs = -constants.a3 * v
        return est.value - est.error_band > rhs + slack(est.value, rhs)
    if ce.condition == "domination":
        a_norm = float((seminorm or constants.seminorm)(phi))
        rhs = constants.a4 * sup
        return a_norm > rhs + slack(a_norm, rhs)
    raise PreconditionError(f"unknown condition {ce.condition!r}")


# -- constant fitting --------------------------------------------------------------

@dataclass
class FitResult:
    constants: CertificateConstants | None
    report: CertificateReport

    @property
    def ok(self) -> bool:
        return self.constants is not None


def _report_from_rows(constants: CertificateConstants, rows) -> CertificateReport:
    """Re-check the fitted conditions on the cached per-sample evaluations."""
    report = CertificateReport(samples_checked=len(rows))
    report.fitted = constants
    lower = _Check(report, "lower-bound")
    upper = _Check(report, "upper-bound")
    decay = _Check(report, "derivative")
    domination = _Check(report, "domination") if constants.variant == "ges-seminorm" else None
    for phi, dnorm, sup, v, est, a_norm in rows:
        if constants.variant == "gas":
            lower.record(phi, float(constants.alpha1(dnorm)), v)
            upper.record(phi, v, float(constants.alpha2(sup)))
            decay.record(phi, est.value, -float(constants.alpha3(dnorm)), band=est.error_band)
        elif constants.variant == "ges":
            lower.record(phi, constants.a1 * dnorm, v)
            upper.record(phi, v, constants.a2 * sup)
            decay.record(phi, est.value, -constants.a3 * v, band=est.error_band)
        else:
            lower.record(phi, constants.a1 * dnorm, v)
            upper.record(phi, v, constants.a2 * (a_norm or 0.0))
            decay.record(phi, est.value, -constants.a3 * (a_norm or 0.0), band=est.error_band)
            domination.record(phi, a_norm or 0.0, constants.a4 * sup)
        report.margins.append(
            {"|Dphi|": dnorm, "sup": sup, "V": v, "D+V": est.value, "band": est.error_band}
        )
    return report


def fit_constants(
    system: NfdeSystem,
    V: Functional,
    variant: str,
    samples: list[HistorySegment],
    ladder: LadderSpec = LadderSpec(),
    seminorm: SemiNorm | None = None,
    headroom: float = 0.01,
    dop_norm_floor: float = 1e-8,
) -> FitResult:
    """Fit witness constants from sample envelopes, then re-verify on them.

    The raw envelopes (min of V / |D phi|, max of V / ||phi||, min of
    -D+V / V over band-definite samples) are relaxed by `headroom` in the
    safe direction so the fitted certificate is robust out of sample;
    headroom 0 recovers the exact envelopes. Returns constants None with a
    failure report when a derivative has the wrong definite sign, and raises
    when no admissible sample remains after filtering.
    """
    if variant not in ("gas", "ges", "ges-seminorm"):
        raise PreconditionError(f"unknown certificate variant {variant!r}")
    if variant == "ges-seminorm" and seminorm is None:
        raise PreconditionError("ges-seminorm fitting needs a semi-norm")
    rows = []
    for phi in samples:
        dnorm = float(np.linalg.norm(dop_apply(system.dop, phi)))
        sup = phi.sup_norm()
        v = V(phi)
        est = _derivative(system, V, phi, ladder)
        a_norm = float(seminorm(phi)) if seminorm is not None else None
        rows.append((phi, dnorm, sup, v, est, a_norm))

    failure = None
    for phi, dnorm, sup, v, est, a_norm in rows:
        denom = v if variant != "ges-seminorm" else (a_norm or 0.0)
        if denom > dop_norm_floor and est.value - est.error_band > 0.0:
            failure = "derivative has the wrong sign on a sample"
            break
    if failure is not None:
        report = CertificateReport(samples_checked=len(samples), failure=failure)
        bad = [r for r in rows if r[4].value - r[4].error_band > 0.0]
        for phi, dnorm, sup, v, est, a_norm in bad[:10]:
            report.counterexamples.append(
                Counterexample(
                    "derivative",
                    phi,
                    {"lhs": est.value, "rhs": 0.0, "band": est.error_band, "V": v},
                )
            )
        stats = ConditionStats("derivative", checked=len(rows), violations=len(bad))
        report.conditions.append(stats)
        return FitResult(None, report)

    lo = 1.0 - headroom
    hi = 1.0 + headroom
    if variant == "ges" or variant == "ges-seminorm":
        r1 = [v / d for _, d, _, v, _, _ in rows if d > dop_norm_floor]
        if not r1:
            raise FitImpossibleError("no sample with |D phi| above the floor")
        a1 = lo * min(r1)
        if variant == "ges":
            r2 = [v / s for _, _, s, v, _, _ in rows if s > dop_norm_floor]
            r3 = [
                -(e.value + e.error_band) / v
                for _, _, _, v, e, _ in rows
                if v > dop_norm_floor and e.value + e.error_band < 0.0
            ]
        else:
            r2 = [v / a for _, _, _, v, _, a in rows if a > dop_norm_floor]
            r3 = [
                -(e.value + e.error_band) / a
                for _, _, _, _, e, a in rows
                if a > dop_norm_floor and e.value + e.error_band < 0.0
            ]
        if not r2 or not r3:
            raise FitImpossibleError("no admissible sample for a2 or a3 after filtering")
        a2 = hi * max(r2)
        a3 = lo * min(r3)
        if a1 <= 0.0 or a3 <= 0.0:
            report = CertificateReport(samples_checked=len(samples), failure="nonpositive fitted constant")
            return FitResult(None, report)
        if variant == "ges":
            constants = CertificateConstants("ges", a1=a1, a2=a2, a3=a3)
        else:
            r4 = [a / s for _, _, s, _, _, a in rows if s > dop_norm_floor]
            a4 = hi * max(r4) if r4 else seminorm.domination_constant()
            constants = CertificateConstants(
                "ges-seminorm", a1=a1, a2=a2, a3=a3, a4=a4, seminorm=seminorm
            )
        return FitResult(constants, _report_from_rows(constants, rows))

    # gas variant: monotone piecewise-linear envelopes of the sampled clouds
    d_arr = np.array([d for _, d, _, _, _, _ in rows])
    s_arr = np.array([s for _, _, s, _, _, _ in rows])
    v_arr = np.array([v for _, _, _, v, _, _ in rows])
    neg = np.array([-(r[4].value + r[4].error_band) for r in rows])
    keep = d_arr > dop_norm_floor
    if not np.any(keep):
        raise FitImpossibleError("no sample with |D phi| above the floor")
    if np.any(neg[keep] < 0.0):
        # indefinite derivative samples already handled above via the band;
        # clamp at zero so the envelope stays admissible
        neg = np.maximum(neg, 0.0)
    try:
        alpha1 = monotone_envelope(
            d_arr[keep], v_arr[keep], "lower", headroom, kind=K_INF, tail=TAIL_EXTRAPOLATE
        )
        alpha2 = monotone_envelope(
            s_arr, v_arr, "upper", headroom, kind=K_INF, tail=TAIL_EXTRAPOLATE
        )
        alpha3 = monotone_envelope(d_arr[keep], neg[keep], "lower", headroom, kind=K)
    except PreconditionError as exc:
        report = CertificateReport(samples_checked=len(samples), failure=str(exc))
        return FitResult(None, report)
    constants = CertificateConstants("gas", alpha1=alpha1, alpha2=alpha2, alpha3=alpha3)
    return FitResult(constants, _report_from_rows(constants, rows))


# -- empirical stability estimation -------------------------------------------------

@dataclass
class GesEstimate:
    M: float
    lam: float
    fit_residual: float
    trajectories_used: int
    is_ges: bool
    counterexample: HistorySegment | None = None
    note: str = ""

    def bound(self, sup_xi0: float, t) -> np.ndarray:
        return self.M * sup_xi0 * np.exp(-self.lam * np.asarray(t))


def _envelope_slope(traj: Trajectory, t_lo: float, t_hi: float, windows: int = 8):
    """Least-squares slope of log |x| window maxima over [t_lo, t_hi]."""
    mask = (traj.times >= t_lo) & (traj.times <= t_hi)
    ts = traj.times[mask]
    mags = np.linalg.norm(traj.x[mask], axis=1)
    if ts.size < windows:
        return None
    edges = np.linspace(t_lo, t_hi, windows + 1)
    pts_t, pts_v = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        sel = (ts >= a) & (ts <= b)
        if not np.any(sel):
            continue
        k = int(np.argmax(mags[sel]))
        pts_t.append(ts[sel][k])
        pts_v.append(mags[sel][k])
    pts_t = np.asarray(pts_t)
    pts_v = np.asarray(pts_v)
    floor = 1e-14 * max(1.0, float(np.max(mags))) + 1e-300
    good = pts_v > floor
    if np.sum(good) < 3:
        return None
    coeffs = np.polyfit(pts_t[good], np.log(pts_v[good]), 1)
    resid = float(
        np.max(np.abs(np.polyval(coeffs, pts_t[good]) - np.log(pts_v[good])))
    )
    return float(coeffs[0]), resid


def estimate_ges(
    system: NfdeSystem,
    seeds: int | list[HistorySegment] = 20,
    horizon: float = 10.0,
    step: StepPolicy | float | None = None,
    seed: int = 0,
    shells=(0.1, 1.0),
) -> GesEstimate:
    """Estimate exponential decay (M, lambda) from simulated trajectories.

    lambda is the median of per-trajectory log-envelope slopes over the second
    half of the horizon; M is the exact envelope max of |x(t)| e^(lambda t) /
    ||xi0|| over all runs (so the fitted bound holds on them by construction)
    clamped to at least 1. Blowup or a nonpositive decay rate yields a
    not-GES verdict with the escaping history attached.
    """
    if isinstance(seeds, int):
        if seeds < 1:
            raise PreconditionError("need at least one trajectory")
        per_shell = max(1, int(np.ceil(seeds / len(shells))))
        samples = sample_shells(system.n, system.delta, per_shell, seed, shells)[:seeds]
    else:
        samples = list(seeds)
    trajs: list[Trajectory] = []
    for xi0 in samples:
        traj = integrate(system, xi0, horizon, step=step)
        if traj.blowup:
            return GesEstimate(
                np.inf, -np.inf, np.inf, len(trajs) + 1, False, xi0,
                note=f"blowup at t = {traj.t_end}",
            )
        trajs.append(traj)
    slopes, resids = [], []
    for traj in trajs:
        fit = _envelope_slope(traj, horizon / 2.0, horizon)
        if fit is not None:
            slopes.append(fit[0])
            resids.append(fit[1])
    if not slopes:
        return GesEstimate(np.inf, 0.0, np.inf, len(trajs), False, None,
                           note="no trajectory admitted an envelope fit")
    lam = -float(np.median(slopes))
    if lam <= 0.0:
        worst = max(
            range(len(trajs)),
            key=lambda i: np.max(np.linalg.norm(trajs[i].x, axis=1))
            / max(samples[i].sup_norm(), 1e-300),
        )
        return GesEstimate(
            np.inf, lam, float(np.max(resids)), len(trajs), False, samples[worst],
            note="fitted decay rate is not positive",
        )
    big_m = 1.0
    for xi0, traj in zip(samples, trajs):
        sup0 = xi0.sup_norm()
        if sup0 < 1e-300:
            continue
        ratio = np.linalg.norm(traj.x, axis=1) * np.exp(lam * traj.times) / sup0
        big_m = max(big_m, float(np.max(ratio)))
    return GesEstimate(big_m, lam, float(np.max(resids)), len(trajs), True)


@dataclass
class AttractionResult:
    settle_time: float | None
    delta_hat: float | None
    status: str  # "settled" | "inconclusive"
    worst: HistorySegment | None = None


def check_uniform_attraction(
    system: NfdeSystem,
    bound: float,
    eps: float,
    samples: int = 20,
    horizon: float = 20.0,
    step: StepPolicy | float | None = None,
    seed: int = 0,
) -> AttractionResult:
    """Smallest grid time after which every sampled trajectory stays below eps.

    Also probes the largest tested initial-shell radius delta with all
    trajectories staying below eps for all time (the stability half of the
    definition). Samples that never settle by the horizon give an
    inconclusive result with the worst history attached.
    """
    if bound <= 0 or eps <= 0:
        raise PreconditionError("bound and eps must be positive")
    shells = [bound]
    histories = sample_shells(system.n, system.delta, samples, seed, shells)
    settle = 0.0
    for xi0 in histories:
        traj = integrate(system, xi0, horizon, step=step)
        if traj.blowup:
            return AttractionResult(None, None, "inconclusive", xi0)
        mags = np.linalg.norm(traj.x, axis=1)
        above = np.nonzero(mags >= eps)[0]
        if above.size == 0:
            continue
        if above[-1] == traj.times.size - 1:
            return AttractionResult(None, None, "inconclusive", xi0)
        settle = max(settle, float(traj.times[above[-1] + 1]))
    delta_hat = None
    for cand in [eps * 2.0**k for k in range(-6, 4)]:
        ok = True
        for xi0 in sample_shells(system.n, system.delta, max(4, samples // 4), seed + 777, [cand]):
            traj = integrate(system, xi0, horizon, step=step)
            if traj.blowup or np.any(np.linalg.norm(traj.x, axis=1) >= eps):
                ok = False
                break
        if ok:
            delta_hat = cand
    return AttractionResult(settle, delta_hat, "settled")


# -- converse construction -----------------------------------------------------------

class ConverseFunctional(Functional):
    """Trajectory-based witness V(phi) = sup over [0, T] of |D x_t(phi)| e^(a t).

    Each evaluation integrates the system from phi and maximizes |z(t)| e^(a t)
    over a refined dense-output grid, then polishes every near-tied local
    maximum by golden-section search; the t = 0 candidate makes
    V(phi) >= |D phi| exact. When the maximizer lands near the truncation edge
    (where the truncated sup would not decay along the flow), the horizon is
    extended until the maximizer is interior, up to a hard cap. Requires
    0 < a below the decay rate and a horizon long enough that the truncated
    tail cannot carry the sup for typical histories.
    """

    kind = "converse"

    def __init__(
        self,
        system: NfdeSystem,
        rate: float,
        horizon: float,
        step: StepPolicy | float | None = None,
        refine: int = 8,
        horizon_cap: float | None = None,
    ):
        if rate <= 0.0:
            raise PreconditionError("rate must be positive")
        if horizon <= 0.0:
            raise PreconditionError("horizon must be positive")
        self.system = system
        self.rate = float(rate)
        self.horizon = float(horizon)
        self.step = step
        self.refine = int(refine)
        self.horizon_cap = float(horizon_cap) if horizon_cap is not None else 4.0 * float(horizon)

    def _sup_on(self, traj) -> tuple[float, float]:
        times = traj.times
        fine = [times]
        for k in range(1, self.refine):
            fine.append(times[:-1] + (k / self.refine) * np.diff(times))
        grid = np.sort(np.concatenate(fine))
        zmag = np.linalg.norm(traj.z_dense(grid), axis=1)
        weighted = zmag * np.exp(self.rate * grid)
        best = float(np.max(weighted))
        t_best = float(grid[int(np.argmax(weighted))])
        if best == 0.0:
            return 0.0, 0.0
        g = lambda t: float(
            np.linalg.norm(traj.z_at(float(t))) * np.exp(self.rate * t)
        )
        # polish every near-tied local maximum, so the reported sup cannot jump
        # between rival bumps under small perturbations of the queried history
        margin = 1e-3 * best
        interior = np.zeros(grid.size, dtype=bool)
        interior[1:-1] = (weighted[1:-1] >= weighted[:-2]) & (
            weighted[1:-1] >= weighted[2:]
        )
        interior[0] = weighted[0] >= weighted[1]
        interior[-1] = weighted[-1] >= weighted[-2]
        cand = np.nonzero(interior & (weighted >= best - margin))[0]
        if cand.size > 16:
            cand = cand[np.argsort(weighted[cand])[-16:]]
        for k in cand:
            lo = grid[max(int(k) - 1, 0)]
            hi = grid[min(int(k) + 1, grid.size - 1)]
            if hi > lo:
                val = _golden_max(g, lo, hi)
                if val > best:
                    best = val
                    t_best = 0.5 * (lo + hi)
        return best, t_best

    def __call__(self, phi: HistorySegment) -> float:
        horizon = self.horizon
        buffer = max(0.5 * self.system.delta, 4.0 * self.system.min_positive_delay() / 8.0)
        while True:
            traj = integrate(self.system, phi, horizon, step=self.step)
            if traj.blowup:
                raise EvaluationBlowupError(
                    f"trajectory from the queried history blew up at t = {traj.t_end}"
                )
            best, t_best = self._sup_on(traj)
            if t_best <= horizon - buffer or horizon >= self.horizon_cap:
                return best
            horizon = min(self.horizon_cap, horizon + max(2.0 * buffer, 0.25 * self.horizon))


def _golden_max(g, lo: float, hi: float, iters: int = 40) -> float:
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    gc, gd = g(c), g(d)
    for _ in range(iters):
        if gc >= gd:
            b, d, gd = d, c, gc
            c = b - invphi * (b - a)
            gc = g(c)
        else:
            a, c, gc = c, d, gd
            d = a + invphi * (b - a)
            gd = g(d)
    return max(gc, gd)


def converse_horizon(ges: GesEstimate, rate: float) -> float:
    """Horizon rule T >= (ln M + 2) / (lambda - rate) for the sup truncation."""
    if not ges.is_ges:
        raise PreconditionError("converse construction needs a GES estimate")
    if not 0.0 < rate < ges.lam:
        raise PreconditionError(f"rate must lie in (0, {ges.lam})")
    return (np.log(ges.M) + 2.0) / (ges.lam - rate)


def construct_converse_ges(
    system: NfdeSystem,
    rate: float,
    horizon: float | None = None,
    ges: GesEstimate | None = None,
    step: StepPolicy | float | None = None,
) -> ConverseFunctional:
    """Build the trajectory-based witness functional for an exponentially
    stable system; the horizon defaults to the truncation margin rule."""
    if ges is not None:
        if not 0.0 < rate < ges.lam:
            raise PreconditionError(f"rate must lie in (0, {ges.lam})")
        needed = converse_horizon(ges, rate)
        horizon = needed if horizon is None else max(horizon, needed)
    if horizon is None:
        raise PreconditionError("need a horizon or a GES estimate to derive one")
    return ConverseFunctional(system, rate, horizon, step=step)


# -- Lipschitz estimation and the ISS probe --------------------------------------------

@dataclass
class LipschitzEstimate:
    L0: float
    input_gain: ComparisonFunction | None
    linear_slope: float
    pairs_used: int


def estimate_lipschitz(
    rhs,
    bound: float,
    input_bound: float = 1.0,
    samples: int = 60,
    seed: int = 0,
    delta: float | None = None,
) -> LipschitzEstimate:
    """Sampled Lipschitz constants of the right-hand side (lower bounds).

    L0 is the max quotient |f(phi1, 0) - f(phi2, 0)| / ||phi1 - phi2|| over
    random pairs plus localized bump perturbations (which probe the sharp
    directions); the input gain is the upper monotone envelope of
    |f(phi, u) - f(phi, 0)| against |u|, with its smallest linear majorant's
    slope reported separately.
    """
    if delta is None:
        delta = max(rhs.max_delay, 1.0)
    rng = np.random.default_rng(seed)
    n, m = rhs.n, rhs.m
    u0 = np.zeros(m) if m > 0 else None
    l0 = 0.0
    pairs = 0
    for k in range(samples):
        phi1 = sample_history(n, delta, bound, k % 5, seed * 1009 + 2 * k)
        if k % 2 == 0:
            phi2 = sample_history(n, delta, bound, (k + 2) % 5, seed * 1009 + 2 * k + 1)
        else:
            # bump pair: concentrate the difference around one grid node
            center = 0.0 if k % 4 == 1 else float(rng.uniform(-delta, 0.0))
            width = delta * rng.uniform(0.05, 0.2)
            size = 0.2 * bound
            direction = rng.standard_normal(n)
            direction /= max(np.linalg.norm(direction), 1e-300)
            grid = np.union1d(phi1.grid, np.clip(center + width * np.linspace(-3, 3, 13), -delta, 0.0))
            bump = size * np.exp(-(((grid - center) / width) ** 2))
            values = phi1.eval(grid) + np.outer(bump, direction)
            phi2 = HistorySegment(delta, grid, values)
        gap = sup_norm_diff(phi1, phi2)
        if gap < 1e-9:
            continue
        diff = rhs_eval(rhs, phi1, u0) - rhs_eval(rhs, phi2, u0)
        l0 = max(l0, float(np.linalg.norm(diff)) / gap)
        pairs += 1
    if m == 0:
        return LipschitzEstimate(l0, None, 0.0, pairs)
    us, gaps = [0.0], [0.0]
    slope = 0.0
    for k in range(samples):
        phi = sample_history(n, delta, bound, k % 5, seed * 2027 + k)
        u = rng.standard_normal(m)
        u *= input_bound * rng.uniform(0.05, 1.0) / max(np.linalg.norm(u), 1e-300)
        diff = rhs_eval(rhs, phi, u) - rhs_eval(rhs, phi, u0)
        mag_u = float(np.linalg.norm(u))
        mag_d = float(np.linalg.norm(diff))
        us.append(mag_u)
        gaps.append(mag_d)
        if mag_u > 1e-12:
            slope = max(slope, mag_d / mag_u)
    gain = monotone_envelope(np.asarray(us), np.asarray(gaps), "upper")
    return LipschitzEstimate(l0, gain, slope, pairs)


@dataclass
class IssEstimate:
    beta: ComparisonFunction  # KL bound M s e^(-lam t)
    gamma: ComparisonFunction | None
    gamma_slope: float | None
    gamma_form: str
    violations: int
    probes: int
    L0: float
    input_gain: ComparisonFunction | None
    is_iss: bool
    counterexample: tuple[HistorySegment, InputSignal] | None = None
    ges: GesEstimate | None = None


def iss_probe(
    system: NfdeSystem,
    initial_histories: list[HistorySegment],
    input_signals: list[InputSignal],
    horizon: float = 10.0,
    step: StepPolicy | float | None = None,
    lipschitz_samples: int = 60,
    seed: int = 0,
    slope_cap: float = 1e6,
) -> IssEstimate:
    """Fit a disturbance-to-state bound |x(t)| <= beta(||xi0||, t) + gamma(||u||).

    The exponential part is estimated from zero-input runs on the same initial
    histories (so zero-input probes satisfy the bound by construction); gamma
    is the smallest linear class-K majorant over the probe grid, falling back
    to a power law c s^q, q in [0.5, 3], when the linear gain exceeds the cap.
    An unbounded response to a bounded input yields not-ISS evidence with the
    offending probe attached.
    """
    if system.m == 0:
        raise PreconditionError("iss_probe needs a system with an input")
    ges = estimate_ges(system, initial_histories, horizon, step=step)
    if not ges.is_ges:
        raise PreconditionError("system is not exponentially stable at zero input")
    lip = estimate_lipschitz(
        system.rhs,
        max(h.sup_norm() for h in initial_histories),
        max((s.sup_norm(horizon) for s in input_signals), default=1.0),
        samples=lipschitz_samples,
        seed=seed,
    )
    records = []
    probes = 0
    for xi0 in initial_histories:
        sup0 = xi0.sup_norm()
        for sig in input_signals:
            traj = integrate(system, xi0, horizon, step=step, u=sig)
            probes += 1
            if traj.blowup:
                beta = ComparisonFunction.exponential_bound(ges.M, ges.lam)
                return IssEstimate(
                    beta, None, None, "none", 1, probes, lip.L0, lip.input_gain,
                    False, (xi0, sig), ges,
                )
            mags = np.linalg.norm(traj.x, axis=1)
            beta_vals = ges.M * sup0 * np.exp(-ges.lam * traj.times)
            usup = sig.cumulative_sup(traj.times)
            records.append((mags, beta_vals, usup, xi0, sig))

    def fit(exponent: float):
        g = 0.0
        for mags, beta_vals, usup, _, _ in records:
            num = mags - beta_vals
            mask = (num > 0.0) & (usup > 1e-12)
            if np.any(mask):
                g = max(g, float(np.max(num[mask] / usup[mask] ** exponent)))
        return g

    slope = fit(1.0)
    gamma = None
    gamma_form = "linear"
    gamma_slope = slope
    if slope <= slope_cap:
        gamma = ComparisonFunction.linear(max(slope, 1e-12))
    else:
        best = None
        for q in np.arange(0.5, 3.01, 0.25):
            c = fit(float(q))
            if c <= slope_cap and (best is None or c < best[1]):
                best = (float(q), c)
        if best is None:
            beta = ComparisonFunction.exponential_bound(ges.M, ges.lam)
            worst = max(records, key=lambda r: float(np.max(r[0] - r[1])))
            return IssEstimate(
                beta, None, None, "none", probes, probes, lip.L0, lip.input_gain,
                False, (worst[3], worst[4]), ges,
            )
        gamma_form = "power"
        gamma = ComparisonFunction.power(max(best[1], 1e-12), best[0], kind=K_INF)
        gamma_slope = None

    violations = 0
    worst_pair = None
    for mags, beta_vals, usup, xi0, sig in records:
        bound_vals = beta_vals + np.asarray(gamma(usup))
        slack = _SLACK * np.maximum(1.0, bound_vals)
        bad = mags > bound_vals + slack
        if np.any(bad):
            violations += int(np.sum(bad))
            worst_pair = (xi0, sig)
    beta = ComparisonFunction.exponential_bound(ges.M, ges.lam)
    return IssEstimate(
        beta, gamma, gamma_slope, gamma_form, violations, probes,
        lip.L0, lip.input_gain, violations == 0, worst_pair, ges,
    )
