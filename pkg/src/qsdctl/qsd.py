"""Quasi-stationary analysis of a truncated chain.

Everything here works on the restriction of the generator to the living
states {1..N}.  The quasi-stationary triple (pi, lam, eta) satisfies

    pi  : left eigenvector,  pi L = -lam pi,   sum pi = 1
    eta : right eigenvector, L eta = -lam eta, pi . eta = 1

so that starting from pi the survival probability is exactly
exp(-lam t) and the conditional law never moves, while for a fixed
start x the rescaled survival exp(lam t) P_x(t < tau) converges to
eta(x).

The solver uniformizes (P = I + L/Lam with Lam just above the largest
exit rate) and runs plain two-sided power iteration; the returned rate
is Lam (1 - rho) with rho the two-sided Rayleigh estimate.  No
deflation or acceleration: the matrices here are small and the simple
scheme is easy to trust.  Transient solves use the same uniformized
chain with log-space Poisson weights so stiff models and long horizons
do not underflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ModelError, NonConvergenceError, SolverError, ThresholdNotFoundError
from .generator import TruncatedGenerator, build_generator
from .models import MarkovControl, ModelSpec, validate_hypotheses, CLAUSE_DEATH_FLOOR

__all__ = [
    "QsdSolution", "solve_qsd", "ConditionalEvolution", "conditional_evolution",
    "ConvergenceDiagnostics", "eta_limit_check", "LyapunovThreshold",
    "lyapunov_threshold", "TruncationSweep", "truncation_sweep",
    "total_variation",
]


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    """TV distance between two vectors of point masses, zero-padding the
    shorter one."""
    n = max(len(p), len(q))
    a = np.zeros(n)
    b = np.zeros(n)
    a[: len(p)] = p
    b[: len(q)] = q
    return 0.5 * float(np.abs(a - b).sum())


@dataclass(frozen=True, eq=False)
class QsdSolution:
    """Quasi-stationary triple on the living states 1..N.

    pi sums to one, eta is scaled so pi . eta = 1, and lam is the
    absorption rate of the conditioned chain.  The residuals are the
    max-norm defects of the two eigen identities measured on the
    returned (finally scaled) vectors.
    """

    level: int
    lam: float
    pi: np.ndarray             # index 0 <-> state 1
    eta: np.ndarray
    residual_left: float
    residual_right: float
    iterations: int
    reducible_warning: bool = False

    def pi_full(self) -> np.ndarray:
        out = np.zeros(self.level + 1)
        out[1:] = self.pi
        return out

    def eta_full(self) -> np.ndarray:
        out = np.zeros(self.level + 1)
        out[1:] = self.eta
        return out


def _check_absorbing_reachable(gen: TruncatedGenerator):
    sub = np.diag(gen.matrix[1:, :-1])  # death rates d(1), ..., d(N)
    if np.any(sub <= 0):
        x = int(np.argmax(sub <= 0)) + 1
        raise ModelError(
            f"state {x} has zero death rate: extinction is unreachable "
            "from it, so no quasi-stationary distribution exists")


def solve_qsd(gen: TruncatedGenerator, tol: float = 1e-10,
              max_iter: int = 2_000_000) -> QsdSolution:
    """Two-sided power iteration on the uniformized living block.

    Stops once the Rayleigh rate estimate has settled (relative change
    below tol) and both eigen residuals, measured at the final scaling,
    are below tol.  Raises NonConvergenceError at max_iter.
    """
    _check_absorbing_reachable(gen)
    a = np.ascontiguousarray(gen.active)
    n = a.shape[0]
    lam_unif = gen.uniformization_rate()
    p = np.eye(n) + a / lam_unif
    pt = np.ascontiguousarray(p.T)

    pi = np.full(n, 1.0 / n)
    eta = np.ones(n)
    pi_next = np.empty(n)
    eta_next = np.empty(n)
    rho_prev = np.inf
    check_every = 16
    iterations = 0

    def residuals(pi_v, eta_v, lam):
        """Defects of the eigen identities with eta at its final scale."""
        scale = float(pi_v @ eta_v)
        if scale <= 0:
            return np.inf, np.inf, eta_v
        eta_s = eta_v / scale
        res_l = float(np.max(np.abs(pi_v @ a + lam * pi_v)))
        res_r = float(np.max(np.abs(a @ eta_s + lam * eta_s)))
        return res_l, res_r, eta_s

    while iterations < max_iter:
        for _ in range(check_every):
            np.dot(pi, p, out=pi_next)
            np.dot(p, eta, out=eta_next)
            s = pi_next.sum()
            if s <= 0:
                raise SolverError("left iterate lost all mass")
            pi_next /= s
            eta_next /= np.max(np.abs(eta_next))
            pi, pi_next = pi_next, pi
            eta, eta_next = eta_next, eta
        iterations += check_every
        # two-sided Rayleigh estimate of the Perron root of P
        denom = float(pi @ eta)
        rho = float(pi @ (p @ eta)) / denom if denom > 0 else np.nan
        if not np.isfinite(rho):
            raise SolverError("rate estimate diverged")
        lam = lam_unif * (1.0 - rho)
        settled = abs(rho - rho_prev) <= tol * max(abs(rho), 1e-30)
        rho_prev = rho
        if settled:
            res_l, res_r, eta_s = residuals(pi, eta, lam)
            if res_l <= tol and res_r <= tol:
                pi_out = pi.copy()
                pi_out[np.abs(pi_out) < 1e-300] = 0.0
                births_present = bool(np.any(np.triu(a, 1) > 0))
                reducible = births_present and bool(np.any(pi_out == 0.0))
                return QsdSolution(
                    level=gen.level, lam=lam, pi=pi_out, eta=eta_s,
                    residual_left=res_l, residual_right=res_r,
                    iterations=iterations, reducible_warning=reducible)
    raise NonConvergenceError(
        f"power iteration did not reach tol={tol} in {max_iter} iterations")


# ---------------------------------------------------------------------
# transient (uniformized) solves

_LOG_TINY = -745.0  # below exp() underflow


def _uniformized_action(a: np.ndarray, v: np.ndarray, t: float,
                        lam_unif: float, transpose: bool = False) -> np.ndarray:
    """exp(t A) v (or exp(t A^T) v) through the subordinated chain.

    Poisson weights are accumulated in log space, so this stays exact
    for stiff generators where Lam * t runs to the hundreds of
    thousands.  Cost: one dense mat-vec per series term.
    """
    if t < 0:
        raise SolverError("transient solve needs t >= 0")
    if t == 0:
        return v.copy()
    n = a.shape[0]
    p = np.eye(n) + (a.T if transpose else a) / lam_unif
    mean = lam_unif * t
    log_mean = math.log(mean)
    k_hi = int(mean + 40.0 * math.sqrt(mean + 10.0) + 30.0)
    acc = np.zeros_like(v)
    term = v.copy()
    covered = 0.0
    k = 0
    while k <= k_hi:
        logw = k * log_mean - mean - math.lgamma(k + 1)
        if logw > _LOG_TINY:
            w = math.exp(logw)
            acc += w * term
            covered += w
            if covered >= 1.0 - 1e-14 and k > mean:
                break
        term = p @ term
        k += 1
    return acc


def survival_profile(gen: TruncatedGenerator, times: Sequence[float]) -> np.ndarray:
    """P_x(t < tau) for every living state x at each requested time,
    computed by chaining uniformized steps.  Shape (len(times), N)."""
    ts = [float(t) for t in times]
    if any(t < 0 for t in ts) or ts != sorted(ts):
        raise SolverError("times must be non-decreasing and >= 0")
    a = np.ascontiguousarray(gen.active)
    lam_unif = gen.uniformization_rate()
    v = np.ones(a.shape[0])
    out = np.empty((len(ts), a.shape[0]))
    prev = 0.0
    for i, t in enumerate(ts):
        v = _uniformized_action(a, v, t - prev, lam_unif)
        out[i] = v
        prev = t
    return out


@dataclass(frozen=True, eq=False)
class ConditionalEvolution:
    """Law of the chain conditioned on survival at each output time,
    plus the unconditional survival probability (mass) remaining."""

    times: tuple[float, ...]
    laws: np.ndarray       # (steps, N) rows summing to 1
    survival: np.ndarray   # (steps,) probability of not yet being absorbed


def conditional_evolution(gen: TruncatedGenerator, mu0: np.ndarray,
                          t: float, steps: int = 1) -> ConditionalEvolution:
    """Push a distribution on {1..N} forward and renormalize at
    times j t/steps, j = 1..steps.

    The forward equation is driven by the adjoint of the living block.
    Mass is renormalized after every step and tracked in log space, so
    long horizons report survival accurately instead of underflowing;
    a single step that loses all representable mass is an error.
    """
    if steps < 1:
        raise SolverError("steps must be >= 1")
    if t < 0:
        raise SolverError("t must be >= 0")
    a = np.ascontiguousarray(gen.active)
    n = a.shape[0]
    mu = np.asarray(mu0, dtype=float).copy()
    if mu.shape != (n,):
        raise SolverError(f"mu0 must live on the {n} active states")
    if np.any(mu < 0) or mu.sum() <= 0:
        raise SolverError("mu0 must be a nonnegative vector with mass")
    mu /= mu.sum()
    lam_unif = gen.uniformization_rate()
    dt = t / steps
    laws = np.empty((steps, n))
    survival = np.empty(steps)
    log_mass = 0.0
    for j in range(steps):
        mu = _uniformized_action(a, mu, dt, lam_unif, transpose=True)
        mass = float(mu.sum())
        if not mass > 0:
            raise SolverError(
                f"surviving mass underflowed at time {(j + 1) * dt:g}; "
                "use more steps or a shorter horizon")
        mu /= mass
        log_mass += math.log(mass)
        laws[j] = mu
        survival[j] = math.exp(log_mass)
    times = tuple((j + 1) * dt for j in range(steps))
    return ConditionalEvolution(times, laws, survival)


@dataclass(frozen=True, eq=False)
class ConvergenceDiagnostics:
    """How fast the chain forgets its start.

    eta_deviation[i] = max_x | exp(lam t_i) P_x(t_i < tau) - eta(x) |,
    tv_to_pi maps a probe start x to the TV distance between the
    conditional law started at x and pi at each time, and
    fitted_decay_rate is the slope of log eta_deviation against time.
    """

    times: tuple[float, ...]
    eta_deviation: tuple[float, ...]
    tv_to_pi: Mapping[int, tuple[float, ...]]
    fitted_decay_rate: float


def eta_limit_check(gen: TruncatedGenerator, qsd: QsdSolution,
                    times: Sequence[float],
                    tv_probes: Sequence[int] = ()) -> ConvergenceDiagnostics:
    """Measure convergence of the rescaled survival profile to eta.

    For each time t the deviation max_x |exp(lam t) P_x(t<tau) - eta(x)|
    is reported; under the standing assumptions it decays exponentially
    and the fitted rate approximates the spectral gap.  Optional probe
    states additionally track the TV distance of the conditional law
    to pi.
    """
    ts = sorted(float(t) for t in times)
    if not ts:
        raise SolverError("need at least one time")
    prof = survival_profile(gen, ts)
    dev = tuple(
        float(np.max(np.abs(math.exp(qsd.lam * t) * prof[i] - qsd.eta)))
        for i, t in enumerate(ts))
    tv: dict[int, tuple[float, ...]] = {}
    for x in tv_probes:
        x = int(x)
        if not 1 <= x <= gen.level:
            raise SolverError(f"probe state {x} outside 1..{gen.level}")
        delta = np.zeros(gen.level)
        delta[x - 1] = 1.0
        tvs = []
        mu = delta
        prev = 0.0
        a = np.ascontiguousarray(gen.active)
        lam_unif = gen.uniformization_rate()
        for t in ts:
            mu = _uniformized_action(a, mu, t - prev, lam_unif, transpose=True)
            mass = float(mu.sum())
            if not mass > 0:
                raise SolverError(
                    f"no surviving mass from probe {x} at time {t:g}")
            mu = mu / mass
            tvs.append(total_variation(mu, qsd.pi))
            prev = t
        tv[x] = tuple(tvs)
    # least-squares slope of log(dev) on t; positive number = decay rate
    pos = [(t, d) for t, d in zip(ts, dev) if d > 0]
    if len(pos) >= 2:
        tt = np.array([p[0] for p in pos])
        ld = np.log([p[1] for p in pos])
        slope = float(np.polyfit(tt, ld, 1)[0])
        rate = -slope
    else:
        rate = math.inf
    return ConvergenceDiagnostics(tuple(ts), dev, tv, rate)


# ---------------------------------------------------------------------
# Lyapunov drift threshold

def _psi_values(n_max: int, epsilon: float) -> np.ndarray:
    """psi(x) = sum_{y<=x} y^-(1+epsilon/2), psi(0) = 0; bounded in x."""
    out = np.zeros(n_max + 1)
    ys = np.arange(1, n_max + 1, dtype=float)
    out[1:] = np.cumsum(ys ** (-(1.0 + 0.5 * epsilon)))
    return out


@dataclass(frozen=True)
class LyapunovThreshold:
    x_threshold: int
    margin: float        # max over [x_threshold, n_check] of the drift; <= 0
    n_check: int
    lam: float
    epsilon: float


def lyapunov_threshold(model: ModelSpec, lam: float,
                       n_check: int | None = None) -> LyapunovThreshold:
    """Smallest x at which the bounded test function psi has uniformly
    negative lam-shifted drift on [x, n_check] under every action.

    Requires the model to declare the superlinear death floor and to
    pass it on the window; otherwise psi is not a valid certificate and
    this refuses with ModelError.
    """
    n_check = model.level if n_check is None else int(n_check)
    c = model.constants
    if c.epsilon is None:
        raise ModelError(
            "drift threshold needs declared d_lower/epsilon constants")
    report = validate_hypotheses(model, n_check)
    floor = report.clause(CLAUSE_DEATH_FLOOR)
    if floor.status != "pass":
        raise ModelError(
            "drift threshold needs the superlinear death floor to hold "
            f"on 1..{n_check}; check failed with witness {floor.witness}")
    k_max = model.progeny.k_max
    psi = _psi_values(n_check + k_max, c.epsilon)
    worst = np.full(n_check, -np.inf)
    for a in range(model.num_actions):
        b, d, _ = model.rate_tables(a, n_check)
        pk = model.progeny.pmf(a)
        xs = np.arange(1, n_check + 1)
        up = np.zeros(n_check)
        for k in range(1, k_max + 1):
            up += pk[k - 1] * (psi[xs + k] - psi[xs])
        drift = b[1:] * up + d[1:] * (psi[xs - 1] - psi[xs]) + lam * psi[xs]
        worst = np.maximum(worst, drift)
    bad = np.nonzero(worst > 0)[0]
    if bad.size and bad[-1] == n_check - 1:
        raise ThresholdNotFoundError(
            f"drift stays positive up to the window edge {n_check}; "
            "no usable threshold found")
    x_thr = int(bad[-1]) + 2 if bad.size else 1
    margin = float(np.max(worst[x_thr - 1:]))
    return LyapunovThreshold(x_thr, margin, n_check, lam, c.epsilon)


# ---------------------------------------------------------------------
# truncation sweep

@dataclass(frozen=True)
class SweepRow:
    level: int
    lam: float
    lam_gap_to_largest: float
    tv_to_largest: float


@dataclass(frozen=True)
class TruncationSweep:
    rows: tuple[SweepRow, ...]


def truncation_sweep(model: ModelSpec, control: MarkovControl,
                     levels: Sequence[int], tol: float = 1e-10) -> TruncationSweep:
    """Solve the QSD at each level and report drift of (lam, pi) against
    the largest level.  Purely diagnostic: nothing is asserted."""
    lv = sorted(int(x) for x in levels)
    if not lv:
        raise ModelError("need at least one level")
    sols = {}
    for n in lv:
        sols[n] = solve_qsd(build_generator(model, control.truncate(n), n),
                            tol=tol)
    top = sols[lv[-1]]
    rows = tuple(
        SweepRow(n, sols[n].lam, abs(sols[n].lam - top.lam),
                 total_variation(sols[n].pi, top.pi))
        for n in lv)
    return TruncationSweep(rows)
