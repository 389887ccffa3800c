"""Extremal extinction rates and near-frontier behaviour of the
discounted problem.

Three independent routes cross-check each other here:

* brute-force enumeration of every stationary control on a small
  window (rates by eigen-solve, values by linear solve);
* a discount continuation that pushes beta toward the feasible
  frontier of the discounted problem, where the optimizing policy
  freezes onto a rate-extremal control;
* the scaling limit (lam - beta) * v_beta(x) -> pi(f) eta(x), with
  (pi, eta) the stationary profile pair of a rate-extremal control,
  checked on a geometric ladder of discounts.

Enumeration sweeps can run on a thread pool; QSDCTL_THREADS caps the
worker count and results are assembled in enumeration order, so the
output is independent of scheduling.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import (AllControlsInfeasibleError, ContinuationStalledError,
                     InfeasibleBetaError, ModelError)
from .generator import build_generator, enumerate_markov_controls
from .hjb import _cost_vector, evaluate_policy, policy_iteration
from .models import MarkovControl, ModelSpec
from .qsd import solve_qsd
from .simulate import (HistoryPolicy, MonteCarloEstimate, SimConfig,
                       discounted_survival_integral, simulate_thinning)

__all__ = [
    "RATE_TOL", "worker_count", "EnumerationResult",
    "brute_force_control_opt", "brute_force_value_opt", "ContinuationStep",
    "RateOptimum", "optimize_extinction_rate", "LimitCheck",
    "limit_theorem_check", "SpotCheck", "corollary_spot_check",
]

RATE_TOL = 1e-8


def worker_count(tasks: int) -> int:
    """Worker cap for enumeration sweeps: QSDCTL_THREADS when set, else
    single threaded.  Never more workers than tasks."""
    raw = os.environ.get("QSDCTL_THREADS", "1")
    try:
        w = int(raw)
    except ValueError:
        raise ModelError(
            f"QSDCTL_THREADS must be an integer, got {raw!r}") from None
    return max(1, min(w, max(tasks, 1)))


def _check_objective(objective: str):
    if objective not in ("max", "min"):
        raise ModelError(f"objective must be 'max' or 'min', got {objective!r}")


def _indexed_map(fn, items):
    """Map fn over items, assembling results in item order; threads only
    when QSDCTL_THREADS asks for them."""
    w = worker_count(len(items))
    if w == 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=w) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True, eq=False)
class EnumerationResult:
    """Exhaustive sweep over stationary controls on a window."""

    objective: str
    lam: float
    control: MarkovControl
    count: int
    lams: np.ndarray | None = None               # per control, enum order
    controls: tuple[MarkovControl, ...] | None = None


def brute_force_control_opt(model: ModelSpec, objective: str = "max",
                            level: int | None = None, cap: int = 10 ** 6,
                            tol: float = 1e-10, keep_all: bool = False
                            ) -> EnumerationResult:
    """Extremal extinction rate by solving every stationary control on
    the window.  Ties break to the earliest control in enumeration
    order (all-zeros first)."""
    _check_objective(objective)
    level = model.level if level is None else int(level)
    controls = list(enumerate_markov_controls(model, level, cap))

    def lam_of(c: MarkovControl) -> float:
        return solve_qsd(build_generator(model, c, level), tol=tol).lam

    lams = np.array(_indexed_map(lam_of, controls))
    best = int(np.argmax(lams)) if objective == "max" else int(np.argmin(lams))
    return EnumerationResult(
        objective, float(lams[best]), controls[best], len(controls),
        lams if keep_all else None, tuple(controls) if keep_all else None)


def brute_force_value_opt(model: ModelSpec, beta: float, mode: str,
                          level: int | None = None, cap: int = 10 ** 6
                          ) -> tuple[np.ndarray, MarkovControl]:
    """Optimal discounted value by enumerating every stationary control
    and solving each linear system.  The optimum is taken pointwise at
    the initial state 1 (on these windows the optimal control turns out
    uniform in the initial state; the returned vector is the full value
    of the winning control).

    In min mode, controls whose extinction rate is at or below beta
    price at +infinity and drop out; if that removes all of them the
    refusal names the situation.  In max mode a single infeasible
    control makes the supremum infinite and the whole query is refused.
    """
    _check_objective(mode)
    level = model.level if level is None else int(level)
    controls = list(enumerate_markov_controls(model, level, cap))

    def value_of(c: MarkovControl):
        gen = build_generator(model, c, level)
        try:
            return evaluate_policy(gen, _cost_vector(model, c, level), beta)
        except InfeasibleBetaError:
            return None

    values = _indexed_map(value_of, controls)
    if mode == "max" and any(v is None for v in values):
        bad = controls[[i for i, v in enumerate(values) if v is None][0]]
        raise InfeasibleBetaError(
            f"control {bad.assignment} has extinction rate <= beta={beta:g}; "
            "the maximal discounted value is infinite", beta=beta)
    feasible = [(v, c) for v, c in zip(values, controls) if v is not None]
    if not feasible:
        raise AllControlsInfeasibleError(
            f"no stationary control on 1..{level} has extinction rate above "
            f"beta={beta:g}", beta=beta,
            diagnostic="beta exceeds truncated lambda-star")
    pick = min if mode == "min" else max
    v_best, c_best = pick(feasible, key=lambda vc: vc[0][1])
    return v_best, c_best


# ---------------------------------------------------------------------
# discount continuation

@dataclass(frozen=True)
class ContinuationStep:
    beta: float
    lam: float                # extinction rate of the step's optimizer
    control: MarkovControl


@dataclass(frozen=True, eq=False)
class RateOptimum:
    """Outcome of the rate continuation.  lam and control come from the
    continuation itself; the enumeration fields are filled only when an
    independent exhaustive sweep was requested, so agreement between
    the two is a genuine cross-check and not a tautology."""

    objective: str
    lam: float
    control: MarkovControl
    steps: tuple[ContinuationStep, ...]
    enumeration_lam: float | None = None
    enumeration_control: MarkovControl | None = None

    @property
    def cross_check_gap(self) -> float | None:
        if self.enumeration_lam is None:
            return None
        return abs(self.lam - self.enumeration_lam)


def optimize_extinction_rate(model: ModelSpec, objective: str = "max",
                             level: int | None = None, *,
                             initial_gap: float = 0.1,
                             delta0: float = 0.05, delta_min: float = 1e-3,
                             frontier_window: float = 1e-2,
                             rate_tol: float = RATE_TOL, max_steps: int = 60,
                             hold: int = 3, cross_check: bool = False,
                             cap: int = 10 ** 6) -> RateOptimum:
    """Extremal extinction rate over stationary controls, by discount
    continuation.

    The discounted problem with unit cost is feasible exactly for beta
    below the extremal rate (largest rate for the min problem, smallest
    for the max problem), and near the frontier its optimizer is a
    rate-extremal control.  So: solve at a safe beta, read off the
    optimizer's exact rate by eigen-solve, move beta to just below that
    rate, and repeat.  beta never decreases except when a step overshot
    the frontier, in which case it retreats halfway toward the last
    feasible discount and doubles its standoff distance.  Converged
    when the optimizer and its rate sit still for `hold` consecutive
    steps with beta inside the frontier window.  The rate reported is
    the eigen-solved rate of the final control, not a discount.
    """
    _check_objective(objective)
    level = model.level if level is None else int(level)
    unit = model.with_unit_cost()
    hjb_mode = "min" if objective == "max" else "max"

    const_lams = [
        solve_qsd(build_generator(model, model.constant_control(a, level),
                                  level)).lam
        for a in range(model.num_actions)
    ]
    pick = (int(np.argmax(const_lams)) if objective == "max"
            else int(np.argmin(const_lams)))
    lam_seed = const_lams[pick]
    beta = lam_seed - initial_gap
    delta = delta0
    steps: list[ContinuationStep] = []
    stable = 0
    for _ in range(max_steps):
        try:
            sol = policy_iteration(unit, beta, hjb_mode, level=level)
        except InfeasibleBetaError:
            if steps:
                beta = 0.5 * (steps[-1].beta + beta)
            else:
                beta = beta - max(initial_gap, delta)
            delta = min(2.0 * delta, initial_gap)
            stable = 0
            continue
        control = sol.policy
        lam_k = solve_qsd(build_generator(model, control, level)).lam
        if steps and control == steps[-1].control and \
                abs(lam_k - steps[-1].lam) <= rate_tol:
            stable += 1
        else:
            stable = 0
        steps.append(ContinuationStep(beta, lam_k, control))
        if stable >= hold - 1 and \
                lam_k - beta <= frontier_window * (1.0 + abs(lam_k)):
            enum_lam = enum_control = None
            if cross_check:
                res = brute_force_control_opt(model, objective, level, cap)
                enum_lam, enum_control = res.lam, res.control
            return RateOptimum(objective, lam_k, control, tuple(steps),
                               enum_lam, enum_control)
        beta = max(beta, lam_k - delta)
        delta = max(0.5 * delta, delta_min)
    raise ContinuationStalledError(
        f"rate continuation did not settle within {max_steps} steps "
        f"(last beta {beta:g})", path=tuple(steps))


# ---------------------------------------------------------------------
# scaling limit at the frontier

@dataclass(frozen=True, eq=False)
class LimitCheck:
    """(lam - beta) v_beta(x) against the stationary product
    pi(f) eta(x) of a rate-extremal control, on a discount ladder."""

    objective: str
    x: int
    lam: float
    betas: np.ndarray
    products: np.ndarray          # (lam - beta_k) * v_{beta_k}(x)
    reference: float              # extremal pi(f) eta(x) at the frontier
    gap: float                    # |last finite product - reference|
    converged: bool
    inconclusive: bool            # reference below resolution

    def as_dict(self) -> dict:
        return {
            "objective": self.objective, "x": self.x, "lam": self.lam,
            "betas": self.betas.tolist(), "products": self.products.tolist(),
            "reference": self.reference, "gap": self.gap,
            "converged": self.converged, "inconclusive": self.inconclusive,
        }


def limit_theorem_check(model: ModelSpec, objective: str = "max", x: int = 1,
                        level: int | None = None, *,
                        beta0: float | None = None, num_betas: int = 8,
                        rate_tol: float = RATE_TOL, rel_tol: float = 5e-2,
                        cap: int = 10 ** 6) -> LimitCheck:
    """Check the frontier scaling of the optimal discounted value.

    The reference is computed by enumeration: among controls whose rate
    ties the extremal rate within rate_tol, take the extremal value of
    pi(f) eta(x) (smallest for the min problem, largest for the max
    problem; the ladder products must approach it from the matching
    side).  The ladder is beta_k = lam - 2^(-k) (lam - beta0).  A rung
    whose policy iteration loses feasibility mid-flight is recorded as
    NaN and skipped.  converged means the last finite product lands
    within rel_tol of the reference and no farther than the first rung;
    inconclusive flags a reference too small to resolve at rate_tol
    against the cost scale.
    """
    _check_objective(objective)
    level = model.level if level is None else int(level)
    if not 1 <= x <= level:
        raise ModelError(f"x must lie in 1..{level}")
    hjb_mode = "min" if objective == "max" else "max"
    enum = brute_force_control_opt(model, objective, level, cap, keep_all=True)
    lam = enum.lam

    side = []
    f_sup = 0.0
    for c, lam_c in zip(enum.controls, enum.lams):
        f = _cost_vector(model, c, level)
        f_sup = max(f_sup, float(f.max()))
        if abs(lam_c - lam) <= rate_tol:
            q = solve_qsd(build_generator(model, c, level))
            side.append(float(q.pi @ f[1:]) * float(q.eta[x - 1]))
    reference = min(side) if hjb_mode == "min" else max(side)
    inconclusive = reference < rate_tol * f_sup

    if beta0 is None:
        beta0 = lam - 0.5 * (1.0 + abs(lam))
    if not beta0 < lam:
        raise ModelError(f"beta0={beta0:g} must lie below the rate {lam:g}")
    gap0 = lam - beta0
    betas = lam - gap0 * 0.5 ** np.arange(1, num_betas + 1)
    products = np.full(num_betas, np.nan)
    for k, beta in enumerate(betas):
        try:
            sol = policy_iteration(model, float(beta), hjb_mode, level=level)
        except InfeasibleBetaError:
            continue
        products[k] = (lam - beta) * float(sol.v[x])

    finite = np.nonzero(np.isfinite(products))[0]
    if finite.size == 0:
        gap = float("inf")
        converged = False
    else:
        errs = np.abs(products[finite] - reference)
        gap = float(errs[-1])
        converged = bool(gap <= rel_tol * (abs(reference) + 1e-12)
                         and gap <= float(errs[0]) + 1e-12)
    return LimitCheck(objective, x, lam, betas, products, reference, gap,
                      converged, inconclusive)


# ---------------------------------------------------------------------
# history rules cannot beat the maximizing stationary value

@dataclass(frozen=True, eq=False)
class SpotCheck:
    ok: bool
    estimate: MonteCarloEstimate  # MC discounted survival time of the rule
    bound: float                  # unit-cost v_beta(x), max mode
    slack: float                  # bound + 3 stderr - estimate
    beta: float
    x: int
    policy_name: str


def corollary_spot_check(model: ModelSpec, policy: HistoryPolicy, x: int,
                         beta: float, config: SimConfig,
                         level: int | None = None) -> SpotCheck:
    """Monte Carlo sanity check of the verification bound: no history
    rule may beat the maximizing stationary value.

    The cost is overridden to 1, so the discounted cost of a path is
    its discounted survival time, computable in closed form piecewise.
    The rule is simulated by thinning (the only simulator that admits
    history dependence) and its estimate must stay below the max-mode
    unit-cost value at x, within three standard errors.
    """
    level = model.level if level is None else int(level)
    if not 1 <= x <= level:
        raise ModelError(f"x must lie in 1..{level}")
    unit = model.with_unit_cost()
    sol = policy_iteration(unit, beta, "max", level=level)
    bound = float(sol.v[x])
    run_cfg = SimConfig(config.seed, 1, config.horizon, config.state_cap)
    vals = np.empty(config.samples)
    for i in range(config.samples):
        traj = simulate_thinning(model, policy, x, run_cfg, stream_index=i)
        vals[i] = discounted_survival_integral(traj, beta)
    est = MonteCarloEstimate.from_values(vals)
    ok = est.value <= bound + 3.0 * est.stderr
    return SpotCheck(ok, est, bound, bound + 3.0 * est.stderr - est.value,
                     beta, x, policy.name)
