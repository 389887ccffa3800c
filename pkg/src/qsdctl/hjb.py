"""Discounted control up to extinction.

The value of a stationary control alpha at discount beta is
v(x) = E_x integral_0^tau exp(beta s) f(X_s, alpha(X_s)) ds, which on
the truncated chain solves the linear system

    (beta I + L_alpha) v = -f,    v(0) = 0,

solvable exactly when beta is below the control's extinction rate
(otherwise the integral is infinite and we refuse).  Positive and
negative beta are both fine.

policy_iteration runs Howard's scheme: evaluate, then at every state
pick the action optimizing f + L v (ties to the lowest action index),
repeat until the policy is stable.  Each evaluation records the
iterate's extinction rate, so an infeasible discount surfaces as a
structured refusal rather than a numerical explosion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (InfeasibleBetaError, PolicyIterationError, SolverError)
from .generator import TruncatedGenerator, build_generator
from .models import MarkovControl, ModelSpec
from .qsd import solve_qsd

__all__ = [
    "ValueSolution", "PolicyIterationTrace", "IterationRecord",
    "TransversalityCheck", "evaluate_policy", "improve_policy",
    "policy_iteration", "hjb_residual", "verify_transversality",
]

DENSE_CUTOFF = 4096


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    policy_changes: int
    value_delta: float      # sup-norm change against the previous value
    delta_up: float         # max of (v_new - v_old); signed
    delta_down: float       # min of (v_new - v_old); signed
    lam: float              # extinction rate of the evaluated policy


@dataclass(frozen=True)
class PolicyIterationTrace:
    records: tuple[IterationRecord, ...]
    termination: str        # "policy-stable" | "max-iter" | "evaluation-diverged"


@dataclass(frozen=True)
class TransversalityCheck:
    ok: bool
    margin: float           # lam(final policy) - beta
    lam: float


@dataclass(frozen=True, eq=False)
class ValueSolution:
    """Solution of one discounted problem: the value on {0..N} with
    v(0) = 0, the stationary policy realizing it, the max-norm defect
    of the optimality equation, and the iteration trace.  For mode=max
    the transversality check of the final policy is attached; the
    sup-norm bound is ||f||_inf times a computed resolvent bound."""

    v: np.ndarray
    policy: MarkovControl
    mode: str
    beta: float
    hjb_residual: float
    trace: PolicyIterationTrace
    sup_bound: float | None = None
    transversality: TransversalityCheck | None = None


def _residual_floor(norm_a: float, x: np.ndarray) -> float:
    """Smallest residual measurable in double arithmetic: evaluating
    rhs - A x rounds at eps |A| |x| even for the exact solution, which
    dominates the fixed tolerance when beta sits close to the
    extinction rate and |x| blows up like 1/(lam - beta)."""
    return 8 * float(np.finfo(float).eps) * norm_a * (
        1.0 + float(np.max(np.abs(x))))


def _solve_refined(a: np.ndarray, rhs: np.ndarray, tol_scale: float
                   ) -> np.ndarray:
    """Row-pivoted direct solve with iterative refinement until the
    residual is below 5e-11 * tol_scale (or it stops improving)."""
    try:
        lu, piv = scipy.linalg.lu_factor(a)
    except scipy.linalg.LinAlgError as e:
        raise SolverError(f"singular system: {e}") from None
    x = scipy.linalg.lu_solve((lu, piv), rhs)
    target = 5e-11 * tol_scale
    best = np.inf
    for _ in range(6):
        r = rhs - a @ x
        rn = float(np.max(np.abs(r)))
        if rn <= target or rn >= best:
            break
        best = rn
        x = x + scipy.linalg.lu_solve((lu, piv), r)
    rn = float(np.max(np.abs(rhs - a @ x)))
    norm_a = float(np.max(np.abs(a).sum(axis=1)))
    if rn > tol_scale * 1e-10 + _residual_floor(norm_a, x):
        raise SolverError(
            f"linear solve residual {rn:.3e} exceeds contract "
            f"{tol_scale * 1e-10:.3e}; system is singular to precision")
    return x


def _solve_richardson(a_active: np.ndarray, beta: float, rhs: np.ndarray,
                      lam: float, lam_unif: float, tol_scale: float
                      ) -> np.ndarray:
    """Residual-correction fallback for levels above the dense cutoff.

    Rewrites (beta I + L) v = rhs as the fixed point
    v = (Lam P v - rhs) / (Lam - beta) with P the uniformized kernel;
    the map contracts at rate (Lam - lam)/(Lam - beta) < 1 for
    beta < lam.
    """
    n = a_active.shape[0]
    p = np.eye(n) + a_active / lam_unif
    v = np.zeros(n)
    target = 5e-11 * tol_scale
    norm_a = abs(beta) + float(np.max(np.abs(a_active).sum(axis=1)))
    contraction = (lam_unif - lam) / (lam_unif - beta)
    # iterations to shrink an O(|rhs|) residual below target
    budget = int(np.log(max(target / (1 + np.max(np.abs(rhs))), 1e-300))
                 / np.log(max(contraction, 1e-16))) + 50
    for _ in range(max(budget, 100)):
        v = (lam_unif * (p @ v) - rhs) / (lam_unif - beta)
        r = float(np.max(np.abs(beta * v + a_active @ v - rhs)))
        if r <= max(target, _residual_floor(norm_a, v)):
            return v
    raise SolverError(
        f"residual correction stalled at residual {r:.3e}")


def evaluate_policy(gen: TruncatedGenerator, cost: np.ndarray, beta: float,
                    lam: float | None = None,
                    dense_cutoff: int = DENSE_CUTOFF) -> np.ndarray:
    """Expected discounted cost until extinction under one policy.

    cost is the per-state vector on {0..N} with cost[0] = 0.  Refuses
    with InfeasibleBetaError when beta is not strictly below the
    policy's extinction rate (the integral is infinite there).  The
    extinction rate is solved on the spot unless passed in.
    Post: max-norm residual of the linear system <= 1e-10 (1 + |f|),
    up to the double-precision floor eps |A| |v| that dominates when
    beta sits within a hair of the extinction rate.
    """
    n = gen.level
    f = np.asarray(cost, dtype=float)
    if f.shape != (n + 1,):
        raise SolverError(f"cost vector must live on 0..{n}")
    if f[0] != 0.0:
        raise SolverError("cost at the absorbing state must be 0")
    if np.any(f < 0) or not np.all(np.isfinite(f)):
        raise SolverError("cost must be finite and >= 0")
    if lam is None:
        lam = solve_qsd(gen).lam
    if not beta < lam:
        raise InfeasibleBetaError(
            f"discount beta={beta:g} is not below the extinction rate "
            f"lam={lam:g} of this policy: the discounted cost is infinite",
            beta=beta, lam=lam)
    a = beta * np.eye(n) + gen.active
    scale = 1.0 + float(np.max(f))
    if n <= dense_cutoff:
        v_sub = _solve_refined(a, -f[1:], scale)
    else:
        v_sub = _solve_richardson(gen.active, beta, -f[1:], lam,
                                  gen.uniformization_rate(), scale)
    v = np.zeros(n + 1)
    v[1:] = v_sub
    return v


def _action_scores(model: ModelSpec, v: np.ndarray, level: int) -> np.ndarray:
    """scores[a, x-1] = f(x, a) + (L_a v)(x) on the truncated window,
    with births lumped at the level exactly as in build_generator."""
    m = model.num_actions
    k_max = model.progeny.k_max
    scores = np.empty((m, level))
    xs = np.arange(1, level + 1)
    for a in range(m):
        b, d, f = model.rate_tables(a, level)
        pk = model.progeny.pmf(a)
        gen_v = d[1:] * (v[xs - 1] - v[xs])
        for k in range(1, k_max + 1):
            y = np.minimum(xs + k, level)
            gen_v += b[1:] * pk[k - 1] * (v[y] - v[xs])
        scores[a] = f[1:] + gen_v
    return scores


def improve_policy(model: ModelSpec, v: np.ndarray, beta: float,
                   mode: str) -> MarkovControl:
    """One Howard improvement step: at each state pick the action
    optimizing f + L v.  beta plays no role in the argopt (the beta v
    term is action independent); it is accepted for interface symmetry.
    Ties break to the lowest action index."""
    if mode not in ("min", "max"):
        raise SolverError(f"mode must be 'min' or 'max', got {mode!r}")
    level = len(v) - 1
    scores = _action_scores(model, v, level)
    idx = np.argmin(scores, axis=0) if mode == "min" else np.argmax(scores, axis=0)
    return MarkovControl(tuple(int(i) for i in idx))


def hjb_residual(model: ModelSpec, v: np.ndarray, beta: float,
                 mode: str) -> np.ndarray:
    """Pointwise defect beta v(x) + opt_a [f(x,a) + (L_a v)(x)] on
    {1..N}; zero exactly at a solution of the optimality equation."""
    if mode not in ("min", "max"):
        raise SolverError(f"mode must be 'min' or 'max', got {mode!r}")
    level = len(v) - 1
    scores = _action_scores(model, v, level)
    opt = scores.min(axis=0) if mode == "min" else scores.max(axis=0)
    return beta * v[1:] + opt


def _cost_vector(model: ModelSpec, control: MarkovControl, level: int
                 ) -> np.ndarray:
    f = np.zeros(level + 1)
    for x in range(1, level + 1):
        f[x] = model.cost_rate(x, control.action_at(x))
    return f


def _first_evaluable_constant(model: ModelSpec, beta: float, level: int):
    """Try constant policies in action order; return the first whose
    extinction rate lies above beta, with its generator and rate."""
    rates = []
    for a in range(model.num_actions):
        control = model.constant_control(a, level)
        gen = build_generator(model, control, level)
        lam = solve_qsd(gen).lam
        rates.append(lam)
        if beta < lam:
            return control, gen, lam
    raise InfeasibleBetaError(
        f"beta={beta:g} is not below the extinction rate of any constant "
        f"policy (best is {max(rates):g}); the truncated optimum cannot "
        "exceed the discount",
        beta=beta, lam=max(rates),
        diagnostic="beta exceeds truncated lambda-star")


def policy_iteration(model: ModelSpec, beta: float, mode: str,
                     tol: float = 1e-9, max_iter: int = 100,
                     level: int | None = None) -> ValueSolution:
    """Howard policy iteration for the discounted problem.

    Starts from the all-first-action policy (falling back to the first
    evaluable constant policy), alternates exact evaluation and
    improvement, and stops when the policy repeats.  The exit residual
    of the optimality equation must come out below tol.  A discount at
    or above the extinction rate of every constant policy, or of an
    iterate along the way, raises InfeasibleBetaError carrying the
    partial trace; in min mode that is strong evidence beta exceeds the
    truncated optimal rate.
    """
    if mode not in ("min", "max"):
        raise SolverError(f"mode must be 'min' or 'max', got {mode!r}")
    level = model.level if level is None else int(level)
    current = model.constant_control(0, level)
    gen = build_generator(model, current, level)
    lam = solve_qsd(gen).lam
    if not beta < lam:
        current, gen, lam = _first_evaluable_constant(model, beta, level)

    records: list[IterationRecord] = []
    v_prev = None
    v = None
    for it in range(1, max_iter + 1):
        v = evaluate_policy(gen, _cost_vector(model, current, level), beta,
                            lam=lam)
        if v_prev is None:
            delta_up = delta_down = 0.0
            changes = level
        else:
            diff = v - v_prev
            delta_up = float(diff.max())
            delta_down = float(diff.min())
            changes = sum(
                1 for x, y in zip(current.assignment, previous.assignment)
                if x != y)
        records.append(IterationRecord(
            it, changes, max(abs(delta_up), abs(delta_down)),
            delta_up, delta_down, lam))
        improved = improve_policy(model, v, beta, mode)
        if improved == current:
            break
        previous, current = current, improved
        v_prev = v
        gen = build_generator(model, current, level)
        try:
            lam = solve_qsd(gen).lam
            if not beta < lam:
                raise InfeasibleBetaError(
                    f"iterate policy has extinction rate {lam:g} <= "
                    f"beta={beta:g}", beta=beta, lam=lam)
        except InfeasibleBetaError as e:
            e.trace = PolicyIterationTrace(tuple(records),
                                           "evaluation-diverged")
            if mode == "min":
                e.diagnostic = "beta exceeds truncated lambda-star"
            raise
    else:
        raise PolicyIterationError(
            f"policy not stable after {max_iter} iterations",
            trace=PolicyIterationTrace(tuple(records), "max-iter"))

    residual = float(np.max(np.abs(hjb_residual(model, v, beta, mode))))
    if residual > tol:
        raise PolicyIterationError(
            f"stable policy found but optimality residual {residual:.3e} "
            f"exceeds tol {tol:.3e}",
            trace=PolicyIterationTrace(tuple(records), "policy-stable"))
    # resolvent sup bound: the unit-cost value dominates |v| / |f|
    ones = np.zeros(level + 1)
    ones[1:] = 1.0
    bound_vec = evaluate_policy(gen, ones, beta, lam=lam)
    f_vec = _cost_vector(model, current, level)
    sup_bound = float(np.max(bound_vec)) * float(np.max(f_vec))
    transversality = None
    if mode == "max":
        transversality = TransversalityCheck(lam > beta, lam - beta, lam)
    return ValueSolution(
        v=v, policy=current, mode=mode, beta=beta, hjb_residual=residual,
        trace=PolicyIterationTrace(tuple(records), "policy-stable"),
        sup_bound=sup_bound, transversality=transversality)


def verify_transversality(model: ModelSpec, solution: ValueSolution,
                          level: int | None = None) -> TransversalityCheck:
    """Check the final policy's extinction rate stays above beta; this
    is what legitimizes the maximizing value as an honest supremum."""
    level = (len(solution.v) - 1) if level is None else int(level)
    gen = build_generator(model, solution.policy.truncate(level), level)
    lam = solve_qsd(gen).lam
    return TransversalityCheck(lam > solution.beta, lam - solution.beta, lam)
