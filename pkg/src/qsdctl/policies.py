"""A small catalog of decision rules for the thinning simulator.

Each constructor returns a HistoryPolicy whose rule is a deterministic
functional of the elapsed time and the past trajectory.  The first two
reproduce stationary behaviour (useful for cross-checking the two
simulators); the rest genuinely look at the past.
"""

from __future__ import annotations

from .models import MarkovControl
from .simulate import History, HistoryPolicy

__all__ = [
    "constant", "markov_as_history", "switch_after_first_jump",
    "peak_threshold", "time_threshold",
]


def constant(action: int) -> HistoryPolicy:
    """Always the same action."""
    return HistoryPolicy(f"constant-{action}", lambda t, h: action)


def markov_as_history(control: MarkovControl) -> HistoryPolicy:
    """A stationary state-feedback control wrapped as a history rule.

    Thinning under this rule must agree in law with the competing
    exponential simulator under the same control.
    """
    def rule(t: float, h: History) -> int:
        return control.action_at(h.current_state)
    return HistoryPolicy("markov-as-history", rule)


def switch_after_first_jump(before: int, after: int) -> HistoryPolicy:
    """Use `before` until the first accepted jump, then `after`."""
    def rule(t: float, h: History) -> int:
        return after if h.jump_count > 0 else before
    return HistoryPolicy("switch-after-first-jump", rule)


def peak_threshold(threshold: int, low: int, high: int) -> HistoryPolicy:
    """Switch permanently to `high` once the running maximum of the
    path reaches the threshold.  Depends on the whole past, not just
    the current state."""
    def rule(t: float, h: History) -> int:
        return high if h.peak_state >= threshold else low
    return HistoryPolicy(f"peak-threshold-{threshold}", rule)


def time_threshold(t_switch: float, early: int, late: int) -> HistoryPolicy:
    """Deterministic-in-time rule: `early` before t_switch, then
    `late`.  Time-dependent, hence outside the stationary class."""
    def rule(t: float, h: History) -> int:
        return late if t >= t_switch else early
    return HistoryPolicy(f"time-threshold-{t_switch:g}", rule)
