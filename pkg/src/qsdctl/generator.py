"""Truncated generator matrices.

The chain is cut at a level N.  Rows are the usual jump rates except
that every birth that would land at or above N is lumped onto column N,
so no probability mass leaves the window {0..N}.  A lumped birth from
state N itself would be a self-loop; self-loops carry no information in
a generator, so that mass cancels against the diagonal and the
effective outflow at N is the death rate alone.  Row 0 is identically
zero (absorbing).

The adjoint acts on measures: entry (x, y) of the adjoint is entry
(y, x) of the generator, so applying it to a distribution gives the
time derivative of the state law.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import CapExceededError, ModelError
from .models import MarkovControl, ModelSpec

__all__ = ["TruncatedGenerator", "build_generator", "adjoint",
           "enumerate_markov_controls"]


@dataclass(frozen=True, eq=False)
class TruncatedGenerator:
    """Dense generator on {0..N}.  Off-diagonal entries are jump rates,
    the diagonal makes every row sum to zero, and row 0 is zero."""

    level: int
    matrix: np.ndarray  # (N+1, N+1), float64

    @property
    def active(self) -> np.ndarray:
        """Restriction to the living states {1..N} (a view)."""
        return self.matrix[1:, 1:]

    def max_exit_rate(self) -> float:
        return float(np.max(-np.diag(self.matrix)))

    def uniformization_rate(self) -> float:
        """Rate strictly dominating every exit rate (1% headroom)."""
        r = self.max_exit_rate()
        return 1.01 * r if r > 0 else 1.0


def build_generator(model: ModelSpec, control: MarkovControl,
                    level: int | None = None) -> TruncatedGenerator:
    """Assemble the generator at the given truncation level under a
    stationary control.  The control must cover 1..level; longer
    controls are truncated.  Raises ModelError on a negative or
    non-finite rate, naming the offending state and action.
    """
    n = model.level if level is None else int(level)
    if n < 1:
        raise ModelError("truncation level must be >= 1")
    if control.level < n:
        raise ModelError(
            f"control covers states 1..{control.level}, need 1..{n}")
    control.check(model.num_actions)

    q = np.zeros((n + 1, n + 1))
    k_max = model.progeny.k_max
    for x in range(1, n + 1):
        a = control.action_at(x)
        b = model.birth_rate(x, a)
        d = model.death_rate(x, a)
        q[x, x - 1] += d
        if b > 0:
            pk = model.progeny.pmf(a)
            for k in range(1, k_max + 1):
                y = min(x + k, n)
                if y != x:  # a lumped self-loop at N cancels anyway
                    q[x, y] += b * pk[k - 1]
        q[x, x] = -q[x].sum()
    return TruncatedGenerator(n, q)


def adjoint(gen: TruncatedGenerator) -> np.ndarray:
    """Transpose of the generator; drives the forward (measure-side)
    evolution mu' = adjoint @ mu."""
    return gen.matrix.T.copy()


def enumerate_markov_controls(model: ModelSpec, level: int,
                              cap: int = 10 ** 6) -> Iterator[MarkovControl]:
    """All m^level stationary controls on 1..level in lexicographic
    order, (0,...,0) first.  Refuses when m^level exceeds cap."""
    m = model.num_actions
    if level < 1:
        raise ModelError("level must be >= 1")
    total = m ** level
    if total > cap:
        raise CapExceededError(
            f"enumeration of {m}^{level} = {total} controls exceeds cap {cap}")
    return (MarkovControl(t) for t in itertools.product(range(m), repeat=level))
