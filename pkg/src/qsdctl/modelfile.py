"""Model files: a small INI dialect.

A model file has exactly five sections::

    [controls]
    actions = keep cull          # ordered action names
    cull.kd = 1.5                # per-action numeric parameters

    [rates]                      # expressions in n and action params
    birth = 2 * n
    death = kd * n^2
    cost = 1

    [progeny]
    kind = table                 # or geometric
    p = 1.0                      # table: probabilities for k = 1, 2, ...
    # kind = geometric needs k_max = <int> and ratio = <expr in params>

    [constants]                  # declared standing-assumption constants
    b_bar = 2
    m_bound = 1
    d_bar = kd_max * n^2         # expression in n only
    d_lower = 1                  # optional, with epsilon
    epsilon = 1

    [truncation]
    n = 200

Unknown sections or keys are hard errors; silent typo tolerance has
cost too many afternoons.  Progeny tables are shared by all actions;
action-dependent progeny goes through the geometric kind, whose ratio
expression is evaluated per action on its parameters.  Loading runs
the standing-assumption checks and warns (never blocks) on failures.
"""

from __future__ import annotations

import configparser
import warnings
from pathlib import Path

import numpy as np

from .errors import HypothesisFailureWarning, ModelError
from .expressions import parse_rate_expression
from .models import (Action, ControlSet, HypothesisConstants, ModelSpec,
                     ProgenyDist, validate_hypotheses)

__all__ = [
    "parse_model", "load_model", "builtin_dir", "list_builtin",
    "load_builtin", "resolve_model",
]

_SECTIONS = ("controls", "rates", "progeny", "constants", "truncation")


def _float(section: str, key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ModelError(
            f"[{section}] {key} must be a number, got {raw!r}") from None


def _take(options: dict, section: str, key: str, required=True) -> str | None:
    if key not in options:
        if required:
            raise ModelError(f"[{section}] is missing required key {key!r}")
        return None
    return options.pop(key)


def _reject_leftovers(options: dict, section: str):
    if options:
        raise ModelError(
            f"unknown key {sorted(options)[0]!r} in [{section}]")


def _parse_controls(options: dict) -> ControlSet:
    names = _take(options, "controls", "actions").split()
    if not names:
        raise ModelError("[controls] actions must list at least one name")
    params: dict[str, dict[str, float]] = {n: {} for n in names}
    for key in list(options):
        if "." not in key:
            raise ModelError(
                f"unknown key {key!r} in [controls]; per-action parameters "
                "are written action.param")
        owner, param = key.split(".", 1)
        if owner not in params:
            raise ModelError(
                f"[controls] {key!r} names unknown action {owner!r}")
        if not param.isidentifier() or param == "n":
            raise ModelError(
                f"[controls] parameter name {param!r} is not usable "
                "(identifiers only, and n is the state)")
        params[owner][param] = _float("controls", key, options.pop(key))
    return ControlSet(tuple(Action(n, params[n]) for n in names))


def _parse_progeny(options: dict, controls: ControlSet) -> ProgenyDist:
    kind = _take(options, "progeny", "kind")
    if kind == "table":
        raw = _take(options, "progeny", "p").split()
        probs = [_float("progeny", "p", tok) for tok in raw]
        _reject_leftovers(options, "progeny")
        return ProgenyDist.from_table(probs, controls.size)
    if kind == "geometric":
        k_max = int(_float("progeny", "k_max",
                           _take(options, "progeny", "k_max")))
        expr = parse_rate_expression(_take(options, "progeny", "ratio"))
        _reject_leftovers(options, "progeny")
        ratios = []
        for a in controls.actions:
            extra = expr.variables() - set(a.params)
            if extra:
                raise ModelError(
                    f"[progeny] ratio uses {sorted(extra)[0]!r} which action "
                    f"{a.name!r} does not declare")
            ratios.append(float(expr.evaluate(dict(a.params))))
        return ProgenyDist.geometric(np.array(ratios), k_max)
    raise ModelError(
        f"[progeny] kind must be 'table' or 'geometric', got {kind!r}")


def _parse_constants(options: dict) -> HypothesisConstants:
    b_bar = _float("constants", "b_bar", _take(options, "constants", "b_bar"))
    m_bound = _float("constants", "m_bound",
                     _take(options, "constants", "m_bound"))
    d_bar = parse_rate_expression(_take(options, "constants", "d_bar"))
    d_lower = _take(options, "constants", "d_lower", required=False)
    epsilon = _take(options, "constants", "epsilon", required=False)
    _reject_leftovers(options, "constants")
    return HypothesisConstants(
        b_bar=b_bar, m_bound=m_bound, d_bar=d_bar,
        d_lower=None if d_lower is None else _float(
            "constants", "d_lower", d_lower),
        epsilon=None if epsilon is None else _float(
            "constants", "epsilon", epsilon))


def parse_model(text: str, name: str = "model") -> ModelSpec:
    """Parse model-file text.  Every schema violation is a ModelError
    naming the offending section and key."""
    cp = configparser.ConfigParser(
        inline_comment_prefixes=("#",), interpolation=None, strict=True)
    cp.optionxform = str  # keys are case sensitive
    try:
        cp.read_string(text, source=name)
    except configparser.Error as e:
        raise ModelError(f"malformed model file {name}: {e}") from None
    unknown = set(cp.sections()) - set(_SECTIONS)
    if unknown:
        raise ModelError(f"unknown section [{sorted(unknown)[0]}]")
    missing = [s for s in _SECTIONS if s not in cp.sections()]
    if missing:
        raise ModelError(f"model file is missing section [{missing[0]}]")

    sections = {s: dict(cp.items(s)) for s in _SECTIONS}
    controls = _parse_controls(sections["controls"])

    rates = sections["rates"]
    exprs = {}
    for key in ("birth", "death", "cost"):
        exprs[key] = parse_rate_expression(_take(rates, "rates", key))
    _reject_leftovers(rates, "rates")
    for key, expr in exprs.items():
        for a in controls.actions:
            extra = expr.variables() - {"n"} - set(a.params)
            if extra:
                raise ModelError(
                    f"[rates] {key} uses {sorted(extra)[0]!r} which action "
                    f"{a.name!r} does not declare")

    progeny = _parse_progeny(sections["progeny"], controls)
    constants = _parse_constants(sections["constants"])

    trunc = sections["truncation"]
    level = int(_float("truncation", "n", _take(trunc, "truncation", "n")))
    _reject_leftovers(trunc, "truncation")
    if level < 1:
        raise ModelError("[truncation] n must be >= 1")

    model = ModelSpec(name=name, controls=controls, birth=exprs["birth"],
                      death=exprs["death"], cost=exprs["cost"],
                      progeny=progeny, constants=constants, level=level)
    report = validate_hypotheses(model)
    failing = [c.clause for c in report.clauses if c.status == "fail"]
    if failing:
        warnings.warn(
            f"model {name}: standing assumptions fail on 1..{report.n_check}: "
            f"{', '.join(failing)} (solvers proceed anyway)",
            HypothesisFailureWarning, stacklevel=2)
    return model


def load_model(path: str | Path) -> ModelSpec:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ModelError(f"cannot read model file {p}: {e}") from None
    return parse_model(text, name=p.stem)


def builtin_dir() -> Path:
    return Path(__file__).parent / "examples"


def list_builtin() -> list[str]:
    return sorted(p.stem for p in builtin_dir().glob("*.model"))


def load_builtin(name: str) -> ModelSpec:
    p = builtin_dir() / f"{name}.model"
    if not p.is_file():
        raise ModelError(
            f"no bundled model {name!r}; available: {', '.join(list_builtin())}")
    return load_model(p)


def resolve_model(spec: str) -> ModelSpec:
    """A CLI convenience: a path to a .model file, or a bundled name."""
    p = Path(spec)
    if p.is_file():
        return load_model(p)
    if spec in list_builtin():
        return load_builtin(spec)
    raise ModelError(
        f"{spec!r} is neither a readable file nor a bundled model "
        f"(bundled: {', '.join(list_builtin())})")
