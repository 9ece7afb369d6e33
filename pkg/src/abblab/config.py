"""Sectioned text configuration for experiment runs.

Example::

    [rule]
    pmf = {3: 1.0}
    majority = true

    [pde]
    scheme = imex
    dx = 0.05
    dt = 0.01

    [mc]
    trials = 20000
    seed = 7

    [experiment]
    kind = phase_scan
    zeta = 1
    gamma = [1.1, 1.2, 1.3]

Values are read with ``ast.literal_eval`` and fall back to plain strings.
``thresholds`` may be given instead of ``majority`` as a dict mapping each
arity ``n`` to the list ``[eta_{n,1}, ..., eta_{n,n}]``.
"""

from __future__ import annotations

import ast
import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigurationError
from .nonlinearity import VotingRule, majority_rule

KINDS = ("phase_scan", "speed_fit", "crossval", "cdf_check", "certify")

PDE_KEYS = {"scheme", "dx", "dt", "L", "t_end", "steady_tol", "bc_right", "max_L"}
MC_KEYS = {"trials", "seed", "threads", "particle_cap"}


_BOOLS = {"true": True, "yes": True, "on": True, "false": False, "no": False, "off": False}


def _value(text: str):
    if text.strip().lower() in _BOOLS:
        return _BOOLS[text.strip().lower()]
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text.strip()


def _section(cp: configparser.ConfigParser, name: str) -> dict:
    if not cp.has_section(name):
        return {}
    return {k: _value(v) for k, v in cp.items(name)}


def rule_from_mapping(section: dict) -> VotingRule:
    if "pmf" not in section:
        raise ConfigurationError("[rule] needs a pmf, e.g. pmf = {3: 1.0}")
    pmf = section["pmf"]
    if not isinstance(pmf, dict):
        raise ConfigurationError("[rule] pmf must be a dict {arity: probability}")
    thr = section.get("thresholds", "majority")
    if section.get("majority") is True:
        thr = "majority"
    elif section.get("majority") is False and thr == "majority":
        raise ConfigurationError("[rule] majority = false needs an explicit thresholds dict")
    if thr == "majority":
        rule = majority_rule(pmf)
    elif isinstance(thr, dict):
        rule = VotingRule(pmf, {int(n): tuple(v) for n, v in thr.items()})
    else:
        raise ConfigurationError("[rule] thresholds must be 'majority' or a dict")
    name = section.get("name")
    return replace(rule, name=str(name)) if name else rule


@dataclass
class ExperimentConfig:
    kind: str
    rule: VotingRule
    zeta: float
    gammas: list
    pde: dict = field(default_factory=dict)
    mc: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    out_dir: str = "runs"
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if not self.zeta > 0:
            raise ConfigurationError("zeta must be positive")
        if not self.gammas:
            raise ConfigurationError("at least one gamma is required")
        unknown = set(self.pde) - PDE_KEYS
        if unknown:
            raise ConfigurationError(f"unknown [pde] keys: {sorted(unknown)}")
        unknown = set(self.mc) - MC_KEYS
        if unknown:
            raise ConfigurationError(f"unknown [mc] keys: {sorted(unknown)}")

    @property
    def gamma(self) -> float:
        return float(self.gammas[0])

    @property
    def seed(self) -> int:
        return int(self.mc.get("seed", 0))

    def echo(self) -> dict:
        return {
            "kind": self.kind,
            "rule": self.rule.describe(),
            "zeta": self.zeta,
            "gamma": list(self.gammas),
            "pde": dict(self.pde),
            "mc": dict(self.mc),
            "params": dict(self.params),
        }


def parse_config(text: str, *, kind: str | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";",))
    cp.optionxform = str
    cp.read_string(text)
    exp = _section(cp, "experiment")
    kind = kind or exp.pop("kind", None)
    exp.pop("kind", None)
    if kind is None:
        raise ConfigurationError("experiment kind missing (give [experiment] kind or the CLI argument)")
    gam = exp.pop("gamma", None)
    if gam is None:
        raise ConfigurationError("[experiment] needs gamma")
    gammas = [float(g) for g in (gam if isinstance(gam, (list, tuple)) else [gam])]
    zeta = float(exp.pop("zeta", 1.0))
    out_dir = str(exp.pop("out", "runs"))
    return ExperimentConfig(
        kind=kind,
        rule=rule_from_mapping(_section(cp, "rule")),
        zeta=zeta,
        gammas=gammas,
        pde=_section(cp, "pde"),
        mc=_section(cp, "mc"),
        params=exp,
        out_dir=out_dir,
        source={s: dict(cp.items(s)) for s in cp.sections()},
    )


def load_config(path, *, kind: str | None = None) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"config file {p} not found")
    return parse_config(p.read_text(), kind=kind)
