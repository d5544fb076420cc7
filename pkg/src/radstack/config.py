"""Config documents: the same JSON text format as scenario files, carrying
overrides for the planner, scorer, proposal, IDM, and simulator defaults.
Unknown keys are errors. RADSTACK_SEED overrides seed flags for CI runs.
"""

from __future__ import annotations

import json
import os
from dataclasses import replace

from .errors import ConfigError, IoError, ParseError
from .planner import PlannerConfig
from .proposals import IdmParams, ProposalConfig
from .scoring import ScoreWeights
from .simulator import SimConfig

_SECTIONS = {
    "planner": (
        "replan",
        "enable_adjacents",
        "enable_opposing",
        "enable_vocabulary",
        "enable_relaxation",
        "max_paths",
        "horizon_length",
        "min_progress",
        "learned_offsets",
        "planhead_budget",
    ),
    "weights": ("w_ttc", "w_dr", "w_sp", "w_ep", "w_cf", "w_goal"),
    "proposal": ("offsets", "speed_fractions", "horizon", "dt"),
    "idm": ("v0", "T_h", "s0", "a_max", "b_comf", "delta"),
    "sim": (
        "dt",
        "planner_period",
        "horizon",
        "agent_policy",
        "disturbances",
        "seed",
        "goal_radius",
        "deadlock_window",
        "deadlock_displacement",
        "record_breakdowns",
    ),
}
_TOP_KEYS = set(_SECTIONS) | {"model_path", "vocab_path"}


def load_config(path) -> dict:
    """Parse and validate a config document; unknown keys raise ConfigError."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except OSError as e:
        raise IoError(f"cannot read config file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ParseError(f"malformed config file {path}: {e}") from e
    validate_config(doc)
    return doc


def validate_config(doc: dict) -> None:
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for section, keys in _SECTIONS.items():
        if section not in doc:
            continue
        if not isinstance(doc[section], dict):
            raise ConfigError(f"config section {section!r} must be an object")
        bad = set(doc[section]) - set(keys)
        if bad:
            raise ConfigError(f"unknown keys in config section {section!r}: {sorted(bad)}")


def _tupled(value):
    if isinstance(value, list):
        return tuple(_tupled(v) for v in value)
    return value


def build_planner_config(doc: dict) -> PlannerConfig:
    cfg = PlannerConfig()
    if "proposal" in doc:
        cfg = replace(cfg, proposal=replace(cfg.proposal, **{k: _tupled(v) for k, v in doc["proposal"].items()}))
    if "weights" in doc:
        cfg = replace(cfg, weights=replace(cfg.weights, **doc["weights"]))
    if "idm" in doc:
        base = cfg.idm or IdmParams()
        cfg = replace(cfg, idm=replace(base, **doc["idm"]))
    if "planner" in doc:
        cfg = replace(cfg, **{k: _tupled(v) for k, v in doc["planner"].items()})
    return cfg


def build_sim_config(doc: dict) -> SimConfig:
    cfg = SimConfig()
    if "sim" in doc:
        cfg = replace(cfg, **{k: _tupled(v) for k, v in doc["sim"].items()})
    if "proposal" in doc:
        # Keep the simulated planning horizon in sync with proposal overrides.
        overrides = doc["proposal"]
        cfg = replace(
            cfg,
            dt=overrides.get("dt", cfg.dt),
            horizon=overrides.get("horizon", cfg.horizon),
        )
    return cfg


def resolve_seed(flag_value: int) -> int:
    """Seed from the CLI flag unless RADSTACK_SEED overrides it (CI hook)."""
    env = os.environ.get("RADSTACK_SEED")
    if env is None:
        return flag_value
    try:
        return int(env)
    except ValueError as e:
        raise ConfigError(f"RADSTACK_SEED must be an integer, got {env!r}") from e
