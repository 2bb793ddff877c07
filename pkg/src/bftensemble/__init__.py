"""Byzantine-fault-tolerant decision ensemble with a deterministic
fault-injection simulator."""

from .core import (
    BROADCAST,
    OBSERVER,
    AuthTag,
    DecisionSpace,
    DecisionValue,
    KeyRegistry,
    ModuleOutput,
    QuorumConfig,
    client_match,
    digest,
    min_replicas,
    quorum_size,
)
from .campaign import CampaignReport, fuzz_campaign
from .episode import EpisodeResult, run_episode
from .scenario import Scenario, ScenarioError, parse_scenario, parse_scenario_text
from .voter import Verdict, VoteStrategy, tally, weighted_tally

__all__ = [
    "BROADCAST",
    "OBSERVER",
    "AuthTag",
    "CampaignReport",
    "DecisionSpace",
    "DecisionValue",
    "EpisodeResult",
    "KeyRegistry",
    "ModuleOutput",
    "QuorumConfig",
    "Scenario",
    "ScenarioError",
    "Verdict",
    "VoteStrategy",
    "client_match",
    "digest",
    "fuzz_campaign",
    "min_replicas",
    "parse_scenario",
    "parse_scenario_text",
    "quorum_size",
    "run_episode",
    "tally",
    "weighted_tally",
]
