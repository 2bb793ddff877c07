"""Simulated decision modules: fault profiles and per-frame output production.

A module's only influence channel is its signed outputs and protocol messages;
nothing here lets one module touch another's state.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from typing import Optional

from .core import DecisionSpace, DecisionValue, KeyRegistry, ModuleOutput, canonical, digest, make_output

HONEST_CONFIDENCE = 0.9
BYZANTINE_CONFIDENCE = 1.0  # a liar claims certainty


@dataclass(frozen=True)
class FaultProfile:
    """One module's behavior.  ``kind`` selects the variant; the remaining
    fields apply only where noted."""

    kind: str  # honest | diverse_honest | crash | silent | slow | byzantine_fixed | byzantine_random | byzantine_equivocate
    error_rate: float = 0.0          # diverse_honest
    perturb_seed: int = 0            # diverse_honest
    at_frame: int = 0                # crash
    delay_rounds: int = 1            # slow
    bad_label: Optional[str] = None  # byzantine_fixed
    seed: int = 0                    # byzantine_random
    label_a: Optional[str] = None    # byzantine_equivocate
    label_b: Optional[str] = None    # byzantine_equivocate
    base_confidence: Optional[float] = None
    on_restart: str = "same"         # same | honest

    KINDS = (
        "honest",
        "diverse_honest",
        "crash",
        "silent",
        "slow",
        "byzantine_fixed",
        "byzantine_random",
        "byzantine_equivocate",
    )
    BYZANTINE_KINDS = ("byzantine_fixed", "byzantine_random", "byzantine_equivocate")
    FAULTY_KINDS = BYZANTINE_KINDS + ("crash", "silent", "slow", "diverse_honest")

    def __post_init__(self) -> None:
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown fault profile {self.kind!r}")
        if not 0.0 <= self.error_rate <= 1.0:
            raise ValueError(f"error_rate {self.error_rate} outside [0, 1]")
        if self.at_frame < 0:
            raise ValueError("crash frame must be non-negative")
        if self.kind == "slow" and self.delay_rounds < 1:
            raise ValueError("slow profile needs delay_rounds >= 1")
        if self.kind == "byzantine_fixed" and self.bad_label is None:
            raise ValueError("byzantine_fixed needs a bad_label")
        if self.kind == "byzantine_equivocate":
            if self.label_a is None or self.label_b is None or self.label_a == self.label_b:
                raise ValueError("byzantine_equivocate needs two distinct labels")
        if self.on_restart not in ("same", "honest"):
            raise ValueError(f"on_restart must be 'same' or 'honest', got {self.on_restart!r}")

    @property
    def byzantine(self) -> bool:
        return self.kind in self.BYZANTINE_KINDS

    @property
    def faulty(self) -> bool:
        return self.kind in self.FAULTY_KINDS

    def check_labels(self, space: DecisionSpace) -> list[str]:
        errors = []
        for name in ("bad_label", "label_a", "label_b"):
            label = getattr(self, name)
            if label is not None and label not in space:
                errors.append(f"profile {self.kind}: {name} {label!r} not in decision space")
        return errors


@dataclass(frozen=True)
class ObservationTable:
    """Per-frame ground truth, per-module observation overrides, and the set of
    action-critical frames (where NoQuorum escalates to safe mode)."""

    ground_truth: dict[int, str]                 # frame -> label
    overrides: dict[tuple[int, int], str]        # (frame, module_id) -> label
    critical_frames: frozenset[int] = frozenset()

    def validate(self, space: DecisionSpace, frames: int, n: int) -> list[str]:
        errors = []
        for frame in range(frames):
            if frame not in self.ground_truth:
                errors.append(f"frame {frame}: missing ground truth")
            elif self.ground_truth[frame] not in space:
                errors.append(
                    f"frame {frame}: ground truth {self.ground_truth[frame]!r} not in decision space"
                )
        for (frame, module_id), label in sorted(self.overrides.items()):
            if label not in space:
                errors.append(f"frame {frame}: label {label!r} not in decision space")
            if not 0 <= module_id < n:
                errors.append(f"frame {frame}: observation for unknown module {module_id}")
        return errors

    def observed(self, space: DecisionSpace, frame: int, module_id: int) -> DecisionValue:
        label = self.overrides.get((frame, module_id), self.ground_truth[frame])
        return space.value(label)

    def truth(self, space: DecisionSpace, frame: int) -> DecisionValue:
        return space.value(self.ground_truth[frame])


STATUS_ACTIVE = "active"
STATUS_ISOLATED = "isolated"
STATUS_RESTARTING = "restarting"

_TRANSITIONS = {
    STATUS_ACTIVE: STATUS_ISOLATED,
    STATUS_ISOLATED: STATUS_RESTARTING,
    STATUS_RESTARTING: STATUS_ACTIVE,
}


@dataclass
class ModuleState:
    module_id: int
    profile: FaultProfile
    last_committed_frame: int = -1
    status: str = STATUS_ACTIVE

    def _advance(self, to: str) -> None:
        if _TRANSITIONS[self.status] != to:
            raise ValueError(f"illegal status transition {self.status} -> {to}")
        self.status = to

    def isolate(self) -> None:
        self._advance(STATUS_ISOLATED)


class NoOutput:
    """Sentinel: the module produced nothing this frame."""

    _instance: "NoOutput" = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "NoOutput"


NO_OUTPUT = NoOutput()


def module_rng(scenario_seed: int, module_id: int, perturb_seed: int = 0) -> random.Random:
    """Private per-module stream; adding a module never perturbs the others."""
    seed_bytes = digest(canonical("module-rng", scenario_seed, module_id, perturb_seed))
    return random.Random(int.from_bytes(seed_bytes[:8], "big"))


def confidence_of(profile: FaultProfile) -> float:
    """Self-reported confidence attached to an output."""
    if profile.base_confidence is not None:
        return profile.base_confidence
    if profile.byzantine:
        return BYZANTINE_CONFIDENCE
    return HONEST_CONFIDENCE


def produce_output(
    state: ModuleState,
    frame: int,
    observation: DecisionValue,
    space: DecisionSpace,
    registry: KeyRegistry,
    rng: random.Random,
):
    """One module's proposal for one frame, per its fault profile.

    Returns a ModuleOutput, NO_OUTPUT, or for an equivocator a pair of
    conflicting ModuleOutputs (partition assignment is the caller's job).
    Slow modules produce normally; their delay is applied by the network.
    """
    if state.status != STATUS_ACTIVE:
        raise ValueError(f"module {state.module_id} is {state.status}, not active")
    if observation.label not in space:
        raise ValueError(f"observation {observation.label!r} not in decision space")
    profile = state.profile
    conf = confidence_of(profile)
    mid = state.module_id

    if profile.kind == "silent":
        return NO_OUTPUT
    if profile.kind == "crash":
        if frame >= profile.at_frame:
            return NO_OUTPUT
        return make_output(registry, mid, frame, observation, conf)
    if profile.kind in ("honest", "slow"):
        return make_output(registry, mid, frame, observation, conf)
    if profile.kind == "diverse_honest":
        value = observation
        if rng.random() < profile.error_rate:
            wrong = [l for l in space.labels if l != observation.label]
            if wrong:
                value = space.value(rng.choice(wrong))
        return make_output(registry, mid, frame, value, conf)
    if profile.kind == "byzantine_fixed":
        return make_output(registry, mid, frame, space.value(profile.bad_label), conf)
    if profile.kind == "byzantine_random":
        return make_output(registry, mid, frame, space.value(rng.choice(space.labels)), conf)
    if profile.kind == "byzantine_equivocate":
        out_a = make_output(registry, mid, frame, space.value(profile.label_a), conf)
        out_b = make_output(registry, mid, frame, space.value(profile.label_b), conf)
        return (out_a, out_b)
    raise AssertionError(profile.kind)


def begin_restart(state: ModuleState) -> ModuleState:
    """Move an isolated module into the restarting state; it becomes active
    again only once a state snapshot is applied."""
    if state.status not in (STATUS_ISOLATED,):
        raise ValueError(f"cannot restart a module in status {state.status!r}")
    profile = state.profile
    if profile.on_restart == "honest":
        profile = FaultProfile(kind="honest", base_confidence=profile.base_confidence)
    return ModuleState(
        module_id=state.module_id,
        profile=profile,
        last_committed_frame=state.last_committed_frame,
        status=STATUS_RESTARTING,
    )


def complete_restart(state: ModuleState, snapshot_frame: int) -> ModuleState:
    if state.status != STATUS_RESTARTING:
        raise ValueError(f"cannot activate a module in status {state.status!r}")
    return replace(state, status=STATUS_ACTIVE, last_committed_frame=snapshot_frame)


def equivocation_proof_outputs(registry: KeyRegistry, a: ModuleOutput, b: ModuleOutput) -> bool:
    """Two verified outputs from one signer for one frame with different values
    are a proof of equivocation."""
    from .core import verify_output

    return (
        a.module_id == b.module_id
        and a.frame == b.frame
        and a.value != b.value
        and verify_output(registry, a)
        and verify_output(registry, b)
    )
