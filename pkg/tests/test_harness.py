"""Fault profile behaviors, module lifecycle, and per-module randomness."""
import pytest

from bftensemble.core import DecisionSpace, DecisionValue, KeyRegistry
from bftensemble.harness import (
    NO_OUTPUT,
    STATUS_ACTIVE,
    STATUS_ISOLATED,
    STATUS_RESTARTING,
    FaultProfile,
    ModuleState,
    ObservationTable,
    begin_restart,
    complete_restart,
    confidence_of,
    equivocation_proof_outputs,
    module_rng,
    produce_output,
)

SPACE = DecisionSpace(labels=("stop", "go", "slow"), safe_default="stop")
REGISTRY = KeyRegistry(21, range(4))
GO = SPACE.value("go")


def state_for(profile, module_id=0):
    return ModuleState(module_id=module_id, profile=profile)


class TestProfiles:
    def test_honest_reports_observation(self):
        rng = module_rng(1, 0)
        out = produce_output(state_for(FaultProfile(kind="honest")), 0, GO, SPACE, REGISTRY, rng)
        assert out.value == GO
        assert out.confidence == pytest.approx(0.9)

    def test_silent_produces_nothing(self):
        rng = module_rng(1, 0)
        out = produce_output(state_for(FaultProfile(kind="silent")), 0, GO, SPACE, REGISTRY, rng)
        assert out is NO_OUTPUT

    def test_crash_stops_at_configured_frame(self):
        profile = FaultProfile(kind="crash", at_frame=2)
        rng = module_rng(1, 0)
        st = state_for(profile)
        assert produce_output(st, 1, GO, SPACE, REGISTRY, rng) is not NO_OUTPUT
        assert produce_output(st, 2, GO, SPACE, REGISTRY, rng) is NO_OUTPUT
        assert produce_output(st, 3, GO, SPACE, REGISTRY, rng) is NO_OUTPUT

    def test_byzantine_fixed_ignores_observation(self):
        profile = FaultProfile(kind="byzantine_fixed", bad_label="stop")
        rng = module_rng(1, 0)
        out = produce_output(state_for(profile), 0, GO, SPACE, REGISTRY, rng)
        assert out.value == SPACE.value("stop")
        assert out.confidence == pytest.approx(1.0)

    def test_equivocator_returns_a_conflicting_pair(self):
        profile = FaultProfile(kind="byzantine_equivocate", label_a="go", label_b="stop")
        rng = module_rng(1, 0)
        pair = produce_output(state_for(profile), 0, GO, SPACE, REGISTRY, rng)
        a, b = pair
        assert a.value != b.value
        assert a.module_id == b.module_id
        assert equivocation_proof_outputs(REGISTRY, a, b)

    def test_agreeing_outputs_are_not_an_equivocation_proof(self):
        rng = module_rng(1, 0)
        st = state_for(FaultProfile(kind="honest"))
        a = produce_output(st, 0, GO, SPACE, REGISTRY, rng)
        b = produce_output(st, 0, GO, SPACE, REGISTRY, rng)
        assert not equivocation_proof_outputs(REGISTRY, a, b)

    def test_diverse_honest_error_rate_zero_is_honest(self):
        profile = FaultProfile(kind="diverse_honest", error_rate=0.0)
        rng = module_rng(1, 0)
        for frame in range(20):
            out = produce_output(state_for(profile), frame, GO, SPACE, REGISTRY, rng)
            assert out.value == GO

    def test_diverse_honest_errors_land_inside_the_space(self):
        profile = FaultProfile(kind="diverse_honest", error_rate=1.0)
        rng = module_rng(1, 0)
        for frame in range(20):
            out = produce_output(state_for(profile), frame, GO, SPACE, REGISTRY, rng)
            assert out.value.label in SPACE
            assert out.value != GO  # error rate 1: always perturbed

    def test_byzantine_random_draws_from_the_space(self):
        profile = FaultProfile(kind="byzantine_random")
        rng = module_rng(1, 0)
        seen = {
            produce_output(state_for(profile), fr, GO, SPACE, REGISTRY, rng).value.label
            for fr in range(30)
        }
        assert seen <= set(SPACE.labels)
        assert len(seen) > 1

    def test_confidence_override(self):
        profile = FaultProfile(kind="honest", base_confidence=0.42)
        assert confidence_of(profile) == pytest.approx(0.42)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            FaultProfile(kind="gremlin")

    def test_label_membership_checked_against_space(self):
        profile = FaultProfile(kind="byzantine_fixed", bad_label="reverse")
        assert profile.check_labels(SPACE)


class TestDeterminism:
    def test_same_seed_same_stream(self):
        profile = FaultProfile(kind="byzantine_random")

        def stream():
            rng = module_rng(77, 2)
            return [
                produce_output(state_for(profile, 2), fr, GO, SPACE, REGISTRY, rng).value.label
                for fr in range(10)
            ]

        assert stream() == stream()

    def test_streams_are_module_independent(self):
        # module 0's stream does not depend on how many other modules exist
        a = module_rng(77, 0).random()
        b = module_rng(77, 0).random()
        other = module_rng(77, 1).random()
        assert a == b
        assert a != other

    def test_perturb_seed_shifts_the_stream(self):
        assert module_rng(77, 0, 0).random() != module_rng(77, 0, 1).random()


class TestLifecycle:
    def test_isolate_restart_recover(self):
        st = state_for(FaultProfile(kind="byzantine_fixed", bad_label="stop", on_restart="honest"))
        assert st.status == STATUS_ACTIVE
        st.isolate()
        assert st.status == STATUS_ISOLATED
        st = begin_restart(st)
        assert st.status == STATUS_RESTARTING
        assert st.profile.kind == "honest"  # restart wipes the fault
        st = complete_restart(st, snapshot_frame=4)
        assert st.status == STATUS_ACTIVE
        assert st.last_committed_frame == 4

    def test_restart_keeps_fault_by_default(self):
        st = state_for(FaultProfile(kind="byzantine_fixed", bad_label="stop"))
        st.isolate()
        st = begin_restart(st)
        assert st.profile.kind == "byzantine_fixed"

    def test_cannot_restart_an_active_module(self):
        st = state_for(FaultProfile(kind="honest"))
        with pytest.raises(ValueError):
            begin_restart(st)

    def test_isolated_module_produces_no_output(self):
        st = state_for(FaultProfile(kind="honest"))
        st.isolate()
        with pytest.raises(ValueError):
            produce_output(st, 0, GO, SPACE, REGISTRY, module_rng(1, 0))


class TestObservationTable:
    def test_override_and_fallthrough(self):
        table = ObservationTable(
            ground_truth={0: "go", 1: "stop"},
            overrides={(0, 2): "stop"},
            critical_frames=frozenset({1}),
        )
        assert table.observed(SPACE, 0, 2) == SPACE.value("stop")
        assert table.observed(SPACE, 0, 0) == SPACE.value("go")
        assert table.truth(SPACE, 1) == SPACE.value("stop")

    def test_validation_catches_unknown_labels(self):
        table = ObservationTable(
            ground_truth={0: "reverse"},
            overrides={(0, 9): "go"},
            critical_frames=frozenset(),
        )
        errors = table.validate(SPACE, frames=1, n=4)
        assert any("reverse" in e for e in errors)
        assert any("module" in e for e in errors)
