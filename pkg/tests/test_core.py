"""Quorum arithmetic, canonical serialization, and simulated authentication."""
import itertools

import pytest
from hypothesis import given, strategies as st

from bftensemble.core import (
    DecisionSpace,
    DecisionValue,
    KeyRegistry,
    QuorumConfig,
    canonical,
    client_match,
    digest,
    make_output,
    min_replicas,
    output_payload,
    quorum_size,
    short_digest,
    verify_output,
)


class TestQuorumArithmetic:
    # (f, min replicas, quorum, matching client replies)
    EXPECTED = [
        (0, 1, 1, 1),
        (1, 4, 3, 2),
        (2, 7, 5, 3),
        (3, 10, 7, 4),
    ]

    @pytest.mark.parametrize("f,n,q,r", EXPECTED)
    def test_reference_values(self, f, n, q, r):
        assert min_replicas(f) == n
        assert quorum_size(f) == q
        assert client_match(f) == r

    @pytest.mark.parametrize("f", [1, 2])
    def test_quorum_intersection_contains_an_honest_replica(self, f):
        """Any two 2f+1-subsets of 3f+1 replicas share more than f members,
        so their intersection cannot be purely Byzantine.  Exhaustive."""
        n, q = min_replicas(f), quorum_size(f)
        replicas = range(n)
        for a in itertools.combinations(replicas, q):
            for b in itertools.combinations(replicas, q):
                assert len(set(a) & set(b)) >= f + 1

    def test_config_rejects_insufficient_replicas(self):
        with pytest.raises(ValueError):
            QuorumConfig(n=3, f=1)

    def test_config_relaxed_for_vote_only_ensembles(self):
        cfg = QuorumConfig(n=3, f=1, enforce_resilience=False)
        assert cfg.quorum == 3
        assert cfg.reply_matches == 2

    def test_config_properties(self):
        cfg = QuorumConfig(n=4, f=1)
        assert cfg.quorum == 3
        assert cfg.reply_matches == 2


class TestDecisionSpace:
    def test_membership_and_lookup(self):
        space = DecisionSpace(labels=("stop", "go"), safe_default="stop")
        assert "stop" in space
        assert "reverse" not in space
        assert space.value("go") == DecisionValue("go")

    def test_unknown_label_rejected(self):
        space = DecisionSpace(labels=("stop", "go"), safe_default="stop")
        with pytest.raises(ValueError):
            space.value("reverse")

    def test_safe_default_must_be_a_label(self):
        with pytest.raises(ValueError):
            DecisionSpace(labels=("stop", "go"), safe_default="reverse")

    def test_duplicate_labels_rejected(self):
        with pytest.raises(ValueError):
            DecisionSpace(labels=("stop", "stop"), safe_default="stop")


class TestCanonicalSerialization:
    def test_deterministic(self):
        a = canonical("prepare", 3, 0, DecisionValue("stop"))
        b = canonical("prepare", 3, 0, DecisionValue("stop"))
        assert a == b

    def test_type_tags_distinguish_look_alikes(self):
        # "1" the string and 1 the int serialize differently
        assert canonical("1") != canonical(1)
        assert canonical(1) != canonical(1.0)
        assert canonical(b"x") != canonical("x")

    def test_field_boundaries_are_unambiguous(self):
        # concatenation cannot move bytes across field boundaries
        assert canonical("ab", "c") != canonical("a", "bc")
        assert canonical(("a", "b")) != canonical("a", "b")

    def test_none_is_encodable(self):
        assert canonical(None) != canonical("")

    @given(
        st.lists(
            st.one_of(
                st.integers(min_value=-(2**63), max_value=2**63 - 1),
                st.text(),
                st.booleans(),
            ),
            max_size=6,
        )
    )
    def test_digest_is_stable(self, fields):
        assert digest(canonical(*fields)) == digest(canonical(*fields))

    def test_digest_width(self):
        assert len(digest(b"payload")) == 32
        assert len(short_digest(b"payload")) == 12


class TestAuthentication:
    def fresh_registry(self, n=4, seed=99):
        return KeyRegistry(seed, range(n))

    def test_sign_verify_roundtrip(self):
        reg = self.fresh_registry()
        tag = reg.sign(2, b"hello")
        assert reg.verify(tag, 2, b"hello")

    def test_wrong_signer_fails(self):
        reg = self.fresh_registry()
        tag = reg.sign(2, b"hello")
        assert not reg.verify(tag, 3, b"hello")

    def test_unknown_signer_raises(self):
        from bftensemble.core import UnknownSignerError

        reg = self.fresh_registry()
        with pytest.raises(UnknownSignerError):
            reg.sign(17, b"hello")

    def test_independent_master_seeds_disagree(self):
        a = KeyRegistry(1, range(4))
        b = KeyRegistry(2, range(4))
        tag = a.sign(0, b"payload")
        assert not b.verify(tag, 0, b"payload")

    @given(payload=st.binary(min_size=1, max_size=64), flip=st.integers(min_value=0))
    def test_tampered_payload_rejected(self, payload, flip):
        reg = KeyRegistry(7, range(4))
        tag = reg.sign(1, payload)
        pos = flip % len(payload)
        tampered = bytes(
            b ^ (1 if i == pos else 0) for i, b in enumerate(payload)
        )
        assert not reg.verify(tag, 1, tampered)

    def test_output_verification(self):
        reg = self.fresh_registry()
        out = make_output(reg, 1, frame=0, value=DecisionValue("go"), confidence=0.9)
        assert verify_output(reg, out)

    def test_forged_output_rejected(self):
        reg = self.fresh_registry()
        out = make_output(reg, 1, frame=0, value=DecisionValue("go"), confidence=0.9)
        forged = type(out)(
            module_id=out.module_id,
            frame=out.frame,
            value=DecisionValue("stop"),
            confidence=out.confidence,
            sig=out.sig,
        )
        assert not verify_output(reg, forged)

    def test_payload_binds_all_fields(self):
        a = output_payload(1, 0, DecisionValue("go"), 0.9)
        assert a != output_payload(2, 0, DecisionValue("go"), 0.9)
        assert a != output_payload(1, 1, DecisionValue("go"), 0.9)
        assert a != output_payload(1, 0, DecisionValue("stop"), 0.9)
        assert a != output_payload(1, 0, DecisionValue("go"), 0.8)
