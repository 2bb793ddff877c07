"""Protocol messages exchanged between replicas, with canonical byte layouts.

Kind tags: 1=PrePrepare 2=Prepare 3=Commit 4=ViewChange 5=NewView 6=Reply
7=StateRequest 8=StateSnapshot 9=CheckpointAttest.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from .core import AuthTag, DecisionValue, KeyRegistry, canonical, digest


@dataclass(frozen=True)
class PrePrepare:
    KIND = 1
    frame: int
    view: int
    value_digest: bytes
    value: DecisionValue

    def payload(self) -> bytes:
        return canonical(self.KIND, self.frame, self.view, self.value_digest, self.value)


@dataclass(frozen=True)
class Prepare:
    KIND = 2
    frame: int
    view: int
    value_digest: bytes
    value: DecisionValue

    def payload(self) -> bytes:
        return canonical(self.KIND, self.frame, self.view, self.value_digest, self.value)


@dataclass(frozen=True)
class Commit:
    KIND = 3
    frame: int
    view: int
    value_digest: bytes
    value: DecisionValue

    def payload(self) -> bytes:
        return canonical(self.KIND, self.frame, self.view, self.value_digest, self.value)


@dataclass(frozen=True)
class Signed:
    """A protocol message plus its sender's authentication tag."""

    msg: "Message"
    sender: int
    tag: AuthTag

    def verify(self, registry: KeyRegistry) -> bool:
        return registry.verify(self.tag, self.sender, self.msg.payload())


def sign_message(registry: KeyRegistry, sender: int, msg: "Message") -> Signed:
    return Signed(msg=msg, sender=sender, tag=registry.sign(sender, msg.payload()))


@dataclass(frozen=True)
class EquivocationProof:
    """Two verified proposal endorsements from one signer, same frame and view,
    with conflicting digests."""

    first: Signed
    second: Signed

    def valid(self, registry: KeyRegistry) -> bool:
        a, b = self.first, self.second
        if a.sender != b.sender:
            return False
        ma, mb = a.msg, b.msg
        if not isinstance(ma, (PrePrepare, Prepare, Commit)):
            return False
        if not isinstance(mb, (PrePrepare, Prepare, Commit)):
            return False
        if ma.frame != mb.frame or ma.view != mb.view:
            return False
        if ma.value_digest == mb.value_digest:
            return False
        return a.verify(registry) and b.verify(registry)


@dataclass(frozen=True)
class PrepareCertificate:
    """Proof that 2f+1 distinct replicas endorsed one digest in one view."""

    frame: int
    view: int
    value_digest: bytes
    value: DecisionValue
    votes: tuple[Signed, ...]

    def payload(self) -> bytes:
        return canonical(
            "prepare-cert",
            self.frame,
            self.view,
            self.value_digest,
            self.value,
            tuple(v.msg.payload() for v in self.votes),
        )

    def valid(self, registry: KeyRegistry, quorum: int) -> bool:
        signers = set()
        for vote in self.votes:
            m = vote.msg
            if not isinstance(m, Prepare):
                return False
            if (m.frame, m.view, m.value_digest) != (self.frame, self.view, self.value_digest):
                return False
            if not vote.verify(registry):
                return False
            signers.add(vote.sender)
        return len(signers) >= quorum


@dataclass(frozen=True)
class ViewChange:
    KIND = 4
    frame: int
    new_view: int
    cert: Optional[PrepareCertificate]
    evidence: Optional[EquivocationProof] = None

    def payload(self) -> bytes:
        cert_bytes = digest(self.cert.payload()) if self.cert else b""
        return canonical(self.KIND, self.frame, self.new_view, cert_bytes)


@dataclass(frozen=True)
class NewView:
    KIND = 5
    frame: int
    view: int
    view_changes: tuple[Signed, ...]
    proposal: Signed  # the new leader's PrePrepare for this view

    def payload(self) -> bytes:
        return canonical(
            self.KIND,
            self.frame,
            self.view,
            tuple(v.msg.payload() for v in self.view_changes),
            self.proposal.msg.payload(),
        )


@dataclass(frozen=True)
class Reply:
    KIND = 6
    frame: int
    value: DecisionValue

    def payload(self) -> bytes:
        return canonical(self.KIND, self.frame, self.value)


@dataclass(frozen=True)
class StateRequest:
    KIND = 7
    up_to_frame: int

    def payload(self) -> bytes:
        return canonical(self.KIND, self.up_to_frame)


@dataclass(frozen=True)
class CheckpointAttest:
    KIND = 9
    up_to_frame: int
    log_digest: bytes

    def payload(self) -> bytes:
        return canonical(self.KIND, self.up_to_frame, self.log_digest)


@dataclass(frozen=True)
class Checkpoint:
    """A committed-log prefix plus 2f+1 matching attestations over its digest."""

    up_to_frame: int
    values: tuple[DecisionValue, ...]  # committed values for frames 0..up_to_frame
    log_digest: bytes
    attestations: tuple[Signed, ...]

    def valid(self, registry: KeyRegistry, quorum: int) -> bool:
        if len(self.values) != self.up_to_frame + 1:
            return False
        if log_prefix_digest(self.values) != self.log_digest:
            return False
        signers = set()
        for att in self.attestations:
            m = att.msg
            if not isinstance(m, CheckpointAttest):
                return False
            if m.up_to_frame != self.up_to_frame or m.log_digest != self.log_digest:
                return False
            if not att.verify(registry):
                return False
            signers.add(att.sender)
        return len(signers) >= quorum


@dataclass(frozen=True)
class FrameCert:
    """A commit certificate for one frame: 2f+1 matching signed Commits."""

    frame: int
    value: DecisionValue
    votes: tuple[Signed, ...]

    def valid(self, registry: KeyRegistry, quorum: int) -> bool:
        signers = set()
        views = {}
        for vote in self.votes:
            m = vote.msg
            if not isinstance(m, Commit) or m.frame != self.frame or m.value != self.value:
                return False
            if not vote.verify(registry):
                return False
            views.setdefault(m.view, set()).add(vote.sender)
            signers.add(vote.sender)
        # All counted commits must come from a single view's quorum.
        return any(len(s) >= quorum for s in views.values())


@dataclass(frozen=True)
class StateSnapshot:
    KIND = 8
    checkpoint: Optional[Checkpoint]
    frame_certs: tuple[FrameCert, ...]  # frames after the checkpoint, ascending

    def payload(self) -> bytes:
        cp = b""
        if self.checkpoint:
            cp = canonical(
                self.checkpoint.up_to_frame,
                self.checkpoint.log_digest,
                tuple(a.msg.payload() for a in self.checkpoint.attestations),
            )
        certs = tuple(
            canonical(c.frame, c.value, tuple(v.msg.payload() for v in c.votes))
            for c in self.frame_certs
        )
        return canonical(self.KIND, cp, certs)

    def up_to_frame(self) -> int:
        if self.frame_certs:
            return self.frame_certs[-1].frame
        if self.checkpoint:
            return self.checkpoint.up_to_frame
        return -1


@dataclass(frozen=True)
class OutputDigest:
    """Vote-only fast path: a module announces only the hash of its output."""

    KIND = 10
    frame: int
    value_digest: bytes

    def payload(self) -> bytes:
        return canonical(self.KIND, self.frame, self.value_digest)


Message = Union[
    PrePrepare,
    Prepare,
    Commit,
    ViewChange,
    NewView,
    Reply,
    StateRequest,
    StateSnapshot,
    CheckpointAttest,
    OutputDigest,
]

KIND_NAMES = {
    1: "preprepare",
    2: "prepare",
    3: "commit",
    4: "viewchange",
    5: "newview",
    6: "reply",
    7: "staterequest",
    8: "statesnapshot",
    9: "checkpoint",
    10: "outputdigest",
}


def log_prefix_digest(values) -> bytes:
    """Digest of a committed decision-log prefix (frames 0..k in order)."""
    return digest(canonical("log-prefix", tuple(values)))
