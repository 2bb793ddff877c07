"""PBFT-style replica state machine: lead, prepare, commit, change views,
checkpoint, and transfer state.

Each replica is a deterministic transition function (state, message) ->
(state, outbound messages).  Replicas never share state; everything flows
through the simulated network.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .core import (
    BROADCAST,
    OBSERVER,
    DecisionSpace,
    DecisionValue,
    KeyRegistry,
    ModuleOutput,
    QuorumConfig,
    canonical,
    digest,
)
from .messages import (
    Checkpoint,
    CheckpointAttest,
    Commit,
    EquivocationProof,
    FrameCert,
    NewView,
    Prepare,
    PrepareCertificate,
    PrePrepare,
    Reply,
    Signed,
    StateRequest,
    StateSnapshot,
    ViewChange,
    log_prefix_digest,
    sign_message,
)
from .simnet import timeout_check

PHASE_IDLE = "idle"
PHASE_PRE_PREPARED = "pre-prepared"
PHASE_PREPARED = "prepared"
PHASE_COMMITTED = "committed"

Outbound = tuple[int, Signed]  # (destination, signed message)


def value_digest(value: DecisionValue) -> bytes:
    return digest(canonical("decision", value))


def validate_proposal(own: Optional[DecisionValue], proposed: DecisionValue) -> bool:
    """Exact-match endorsement: a replica backs the leader's value only if it
    matches its own output.  Dissent is expressed by withholding the Prepare."""
    return own is not None and own == proposed


@dataclass
class FrameInstance:
    """Per-frame consensus bookkeeping for one replica."""

    frame: int
    own_output: Optional[DecisionValue]
    start_round: int
    view: int = 0
    view_start_round: int = 0
    phase: str = PHASE_IDLE
    proposal: Optional[Signed] = None  # accepted PrePrepare for the current view
    decided: bool = False
    decided_value: Optional[DecisionValue] = None
    decided_view: int = -1
    # view -> signer -> first signed Prepare/Commit seen
    prepares: dict = field(default_factory=dict)
    commits: dict = field(default_factory=dict)
    # new_view -> signer -> signed ViewChange
    view_changes: dict = field(default_factory=dict)
    # view -> digest -> first signed leader endorsement (equivocation detection)
    leader_endorsements: dict = field(default_factory=dict)
    prepared_cert: Optional[PrepareCertificate] = None
    evidence: Optional[EquivocationProof] = None
    newview_sent: set = field(default_factory=set)
    newview_processed: set = field(default_factory=set)
    viewchange_sent: set = field(default_factory=set)
    # protocol messages sent in the current view, re-broadcast while undecided
    # so that an unlucky drop does not cost a whole timeout
    outbox: list = field(default_factory=list)


class ProtocolViolation(Exception):
    pass


class Replica:
    """Honest PBFT replica for one module slot."""

    def __init__(
        self,
        module_id: int,
        cfg: QuorumConfig,
        space: DecisionSpace,
        registry: KeyRegistry,
        *,
        timeout_rounds: int = 10,
        execution_threshold: Optional[int] = None,
        evidence_fast_path: bool = True,
        checkpoint_interval: int = 5,
    ):
        self.module_id = module_id
        self.cfg = cfg
        self.space = space
        self.registry = registry
        self.timeout_rounds = timeout_rounds
        self.execution_threshold = max(cfg.quorum, execution_threshold or cfg.quorum)
        self.evidence_fast_path = evidence_fast_path
        self.checkpoint_interval = checkpoint_interval

        self.inst: Optional[FrameInstance] = None
        self.committed: dict[int, DecisionValue] = {}
        self.frame_certs: dict[int, FrameCert] = {}
        self.stable_checkpoint: Optional[Checkpoint] = None
        # up_to -> digest -> signer -> signed attest
        self._attest_votes: dict = {}
        self._attested_up_to = -1
        self.misbehavior: list[tuple[int, int, str]] = []  # (frame, signer, what)
        self.violations: list[str] = []

    # --- helpers -------------------------------------------------------------

    def leader_of(self, frame: int, view: int) -> int:
        return (frame + view) % self.cfg.n

    def _sign(self, msg) -> Signed:
        return sign_message(self.registry, self.module_id, msg)

    def is_leader(self, frame: int, view: int = 0) -> bool:
        return self.leader_of(frame, view) == self.module_id

    @property
    def last_contiguous_frame(self) -> int:
        frame = -1
        while frame + 1 in self.committed:
            frame += 1
        return frame

    # --- frame lifecycle -----------------------------------------------------

    def start_frame(self, frame: int, own_output: Optional[ModuleOutput], round_: int) -> list[Outbound]:
        value = own_output.value if own_output is not None else None
        self.inst = FrameInstance(
            frame=frame, own_output=value, start_round=round_, view_start_round=round_
        )
        if frame in self.committed:
            # already learned via state transfer
            self.inst.decided = True
            self.inst.decided_value = self.committed[frame]
            self.inst.phase = PHASE_COMMITTED
            return []
        if self.is_leader(frame, 0):
            return self.propose()
        return []

    def propose(self) -> list[Outbound]:
        """Leader broadcasts its own output as the PrePrepare for view 0."""
        inst = self.inst
        if not self.is_leader(inst.frame, inst.view):
            self.violations.append(f"frame {inst.frame}: non-leader {self.module_id} tried to propose")
            return []
        if inst.phase != PHASE_IDLE or inst.own_output is None:
            return []
        pp = PrePrepare(inst.frame, inst.view, value_digest(inst.own_output), inst.own_output)
        signed_pp = self._sign(pp)
        inst.outbox.append((BROADCAST, signed_pp))
        return [(BROADCAST, signed_pp)] + self._accept_proposal(signed_pp)

    # --- message handling ----------------------------------------------------

    def handle(self, signed: Signed, round_: int) -> list[Outbound]:
        if not signed.verify(self.registry):
            self.misbehavior.append((getattr(signed.msg, "frame", -1), signed.sender, "bad-tag"))
            return []
        msg = signed.msg
        if isinstance(msg, (StateRequest, StateSnapshot, CheckpointAttest)):
            return self._handle_global(signed, round_)
        inst = self.inst
        if inst is None or msg.frame != inst.frame:
            return []
        if isinstance(msg, (PrePrepare, Prepare, Commit)):
            if msg.view < inst.view:
                return []  # view monotonicity: stale-view messages discarded
            if isinstance(msg, PrePrepare):
                return self._on_preprepare(signed, round_)
            if isinstance(msg, Prepare):
                return self._on_prepare(signed)
            return self._on_commit(signed, round_)
        if isinstance(msg, ViewChange):
            return self._on_viewchange(signed, round_)
        if isinstance(msg, NewView):
            return self._on_newview(signed, round_)
        return []

    def _note_leader_endorsement(self, signed: Signed) -> list[Outbound]:
        """Track digests the leader has signed for (frame, view); two distinct
        digests are proof of equivocation."""
        inst = self.inst
        msg = signed.msg
        if signed.sender != self.leader_of(inst.frame, msg.view):
            return []
        seen = inst.leader_endorsements.setdefault(msg.view, {})
        seen.setdefault(msg.value_digest, signed)
        if len(seen) > 1 and inst.evidence is None:
            first, second = list(seen.values())[:2]
            proof = EquivocationProof(first, second)
            if proof.valid(self.registry):
                inst.evidence = proof
                self.misbehavior.append((inst.frame, signed.sender, "equivocation"))
                if self.evidence_fast_path:
                    return self._initiate_viewchange(inst.view + 1)
        return []

    def _accept_proposal(self, signed_pp: Signed) -> list[Outbound]:
        inst = self.inst
        inst.proposal = signed_pp
        if inst.phase == PHASE_IDLE:
            inst.phase = PHASE_PRE_PREPARED
        prep = Prepare(inst.frame, signed_pp.msg.view, signed_pp.msg.value_digest, signed_pp.msg.value)
        signed_prep = self._sign(prep)
        out = [(BROADCAST, signed_prep)]
        inst.outbox.append((BROADCAST, signed_prep))
        self._record_prepare(signed_prep)
        return out + self._check_prepared()

    def _on_preprepare(self, signed: Signed, round_: int) -> list[Outbound]:
        inst = self.inst
        msg = signed.msg
        out = self._note_leader_endorsement(signed)
        if msg.view != inst.view or inst.decided:
            return out
        if signed.sender != self.leader_of(inst.frame, msg.view):
            self.misbehavior.append((inst.frame, signed.sender, "preprepare-from-non-leader"))
            return out
        if msg.value_digest != value_digest(msg.value):
            self.misbehavior.append((inst.frame, signed.sender, "digest-mismatch"))
            return out
        if inst.proposal is not None:
            return out  # first accepted proposal wins; conflicts became evidence above
        if not validate_proposal(inst.own_output, msg.value):
            return out  # withhold the Prepare; dissent surfaces as timeout
        return out + self._accept_proposal(signed)

    def _record_prepare(self, signed: Signed) -> None:
        inst = self.inst
        votes = inst.prepares.setdefault(signed.msg.view, {})
        prev = votes.get(signed.sender)
        if prev is None:
            votes[signed.sender] = signed
        elif prev.msg.value_digest != signed.msg.value_digest:
            self.misbehavior.append((inst.frame, signed.sender, "conflicting-prepare"))

    def _on_prepare(self, signed: Signed) -> list[Outbound]:
        out = self._note_leader_endorsement(signed)
        self._record_prepare(signed)
        return out + self._check_prepared()

    def _check_prepared(self) -> list[Outbound]:
        inst = self.inst
        if inst.phase != PHASE_PRE_PREPARED or inst.proposal is None:
            return []
        want = inst.proposal.msg.value_digest
        votes = [
            s
            for s in inst.prepares.get(inst.view, {}).values()
            if s.msg.value_digest == want
        ]
        if len(votes) < self.cfg.quorum:
            return []
        inst.phase = PHASE_PREPARED
        cert = PrepareCertificate(
            frame=inst.frame,
            view=inst.view,
            value_digest=want,
            value=inst.proposal.msg.value,
            votes=tuple(sorted(votes, key=lambda s: s.sender)),
        )
        if inst.prepared_cert is None or cert.view > inst.prepared_cert.view:
            inst.prepared_cert = cert
        commit = Commit(inst.frame, inst.view, want, inst.proposal.msg.value)
        signed_commit = self._sign(commit)
        inst.outbox.append((BROADCAST, signed_commit))
        self._record_commit(signed_commit)
        return [(BROADCAST, signed_commit)] + self._check_committed()

    def _record_commit(self, signed: Signed) -> None:
        inst = self.inst
        votes = inst.commits.setdefault(signed.msg.view, {})
        prev = votes.get(signed.sender)
        if prev is None:
            votes[signed.sender] = signed
        elif prev.msg.value_digest != signed.msg.value_digest:
            self.misbehavior.append((inst.frame, signed.sender, "conflicting-commit"))

    def _on_commit(self, signed: Signed, round_: int) -> list[Outbound]:
        out = self._note_leader_endorsement(signed)
        self._record_commit(signed)
        return out + self._check_committed()

    def _check_committed(self) -> list[Outbound]:
        inst = self.inst
        if inst.decided:
            return []
        for view, votes in sorted(inst.commits.items()):
            by_digest: dict[bytes, list[Signed]] = {}
            for s in votes.values():
                by_digest.setdefault(s.msg.value_digest, []).append(s)
            for matching in by_digest.values():
                if len(matching) >= self.execution_threshold:
                    return self._commit(matching)
        return []

    def _commit(self, votes: list[Signed]) -> list[Outbound]:
        inst = self.inst
        value = votes[0].msg.value
        inst.decided = True
        inst.decided_value = value
        inst.decided_view = votes[0].msg.view
        inst.phase = PHASE_COMMITTED
        self.committed[inst.frame] = value
        self.frame_certs[inst.frame] = FrameCert(
            frame=inst.frame, value=value, votes=tuple(sorted(votes, key=lambda s: s.sender))
        )
        out: list[Outbound] = [(OBSERVER, self._sign(Reply(inst.frame, value)))]
        return out + self._maybe_checkpoint()

    # --- view changes --------------------------------------------------------

    def _initiate_viewchange(self, new_view: int) -> list[Outbound]:
        inst = self.inst
        if new_view in inst.viewchange_sent:
            return []
        inst.viewchange_sent.add(new_view)
        vc = ViewChange(inst.frame, new_view, inst.prepared_cert, inst.evidence)
        signed_vc = self._sign(vc)
        inst.view_changes.setdefault(new_view, {})[self.module_id] = signed_vc
        if new_view > inst.view:
            inst.view = new_view
            inst.proposal = None
            inst.outbox = []
            if not inst.decided:
                inst.phase = PHASE_IDLE
        inst.outbox.append((BROADCAST, signed_vc))
        return [(BROADCAST, signed_vc)] + self._maybe_newview(new_view)

    def _on_viewchange(self, signed: Signed, round_: int) -> list[Outbound]:
        inst = self.inst
        msg = signed.msg
        if msg.cert is not None and not msg.cert.valid(self.registry, self.cfg.quorum):
            self.misbehavior.append((inst.frame, signed.sender, "bad-cert"))
            return []
        inst.view_changes.setdefault(msg.new_view, {}).setdefault(signed.sender, signed)
        out: list[Outbound] = []
        join = False
        if msg.new_view > inst.view:
            if (
                self.evidence_fast_path
                and msg.evidence is not None
                and msg.evidence.valid(self.registry)
            ):
                if inst.evidence is None:
                    inst.evidence = msg.evidence
                join = True
            if len(inst.view_changes[msg.new_view]) >= self.cfg.f + 1:
                join = True
        if join and msg.new_view not in inst.viewchange_sent:
            out += self._initiate_viewchange(msg.new_view)
            inst.view_start_round = round_
        return out + self._maybe_newview(msg.new_view)

    def _select_newview_value(self, vcs: list[Signed]):
        """Classic carry-over rule: re-propose the highest-view certified value."""
        best: Optional[PrepareCertificate] = None
        for signed_vc in vcs:
            cert = signed_vc.msg.cert
            if cert is not None and (best is None or cert.view > best.view):
                best = cert
        return best

    def _maybe_newview(self, new_view: int) -> list[Outbound]:
        inst = self.inst
        if new_view < inst.view or new_view in inst.newview_sent:
            return []
        if self.leader_of(inst.frame, new_view) != self.module_id:
            return []
        vcs = inst.view_changes.get(new_view, {})
        if len(vcs) < self.cfg.quorum:
            return []
        ordered = tuple(sorted(vcs.values(), key=lambda s: s.sender))[: self.cfg.n]
        best = self._select_newview_value(list(ordered))
        if best is not None:
            value = best.value
        elif inst.decided:
            value = inst.decided_value
        elif inst.own_output is not None:
            value = inst.own_output
        else:
            return []  # nothing proposable; let the next timeout rotate further
        inst.newview_sent.add(new_view)
        inst.view = new_view
        inst.proposal = None
        inst.outbox = []
        if not inst.decided:
            inst.phase = PHASE_IDLE
        pp = self._sign(PrePrepare(inst.frame, new_view, value_digest(value), value))
        nv = self._sign(NewView(inst.frame, new_view, ordered, pp))
        inst.outbox.append((BROADCAST, nv))
        return [(BROADCAST, nv)] + self._accept_proposal(pp)

    def _on_newview(self, signed: Signed, round_: int) -> list[Outbound]:
        inst = self.inst
        msg = signed.msg
        if msg.view < inst.view:
            return []
        if signed.sender != self.leader_of(inst.frame, msg.view):
            self.misbehavior.append((inst.frame, signed.sender, "newview-from-non-leader"))
            return []
        if msg.view in inst.newview_processed:
            # duplicate (retransmission): still watch for a conflicting
            # proposal, but do not re-enter the view or reset the timer
            return self._note_leader_endorsement(msg.proposal)
        signers = set()
        for signed_vc in msg.view_changes:
            if not isinstance(signed_vc.msg, ViewChange) or signed_vc.msg.new_view != msg.view:
                return []
            if not signed_vc.verify(self.registry):
                return []
            if signed_vc.msg.cert is not None and not signed_vc.msg.cert.valid(
                self.registry, self.cfg.quorum
            ):
                return []
            signers.add(signed_vc.sender)
        if len(signers) < self.cfg.quorum:
            self.misbehavior.append((inst.frame, signed.sender, "underfull-newview"))
            return []
        pp = msg.proposal
        if not pp.verify(self.registry) or not isinstance(pp.msg, PrePrepare):
            return []
        if pp.sender != signed.sender or pp.msg.view != msg.view or pp.msg.frame != inst.frame:
            return []
        if pp.msg.value_digest != value_digest(pp.msg.value):
            return []
        best = self._select_newview_value(list(msg.view_changes))
        certified = best is not None
        if certified and best.value_digest != pp.msg.value_digest:
            self.misbehavior.append((inst.frame, signed.sender, "newview-ignored-certificate"))
            return []
        # enter the new view
        inst.newview_processed.add(msg.view)
        inst.view = msg.view
        inst.view_start_round = round_
        inst.proposal = None
        inst.outbox = []
        if not inst.decided:
            inst.phase = PHASE_IDLE
        out = self._note_leader_endorsement(pp)
        if inst.decided:
            return out
        if certified or validate_proposal(inst.own_output, pp.msg.value):
            out += self._accept_proposal(pp)
        return out

    # --- timers --------------------------------------------------------------

    RETRANSMIT_INTERVAL = 3

    def on_round(self, round_: int) -> list[Outbound]:
        inst = self.inst
        if inst is None or inst.decided:
            return []
        out: list[Outbound] = []
        elapsed = round_ - inst.view_start_round
        if elapsed > 0 and elapsed % self.RETRANSMIT_INTERVAL == 0:
            out += list(inst.outbox)
        if timeout_check(inst.view_start_round, round_, self.timeout_rounds, inst.decided):
            inst.view_start_round = round_
            out += self._initiate_viewchange(inst.view + 1)
            # also ask peers whether the frame already committed without us
            out.append((BROADCAST, self._sign(StateRequest(inst.frame))))
        return out

    # --- checkpoints & state transfer ---------------------------------------

    def _maybe_checkpoint(self) -> list[Outbound]:
        last = self.last_contiguous_frame
        boundary = ((last + 1) // self.checkpoint_interval) * self.checkpoint_interval - 1
        if boundary < 0 or boundary <= self._attested_up_to:
            return []
        return self.make_checkpoint(boundary)

    def make_checkpoint(self, up_to_frame: int) -> list[Outbound]:
        """Broadcast an attestation over the committed log prefix."""
        if self.last_contiguous_frame < up_to_frame:
            raise ValueError(f"cannot checkpoint frame {up_to_frame}: log incomplete")
        values = tuple(self.committed[i] for i in range(up_to_frame + 1))
        attest = CheckpointAttest(up_to_frame, log_prefix_digest(values))
        signed = self._sign(attest)
        self._attested_up_to = max(self._attested_up_to, up_to_frame)
        self._record_attest(signed)
        return [(BROADCAST, signed)]

    def _record_attest(self, signed: Signed) -> None:
        msg = signed.msg
        slot = self._attest_votes.setdefault(msg.up_to_frame, {}).setdefault(msg.log_digest, {})
        slot.setdefault(signed.sender, signed)
        if len(slot) >= self.cfg.quorum and self.last_contiguous_frame >= msg.up_to_frame:
            values = tuple(self.committed[i] for i in range(msg.up_to_frame + 1))
            if log_prefix_digest(values) == msg.log_digest and (
                self.stable_checkpoint is None
                or self.stable_checkpoint.up_to_frame < msg.up_to_frame
            ):
                self.stable_checkpoint = Checkpoint(
                    up_to_frame=msg.up_to_frame,
                    values=values,
                    log_digest=msg.log_digest,
                    attestations=tuple(sorted(slot.values(), key=lambda s: s.sender)),
                )
                # certificates before the stable checkpoint are now redundant
                for frame in list(self.frame_certs):
                    if frame <= msg.up_to_frame:
                        del self.frame_certs[frame]

    def _handle_global(self, signed: Signed, round_: int) -> list[Outbound]:
        msg = signed.msg
        if isinstance(msg, CheckpointAttest):
            self._record_attest(signed)
            return []
        if isinstance(msg, StateRequest):
            snap = self.build_snapshot()
            if snap is not None and snap.up_to_frame() >= msg.up_to_frame:
                return [(signed.sender, self._sign(snap))]
            return []
        if isinstance(msg, StateSnapshot):
            return self.apply_snapshot(msg)
        return []

    def build_snapshot(self) -> Optional[StateSnapshot]:
        base = self.stable_checkpoint
        start = base.up_to_frame + 1 if base else 0
        certs = []
        frame = start
        while frame in self.frame_certs:
            certs.append(self.frame_certs[frame])
            frame += 1
        if base is None and not certs:
            return None
        return StateSnapshot(checkpoint=base, frame_certs=tuple(certs))

    def apply_snapshot(self, snap: StateSnapshot) -> list[Outbound]:
        """Adopt a proven committed prefix.  Rejects snapshots whose checkpoint
        or per-frame certificates lack a 2f+1 quorum."""
        if snap.checkpoint is not None:
            if not snap.checkpoint.valid(self.registry, self.cfg.quorum):
                return []
            for frame, value in enumerate(snap.checkpoint.values):
                self._adopt(frame, value)
        for cert in snap.frame_certs:
            if not cert.valid(self.registry, self.cfg.quorum):
                return []
            self._adopt(cert.frame, cert.value, cert)
        out: list[Outbound] = []
        inst = self.inst
        if inst is not None and not inst.decided and inst.frame in self.committed:
            value = self.committed[inst.frame]
            inst.decided = True
            inst.decided_value = value
            inst.phase = PHASE_COMMITTED
            out.append((OBSERVER, self._sign(Reply(inst.frame, value))))
        return out

    def _adopt(self, frame: int, value: DecisionValue, cert: Optional[FrameCert] = None) -> None:
        prev = self.committed.get(frame)
        if prev is not None and prev != value:
            self.violations.append(f"frame {frame}: snapshot value {value.label} conflicts with {prev.label}")
            return
        self.committed[frame] = value
        if cert is not None and frame not in self.frame_certs:
            self.frame_certs[frame] = cert


class EquivocatingReplica(Replica):
    """Byzantine leader that tells different halves of the ensemble different
    values, and (by default, sloppily) broadcasts conflicting commits that give
    honest replicas a proof of its equivocation."""

    def __init__(self, *args, label_a: DecisionValue, label_b: DecisionValue, sloppy: bool = True, **kwargs):
        super().__init__(*args, **kwargs)
        self.label_a = label_a
        self.label_b = label_b
        self.sloppy = sloppy

    def _partitions(self) -> tuple[list[int], list[int]]:
        others = [m for m in range(self.cfg.n) if m != self.module_id]
        half = len(others) // 2
        return others[:half] or others[:1], others[half:]

    def propose(self) -> list[Outbound]:
        inst = self.inst
        if not self.is_leader(inst.frame, inst.view):
            return []
        side_a, side_b = self._partitions()
        out: list[Outbound] = []
        for value, side in ((self.label_a, side_a), (self.label_b, side_b)):
            d = value_digest(value)
            pp = self._sign(PrePrepare(inst.frame, inst.view, d, value))
            prep = self._sign(Prepare(inst.frame, inst.view, d, value))
            for dest in side:
                out.append((dest, pp))
                out.append((dest, prep))
            if self.sloppy:
                commit = self._sign(Commit(inst.frame, inst.view, d, value))
                out.append((BROADCAST, commit))
        inst.phase = PHASE_PRE_PREPARED
        return out

    def handle(self, signed: Signed, round_: int) -> list[Outbound]:
        # As a backup the equivocator endorses whatever it receives.
        if not signed.verify(self.registry):
            return []
        msg = signed.msg
        inst = self.inst
        if inst is None:
            return []
        if isinstance(msg, PrePrepare) and msg.frame == inst.frame and inst.proposal is None:
            prep = self._sign(Prepare(msg.frame, msg.view, msg.value_digest, msg.value))
            inst.proposal = signed
            return [(BROADCAST, prep)]
        return []

    def on_round(self, round_: int) -> list[Outbound]:
        return []
