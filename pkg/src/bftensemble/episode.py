"""Lock-step episode execution: one frame at a time, consensus fully resolved
(commit or timeout budget exhausted) before the next frame starts.

The runner is the observer ("client"): a frame is final only after f+1
matching Reply messages from distinct replicas.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .core import (
    BROADCAST,
    OBSERVER,
    DecisionValue,
    KeyRegistry,
    ModuleOutput,
    verify_output,
)
from .consensus import EquivocatingReplica, Replica, value_digest
from .harness import (
    NO_OUTPUT,
    STATUS_ACTIVE,
    STATUS_ISOLATED,
    STATUS_RESTARTING,
    FaultProfile,
    ModuleState,
    begin_restart,
    complete_restart,
    module_rng,
    produce_output,
)
from .messages import OutputDigest, Reply, Signed, StateRequest, sign_message
from .scenario import Scenario
from .simnet import World
from .supervisor import Supervisor
from .voter import FastPathResult, Verdict, VoteStrategy, fast_path_agree, tally

HONEST_KINDS = ("honest", "diverse_honest", "slow", "crash")


def liveness_bound(f: int, timeout_rounds: int) -> int:
    return (f + 1) * timeout_rounds + 3


@dataclass
class DecisionRecord:
    frame: int
    verdict: str  # decided | no-quorum | safe-mode
    value: Optional[str]
    supporters: tuple[int, ...]
    rounds_to_commit: int
    view_changes: int
    flags: tuple[str, ...]

    def line(self) -> str:
        supporters = ",".join(str(m) for m in self.supporters) or "-"
        flags = ",".join(self.flags) or "-"
        return (
            f"{self.frame}|{self.verdict}|{self.value or '-'}|{supporters}|"
            f"{self.rounds_to_commit}|{self.view_changes}|{flags}"
        )


@dataclass
class FrameVoteLog:
    """Who endorsed the committed value, as seen by one decided honest replica."""

    frame: int
    view: int
    prepare_signers: frozenset[int]
    commit_signers: frozenset[int]


@dataclass
class EpisodeResult:
    scenario: Scenario
    records: list[DecisionRecord]
    decision_log: list[str]
    event_log: list[str]
    supervisor_events: list[tuple[int, int, str]]
    vote_logs: dict[int, FrameVoteLog]
    agreement_violations: list[int]
    liveness_failures: list[int]
    module_agreement: dict[int, float]

    @property
    def decision_log_text(self) -> str:
        return "\n".join(self.decision_log) + "\n"

    @property
    def event_log_text(self) -> str:
        return "\n".join(self.event_log) + "\n"

    def record_for(self, frame: int) -> DecisionRecord:
        return self.records[frame]


class EpisodeRunner:
    def __init__(self, scenario: Scenario):
        self.s = scenario
        self.n = scenario.quorum.n
        self.f = scenario.quorum.f
        self.registry = KeyRegistry(scenario.seed, range(self.n))
        self.states = [
            ModuleState(module_id=m, profile=scenario.modules[m]) for m in range(self.n)
        ]
        self.rngs = [
            module_rng(scenario.seed, m, scenario.modules[m].perturb_seed)
            for m in range(self.n)
        ]
        slow_extra = {
            m: p.delay_rounds for m, p in enumerate(scenario.modules) if p.kind == "slow"
        }
        self.world = World(scenario.network, range(self.n), slow_extra)
        self.engines: dict[int, Optional[Replica]] = {}
        if scenario.consensus_mode == "pbft":
            for m in range(self.n):
                self.engines[m] = self._make_engine(m, scenario.modules[m])
        self.supervisor = Supervisor(scenario.quorum, scenario.supervisor) if scenario.supervise else None
        self._emitted_events = 0
        self.records: list[DecisionRecord] = []
        self.decision_log: list[str] = []
        self.vote_logs: dict[int, FrameVoteLog] = {}
        self.agreement_violations: list[int] = []
        self.liveness_failures: list[int] = []
        self._agree_counts = {m: [0, 0] for m in range(self.n)}  # agreed, judged
        self._finalized: dict[int, DecisionValue] = {}

    # --- construction --------------------------------------------------------

    def _make_engine(self, m: int, profile: FaultProfile) -> Optional[Replica]:
        kwargs = dict(
            timeout_rounds=self.s.timeout_rounds,
            execution_threshold=self.s.execution_threshold,
            evidence_fast_path=self.s.evidence_fast_path,
            checkpoint_interval=self.s.checkpoint_interval,
        )
        if profile.kind == "silent":
            return None
        if profile.kind == "byzantine_equivocate":
            space = self.s.decision_space
            return EquivocatingReplica(
                m,
                self.s.quorum,
                space,
                self.registry,
                label_a=space.value(profile.label_a),
                label_b=space.value(profile.label_b),
                **kwargs,
            )
        return Replica(m, self.s.quorum, self.s.decision_space, self.registry, **kwargs)

    def _engine_alive(self, m: int, frame: int) -> bool:
        state = self.states[m]
        if state.status != STATUS_ACTIVE:
            return False
        profile = state.profile
        if profile.kind == "silent":
            return False
        if profile.kind == "crash" and frame >= profile.at_frame:
            return False
        return self.engines.get(m) is not None

    # --- shared plumbing -----------------------------------------------------

    def _send_all(self, sender: int, outbound) -> None:
        for dest, payload in outbound:
            self.world.send(sender, dest, payload)

    def _produce(self, frame: int):
        """Per-module outputs for this frame.  Equivocators yield a pair."""
        outputs = {}
        for m in range(self.n):
            state = self.states[m]
            if state.status != STATUS_ACTIVE:
                outputs[m] = NO_OUTPUT
                continue
            obs = self.s.observations.observed(self.s.decision_space, frame, m)
            outputs[m] = produce_output(
                state, frame, obs, self.s.decision_space, self.registry, self.rngs[m]
            )
        return outputs

    def _flush_supervisor_events(self) -> None:
        if self.supervisor is None:
            return
        for frame, module, event in self.supervisor.events[self._emitted_events:]:
            self.decision_log.append(f"{frame}|SUPERVISOR|{module}|{event}")
        self._emitted_events = len(self.supervisor.events)

    def _supervise(self, frame: int, committed: Optional[DecisionValue], outputs, equivocators) -> None:
        if self.supervisor is None:
            return
        if committed is None:
            return  # only committed frames are judged
        values = {}
        for m, out in outputs.items():
            if isinstance(out, ModuleOutput):
                values[m] = out.value
            else:
                values[m] = None
        for m in range(self.n):
            if self.states[m].status != STATUS_ACTIVE:
                values[m] = None
        self.supervisor.record_round(frame, committed, values, equivocators)
        for m in range(self.n):
            if self.states[m].status != STATUS_ACTIVE:
                continue
            v = values.get(m)
            judged = True
            agreed = v is not None and v == committed and m not in equivocators
            self._agree_counts[m][0] += 1 if agreed else 0
            self._agree_counts[m][1] += 1 if judged else 0
        newly = self.supervisor.review(frame)
        for m in newly:
            self.states[m].isolate()
            self.world.mute(m)
        self._flush_supervisor_events()

    def _handle_restarts(self, frame: int) -> None:
        if self.supervisor is None:
            return
        for m in self.supervisor.due_for_restart(frame):
            self.states[m] = begin_restart(self.states[m])
            self.world.unmute(m)
            profile = self.states[m].profile
            self.engines[m] = self._make_engine(m, profile)
            self.rngs[m] = module_rng(self.s.seed, m, profile.perturb_seed)
        # restarting modules keep asking for state until a snapshot lands
        for m in range(self.n):
            if self.states[m].status == STATUS_RESTARTING and self.engines.get(m) is not None:
                req = sign_message(self.registry, m, StateRequest(max(frame - 1, 0)))
                self.world.send(m, BROADCAST, req)
        self._flush_supervisor_events()

    def _check_recoveries(self, frame: int) -> None:
        if self.supervisor is None:
            return
        # a snapshot requested while frame `frame` was still running can only
        # cover the frames decided before it
        target = max((f for f in self._finalized if f < frame), default=-1)
        for m in range(self.n):
            if self.states[m].status != STATUS_RESTARTING:
                continue
            engine = self.engines.get(m)
            if engine is not None and engine.last_contiguous_frame >= target:
                self.states[m] = complete_restart(self.states[m], engine.last_contiguous_frame)
                self.supervisor.recovered(m, frame)
        self._flush_supervisor_events()

    def _honest_committed(self, frame: int) -> dict[int, DecisionValue]:
        committed = {}
        for m in range(self.n):
            profile = self.states[m].profile
            if profile.kind not in HONEST_KINDS:
                continue
            engine = self.engines.get(m)
            if engine is not None and frame in engine.committed:
                committed[m] = engine.committed[frame]
        return committed

    def _frame_flags(self, frame: int, verdict: str, value: Optional[DecisionValue]) -> tuple[str, ...]:
        flags = []
        honest = self._honest_committed(frame) if self.s.consensus_mode == "pbft" else {}
        distinct = {v.label for v in honest.values()}
        if value is not None:
            distinct.add(value.label)
        if len(distinct) > 1:
            flags.append("agreement-violation")
            self.agreement_violations.append(frame)
        if verdict == "safe-mode":
            flags.append("safe-mode")
        truth = self.s.observations.truth(self.s.decision_space, frame)
        if value is not None and value != truth:
            flags.append("ground-truth-mismatch")
        return tuple(flags)

    # --- PBFT mode -----------------------------------------------------------

    def _run_pbft_frame(self, frame: int) -> DecisionRecord:
        s = self.s
        self._handle_restarts(frame)
        start_round = self.world.round
        outputs = self._produce(frame)
        equivocators = {
            m for m, p in enumerate(s.modules)
            if p.kind == "byzantine_equivocate" and self.states[m].status == STATUS_ACTIVE
        }
        for m in range(self.n):
            if not self._engine_alive(m, frame):
                continue
            out = outputs[m]
            own = out[0] if isinstance(out, tuple) else (out if isinstance(out, ModuleOutput) else None)
            self._send_all(m, self.engines[m].start_frame(frame, own, start_round))

        replies: dict[int, DecisionValue] = {}
        finalized: Optional[DecisionValue] = None
        finality_round: Optional[int] = None
        bound = liveness_bound(self.f, s.timeout_rounds)
        drain = s.network.base_delay_rounds + s.network.jitter_rounds + 2

        while True:
            elapsed = self.world.round - start_round
            if finalized is not None and self.world.round >= finality_round + drain:
                break
            if finalized is None and elapsed >= bound:
                break
            for env in self.world.advance_round():
                if env.to == OBSERVER:
                    payload = env.payload
                    if (
                        isinstance(payload, Signed)
                        and isinstance(payload.msg, Reply)
                        and payload.msg.frame == frame
                        and payload.verify(self.registry)
                    ):
                        replies.setdefault(payload.sender, payload.msg.value)
                    continue
                if self._engine_alive(env.to, frame) or self.states[env.to].status == STATUS_RESTARTING:
                    outs = self.engines[env.to].handle(env.payload, self.world.round)
                    self._send_all(env.to, outs)
            for m in range(self.n):
                if self._engine_alive(m, frame):
                    self._send_all(m, self.engines[m].on_round(self.world.round))
            if finalized is None:
                counts: dict[DecisionValue, int] = {}
                for value in replies.values():
                    counts[value] = counts.get(value, 0) + 1
                for value, count in counts.items():
                    if count >= s.quorum.reply_matches:
                        finalized = value
                        finality_round = self.world.round
                        break

        # post-frame straggler sync: undecided honest replicas ask for the
        # committed prefix; committed peers answer with certificates.
        if finalized is not None:
            for m in range(self.n):
                if self._engine_alive(m, frame) and not self.engines[m].inst.decided:
                    req = sign_message(self.registry, m, StateRequest(frame))
                    self.world.send(m, BROADCAST, req)
            for _ in range(2 * (s.network.base_delay_rounds + s.network.jitter_rounds) + 2):
                for env in self.world.advance_round():
                    if env.to == OBSERVER:
                        continue
                    if self._engine_alive(env.to, frame) or self.states[env.to].status == STATUS_RESTARTING:
                        self._send_all(env.to, self.engines[env.to].handle(env.payload, self.world.round))

        rounds_to_commit = (finality_round - start_round) if finality_round is not None else bound
        if finalized is not None:
            self._finalized[frame] = finalized
        else:
            self.liveness_failures.append(frame)

        view_changes = 0
        decided_views = [
            self.engines[m].inst.decided_view
            for m in self._honest_committed(frame)
            if self.engines[m].inst is not None
            and self.engines[m].inst.frame == frame
            and self.engines[m].inst.decided_view >= 0
        ]
        if decided_views:
            view_changes = min(decided_views)

        for m, engine in self.engines.items():
            if engine is None or engine.inst is None or engine.inst.frame != frame:
                continue
            inst = engine.inst
            if (
                self.states[m].profile.kind in HONEST_KINDS
                and inst.decided
                and inst.decided_view >= 0
                and frame not in self.vote_logs
            ):
                prepare_signers = frozenset(
                    s_.sender
                    for s_ in inst.prepares.get(inst.decided_view, {}).values()
                    if inst.decided_value is not None
                    and s_.msg.value_digest == value_digest(inst.decided_value)
                )
                commit_signers = frozenset(
                    s_.sender
                    for s_ in inst.commits.get(inst.decided_view, {}).values()
                    if s_.msg.value_digest == value_digest(inst.decided_value)
                )
                self.vote_logs[frame] = FrameVoteLog(
                    frame, inst.decided_view, prepare_signers, commit_signers
                )

        if finalized is not None:
            verdict = "decided"
            value = finalized
        elif frame in s.observations.critical_frames:
            verdict = "safe-mode"
            value = self.s.decision_space.value(self.s.decision_space.safe_default)
        else:
            verdict = "no-quorum"
            value = None

        supporters = tuple(sorted(m for m, v in replies.items() if finalized is not None and v == finalized))
        flags = self._frame_flags(frame, verdict, finalized)
        record = DecisionRecord(
            frame=frame,
            verdict=verdict,
            value=value.label if value is not None else None,
            supporters=supporters,
            rounds_to_commit=rounds_to_commit,
            view_changes=view_changes,
            flags=flags,
        )
        self._supervise(frame, finalized, outputs, equivocators)
        self._check_recoveries(frame)
        return record

    # --- vote-only mode ------------------------------------------------------

    def _broadcast_outputs(self, frame: int, outputs, digests_only: bool) -> None:
        for m in range(self.n):
            out = outputs[m]
            if out is NO_OUTPUT or self.states[m].status != STATUS_ACTIVE:
                continue
            if isinstance(out, tuple):
                out_a, out_b = out
                others = [x for x in range(self.n) if x != m]
                half = len(others) // 2
                for dest in others[:half]:
                    self.world.send(m, dest, self._vote_payload(m, out_a, frame, digests_only))
                for dest in others[half:]:
                    self.world.send(m, dest, self._vote_payload(m, out_b, frame, digests_only))
                self.world.send(m, OBSERVER, self._vote_payload(m, out_b, frame, digests_only))
            else:
                self.world.send(m, BROADCAST, self._vote_payload(m, out, frame, digests_only))

    def _vote_payload(self, m: int, out: ModuleOutput, frame: int, digests_only: bool):
        if digests_only:
            ann = OutputDigest(frame, value_digest(out.value))
            return sign_message(self.registry, m, ann)
        return out

    def _deliver_window(self, frame: int, collect_outputs=None, collect_digests=None) -> None:
        s = self.s
        window = s.network.base_delay_rounds + s.network.jitter_rounds
        window += max(
            [p.delay_rounds for p in s.modules if p.kind == "slow"], default=0
        )
        for _ in range(window + 1):
            for env in self.world.advance_round():
                payload = env.payload
                if isinstance(payload, ModuleOutput):
                    if payload.frame != frame or not verify_output(self.registry, payload):
                        continue
                    if collect_outputs is not None:
                        collect_outputs.setdefault(env.to, {}).setdefault(
                            payload.module_id, payload
                        )
                elif isinstance(payload, Signed) and isinstance(payload.msg, OutputDigest):
                    if payload.msg.frame != frame or not payload.verify(self.registry):
                        continue
                    if collect_digests is not None:
                        collect_digests.setdefault(env.to, {}).setdefault(
                            payload.sender, payload.msg.value_digest
                        )

    def _run_vote_frame(self, frame: int) -> DecisionRecord:
        s = self.s
        self._handle_restarts(frame)
        outputs = self._produce(frame)
        equivocators = {
            m for m, p in enumerate(s.modules)
            if p.kind == "byzantine_equivocate" and self.states[m].status == STATUS_ACTIVE
        }
        fastpath = s.strategy.kind == "fastpath"
        inboxes: dict[int, dict[int, ModuleOutput]] = {}
        digest_boxes: dict[int, dict[int, bytes]] = {}

        rounds_used = 1
        self._broadcast_outputs(frame, outputs, digests_only=fastpath)
        self._deliver_window(frame, collect_outputs=inboxes, collect_digests=digest_boxes)

        if fastpath:
            # each participant decides locally whether the fast path closed
            need_fallback = False
            for m in list(range(self.n)) + [OBSERVER]:
                seen = dict(digest_boxes.get(m, {}))
                if 0 <= m < self.n and isinstance(outputs[m], ModuleOutput):
                    seen[m] = value_digest(outputs[m].value)
                if len(seen) < self.n or len(set(seen.values())) > 1:
                    need_fallback = True
            if need_fallback:
                rounds_used = 2
                self._broadcast_outputs(frame, outputs, digests_only=False)
                self._deliver_window(frame, collect_outputs=inboxes)

        # every module tallies what it saw and replies with its verdict
        verdicts: dict[int, Verdict] = {}
        for m in range(self.n):
            if self.states[m].status != STATUS_ACTIVE or self.states[m].profile.kind == "silent":
                continue
            box = dict(inboxes.get(m, {}))
            if isinstance(outputs[m], ModuleOutput):
                box[m] = outputs[m]
            if fastpath:
                seen = dict(digest_boxes.get(m, {}))
                if isinstance(outputs[m], ModuleOutput):
                    seen[m] = value_digest(outputs[m].value)
                own = [outputs[m]] if isinstance(outputs[m], ModuleOutput) else []
                result = fast_path_agree(
                    seen, (box.values() if rounds_used == 2 else own), s.quorum
                )
                verdicts[m] = result.verdict
            else:
                verdicts[m] = tally(
                    sorted(box.values(), key=lambda o: o.module_id), s.strategy, s.quorum
                )
            if verdicts[m].decided:
                reply = sign_message(self.registry, m, Reply(frame, verdicts[m].value))
                self.world.send(m, OBSERVER, reply)

        # observer view
        observer_box = dict(inboxes.get(OBSERVER, {}))
        if fastpath:
            seen = dict(digest_boxes.get(OBSERVER, {}))
            observer_result = fast_path_agree(
                seen,
                (observer_box.values() if rounds_used == 2 else []),
                s.quorum,
            )
            observer_verdict = observer_result.verdict
            if rounds_used == 1 and observer_verdict.kind == "no-quorum":
                # digests agreed but the observer holds no full output; adopt
                # the uniform module verdicts below via replies
                pass
        else:
            observer_verdict = tally(
                sorted(observer_box.values(), key=lambda o: o.module_id), s.strategy, s.quorum
            )

        replies: dict[int, DecisionValue] = {}
        for _ in range(s.network.base_delay_rounds + s.network.jitter_rounds + 1):
            for env in self.world.advance_round():
                payload = env.payload
                if (
                    env.to == OBSERVER
                    and isinstance(payload, Signed)
                    and isinstance(payload.msg, Reply)
                    and payload.msg.frame == frame
                    and payload.verify(self.registry)
                ):
                    replies.setdefault(payload.sender, payload.msg.value)

        finalized = None
        counts: dict[DecisionValue, int] = {}
        for value in replies.values():
            counts[value] = counts.get(value, 0) + 1
        for value, count in sorted(counts.items(), key=lambda kv: kv[0].label):
            if count >= s.quorum.reply_matches:
                finalized = value
                break

        if finalized is not None:
            verdict_kind = "decided"
            value = finalized
            if observer_verdict.decided and observer_verdict.value == finalized:
                supporters = tuple(sorted(observer_verdict.supporters))
            else:
                supporters = tuple(sorted(m for m, v in replies.items() if v == finalized))
            self._finalized[frame] = finalized
        elif frame in s.observations.critical_frames:
            verdict_kind = "safe-mode"
            value = s.decision_space.value(s.decision_space.safe_default)
            supporters = ()
        else:
            verdict_kind = "no-quorum"
            value = None
            supporters = ()

        flags = self._frame_flags(frame, verdict_kind, finalized)
        # uniformity check: honest module verdicts must not conflict
        decided_labels = {
            v.value.label
            for m, v in verdicts.items()
            if v.decided and s.modules[m].kind in HONEST_KINDS
        }
        if len(decided_labels) > 1 and "agreement-violation" not in flags:
            flags = flags + ("agreement-violation",)
            self.agreement_violations.append(frame)

        record = DecisionRecord(
            frame=frame,
            verdict=verdict_kind,
            value=value.label if value is not None else None,
            supporters=supporters,
            rounds_to_commit=rounds_used,
            view_changes=0,
            flags=flags,
        )
        self._supervise(frame, finalized, outputs, equivocators)
        return record

    # --- top level -----------------------------------------------------------

    def run(self) -> EpisodeResult:
        for frame in range(self.s.frames):
            if self.s.consensus_mode == "pbft":
                record = self._run_pbft_frame(frame)
            else:
                record = self._run_vote_frame(frame)
            self.records.append(record)
            self.decision_log.append(record.line())
        agreement = {
            m: (c[0] / c[1] if c[1] else 1.0) for m, c in self._agree_counts.items()
        }
        return EpisodeResult(
            scenario=self.s,
            records=self.records,
            decision_log=self.decision_log,
            event_log=list(self.world.event_log),
            supervisor_events=list(self.supervisor.events) if self.supervisor else [],
            vote_logs=self.vote_logs,
            agreement_violations=sorted(set(self.agreement_violations)),
            liveness_failures=self.liveness_failures,
            module_agreement=agreement,
        )


def run_episode(scenario: Scenario) -> EpisodeResult:
    return EpisodeRunner(scenario).run()
