"""Output-combination strategies, independent of the consensus engine.

All functions are pure.  Ties never break arbitrarily: a tie is NoQuorum, and
only the scenario layer may convert NoQuorum into the safe-mode fallback.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Optional

from .core import DecisionValue, ModuleOutput, QuorumConfig

ABSTAIN_CONFIDENCE = 0.05  # below this a module effectively abstains (weighted voting)


@dataclass(frozen=True)
class VoteStrategy:
    kind: str  # majority | k_of_n | unanimity | weighted | fastpath
    k: int = 0
    min_weight_fraction: float = 0.0
    abstain_below: float = ABSTAIN_CONFIDENCE

    def __post_init__(self) -> None:
        if self.kind not in ("majority", "k_of_n", "unanimity", "weighted", "fastpath"):
            raise ValueError(f"unknown strategy {self.kind!r}")
        if self.kind == "k_of_n" and self.k < 1:
            raise ValueError("k_of_n needs k >= 1")
        if self.kind == "weighted" and not 0.5 < self.min_weight_fraction <= 1.0:
            raise ValueError("weighted fraction must lie in (0.5, 1]")

    @classmethod
    def parse(cls, text: str) -> "VoteStrategy":
        """Parse the scenario-file form: majority | k_of_n:<k> | unanimity |
        weighted:<fraction> | fastpath."""
        name, _, arg = text.partition(":")
        name = name.strip()
        if name == "majority":
            return cls("majority")
        if name == "unanimity":
            return cls("unanimity")
        if name == "fastpath":
            return cls("fastpath")
        if name == "k_of_n":
            return cls("k_of_n", k=int(arg))
        if name == "weighted":
            return cls("weighted", min_weight_fraction=float(arg))
        raise ValueError(f"unknown strategy {text!r}")

    def describe(self) -> str:
        if self.kind == "k_of_n":
            return f"k_of_n:{self.k}"
        if self.kind == "weighted":
            return f"weighted:{self.min_weight_fraction}"
        return self.kind


@dataclass(frozen=True)
class Verdict:
    kind: str  # decided | no-quorum | safe-mode
    value: Optional[DecisionValue] = None
    supporters: frozenset[int] = frozenset()
    tallies: tuple = ()
    cause: str = ""

    @property
    def decided(self) -> bool:
        return self.kind == "decided"


def _check_inputs(outputs) -> None:
    seen = set()
    for out in outputs:
        if out.module_id in seen:
            raise ValueError(f"duplicate module id {out.module_id} in vote set")
        seen.add(out.module_id)


def _tallies(outputs) -> tuple:
    counts = Counter(out.value.label for out in outputs)
    return tuple(sorted(counts.items()))


def _decided(value: DecisionValue, outputs) -> Verdict:
    supporters = frozenset(o.module_id for o in outputs if o.value == value)
    return Verdict("decided", value=value, supporters=supporters, tallies=_tallies(outputs))


def tally(outputs, strategy: VoteStrategy, cfg: QuorumConfig) -> Verdict:
    """Combine one frame's verified outputs.  Absent modules count as votes
    against every threshold; ties are NoQuorum."""
    outputs = list(outputs)
    _check_inputs(outputs)
    n = cfg.n
    counts = Counter(out.value for out in outputs)

    if strategy.kind == "majority":
        for value, count in counts.items():
            if count > n / 2:
                return _decided(value, outputs)
        return Verdict("no-quorum", tallies=_tallies(outputs), cause="no-majority")

    if strategy.kind == "k_of_n":
        reaching = [value for value, count in counts.items() if count >= strategy.k]
        if len(reaching) == 1:
            return _decided(reaching[0], outputs)
        cause = "tie" if len(reaching) > 1 else "below-threshold"
        return Verdict("no-quorum", tallies=_tallies(outputs), cause=cause)

    if strategy.kind == "unanimity":
        if len(outputs) == n and len(counts) == 1:
            return _decided(outputs[0].value, outputs)
        cause = "absentees" if len(counts) <= 1 else "dissent"
        return Verdict("no-quorum", tallies=_tallies(outputs), cause=cause)

    if strategy.kind == "weighted":
        return weighted_tally(outputs, strategy.min_weight_fraction, strategy.abstain_below)

    raise ValueError(f"tally cannot evaluate strategy {strategy.kind!r} directly")


def weighted_tally(
    outputs, min_weight_fraction: float, abstain_below: float = ABSTAIN_CONFIDENCE
) -> Verdict:
    """Confidence-weighted vote: decided when one value carries more than
    min_weight_fraction of the total self-reported weight."""
    outputs = list(outputs)
    _check_inputs(outputs)
    effective = [o for o in outputs if o.confidence >= abstain_below]
    total = sum(o.confidence for o in effective)
    if total <= 0.0:
        return Verdict("no-quorum", tallies=_tallies(outputs), cause="all-abstained")
    weights: dict[DecisionValue, float] = {}
    for out in effective:
        weights[out.value] = weights.get(out.value, 0.0) + out.confidence
    for value, weight in sorted(weights.items(), key=lambda kv: kv[0].label):
        if weight / total > min_weight_fraction:
            supporters = frozenset(o.module_id for o in effective if o.value == value)
            return Verdict("decided", value=value, supporters=supporters, tallies=_tallies(outputs))
    return Verdict("no-quorum", tallies=_tallies(outputs), cause="below-weight-fraction")


@dataclass(frozen=True)
class FastPathResult:
    verdict: Verdict
    rounds_used: int  # 1 when all digests matched, else 2


def fast_path_agree(digests: dict[int, bytes], full_outputs, cfg: QuorumConfig) -> FastPathResult:
    """Hash fast path with full-output fallback.

    ``digests`` maps module id to its announced output digest.  When they all
    match (one per module, none missing) the decision closes in one round;
    otherwise the caller supplies the second-round full outputs and a majority
    tally decides.  The fast path by itself cannot attribute equivocation: a
    split announcement only surfaces as a mismatch forcing the fallback.
    """
    missing = cfg.n - len(digests)
    if missing > cfg.f:
        return FastPathResult(
            Verdict("no-quorum", cause="missing-announcements"), rounds_used=1
        )
    unique = set(digests.values())
    outputs = list(full_outputs)
    if missing == 0 and len(unique) == 1 and outputs:
        # every announcement matched, so any locally known output is the value
        verdict = Verdict(
            "decided",
            value=outputs[0].value,
            supporters=frozenset(digests),
            tallies=_tallies(outputs),
        )
        return FastPathResult(verdict, rounds_used=1)
    verdict = tally(outputs, VoteStrategy("majority"), cfg)
    return FastPathResult(verdict, rounds_used=2)
