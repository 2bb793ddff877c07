"""Quorum arithmetic, decision spaces, digests and simulated message authentication.

Everything here is pure and deterministic: the same canonical bytes always
produce the same digest on every platform, which is what makes event logs
replay-diffable.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

# Reserved destination ids used by the simulated network.
BROADCAST = -1
OBSERVER = -2

DIGEST_SIZE = 32
TAG_SIZE = 16


def min_replicas(f: int) -> int:
    """Smallest ensemble that tolerates f arbitrary faults (3f + 1)."""
    if f < 0:
        raise ValueError(f"fault count must be non-negative, got {f}")
    return 3 * f + 1


def quorum_size(f: int) -> int:
    """Votes required to prepare/commit a value (2f + 1)."""
    if f < 0:
        raise ValueError(f"fault count must be non-negative, got {f}")
    return 2 * f + 1


def client_match(f: int) -> int:
    """Matching replies an external observer needs before trusting a decision (f + 1)."""
    if f < 0:
        raise ValueError(f"fault count must be non-negative, got {f}")
    return f + 1


@dataclass(frozen=True)
class QuorumConfig:
    """The (n, f) arithmetic of one ensemble.

    ``enforce_resilience`` is relaxed only for vote-only ensembles, which do
    not need the 3f+1 bound to stay safe against crash-style absence.
    """

    n: int
    f: int
    enforce_resilience: bool = True

    def __post_init__(self) -> None:
        if self.n < 1 or self.f < 0:
            raise ValueError(f"bad quorum config n={self.n} f={self.f}")
        if self.enforce_resilience and self.n < min_replicas(self.f):
            raise ValueError(
                f"n={self.n} cannot tolerate f={self.f} faults (need n >= {min_replicas(self.f)})"
            )
        if quorum_size(self.f) > self.n:
            raise ValueError(f"quorum {quorum_size(self.f)} exceeds n={self.n}")

    @property
    def quorum(self) -> int:
        return quorum_size(self.f)

    @property
    def reply_matches(self) -> int:
        return client_match(self.f)


@dataclass(frozen=True)
class DecisionSpace:
    """The finite, canonical set of action labels modules vote over."""

    labels: tuple[str, ...]
    safe_default: str

    def __post_init__(self) -> None:
        if not self.labels:
            raise ValueError("decision space needs at least one label")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError(f"duplicate labels in decision space: {self.labels}")
        if self.safe_default not in self.labels:
            raise ValueError(f"safe default {self.safe_default!r} not in {self.labels}")

    def __contains__(self, label: str) -> bool:
        return label in self.labels

    def value(self, label: str) -> "DecisionValue":
        if label not in self.labels:
            raise ValueError(f"label {label!r} not in decision space {self.labels}")
        return DecisionValue(label)


@dataclass(frozen=True)
class DecisionValue:
    """One label out of a DecisionSpace.

    Construct through :meth:`DecisionSpace.value` so membership is checked.
    """

    label: str


# --- canonical serialization -------------------------------------------------
#
# Length-prefixed UTF-8 for text, fixed-width big-endian for integers,
# IEEE-754 big-endian for reals.  Field order is the declared order of the
# caller.  This layout is the only wire-visible contract; digests over it must
# be bit-exact across runs and platforms.

def canonical(*fields) -> bytes:
    out = bytearray()
    for field in fields:
        if isinstance(field, bool):
            out += b"b" + (b"\x01" if field else b"\x00")
        elif isinstance(field, int):
            out += b"i" + struct.pack(">q", field)
        elif isinstance(field, float):
            out += b"f" + struct.pack(">d", field)
        elif isinstance(field, str):
            raw = field.encode("utf-8")
            out += b"s" + struct.pack(">I", len(raw)) + raw
        elif isinstance(field, bytes):
            out += b"y" + struct.pack(">I", len(field)) + field
        elif isinstance(field, DecisionValue):
            raw = field.label.encode("utf-8")
            out += b"s" + struct.pack(">I", len(raw)) + raw
        elif isinstance(field, (tuple, list)):
            out += b"l" + struct.pack(">I", len(field)) + canonical(*field)
        elif field is None:
            out += b"n"
        else:
            raise TypeError(f"cannot canonicalize {type(field).__name__}")
    return bytes(out)


def digest(payload: bytes) -> bytes:
    """Deterministic 256-bit digest of a canonical byte string."""
    return hashlib.blake2b(payload, digest_size=DIGEST_SIZE).digest()


def short_digest(payload: bytes) -> str:
    """12-hex-char digest prefix used in log lines."""
    return digest(payload).hex()[:12]


# --- simulated message authentication ---------------------------------------


@dataclass(frozen=True)
class AuthTag:
    """Keyed tag binding a signer to a payload digest.

    Unforgeable within the simulation: per-module secrets live only inside the
    harness's KeyRegistry, so a faulty module can replay its own tags but can
    never mint one for another signer.
    """

    signer: int
    payload_digest: bytes
    tag: bytes


class UnknownSignerError(KeyError):
    pass


class KeyRegistry:
    """Immutable map of module ids to signing secrets, private to the harness."""

    def __init__(self, master_seed: int, module_ids) -> None:
        self._secrets = {
            m: hashlib.blake2b(canonical(master_seed, m, "module-secret"), digest_size=32).digest()
            for m in module_ids
        }

    def known(self, module_id: int) -> bool:
        return module_id in self._secrets

    def sign(self, module_id: int, payload: bytes) -> AuthTag:
        secret = self._secrets.get(module_id)
        if secret is None:
            raise UnknownSignerError(module_id)
        d = digest(payload)
        tag = hashlib.blake2b(d, key=secret, digest_size=TAG_SIZE).digest()
        return AuthTag(signer=module_id, payload_digest=d, tag=tag)

    def verify(self, tag: AuthTag, module_id: int, payload: bytes) -> bool:
        secret = self._secrets.get(module_id)
        if secret is None or tag.signer != module_id:
            return False
        d = digest(payload)
        if d != tag.payload_digest:
            return False
        return hashlib.blake2b(d, key=secret, digest_size=TAG_SIZE).digest() == tag.tag


@dataclass(frozen=True)
class ModuleOutput:
    """One module's signed proposal for one frame."""

    module_id: int
    frame: int
    value: DecisionValue
    confidence: float
    sig: AuthTag

    def payload(self) -> bytes:
        return output_payload(self.module_id, self.frame, self.value, self.confidence)


def output_payload(module_id: int, frame: int, value: DecisionValue, confidence: float) -> bytes:
    return canonical("output", module_id, frame, value, confidence)


def make_output(
    registry: KeyRegistry, module_id: int, frame: int, value: DecisionValue, confidence: float
) -> ModuleOutput:
    if not 0.0 <= confidence <= 1.0:
        raise ValueError(f"confidence {confidence} outside [0, 1]")
    payload = output_payload(module_id, frame, value, confidence)
    return ModuleOutput(module_id, frame, value, confidence, registry.sign(module_id, payload))


def verify_output(registry: KeyRegistry, out: ModuleOutput) -> bool:
    if not 0.0 <= out.confidence <= 1.0:
        return False
    return registry.verify(out.sig, out.module_id, out.payload())
