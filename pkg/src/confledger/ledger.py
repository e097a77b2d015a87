"""Hash-chained blockchain plus the derived versioned state database.

Blocks are stored exactly as the orderer delivered them; per-transaction
validity flags are assigned at commit time and deliberately kept out of the
serialized form, so every byte of a block file is covered by its hash and a
single-byte mutation is always detectable.  The state database is a pure
function of the chain: replaying the blocks reproduces it bit-exactly.

Commit-time validation per transaction: the endorsement policy for the
transaction's chaincode must be met by endorsements whose result digests all
match the carried read/write sets, and every (key, version) the transaction
read must still be current (MVCC).  Invalid transactions stay in the chain,
flagged, and never touch state.
"""

from __future__ import annotations

import os
import re
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from confledger import canonical
from confledger.errors import ConfLedgerError
from confledger.identity import MembershipRegistry
from confledger.policy import EndorsementPolicy, evaluate_endorsement_policy

GENESIS_PREV_HASH = "0" * 64

FLAG_VALID = "valid"
FLAG_INVALID_ENDORSEMENT = "invalid_endorsement"
FLAG_INVALID_VERSION = "invalid_version"

# (key, version) pairs; version is None while a key is unwritten.
Version = Optional[tuple[int, int]]

# Resolves the endorsement policy for a chaincode against the state as of the
# transaction being validated (policies themselves live in state).
PolicyLookup = Callable[[str, "StateDatabase"], Optional[EndorsementPolicy]]


class LedgerError(ConfLedgerError):
    pass


class ChainLinkageError(LedgerError):
    pass


class MalformedBlockError(LedgerError):
    pass


class ChainVerificationError(LedgerError):
    pass


def _version_to_doc(version: Version) -> Optional[list[int]]:
    return None if version is None else [version[0], version[1]]


def _version_from_doc(doc) -> Version:
    return None if doc is None else (doc[0], doc[1])


@dataclass(frozen=True)
class Endorsement:
    """A peer's signed execution result for one transaction."""

    peer_id: str
    result_digest: str
    signature: str

    @staticmethod
    def payload(tx_id: str, result_digest: str) -> bytes:
        return canonical.encode({"result_digest": result_digest, "tx_id": tx_id})

    def verify(self, tx_id: str, registry: MembershipRegistry) -> bool:
        return registry.verify(
            self.peer_id, self.signature, self.payload(tx_id, self.result_digest)
        )

    def to_doc(self) -> dict:
        return {
            "peer_id": self.peer_id,
            "result_digest": self.result_digest,
            "signature": self.signature,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Endorsement":
        return cls(doc["peer_id"], doc["result_digest"], doc["signature"])


def compute_tx_id(creator: str, chaincode: str, operation: str, args: Sequence[str], nonce: str) -> str:
    return canonical.hex_digest(
        {
            "args": list(args),
            "chaincode": chaincode,
            "creator": creator,
            "nonce": nonce,
            "operation": operation,
        }
    )


def read_set_to_doc(read_set: Sequence[tuple[str, Version]]) -> list:
    return [[k, _version_to_doc(v)] for k, v in read_set]


def read_set_from_doc(doc: Sequence) -> list[tuple[str, Version]]:
    return [(k, _version_from_doc(v)) for k, v in doc]


def write_set_to_doc(write_set: Sequence[tuple[str, str]]) -> list:
    return [[k, v] for k, v in write_set]


def write_set_from_doc(doc: Sequence) -> list[tuple[str, str]]:
    return [(k, v) for k, v in doc]


def result_digest(read_set, write_set, response: str) -> str:
    return canonical.hex_digest(
        {
            "read_set": read_set_to_doc(read_set),
            "response": response,
            "write_set": write_set_to_doc(write_set),
        }
    )


@dataclass
class Transaction:
    creator: str
    chaincode: str
    operation: str
    args: list[str]
    nonce: str
    read_set: list[tuple[str, Version]]
    write_set: list[tuple[str, str]]
    response: str
    endorsements: list[Endorsement]
    tx_id: str = ""
    validity_flag: Optional[str] = None  # commit-assigned, never serialized

    def __post_init__(self) -> None:
        computed = compute_tx_id(self.creator, self.chaincode, self.operation, self.args, self.nonce)
        if not self.tx_id:
            self.tx_id = computed

    def id_matches(self) -> bool:
        return self.tx_id == compute_tx_id(
            self.creator, self.chaincode, self.operation, self.args, self.nonce
        )

    def result_digest(self) -> str:
        return result_digest(self.read_set, self.write_set, self.response)

    def to_doc(self) -> dict:
        return {
            "tx_id": self.tx_id,
            "creator": self.creator,
            "chaincode": self.chaincode,
            "operation": self.operation,
            "args": list(self.args),
            "nonce": self.nonce,
            "read_set": read_set_to_doc(self.read_set),
            "write_set": write_set_to_doc(self.write_set),
            "response": self.response,
            "endorsements": [e.to_doc() for e in self.endorsements],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Transaction":
        return cls(
            creator=doc["creator"],
            chaincode=doc["chaincode"],
            operation=doc["operation"],
            args=list(doc["args"]),
            nonce=doc["nonce"],
            read_set=read_set_from_doc(doc["read_set"]),
            write_set=write_set_from_doc(doc["write_set"]),
            response=doc["response"],
            endorsements=[Endorsement.from_doc(e) for e in doc["endorsements"]],
            tx_id=doc["tx_id"],
        )


@dataclass
class Block:
    number: int
    prev_hash: str
    timestamp: int  # orderer wall clock, milliseconds; informational only
    transactions: list[Transaction]
    block_hash: str = ""

    def body_doc(self) -> dict:
        return {
            "number": self.number,
            "prev_hash": self.prev_hash,
            "timestamp": self.timestamp,
            "transactions": [t.to_doc() for t in self.transactions],
            "block_hash": "",
        }

    def compute_hash(self) -> str:
        return canonical.hex_digest(self.body_doc())

    def seal(self) -> "Block":
        self.block_hash = self.compute_hash()
        return self

    def to_doc(self) -> dict:
        doc = self.body_doc()
        doc["block_hash"] = self.block_hash
        return doc

    def to_bytes(self) -> bytes:
        return canonical.encode(self.to_doc())

    @classmethod
    def from_doc(cls, doc: dict) -> "Block":
        return cls(
            number=doc["number"],
            prev_hash=doc["prev_hash"],
            timestamp=doc["timestamp"],
            transactions=[Transaction.from_doc(t) for t in doc["transactions"]],
            block_hash=doc["block_hash"],
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "Block":
        doc = canonical.decode(data, strict=True)
        if not isinstance(doc, dict):
            raise MalformedBlockError("block document must be a map")
        try:
            return cls.from_doc(doc)
        except (KeyError, TypeError, IndexError) as exc:
            raise MalformedBlockError(f"block document missing field: {exc}") from None


def make_genesis(timestamp: Optional[int] = None) -> Block:
    ts = int(time.time() * 1000) if timestamp is None else timestamp
    return Block(0, GENESIS_PREV_HASH, ts, []).seal()


class StateDatabase:
    """key -> (value, version) view derived from the chain.

    Versions are (block number, tx index) write positions, reconstructible
    from the chain alone; they must strictly increase per key.
    """

    def __init__(self) -> None:
        self._entries: dict[str, tuple[str, tuple[int, int]]] = {}

    def get(self, key: str) -> Optional[tuple[str, tuple[int, int]]]:
        return self._entries.get(key)

    def get_version(self, key: str) -> Version:
        entry = self._entries.get(key)
        return None if entry is None else entry[1]

    def put(self, key: str, value: str, version: tuple[int, int]) -> None:
        current = self._entries.get(key)
        if current is not None and version <= current[1]:
            raise LedgerError(f"version for {key!r} must increase: {current[1]} -> {version}")
        self._entries[key] = (value, version)

    def keys_with_prefix(self, prefix: str) -> list[str]:
        return sorted(k for k in self._entries if k.startswith(prefix))

    def items(self) -> Iterable[tuple[str, tuple[str, tuple[int, int]]]]:
        return self._entries.items()

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def digest(self) -> str:
        return canonical.hex_digest(
            {
                k: {"value": v, "version": [ver[0], ver[1]]}
                for k, (v, ver) in self._entries.items()
            }
        )

    def to_doc(self) -> dict:
        return {
            k: {"value": v, "version": [ver[0], ver[1]]}
            for k, (v, ver) in sorted(self._entries.items())
        }


def validate_block_shape(chain: Sequence[Block], block: Block) -> None:
    if block.number != len(chain):
        raise ChainLinkageError(
            f"block number {block.number}, expected {len(chain)}"
        )
    expected_prev = chain[-1].block_hash if chain else GENESIS_PREV_HASH
    if block.prev_hash != expected_prev:
        raise ChainLinkageError(
            f"block {block.number}: prev_hash {block.prev_hash} != tip {expected_prev}"
        )
    if block.compute_hash() != block.block_hash:
        raise MalformedBlockError(f"block {block.number}: stored hash does not recompute")


def _validate_tx(
    tx: Transaction,
    block_number: int,
    state: StateDatabase,
    policy_lookup: PolicyLookup,
    registry: MembershipRegistry,
) -> str:
    if not tx.id_matches():
        return FLAG_INVALID_ENDORSEMENT
    read_keys = [k for k, _ in tx.read_set]
    write_keys = [k for k, _ in tx.write_set]
    if len(set(read_keys)) != len(read_keys) or len(set(write_keys)) != len(write_keys):
        return FLAG_INVALID_ENDORSEMENT
    carried = tx.result_digest()
    if any(e.result_digest != carried for e in tx.endorsements):
        return FLAG_INVALID_ENDORSEMENT
    policy = policy_lookup(tx.chaincode, state)
    if policy is None:
        return FLAG_INVALID_ENDORSEMENT
    attested = [e for e in tx.endorsements if e.verify(tx.tx_id, registry)]
    if not evaluate_endorsement_policy(attested, policy, registry):
        return FLAG_INVALID_ENDORSEMENT
    for key, version in tx.read_set:
        if state.get_version(key) != version:
            return FLAG_INVALID_VERSION
    return FLAG_VALID


def commit_block(
    chain: list[Block],
    state: StateDatabase,
    block: Block,
    policy_lookup: PolicyLookup,
    registry: MembershipRegistry,
) -> list[str]:
    """Append `block` and validate its transactions in order.

    The whole block is appended before validity checking; invalid
    transactions remain in the chain, flagged, and leave state untouched.
    Validation is sequential within the block: a transaction sees the writes
    of valid transactions before it.
    """
    validate_block_shape(chain, block)
    chain.append(block)
    flags = []
    for idx, tx in enumerate(block.transactions):
        flag = _validate_tx(tx, block.number, state, policy_lookup, registry)
        if flag == FLAG_VALID:
            for key, value in tx.write_set:
                state.put(key, value, (block.number, idx))
        tx.validity_flag = flag
        flags.append(flag)
    return flags


@dataclass(frozen=True)
class ChainReport:
    ok: bool
    bad_block: Optional[int] = None
    reason: str = ""

    def __str__(self) -> str:
        if self.ok:
            return "ok"
        return f"block {self.bad_block}: {self.reason}"


def verify_chain(blocks: Sequence[Block]) -> ChainReport:
    """Recompute every block hash and linkage; report the lowest bad block."""
    prev = GENESIS_PREV_HASH
    for i, block in enumerate(blocks):
        if block.number != i:
            return ChainReport(False, i, f"block number {block.number}, expected {i}")
        if block.prev_hash != prev:
            return ChainReport(False, i, "prev_hash does not match preceding block")
        if block.compute_hash() != block.block_hash:
            return ChainReport(False, i, "stored block hash does not recompute")
        prev = block.block_hash
    return ChainReport(True)


def replay(
    blocks: Sequence[Block],
    policy_lookup: PolicyLookup,
    registry: MembershipRegistry,
) -> StateDatabase:
    """Rebuild the state database from the chain; refuses tampered chains."""
    report = verify_chain(blocks)
    if not report.ok:
        raise ChainVerificationError(str(report))
    state = StateDatabase()
    chain: list[Block] = []
    for block in blocks:
        replayed = Block.from_doc(block.to_doc())  # leave caller's flags alone
        commit_block(chain, state, replayed, policy_lookup, registry)
    return state


def make_policy_lookup(defaults: dict[str, EndorsementPolicy]) -> PolicyLookup:
    """Endorsement policy resolution: the state database wins (policies are
    ledger records), the network-config defaults cover bootstrap, before the
    first set_policy transaction has committed."""
    from confledger.policy import endorsement_state_key

    def lookup(chaincode: str, state: StateDatabase) -> Optional[EndorsementPolicy]:
        entry = state.get(endorsement_state_key(chaincode))
        if entry is not None:
            try:
                return EndorsementPolicy.from_doc(canonical.decode(entry[0]))
            except (canonical.CanonicalError, ConfLedgerError, KeyError):
                return None
        return defaults.get(chaincode)

    return lookup


# ---------------------------------------------------------------------------
# On-disk chain persistence: one canonical document per block under a chain
# directory.  The block files are the source of truth; state is rebuilt.

_BLOCK_FILE_RE = re.compile(r"^block_(\d{10})$")


def block_filename(number: int) -> str:
    return f"block_{number:010d}"


class ChainStore:
    def __init__(self, directory: str) -> None:
        self.directory = directory
        os.makedirs(directory, exist_ok=True)

    def _path(self, number: int) -> str:
        return os.path.join(self.directory, block_filename(number))

    def block_numbers(self) -> list[int]:
        numbers = []
        for name in os.listdir(self.directory):
            match = _BLOCK_FILE_RE.match(name)
            if match:
                numbers.append(int(match.group(1)))
        return sorted(numbers)

    def save_block(self, block: Block) -> None:
        tmp = self._path(block.number) + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(block.to_bytes())
        os.replace(tmp, self._path(block.number))

    def read_bytes(self, number: int) -> bytes:
        with open(self._path(number), "rb") as fh:
            return fh.read()

    def load(self) -> list[Block]:
        """Load all blocks, strictly; raises on the first undecodable file."""
        blocks = []
        for expect, number in enumerate(self.block_numbers()):
            if number != expect:
                raise ChainVerificationError(f"missing block file {block_filename(expect)}")
            try:
                blocks.append(Block.from_bytes(self.read_bytes(number)))
            except (canonical.CanonicalError, MalformedBlockError) as exc:
                raise ChainVerificationError(f"block {number}: {exc}") from None
        return blocks

    def verify_files(self) -> ChainReport:
        """Like verify_chain but tolerant of unreadable files: a block file
        that no longer parses reports that block as the first bad one."""
        blocks = []
        for expect, number in enumerate(self.block_numbers()):
            if number != expect:
                return ChainReport(False, expect, "missing block file")
            try:
                blocks.append(Block.from_bytes(self.read_bytes(number)))
            except (canonical.CanonicalError, MalformedBlockError) as exc:
                return ChainReport(False, number, f"undecodable block file: {exc}")
        return verify_chain(blocks)
