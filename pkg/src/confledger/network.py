"""Peers, ordering service, transports, and the client flows.

The write path is endorse -> match -> order -> deliver -> commit: a client
sends its operation to every peer named by the chaincode's endorsement
policy, requires the signed execution results to agree byte-for-byte, and
only then hands the assembled transaction to the orderer, which batches
transactions into hash-chained blocks and delivers them to all peers in a
single deterministic order.  Commit-time validation lives in the ledger
module; a Byzantine endorser is caught before ordering, a stale read after.

Two transports with identical semantics: in-process handles (every message
round-trips through canonical bytes, so nothing mutable is ever shared) and
length-prefixed TCP framing.
"""

from __future__ import annotations

import logging
import queue
import socket
import threading
import time
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from confledger import canonical
from confledger.chaincode import (
    ChaincodeRuntime,
    SimulationError,
    is_query_operation,
    new_nonce,
)
from confledger.errors import ConfLedgerError
from confledger.identity import MembershipRegistry, sign, sign_document, verify_document
from confledger.ledger import (
    Block,
    ChainStore,
    Endorsement,
    StateDatabase,
    Transaction,
    commit_block,
    compute_tx_id,
    make_genesis,
    make_policy_lookup,
    read_set_from_doc,
    read_set_to_doc,
    result_digest,
    write_set_from_doc,
    write_set_to_doc,
)
from confledger.policy import EndorsementPolicy, evaluate_endorsement_policy

log = logging.getLogger("confledger.network")

MSG_TX_PROPOSAL = "tx_proposal"
MSG_ENDORSEMENT = "endorsement"
MSG_TX_SUBMIT = "tx_submit"
MSG_BLOCK = "block"
MSG_QUERY = "query"
MSG_QUERY_RESPONSE = "query_response"

SYSTEM_CHAINCODE = "_system"
GENESIS_TIMESTAMP = 0  # all peers must mint a byte-identical genesis

MAX_FRAME_BYTES = 16 << 20

TRANSPORTS = ("in_process", "tcp")


class NetworkError(ConfLedgerError):
    pass


class UnreachablePeerError(NetworkError):
    pass


class EndorsementMismatchError(NetworkError):
    """Endorsing peers returned divergent execution results."""


class QueryMismatchError(NetworkError):
    """Queried peers returned divergent responses (stale or Byzantine peer)."""


class QueryError(NetworkError):
    """A peer refused the query; deterministic, so one refusal speaks for all."""

    def __init__(self, code: str, message: str) -> None:
        super().__init__(message)
        self.code = code
        self.message = message


class SubmitTimeoutError(NetworkError):
    pass


# ---------------------------------------------------------------------------
# Network configuration


@dataclass
class NetworkConfig:
    transport: str
    peers: dict[str, str]  # peer id -> "host:port" (empty string when in-process)
    orderer_id: str
    orderer_address: str
    max_txs: int
    max_wait_ms: int
    endorsement: dict[str, EndorsementPolicy]

    def __post_init__(self) -> None:
        if self.transport not in TRANSPORTS:
            raise NetworkError(f"unknown transport {self.transport!r}")
        if not self.peers:
            raise NetworkError("network needs at least one peer")
        if self.max_txs < 1:
            raise NetworkError("max_txs must be at least 1")
        if self.max_wait_ms < 0:
            raise NetworkError("max_wait_ms must not be negative")
        for chaincode, policy in self.endorsement.items():
            missing = set(policy.peers) - set(self.peers)
            if missing:
                raise NetworkError(
                    f"endorsement policy for {chaincode} names unknown peers {sorted(missing)}"
                )

    def to_doc(self) -> dict:
        return {
            "transport": self.transport,
            "peers": [{"id": pid, "address": addr} for pid, addr in self.peers.items()],
            "orderer": {"id": self.orderer_id, "address": self.orderer_address},
            "batch": {"max_txs": self.max_txs, "max_wait_ms": self.max_wait_ms},
            "endorsement": {cc: p.to_doc() for cc, p in self.endorsement.items()},
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "NetworkConfig":
        try:
            return cls(
                transport=doc["transport"],
                peers={p["id"]: p["address"] for p in doc["peers"]},
                orderer_id=doc["orderer"]["id"],
                orderer_address=doc["orderer"]["address"],
                max_txs=doc["batch"]["max_txs"],
                max_wait_ms=doc["batch"]["max_wait_ms"],
                endorsement={
                    cc: EndorsementPolicy.from_doc(p)
                    for cc, p in doc["endorsement"].items()
                },
            )
        except (KeyError, TypeError) as exc:
            raise NetworkError(f"network config missing field: {exc}") from None

    def save(self, path: str) -> None:
        data = canonical.encode(self.to_doc())
        with open(path, "wb") as fh:
            fh.write(data)

    @classmethod
    def load(cls, path: str) -> "NetworkConfig":
        with open(path, "rb") as fh:
            return cls.from_doc(canonical.decode(fh.read()))


# ---------------------------------------------------------------------------
# Handles: uniform request/response access to a peer or orderer.  Both
# transports round-trip every message through canonical bytes, so the
# receiver always works on its own copy and malformed documents fail at the
# boundary.


class LocalHandle:
    def __init__(self, target) -> None:
        self._target = target

    def request(self, message: dict) -> Optional[dict]:
        wire = canonical.encode(message)
        reply = self._target.handle_message(canonical.decode(wire, strict=True))
        if reply is None:
            return None
        return canonical.decode(canonical.encode(reply), strict=True)


class TcpHandle:
    def __init__(self, address: str, timeout: float = 5.0) -> None:
        host, _, port = address.rpartition(":")
        self._addr = (host, int(port))
        self._timeout = timeout

    def request(self, message: dict) -> Optional[dict]:
        try:
            with socket.create_connection(self._addr, timeout=self._timeout) as sock:
                send_frame(sock, message)
                return recv_frame(sock)
        except OSError:
            return None


def send_frame(sock: socket.socket, doc: dict) -> None:
    data = canonical.encode(doc)
    if len(data) > MAX_FRAME_BYTES:
        raise NetworkError(f"frame of {len(data)} bytes exceeds limit")
    sock.sendall(len(data).to_bytes(4, "big") + data)


def recv_frame(sock: socket.socket) -> Optional[dict]:
    header = _recv_exact(sock, 4)
    if header is None:
        return None
    length = int.from_bytes(header, "big")
    if length > MAX_FRAME_BYTES:
        raise NetworkError(f"frame of {length} bytes exceeds limit")
    data = _recv_exact(sock, length)
    if data is None:
        return None
    doc = canonical.decode(data, strict=True)
    if not isinstance(doc, dict):
        raise NetworkError("framed message must be a map")
    return doc


def _recv_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    chunks = b""
    while len(chunks) < n:
        part = sock.recv(n - len(chunks))
        if not part:
            return None
        chunks += part
    return chunks


class MessageServer(threading.Thread):
    """One-listener TCP server: each connection carries framed request/reply
    pairs until the client closes it."""

    def __init__(self, host: str, port: int, handler: Callable[[dict], Optional[dict]]):
        super().__init__(daemon=True)
        self._handler = handler
        self._listener = socket.create_server((host, port))
        self._stopping = threading.Event()
        self.host, self.port = self._listener.getsockname()[:2]

    def run(self) -> None:
        while not self._stopping.is_set():
            try:
                conn, _ = self._listener.accept()
            except OSError:
                break
            threading.Thread(target=self._serve, args=(conn,), daemon=True).start()

    def _serve(self, conn: socket.socket) -> None:
        with conn:
            while True:
                try:
                    message = recv_frame(conn)
                except (NetworkError, canonical.CanonicalError, OSError):
                    return
                if message is None:
                    return
                reply = self._handler(message)
                if reply is None:
                    return  # dropped: close without replying
                try:
                    send_frame(conn, reply)
                except OSError:
                    return

    def stop(self) -> None:
        self._stopping.set()
        try:
            self._listener.close()
        except OSError:
            pass
        self.join(timeout=2)


# ---------------------------------------------------------------------------
# Peer node


@dataclass
class ByzantineHooks:
    """Adversarial behaviours injectable per peer, for tests."""

    tamper_write_set: bool = False
    drop: bool = False
    delay: float = 0.0


class PeerNode:
    """Endorsing/committing peer: simulates operations against its own state
    copy, signs the results, and commits delivered blocks."""

    def __init__(
        self,
        peer_id: str,
        signing_key: bytes,
        registry: MembershipRegistry,
        config: NetworkConfig,
        chain_dir: Optional[str] = None,
        hooks: Optional[ByzantineHooks] = None,
    ) -> None:
        self.peer_id = peer_id
        self._key = signing_key
        self.registry = registry
        self.config = config
        self.hooks = hooks or ByzantineHooks()
        self.runtime = ChaincodeRuntime(registry)
        self.policy_lookup = make_policy_lookup(config.endorsement)
        self.chain: list[Block] = []
        self.state = StateDatabase()
        self._tx_index: dict[str, dict] = {}
        self._lock = threading.RLock()
        self._store = ChainStore(chain_dir) if chain_dir else None
        self._boot()

    def _boot(self) -> None:
        stored = self._store.load() if self._store else []
        if not stored:
            stored = [make_genesis(timestamp=GENESIS_TIMESTAMP)]
            if self._store:
                self._store.save_block(stored[0])
        for block in stored:
            self._commit(block, persist=False)

    def _commit(self, block: Block, persist: bool = True) -> None:
        commit_block(self.chain, self.state, block, self.policy_lookup, self.registry)
        for idx, tx in enumerate(block.transactions):
            self._tx_index[tx.tx_id] = {
                "found": True,
                "block_number": block.number,
                "tx_index": idx,
                "validity_flag": tx.validity_flag,
            }
        if persist and self._store:
            self._store.save_block(block)

    @property
    def height(self) -> int:
        return len(self.chain) - 1

    @property
    def tip_hash(self) -> str:
        return self.chain[-1].block_hash

    # -- message dispatch

    def handle_message(self, message: dict) -> Optional[dict]:
        if self.hooks.delay:
            time.sleep(self.hooks.delay)
        if self.hooks.drop:
            return None
        msg_type = message.get("msg_type")
        try:
            if msg_type == MSG_TX_PROPOSAL:
                return self._handle_proposal(message)
            if msg_type == MSG_QUERY:
                return self._handle_query(message)
            if msg_type == MSG_BLOCK:
                return self._handle_block(message)
            return self._error_reply("bad_message", f"peer cannot handle {msg_type!r}")
        except (KeyError, TypeError, ValueError) as exc:
            return self._error_reply("bad_message", f"malformed {msg_type}: {exc}")

    # -- endorsement

    def _handle_proposal(self, message: dict) -> dict:
        creator = message["creator"]
        chaincode = message["chaincode"]
        operation = message["operation"]
        args = list(message["args"])
        nonce = message["nonce"]
        tx_id = compute_tx_id(creator, chaincode, operation, args, nonce)
        try:
            with self._lock:
                sim = self.runtime.simulate(chaincode, operation, args, creator, self.state)
        except SimulationError as exc:
            return self._refusal(tx_id, exc.code, exc.message)

        read_set, write_set, response = sim.read_set, sim.write_set, sim.response
        if self.hooks.tamper_write_set:
            write_set = [(k, v + "☠") for k, v in write_set]
        digest = result_digest(read_set, write_set, response)
        endorsement = Endorsement(
            self.peer_id,
            digest,
            sign(self._key, Endorsement.payload(tx_id, digest)).hex(),
        )
        return {
            "msg_type": MSG_ENDORSEMENT,
            "ok": True,
            "tx_id": tx_id,
            "endorsement": endorsement.to_doc(),
            "read_set": read_set_to_doc(read_set),
            "write_set": write_set_to_doc(write_set),
            "response": response,
        }

    def _refusal(self, tx_id: str, code: str, message: str) -> dict:
        doc = {
            "msg_type": MSG_ENDORSEMENT,
            "ok": False,
            "tx_id": tx_id,
            "peer_id": self.peer_id,
            "error_code": code,
            "error_message": message,
        }
        return sign_document(doc, self._key)

    # -- queries

    def _handle_query(self, message: dict) -> dict:
        creator = message["creator"]
        chaincode = message["chaincode"]
        operation = message["operation"]
        args = list(message["args"])
        with self._lock:
            height, tip = self.height, self.tip_hash
            if chaincode == SYSTEM_CHAINCODE:
                try:
                    result = self._system_query(operation, args)
                except SimulationError as exc:
                    return self._error_reply(exc.code, exc.message)
                body = {"result": result, "height": height, "tip_hash": tip}
                return self._signed_reply(True, body)
            if not is_query_operation(chaincode, operation):
                return self._error_reply(
                    "not_a_query", f"{chaincode}.{operation} must go through submit"
                )
            try:
                sim = self.runtime.simulate(chaincode, operation, args, creator, self.state)
            except SimulationError as exc:
                return self._error_reply(exc.code, exc.message)
        if sim.write_set:
            return self._error_reply("not_a_query", "query produced writes")
        body = {"response": sim.response, "height": height, "tip_hash": tip}
        return self._signed_reply(True, body)

    def _system_query(self, operation: str, args: list) -> dict:
        if operation == "height":
            return {"height": self.height, "tip_hash": self.tip_hash}
        if operation == "get_block":
            if len(args) != 1:
                raise SimulationError("invalid_argument", "get_block takes (number,)")
            try:
                number = int(args[0])
            except (TypeError, ValueError):
                raise SimulationError("invalid_argument", "block number must be an integer") from None
            if not 0 <= number <= self.height:
                raise SimulationError("not_found", f"no block {number}")
            return {"block": self.chain[number].to_doc()}
        if operation == "tx_status":
            if len(args) != 1:
                raise SimulationError("invalid_argument", "tx_status takes (tx_id,)")
            return self._tx_index.get(
                args[0],
                {"found": False, "block_number": -1, "tx_index": -1, "validity_flag": ""},
            )
        raise SimulationError("unknown_operation", f"no system query {operation!r}")

    def _signed_reply(self, ok: bool, body: dict) -> dict:
        doc = {
            "msg_type": MSG_QUERY_RESPONSE,
            "ok": ok,
            "peer_id": self.peer_id,
            "body": body,
        }
        return sign_document(doc, self._key)

    def _error_reply(self, code: str, message: str) -> dict:
        return self._signed_reply(False, {"error_code": code, "error_message": message})

    # -- block delivery

    def _handle_block(self, message: dict) -> dict:
        block = Block.from_doc(message["block"])
        with self._lock:
            if block.number <= self.height:
                stored = self.chain[block.number]
                if stored.to_bytes() == block.to_bytes():
                    return self._signed_reply(True, {"height": self.height})
                return self._error_reply(
                    "conflicting_block", f"already hold a different block {block.number}"
                )
            if block.number > self.height + 1:
                return self._error_reply(
                    "out_of_order",
                    f"got block {block.number} while at height {self.height}",
                )
            try:
                self._commit(block)
            except ConfLedgerError as exc:
                return self._error_reply("bad_block", str(exc))
            return self._signed_reply(True, {"height": self.height})


# ---------------------------------------------------------------------------
# Ordering service


class _FlushMarker:
    def __init__(self) -> None:
        self.done = threading.Event()


_STOP = object()


class OrderingService(threading.Thread):
    """Single deterministic orderer: FIFO queue, cut a block when max_txs
    transactions are pending or max_wait elapsed since the first, deliver to
    every peer in a fixed order."""

    def __init__(
        self,
        orderer_id: str,
        signing_key: bytes,
        peer_handles: dict[str, "LocalHandle | TcpHandle"],
        max_txs: int,
        max_wait_ms: int,
        next_number: int,
        prev_hash: str,
    ) -> None:
        super().__init__(daemon=True, name=f"orderer-{orderer_id}")
        self.orderer_id = orderer_id
        self._key = signing_key
        self._peer_handles = peer_handles
        self.max_txs = max_txs
        self.max_wait = max_wait_ms / 1000.0
        self._next_number = next_number
        self._prev_hash = prev_hash
        self._queue: queue.Queue = queue.Queue()
        self._lock = threading.Lock()
        self._seen_tx_ids: set[str] = set()
        self.accepted_count = 0
        self.blocks_cut = 0
        self.ordered_tx_ids: list[str] = []

    # -- client side

    def handle_message(self, message: dict) -> Optional[dict]:
        if message.get("msg_type") != MSG_TX_SUBMIT:
            return self._reply(False, {"error_code": "bad_message",
                                       "error_message": "orderer only accepts tx_submit"})
        accepted, reason = self.submit_transaction(message.get("transaction"))
        return self._reply(True, {"accepted": accepted, "reason": reason})

    def _reply(self, ok: bool, body: dict) -> dict:
        doc = {
            "msg_type": MSG_QUERY_RESPONSE,
            "ok": ok,
            "peer_id": self.orderer_id,
            "body": body,
        }
        return sign_document(doc, self._key)

    def submit_transaction(self, tx_doc) -> tuple[bool, str]:
        try:
            tx = Transaction.from_doc(tx_doc)
        except (KeyError, TypeError, ValueError) as exc:
            return False, f"malformed transaction: {exc}"
        if not tx.id_matches():
            return False, "tx_id does not match its contents"
        with self._lock:
            if tx.tx_id in self._seen_tx_ids:
                return False, f"transaction {tx.tx_id} already accepted"
            self._seen_tx_ids.add(tx.tx_id)
            self.accepted_count += 1
        self._queue.put(tx)
        return True, ""

    # -- batching loop

    def run(self) -> None:
        batch: list[Transaction] = []
        deadline: Optional[float] = None
        while True:
            timeout = None if deadline is None else max(0.0, deadline - time.monotonic())
            try:
                item = self._queue.get(timeout=timeout)
            except queue.Empty:
                self._cut(batch)
                batch, deadline = [], None
                continue
            if item is _STOP:
                self._cut(batch)
                return
            if isinstance(item, _FlushMarker):
                self._cut(batch)
                batch, deadline = [], None
                item.done.set()
                continue
            batch.append(item)
            if deadline is None:
                deadline = time.monotonic() + self.max_wait
            if len(batch) >= self.max_txs:
                self._cut(batch)
                batch, deadline = [], None

    def _cut(self, batch: list[Transaction]) -> None:
        if not batch:
            return
        block = Block(
            self._next_number,
            self._prev_hash,
            int(time.time() * 1000),
            list(batch),
        ).seal()
        self._next_number += 1
        self._prev_hash = block.block_hash
        self.blocks_cut += 1
        self.ordered_tx_ids.extend(tx.tx_id for tx in batch)
        message = {"msg_type": MSG_BLOCK, "block": block.to_doc()}
        for peer_id, handle in self._peer_handles.items():
            for attempt in range(3):
                reply = handle.request(message)
                if reply is not None and reply.get("ok"):
                    break
                time.sleep(0.05 * (attempt + 1))
            else:
                log.warning("block %d undeliverable to %s", block.number, peer_id)

    def flush(self, timeout: float = 10.0) -> None:
        """Cut everything accepted so far; returns once those blocks are out."""
        marker = _FlushMarker()
        self._queue.put(marker)
        if not marker.done.wait(timeout):
            raise NetworkError("orderer flush timed out")

    def stop(self) -> None:
        self._queue.put(_STOP)
        self.join(timeout=5)


# ---------------------------------------------------------------------------
# Client flows


@dataclass(frozen=True)
class SubmitOutcome:
    status: str  # committed | aborted
    tx_id: str
    validity_flag: str = ""
    block_number: int = -1
    tx_index: int = -1
    response: str = ""
    error_code: str = ""
    reason: str = ""

    @property
    def committed_valid(self) -> bool:
        return self.status == "committed" and self.validity_flag == "valid"


class Client:
    """Submits operations through the endorse->order flow and runs q-peer
    matched queries.  Holds no actor keys: authorization travels inside the
    signed argument documents."""

    def __init__(
        self,
        client_id: str,
        registry: MembershipRegistry,
        peer_handles: dict[str, "LocalHandle | TcpHandle"],
        orderer_handle,
        config: NetworkConfig,
        observe_peer: Optional[str] = None,
        timeout: float = 10.0,
        poll_interval: float = 0.02,
    ) -> None:
        self.client_id = client_id
        self.registry = registry
        self.peer_handles = peer_handles
        self.orderer_handle = orderer_handle
        self.config = config
        self.observe_peer = observe_peer or next(iter(peer_handles))
        self.timeout = timeout
        self.poll_interval = poll_interval

    # -- submission

    def submit(
        self, chaincode: str, operation: str, args: Sequence[str], nonce: Optional[str] = None
    ) -> SubmitOutcome:
        if is_query_operation(chaincode, operation):
            raise NetworkError(f"{chaincode}.{operation} is a query; use query()")
        policy = self.config.endorsement.get(chaincode)
        if policy is None:
            raise NetworkError(f"no endorsement policy configured for {chaincode!r}")
        nonce = nonce or new_nonce()
        args = [str(a) for a in args]
        tx_id = compute_tx_id(self.client_id, chaincode, operation, args, nonce)
        proposal = {
            "msg_type": MSG_TX_PROPOSAL,
            "creator": self.client_id,
            "chaincode": chaincode,
            "operation": operation,
            "args": args,
            "nonce": nonce,
        }

        endorsements: list[Endorsement] = []
        results: list[dict] = []
        refusals: list[dict] = []
        answered = 0
        for peer_id in policy.peers:
            handle = self.peer_handles.get(peer_id)
            reply = handle.request(proposal) if handle else None
            if reply is None:
                continue  # unreachable counts as a missing endorsement
            answered += 1
            if reply.get("msg_type") != MSG_ENDORSEMENT or reply.get("tx_id") != tx_id:
                continue
            if not reply.get("ok"):
                if verify_document(reply, self.registry, "peer_id"):
                    refusals.append(reply)
                continue
            endorsement = Endorsement.from_doc(reply["endorsement"])
            carried = result_digest(
                read_set_from_doc(reply["read_set"]),
                write_set_from_doc(reply["write_set"]),
                reply["response"],
            )
            if carried != endorsement.result_digest:
                continue  # peer lied about its own result
            if not endorsement.verify(tx_id, self.registry):
                continue
            endorsements.append(endorsement)
            results.append(reply)

        if answered == 0:
            return SubmitOutcome(
                status="aborted",
                tx_id=tx_id,
                error_code="unreachable",
                reason="no endorsing peer answered",
            )
        digests = {e.result_digest for e in endorsements}
        if len(digests) > 1:
            return SubmitOutcome(
                status="aborted",
                tx_id=tx_id,
                error_code="endorsement_mismatch",
                reason="endorsing peers disagree on the execution result",
            )
        if not evaluate_endorsement_policy(endorsements, policy, self.registry):
            if refusals:
                first = refusals[0]
                return SubmitOutcome(
                    status="aborted",
                    tx_id=tx_id,
                    error_code=first["error_code"],
                    reason=first["error_message"],
                )
            return SubmitOutcome(
                status="aborted",
                tx_id=tx_id,
                error_code="endorsement_policy_unmet",
                reason=f"could not gather {policy.threshold} matching endorsements",
            )

        chosen = results[0]
        tx = Transaction(
            creator=self.client_id,
            chaincode=chaincode,
            operation=operation,
            args=args,
            nonce=nonce,
            read_set=read_set_from_doc(chosen["read_set"]),
            write_set=write_set_from_doc(chosen["write_set"]),
            response=chosen["response"],
            endorsements=endorsements,
        )
        reply = self.orderer_handle.request(
            {"msg_type": MSG_TX_SUBMIT, "transaction": tx.to_doc()}
        )
        if reply is None or not reply.get("ok"):
            return SubmitOutcome(
                status="aborted", tx_id=tx_id,
                error_code="orderer_unavailable", reason="orderer gave no answer",
            )
        body = reply["body"]
        if not body.get("accepted"):
            return SubmitOutcome(
                status="aborted", tx_id=tx_id,
                error_code="orderer_rejected", reason=body.get("reason", ""),
            )
        status = self._await_commit(tx_id)
        return SubmitOutcome(
            status="committed",
            tx_id=tx_id,
            validity_flag=status["validity_flag"],
            block_number=status["block_number"],
            tx_index=status["tx_index"],
            response=tx.response,
        )

    def _await_commit(self, tx_id: str) -> dict:
        deadline = time.monotonic() + self.timeout
        while time.monotonic() < deadline:
            status = self.tx_status(tx_id)
            if status["found"]:
                return status
            time.sleep(self.poll_interval)
        raise SubmitTimeoutError(
            f"transaction {tx_id} not committed within {self.timeout}s"
        )

    # -- queries

    def query(
        self,
        chaincode: str,
        operation: str,
        args: Sequence[str],
        q: Optional[int] = None,
    ) -> dict:
        """Run a read on q peers; return the body all of them agree on."""
        peer_ids = self._query_peers(chaincode)
        if q is not None:
            if not 1 <= q <= len(peer_ids):
                raise NetworkError(f"q={q} out of range for {len(peer_ids)} peers")
            peer_ids = peer_ids[:q]
        if len(peer_ids) == 1 and chaincode != SYSTEM_CHAINCODE:
            warnings.warn(
                "query matched on a single peer: no cross-check possible",
                RuntimeWarning,
                stacklevel=2,
            )
        message = {
            "msg_type": MSG_QUERY,
            "creator": self.client_id,
            "chaincode": chaincode,
            "operation": operation,
            "args": [str(a) for a in args],
        }
        oks: dict[str, dict] = {}
        errors: dict[str, dict] = {}
        for peer_id in peer_ids:
            reply = self.peer_handles[peer_id].request(message)
            if reply is None:
                raise UnreachablePeerError(f"peer {peer_id} gave no answer")
            if reply.get("msg_type") != MSG_QUERY_RESPONSE or not verify_document(
                reply, self.registry, "peer_id"
            ):
                raise NetworkError(f"peer {peer_id} returned an unverifiable response")
            (oks if reply["ok"] else errors)[peer_id] = reply["body"]
        if errors and oks:
            raise QueryMismatchError(
                f"peers {sorted(oks)} answered but {sorted(errors)} refused; "
                "stale or Byzantine peer"
            )
        if errors:
            body = next(iter(errors.values()))
            raise QueryError(body["error_code"], body["error_message"])
        if len({canonical.encode(b) for b in oks.values()}) > 1:
            heights = {p: b.get("height") for p, b in oks.items()}
            raise QueryMismatchError(
                f"peers disagree on the response (heights {heights}); "
                "stale or Byzantine peer"
            )
        return next(iter(oks.values()))

    def _query_peers(self, chaincode: str) -> list[str]:
        if chaincode == SYSTEM_CHAINCODE:
            return [self.observe_peer]
        policy = self.config.endorsement.get(chaincode)
        if policy is None:
            raise NetworkError(f"no endorsement policy configured for {chaincode!r}")
        return [p for p in policy.peers if p in self.peer_handles]

    def query_chaincode(
        self, chaincode: str, operation: str, args: Sequence[str], q: Optional[int] = None
    ) -> dict:
        """Chaincode query, response decoded back into a document."""
        body = self.query(chaincode, operation, args, q=q)
        return canonical.decode(body["response"])

    def tx_status(self, tx_id: str) -> dict:
        return self.query(SYSTEM_CHAINCODE, "tx_status", [tx_id])["result"]

    def get_block(self, number: int) -> dict:
        return self.query(SYSTEM_CHAINCODE, "get_block", [str(number)])["result"]["block"]

    def height(self) -> dict:
        body = self.query(SYSTEM_CHAINCODE, "height", [])
        return {"height": body["height"], "tip_hash": body["tip_hash"]}


# ---------------------------------------------------------------------------
# Assembly


class NetworkHost:
    """Everything that runs on the 'server side' of a deployment: the peers,
    the ordering service, and (in tcp mode) their listeners."""

    def __init__(
        self,
        registry: MembershipRegistry,
        keys: dict[str, bytes],
        config: NetworkConfig,
        base_dir: Optional[str] = None,
        hooks: Optional[dict[str, ByzantineHooks]] = None,
    ) -> None:
        self.registry = registry
        self.config = config
        hooks = hooks or {}
        self.peers: dict[str, PeerNode] = {}
        for peer_id in config.peers:
            chain_dir = f"{base_dir}/peers/{peer_id}/chain" if base_dir else None
            self.peers[peer_id] = PeerNode(
                peer_id,
                keys[peer_id],
                registry,
                config,
                chain_dir=chain_dir,
                hooks=hooks.get(peer_id),
            )
        heights = {p.height for p in self.peers.values()}
        tips = {p.tip_hash for p in self.peers.values()}
        if len(heights) > 1 or len(tips) > 1:
            raise NetworkError(
                f"peers disagree at boot (heights {sorted(heights)}); replay them first"
            )
        tip_peer = next(iter(self.peers.values()))
        self._servers: list[MessageServer] = []
        self.bound_addresses: dict[str, str] = {}
        if config.transport == "tcp":
            peer_handles: dict[str, "LocalHandle | TcpHandle"] = {}
            for peer_id, peer in self.peers.items():
                server = MessageServer(*_split_address(config.peers[peer_id]), peer.handle_message)
                server.start()
                self._servers.append(server)
                peer_handles[peer_id] = TcpHandle(f"{server.host}:{server.port}")
                self.bound_addresses[peer_id] = f"{server.host}:{server.port}"
        else:
            peer_handles = {pid: LocalHandle(peer) for pid, peer in self.peers.items()}
        self.peer_handles = peer_handles
        self.orderer = OrderingService(
            config.orderer_id,
            keys[config.orderer_id],
            peer_handles,
            config.max_txs,
            config.max_wait_ms,
            next_number=tip_peer.height + 1,
            prev_hash=tip_peer.tip_hash,
        )
        if config.transport == "tcp":
            server = MessageServer(*_split_address(config.orderer_address), self.orderer.handle_message)
            server.start()
            self._servers.append(server)
            self.orderer_handle: "LocalHandle | TcpHandle" = TcpHandle(
                f"{server.host}:{server.port}"
            )
            self.bound_addresses[config.orderer_id] = f"{server.host}:{server.port}"
        else:
            self.orderer_handle = LocalHandle(self.orderer)

    def start(self) -> "NetworkHost":
        self.orderer.start()
        return self

    def stop(self) -> None:
        self.orderer.stop()
        for server in self._servers:
            server.stop()

    def flush(self, timeout: float = 10.0) -> None:
        self.orderer.flush(timeout)

    def client(self, client_id: str, observe_peer: Optional[str] = None, **kwargs) -> Client:
        return Client(
            client_id,
            self.registry,
            dict(self.peer_handles),
            self.orderer_handle,
            self.config,
            observe_peer=observe_peer,
            **kwargs,
        )

    def __enter__(self) -> "NetworkHost":
        return self.start()

    def __exit__(self, *exc_info) -> None:
        self.stop()


def _split_address(address: str) -> tuple[str, int]:
    host, _, port = address.rpartition(":")
    return host or "127.0.0.1", int(port or 0)


def connect(
    client_id: str,
    registry: MembershipRegistry,
    config: NetworkConfig,
    observe_peer: Optional[str] = None,
    timeout: float = 10.0,
) -> Client:
    """Client for a network hosted elsewhere (tcp transport only)."""
    if config.transport != "tcp":
        raise NetworkError("remote clients need the tcp transport")
    peer_handles = {
        pid: TcpHandle(addr, timeout=timeout) for pid, addr in config.peers.items()
    }
    return Client(
        client_id,
        registry,
        peer_handles,
        TcpHandle(config.orderer_address, timeout=timeout),
        config,
        observe_peer=observe_peer,
        timeout=timeout,
    )
