"""The management chaincode (MGTCC) and policy evaluation chaincode (PECC).

Operations execute deterministically against a state snapshot and emit
(read set, write set, response); nothing here touches the ledger directly.
MGTCC owns the configuration-request lifecycle (propose, approve, retrieve,
acknowledge); PECC owns policy storage and evaluation and is invoked by
MGTCC as an internal call within the same simulation, so its reads join the
caller's read set.

Configuration requests are content-addressed: cr_id is the hash of the
canonical signed proposal, stored under state key ``cr/<cr_id>``.
"""

from __future__ import annotations

import secrets
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

from confledger import canonical, policy as policymod
from confledger.errors import ConfLedgerError
from confledger.identity import MembershipRegistry, sign_document, verify_document
from confledger.ledger import StateDatabase, Version, result_digest

CR_KEY_PREFIX = "cr/"
MAX_CONFIG_BYTES = 1 << 20

STATE_PROPOSED = "proposed"
STATE_VALID = "valid"
STATE_ACKNOWLEDGED = "acknowledged"
STATE_REJECTED = "rejected"
STATE_APPLY_FAILED = "apply_failed"

CR_STATES = (
    STATE_PROPOSED,
    STATE_VALID,
    STATE_ACKNOWLEDGED,
    STATE_REJECTED,
    STATE_APPLY_FAILED,
)

ACK_APPLIED = "applied"
ACK_APPLY_FAILED = "apply_failed"

QUERY_OPERATIONS = {
    "mgtcc": {"retrieve"},
    "pecc": {"get_policy", "evaluate_acp", "evaluate_vp"},
}


class SimulationError(ConfLedgerError):
    """Raised by chaincode execution; carried back to clients as a refusal."""

    def __init__(self, code: str, message: str) -> None:
        super().__init__(message)
        self.code = code
        self.message = message


def cr_state_key(cr_id: str) -> str:
    return CR_KEY_PREFIX + cr_id


def cr_id_of(proposal_doc: dict) -> str:
    """Content address of a proposal: hash of the full signed document."""
    return canonical.hex_digest(proposal_doc)


def new_nonce() -> str:
    return secrets.token_hex(16)


def build_proposal(
    proposer_id: str,
    target_devices: Sequence[str],
    config_document: str,
    signing_key: bytes,
    created_at: Optional[int] = None,
    nonce: Optional[str] = None,
) -> dict:
    doc = {
        "proposer_id": proposer_id,
        "target_devices": sorted(set(target_devices)),
        "config_document": config_document,
        "created_at": int(time.time()) if created_at is None else created_at,
        "nonce": new_nonce() if nonce is None else nonce,
    }
    return sign_document(doc, signing_key)


def build_approval(
    approver_id: str,
    cr_id: str,
    test_id: str,
    result: str,
    signing_key: bytes,
    comment: str = "",
) -> dict:
    doc = {
        "approver_id": approver_id,
        "cr_id": cr_id,
        "test_id": test_id,
        "result": result,
        "comment": comment,
    }
    return sign_document(doc, signing_key)


def build_ack(
    device_id: str,
    cr_id: str,
    status: str,
    signing_key: bytes,
    detail: str = "",
) -> dict:
    doc = {
        "device_id": device_id,
        "cr_id": cr_id,
        "status": status,
        "detail": detail,
    }
    return sign_document(doc, signing_key)


def build_policy_change(admin_id: str, policy, signing_key: bytes) -> dict:
    doc = {
        "admin_id": admin_id,
        "policy": policy.to_doc(),
    }
    return sign_document(doc, signing_key)


@dataclass
class ConfigurationRequest:
    """Client-side view of a stored CR document."""

    cr_id: str
    proposal: dict
    approvals: list[dict]
    acks: list[dict]
    state: str
    vp_id: str

    @classmethod
    def from_doc(cls, doc: dict, check: bool = True) -> "ConfigurationRequest":
        cr = cls(
            cr_id=doc["cr_id"],
            proposal=doc["proposal"],
            approvals=list(doc["approvals"]),
            acks=list(doc["acks"]),
            state=doc["state"],
            vp_id=doc["vp_id"],
        )
        if check and cr_id_of(cr.proposal) != cr.cr_id:
            raise SimulationError("integrity", f"cr_id does not recompute for {cr.cr_id}")
        return cr

    def to_doc(self) -> dict:
        return {
            "cr_id": self.cr_id,
            "proposal": self.proposal,
            "approvals": self.approvals,
            "acks": self.acks,
            "state": self.state,
            "vp_id": self.vp_id,
        }

    @property
    def target_devices(self) -> list[str]:
        return list(self.proposal["target_devices"])


class StateSnapshot:
    """Read-through view over a committed state database.

    Reads observe committed state only (a simulation never sees its own
    buffered writes) and record (key, version) pairs; writes are buffered.
    """

    def __init__(self, state: StateDatabase) -> None:
        self._state = state
        self._reads: dict[str, Version] = {}
        self._writes: dict[str, str] = {}

    def get(self, key: str) -> Optional[str]:
        entry = self._state.get(key)
        if key not in self._reads:
            self._reads[key] = None if entry is None else entry[1]
        return None if entry is None else entry[0]

    def put(self, key: str, value: str) -> None:
        if not isinstance(value, str):
            raise SimulationError("invalid_argument", "state values must be strings")
        self._writes[key] = value

    def range(self, prefix: str) -> list[tuple[str, str]]:
        out = []
        for key in self._state.keys_with_prefix(prefix):
            out.append((key, self.get(key)))
        return out

    def read_set(self) -> list[tuple[str, Version]]:
        return sorted(self._reads.items())

    def write_set(self) -> list[tuple[str, str]]:
        return sorted(self._writes.items())


@dataclass(frozen=True)
class SimulationResult:
    response: str
    read_set: list[tuple[str, Version]]
    write_set: list[tuple[str, str]]

    def result_digest(self) -> str:
        return result_digest(self.read_set, self.write_set, self.response)


def _respond(doc: dict) -> str:
    return canonical.encode(doc).decode("utf-8")


class ChaincodeRuntime:
    """Dispatches chaincode operations against a snapshot."""

    def __init__(
        self,
        registry: MembershipRegistry,
        max_config_bytes: int = MAX_CONFIG_BYTES,
    ) -> None:
        self.registry = registry
        self.max_config_bytes = max_config_bytes

    def simulate(
        self,
        chaincode: str,
        operation: str,
        args: Sequence[str],
        creator: str,
        state: StateDatabase,
    ) -> SimulationResult:
        snapshot = StateSnapshot(state)
        response = self.execute(chaincode, operation, args, creator, snapshot)
        return SimulationResult(response, snapshot.read_set(), snapshot.write_set())

    def execute(
        self,
        chaincode: str,
        operation: str,
        args: Sequence[str],
        creator: str,
        snapshot: StateSnapshot,
    ) -> str:
        handlers = {
            "mgtcc": {
                "propose": self._propose,
                "approve": self._approve,
                "retrieve": self._retrieve,
                "acknowledge": self._acknowledge,
            },
            "pecc": {
                "set_policy": self._set_policy,
                "get_policy": self._get_policy,
                "evaluate_acp": self._evaluate_acp,
                "evaluate_vp": self._evaluate_vp,
            },
        }
        if chaincode not in handlers:
            raise SimulationError("unknown_chaincode", f"chaincode {chaincode!r} not known")
        handler = handlers[chaincode].get(operation)
        if handler is None:
            raise SimulationError(
                "unknown_operation", f"{chaincode} has no operation {operation!r}"
            )
        return handler(creator, list(args), snapshot)

    # -- helpers

    def _decode_arg(self, args: Sequence[str], what: str) -> dict:
        if len(args) < 1:
            raise SimulationError("invalid_argument", f"{what} argument missing")
        try:
            doc = canonical.decode(args[0])
        except canonical.CanonicalError as exc:
            raise SimulationError("invalid_argument", f"unparseable {what}: {exc}") from None
        if not isinstance(doc, dict):
            raise SimulationError("invalid_argument", f"{what} must be a map")
        return doc

    def _require_fields(self, doc: dict, fields: Sequence[str], what: str) -> None:
        for name in fields:
            if name not in doc:
                raise SimulationError("invalid_argument", f"{what} missing field {name!r}")

    def _verify_actor(self, doc: dict, signer_field: str, creator: str, what: str) -> None:
        if doc.get(signer_field) != creator:
            raise SimulationError(
                "creator_mismatch",
                f"{what} signer {doc.get(signer_field)!r} does not match tx creator {creator!r}",
            )
        if not verify_document(doc, self.registry, signer_field):
            raise SimulationError("bad_signature", f"{what} signature does not verify")

    def _load_cr(self, snapshot: StateSnapshot, cr_id: str) -> ConfigurationRequest:
        raw = snapshot.get(cr_state_key(cr_id))
        if raw is None:
            raise SimulationError("not_found", f"no configuration request {cr_id}")
        return ConfigurationRequest.from_doc(canonical.decode(raw))

    def _store_cr(self, snapshot: StateSnapshot, cr: ConfigurationRequest) -> None:
        snapshot.put(cr_state_key(cr.cr_id), _respond(cr.to_doc()))

    def _load_vps(self, snapshot: StateSnapshot) -> list[policymod.ValidityPolicy]:
        return [
            policymod.ValidityPolicy.from_doc(canonical.decode(value))
            for _, value in snapshot.range(policymod.VP_KEY_PREFIX)
        ]

    def _governing_vp(
        self, snapshot: StateSnapshot, vp_id: str
    ) -> policymod.ValidityPolicy:
        raw = snapshot.get(policymod.vp_state_key(vp_id))
        if raw is None:
            raise SimulationError("no_policy", f"validity policy {vp_id!r} not in state")
        return policymod.ValidityPolicy.from_doc(canonical.decode(raw))

    # -- MGTCC

    def _propose(self, creator: str, args: list[str], snapshot: StateSnapshot) -> str:
        doc = self._decode_arg(args, "proposal")
        self._require_fields(
            doc,
            ("proposer_id", "target_devices", "config_document", "created_at", "nonce", "signature"),
            "proposal",
        )
        targets = doc["target_devices"]
        if (
            not isinstance(targets, list)
            or not targets
            or targets != sorted(set(targets))
            or not all(isinstance(t, str) and t for t in targets)
        ):
            raise SimulationError(
                "invalid_argument", "target_devices must be a non-empty sorted unique list"
            )
        if not isinstance(doc["config_document"], str):
            raise SimulationError("invalid_argument", "config_document must be text")
        if len(doc["config_document"].encode("utf-8")) > self.max_config_bytes:
            raise SimulationError(
                "invalid_argument",
                f"config_document exceeds {self.max_config_bytes} bytes",
            )
        if not isinstance(doc["nonce"], str) or len(doc["nonce"]) != 32:
            raise SimulationError("invalid_argument", "nonce must be 16 bytes hex")
        self._verify_actor(doc, "proposer_id", creator, "proposal")
        proposer = self.registry.get(creator)
        if proposer is None or proposer.role != "proposer":
            raise SimulationError("access_denied", f"{creator!r} is not a registered proposer")

        decision = self._check_access(snapshot, creator, targets)
        if not decision.permit:
            raise SimulationError("access_denied", decision.reason)

        try:
            vp = policymod.select_vp(targets, self._load_vps(snapshot))
        except policymod.AmbiguousPolicyError as exc:
            raise SimulationError("ambiguous_policy", str(exc)) from None
        except policymod.NoPolicyError as exc:
            raise SimulationError("no_policy", str(exc)) from None

        cr_id = cr_id_of(doc)
        if snapshot.get(cr_state_key(cr_id)) is not None:
            raise SimulationError("duplicate", f"proposal already exists as {cr_id}")
        cr = ConfigurationRequest(
            cr_id=cr_id,
            proposal=doc,
            approvals=[],
            acks=[],
            state=STATE_PROPOSED,
            vp_id=vp.policy_id,
        )
        self._store_cr(snapshot, cr)
        return _respond({"cr_id": cr_id, "state": STATE_PROPOSED, "vp_id": vp.policy_id})

    def _approve(self, creator: str, args: list[str], snapshot: StateSnapshot) -> str:
        doc = self._decode_arg(args, "approval")
        self._require_fields(
            doc, ("approver_id", "cr_id", "test_id", "result", "comment", "signature"), "approval"
        )
        if doc["result"] not in ("pass", "fail"):
            raise SimulationError("invalid_argument", "result must be pass or fail")
        self._verify_actor(doc, "approver_id", creator, "approval")
        cr = self._load_cr(snapshot, doc["cr_id"])
        if cr.state != STATE_PROPOSED:
            raise SimulationError(
                "wrong_state", f"cannot approve a CR in state {cr.state!r}"
            )
        vp = self._governing_vp(snapshot, cr.vp_id)
        try:
            test = vp.test(doc["test_id"])
        except policymod.PolicyError as exc:
            raise SimulationError("unknown_test", str(exc)) from None
        if creator not in test.approvers:
            raise SimulationError(
                "ineligible", f"{creator!r} is not a designated approver for test {test.test_id!r}"
            )
        if any(
            a["approver_id"] == creator and a["test_id"] == doc["test_id"]
            for a in cr.approvals
        ):
            raise SimulationError(
                "duplicate", f"{creator!r} already approved test {doc['test_id']!r}"
            )
        cr.approvals.append(doc)
        evaluation = self._run_vp(vp, cr.approvals)
        if evaluation.status == "fulfilled":
            cr.state = STATE_VALID
        elif evaluation.status == "failed":
            cr.state = STATE_REJECTED
        self._store_cr(snapshot, cr)
        return _respond({"cr_id": cr.cr_id, "state": cr.state, "vp_status": evaluation.status})

    def _retrieve(self, creator: str, args: list[str], snapshot: StateSnapshot) -> str:
        doc = self._decode_arg(args, "filter") if args else {}
        unknown = set(doc) - {"cr_id", "device_id", "state"}
        if unknown:
            raise SimulationError("invalid_argument", f"unknown filter keys {sorted(unknown)}")
        for key, value in doc.items():
            if not isinstance(value, str):
                raise SimulationError("invalid_argument", f"filter {key} must be a string")
        if "state" in doc and doc["state"] not in CR_STATES:
            raise SimulationError("invalid_argument", f"unknown state {doc['state']!r}")

        if "cr_id" in doc:
            raw = snapshot.get(cr_state_key(doc["cr_id"]))
            candidates = [] if raw is None else [canonical.decode(raw)]
        else:
            candidates = [canonical.decode(v) for _, v in snapshot.range(CR_KEY_PREFIX)]
        matches = []
        for cr_doc in candidates:
            if "state" in doc and cr_doc["state"] != doc["state"]:
                continue
            if "device_id" in doc and doc["device_id"] not in cr_doc["proposal"]["target_devices"]:
                continue
            matches.append(cr_doc)
        # range order is key order, i.e. canonical cr_id order
        return _respond({"crs": matches})

    def _acknowledge(self, creator: str, args: list[str], snapshot: StateSnapshot) -> str:
        doc = self._decode_arg(args, "acknowledgement")
        self._require_fields(
            doc, ("device_id", "cr_id", "status", "detail", "signature"), "acknowledgement"
        )
        if doc["status"] not in (ACK_APPLIED, ACK_APPLY_FAILED):
            raise SimulationError("invalid_argument", "status must be applied or apply_failed")
        self._verify_actor(doc, "device_id", creator, "acknowledgement")
        cr = self._load_cr(snapshot, doc["cr_id"])
        if cr.state != STATE_VALID:
            raise SimulationError(
                "wrong_state", f"cannot acknowledge a CR in state {cr.state!r}"
            )
        if creator not in cr.target_devices:
            raise SimulationError(
                "not_target", f"device {creator!r} is not targeted by {cr.cr_id}"
            )
        if any(a["device_id"] == creator for a in cr.acks):
            raise SimulationError("duplicate", f"device {creator!r} already acknowledged")
        cr.acks.append(doc)
        if any(a["status"] == ACK_APPLY_FAILED for a in cr.acks):
            cr.state = STATE_APPLY_FAILED
        else:
            applied = {a["device_id"] for a in cr.acks if a["status"] == ACK_APPLIED}
            if applied == set(cr.target_devices):
                cr.state = STATE_ACKNOWLEDGED
        self._store_cr(snapshot, cr)
        return _respond({"cr_id": cr.cr_id, "state": cr.state})

    # -- PECC

    def _check_access(
        self, snapshot: StateSnapshot, proposer_id: str, targets: Sequence[str]
    ) -> policymod.AcpDecision:
        acps = []
        for _, value in snapshot.range(policymod.ACP_KEY_PREFIX):
            acps.append(policymod.AccessControlPolicy.from_doc(canonical.decode(value)))
        merged = policymod.merge_acps(acps)
        if merged is None:
            return policymod.AcpDecision(False, "no access control policy in state")
        identity = self.registry.get(proposer_id)
        role = identity.role if identity else ""
        return policymod.evaluate_acp(proposer_id, role, targets, merged)

    def _run_vp(
        self, vp: policymod.ValidityPolicy, approvals: Sequence[dict]
    ) -> policymod.VpEvaluation:
        votes = [
            policymod.ApprovalVote(a["approver_id"], a["test_id"], a["result"])
            for a in approvals
        ]
        try:
            return policymod.evaluate_vp(votes, vp, self.registry)
        except policymod.PolicyError as exc:
            raise SimulationError("policy_error", str(exc)) from None

    def _set_policy(self, creator: str, args: list[str], snapshot: StateSnapshot) -> str:
        doc = self._decode_arg(args, "policy change")
        self._require_fields(doc, ("admin_id", "policy", "signature"), "policy change")
        self._verify_actor(doc, "admin_id", creator, "policy change")
        admin = self.registry.get(creator)
        if admin is None or admin.role != "admin":
            raise SimulationError("access_denied", f"{creator!r} may not change policies")
        if not isinstance(doc["policy"], dict):
            raise SimulationError("invalid_argument", "policy must be a map")
        try:
            parsed = policymod.policy_from_doc(doc["policy"])
        except (policymod.PolicyError, KeyError, TypeError) as exc:
            raise SimulationError("invalid_argument", f"bad policy document: {exc}") from None
        if isinstance(parsed, policymod.AccessControlPolicy):
            key = policymod.acp_state_key(parsed.policy_id)
        elif isinstance(parsed, policymod.ValidityPolicy):
            key = policymod.vp_state_key(parsed.policy_id)
        else:
            key = policymod.endorsement_state_key(parsed.chaincode)
        snapshot.put(key, _respond(parsed.to_doc()))
        return _respond({"key": key})

    def _get_policy(self, creator: str, args: list[str], snapshot: StateSnapshot) -> str:
        if len(args) != 2:
            raise SimulationError("invalid_argument", "get_policy takes (kind, id)")
        kind, policy_id = args
        keys = {
            "acp": policymod.acp_state_key,
            "vp": policymod.vp_state_key,
            "endorsement": policymod.endorsement_state_key,
        }
        if kind not in keys:
            raise SimulationError("invalid_argument", f"unknown policy kind {kind!r}")
        raw = snapshot.get(keys[kind](policy_id))
        if raw is None:
            raise SimulationError("not_found", f"no {kind} policy {policy_id!r}")
        return _respond({"policy": canonical.decode(raw)})

    def _evaluate_acp(self, creator: str, args: list[str], snapshot: StateSnapshot) -> str:
        if len(args) != 2:
            raise SimulationError("invalid_argument", "evaluate_acp takes (proposer_id, targets)")
        proposer_id = args[0]
        try:
            targets = canonical.decode(args[1])
        except canonical.CanonicalError as exc:
            raise SimulationError("invalid_argument", f"bad targets: {exc}") from None
        if not isinstance(targets, list) or not all(isinstance(t, str) for t in targets):
            raise SimulationError("invalid_argument", "targets must be a list of device ids")
        decision = self._check_access(snapshot, proposer_id, targets)
        return _respond({"permit": decision.permit, "reason": decision.reason})

    def _evaluate_vp(self, creator: str, args: list[str], snapshot: StateSnapshot) -> str:
        if len(args) != 1:
            raise SimulationError("invalid_argument", "evaluate_vp takes (cr_id,)")
        cr = self._load_cr(snapshot, args[0])
        vp = self._governing_vp(snapshot, cr.vp_id)
        evaluation = self._run_vp(vp, cr.approvals)
        return _respond(
            {
                "status": evaluation.status,
                "reason": evaluation.reason,
                "tests": [
                    {
                        "test_id": t.test_id,
                        "passes": t.passes,
                        "fails": t.fails,
                        "needed": t.needed,
                        "satisfied": t.satisfied,
                        "unreachable": t.unreachable,
                    }
                    for t in evaluation.tests
                ],
            }
        )


def is_query_operation(chaincode: str, operation: str) -> bool:
    return operation in QUERY_OPERATIONS.get(chaincode, set())
