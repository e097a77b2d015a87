"""Policy data model and evaluators.

Three policy kinds govern the workflow: access control policies say who may
propose configurations for which devices, validity policies say which
approvals turn a configuration request valid, and endorsement policies say
which peers must endorse a transaction for it to commit as valid.

All evaluators are pure functions over their inputs.  Policies live in the
state database under reserved keys (see *_state_key helpers) so that policy
changes are as tamper-evident as the requests they govern.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from confledger import canonical
from confledger.errors import ConfLedgerError
from confledger.identity import MembershipRegistry

CHAINCODES = ("mgtcc", "pecc")

ACP_KEY_PREFIX = "policy/acp/"
VP_KEY_PREFIX = "policy/vp/"
ENDORSEMENT_KEY_PREFIX = "policy/endorsement/"


class PolicyError(ConfLedgerError):
    pass


class AmbiguousPolicyError(PolicyError):
    pass


class NoPolicyError(PolicyError):
    pass


def acp_state_key(policy_id: str) -> str:
    return ACP_KEY_PREFIX + policy_id


def vp_state_key(policy_id: str) -> str:
    return VP_KEY_PREFIX + policy_id


def endorsement_state_key(chaincode: str) -> str:
    return ENDORSEMENT_KEY_PREFIX + chaincode


def _check_pattern(pattern: str) -> None:
    if not pattern:
        raise PolicyError("empty device pattern")
    if "*" in pattern[:-1]:
        raise PolicyError(f"wildcard only allowed as trailing character: {pattern!r}")


def device_pattern_matches(pattern: str, device_id: str) -> bool:
    if pattern.endswith("*"):
        return device_id.startswith(pattern[:-1])
    return device_id == pattern


def pattern_specificity(pattern: str) -> tuple[int, int]:
    # Literal ids beat any wildcard; longer prefixes beat shorter ones.
    if pattern.endswith("*"):
        return (0, len(pattern) - 1)
    return (1, len(pattern))


@dataclass(frozen=True)
class AcpRule:
    """Grants the named proposers (ids or "role:<role>" selectors) the right
    to target devices matching any of the patterns."""

    proposers: tuple[str, ...]
    devices: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.proposers:
            raise PolicyError("ACP rule needs at least one proposer selector")
        if not self.devices:
            raise PolicyError("ACP rule needs at least one device pattern")
        for pattern in self.devices:
            _check_pattern(pattern)

    def covers_proposer(self, proposer_id: str, proposer_role: str) -> bool:
        return proposer_id in self.proposers or f"role:{proposer_role}" in self.proposers

    def covers_device(self, device_id: str) -> bool:
        return any(device_pattern_matches(p, device_id) for p in self.devices)

    def to_doc(self) -> dict:
        return {"proposers": list(self.proposers), "devices": list(self.devices)}

    @classmethod
    def from_doc(cls, doc: dict) -> "AcpRule":
        return cls(tuple(doc["proposers"]), tuple(doc["devices"]))


@dataclass(frozen=True)
class AccessControlPolicy:
    policy_id: str
    rules: tuple[AcpRule, ...]

    def __post_init__(self) -> None:
        if not self.policy_id:
            raise PolicyError("ACP needs a policy_id")
        if not self.rules:
            raise PolicyError("ACP needs at least one rule")

    def to_doc(self) -> dict:
        return {
            "kind": "acp",
            "policy_id": self.policy_id,
            "rules": [r.to_doc() for r in self.rules],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "AccessControlPolicy":
        return cls(doc["policy_id"], tuple(AcpRule.from_doc(r) for r in doc["rules"]))


@dataclass(frozen=True)
class TestRule:
    """One test of a validity policy, carried out by designated approvers."""

    __test__ = False  # not a pytest class, despite the name

    test_id: str
    approvers: tuple[str, ...]
    rule_kind: str  # m_of_n | majority
    m: int = 0
    description: str = ""

    def __post_init__(self) -> None:
        if not self.test_id:
            raise PolicyError("test needs a test_id")
        if len(set(self.approvers)) != len(self.approvers):
            raise PolicyError(f"test {self.test_id}: duplicate approvers")
        if not self.approvers:
            raise PolicyError(f"test {self.test_id}: empty approver set")
        if self.rule_kind == "m_of_n":
            if not 0 < self.m <= len(self.approvers):
                raise PolicyError(
                    f"test {self.test_id}: m={self.m} out of range for n={len(self.approvers)}"
                )
        elif self.rule_kind == "majority":
            if self.m:
                raise PolicyError(f"test {self.test_id}: majority rule takes no m")
        else:
            raise PolicyError(f"test {self.test_id}: unknown rule kind {self.rule_kind!r}")

    def to_doc(self) -> dict:
        return {
            "test_id": self.test_id,
            "approvers": list(self.approvers),
            "rule_kind": self.rule_kind,
            "m": self.m,
            "description": self.description,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "TestRule":
        return cls(
            test_id=doc["test_id"],
            approvers=tuple(doc["approvers"]),
            rule_kind=doc["rule_kind"],
            m=doc.get("m", 0),
            description=doc.get("description", ""),
        )


@dataclass(frozen=True)
class ValidityPolicy:
    policy_id: str
    devices: tuple[str, ...]
    tests: tuple[TestRule, ...]

    def __post_init__(self) -> None:
        if not self.policy_id:
            raise PolicyError("VP needs a policy_id")
        if not self.devices:
            raise PolicyError(f"VP {self.policy_id}: empty device pattern set")
        for pattern in self.devices:
            _check_pattern(pattern)
        if not self.tests:
            raise PolicyError(f"VP {self.policy_id}: tests must be non-empty")
        test_ids = [t.test_id for t in self.tests]
        if len(set(test_ids)) != len(test_ids):
            raise PolicyError(f"VP {self.policy_id}: duplicate test ids")

    def test(self, test_id: str) -> TestRule:
        for t in self.tests:
            if t.test_id == test_id:
                return t
        raise PolicyError(f"VP {self.policy_id}: unknown test {test_id!r}")

    def to_doc(self) -> dict:
        return {
            "kind": "vp",
            "policy_id": self.policy_id,
            "devices": list(self.devices),
            "tests": [t.to_doc() for t in self.tests],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "ValidityPolicy":
        return cls(
            doc["policy_id"],
            tuple(doc["devices"]),
            tuple(TestRule.from_doc(t) for t in doc["tests"]),
        )


@dataclass(frozen=True)
class EndorsementPolicy:
    chaincode: str
    rule_kind: str  # all_of | k_of
    peers: tuple[str, ...]
    k: int = 0

    def __post_init__(self) -> None:
        if self.chaincode not in CHAINCODES:
            raise PolicyError(f"unknown chaincode {self.chaincode!r}")
        if not self.peers:
            raise PolicyError("endorsement policy needs at least one peer")
        if len(set(self.peers)) != len(self.peers):
            raise PolicyError("duplicate peers in endorsement policy")
        if self.rule_kind == "k_of":
            if not 0 < self.k <= len(self.peers):
                raise PolicyError(f"k={self.k} out of range for {len(self.peers)} peers")
        elif self.rule_kind == "all_of":
            if self.k:
                raise PolicyError("all_of rule takes no k")
        else:
            raise PolicyError(f"unknown endorsement rule kind {self.rule_kind!r}")

    @property
    def threshold(self) -> int:
        return len(self.peers) if self.rule_kind == "all_of" else self.k

    def to_doc(self) -> dict:
        return {
            "kind": "endorsement",
            "chaincode": self.chaincode,
            "rule_kind": self.rule_kind,
            "peers": list(self.peers),
            "k": self.k,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "EndorsementPolicy":
        return cls(doc["chaincode"], doc["rule_kind"], tuple(doc["peers"]), doc.get("k", 0))


_KINDS = {
    "acp": AccessControlPolicy,
    "vp": ValidityPolicy,
    "endorsement": EndorsementPolicy,
}


def policy_from_doc(doc: dict):
    kind = doc.get("kind")
    if kind not in _KINDS:
        raise PolicyError(f"unknown policy kind {kind!r}")
    return _KINDS[kind].from_doc(doc)


def parse_policy(document: bytes | str):
    """Parse a canonical policy document; round-trips to identical bytes."""
    try:
        doc = canonical.decode(document)
    except canonical.CanonicalError as exc:
        raise PolicyError(f"unparseable policy document: {exc}") from None
    if not isinstance(doc, dict):
        raise PolicyError("policy document must be a map")
    try:
        return policy_from_doc(doc)
    except (KeyError, TypeError) as exc:
        raise PolicyError(f"policy document missing field: {exc}") from None


def serialize_policy(policy) -> bytes:
    return canonical.encode(policy.to_doc())


# ---------------------------------------------------------------------------
# Evaluators


@dataclass(frozen=True)
class AcpDecision:
    permit: bool
    reason: str = ""


def evaluate_acp(
    proposer_id: str,
    proposer_role: str,
    target_devices: Sequence[str],
    acp: AccessControlPolicy,
) -> AcpDecision:
    """Permit iff *every* target device is covered by a rule naming the
    proposer (or its role).  Partial coverage is a deny; a permit must never
    silently narrow a request."""
    if not target_devices:
        return AcpDecision(False, "no target devices")
    rules = [r for r in acp.rules if r.covers_proposer(proposer_id, proposer_role)]
    for device_id in target_devices:
        if not any(r.covers_device(device_id) for r in rules):
            return AcpDecision(
                False, f"proposer {proposer_id!r} not permitted for device {device_id!r}"
            )
    return AcpDecision(True)


def merge_acps(acps: Iterable[AccessControlPolicy]) -> Optional[AccessControlPolicy]:
    """Union of rules across ACP documents (any rule can grant)."""
    acps = sorted(acps, key=lambda a: a.policy_id)
    if not acps:
        return None
    rules: tuple[AcpRule, ...] = ()
    for acp in acps:
        rules += acp.rules
    return AccessControlPolicy("+".join(a.policy_id for a in acps), rules)


@dataclass(frozen=True)
class ApprovalVote:
    approver_id: str
    test_id: str
    result: str  # pass | fail


@dataclass(frozen=True)
class TestProgress:
    test_id: str
    passes: int
    fails: int
    needed: int
    satisfied: bool
    unreachable: bool


@dataclass(frozen=True)
class VpEvaluation:
    status: str  # fulfilled | pending | failed
    tests: tuple[TestProgress, ...]
    reason: str = ""

    @property
    def fulfilled(self) -> bool:
        return self.status == "fulfilled"


def _evaluate_test(rule: TestRule, votes: dict[str, str]) -> TestProgress:
    n = len(rule.approvers)
    passes = sum(1 for v in votes.values() if v == "pass")
    fails = len(votes) - passes
    if rule.rule_kind == "m_of_n":
        needed = rule.m
        satisfied = passes >= rule.m
        # Every member who voted fail is spent (first vote wins), so the
        # best remaining completion yields n - fails passes.
        unreachable = not satisfied and fails > n - rule.m
    else:  # majority
        needed = n // 2 + 1
        satisfied = passes > fails and passes > n // 2
        best_passes = n - fails
        unreachable = not satisfied and not (best_passes > fails and best_passes > n // 2)
    return TestProgress(rule.test_id, passes, fails, needed, satisfied, unreachable)


def evaluate_vp(
    approvals: Sequence[ApprovalVote],
    vp: ValidityPolicy,
    registry: Optional[MembershipRegistry] = None,
) -> VpEvaluation:
    """Fold the approval list into a per-test verdict and an overall status.

    Duplicate votes by the same approver for the same test count once (first
    committed wins); votes from outside a test's approver set are ignored.
    Referencing an unknown test is an evaluation error.
    """
    known_tests = {t.test_id for t in vp.tests}
    for vote in approvals:
        if vote.test_id not in known_tests:
            raise PolicyError(f"approval references unknown test {vote.test_id!r}")
    if registry is not None:
        for rule in vp.tests:
            for approver_id in rule.approvers:
                if approver_id not in registry:
                    raise PolicyError(
                        f"VP {vp.policy_id}: approver {approver_id!r} not in registry"
                    )

    progress = []
    failed_reason = ""
    all_satisfied = True
    for rule in vp.tests:
        votes: dict[str, str] = {}
        members = set(rule.approvers)
        for vote in approvals:
            if vote.test_id != rule.test_id or vote.approver_id not in members:
                continue
            votes.setdefault(vote.approver_id, vote.result)
        result = _evaluate_test(rule, votes)
        progress.append(result)
        if not result.satisfied:
            all_satisfied = False
        if result.unreachable and not failed_reason:
            failed_reason = f"test {rule.test_id!r} can no longer be satisfied"

    if all_satisfied:
        return VpEvaluation("fulfilled", tuple(progress))
    if failed_reason:
        return VpEvaluation("failed", tuple(progress), failed_reason)
    return VpEvaluation("pending", tuple(progress))


def evaluate_endorsement_policy(
    endorsements: Sequence,
    policy: EndorsementPolicy,
    registry: Optional[MembershipRegistry] = None,
) -> bool:
    """True iff the peer-set expression is met by endorsers whose execution
    result digests are all identical.  Signature validity is the caller's
    concern; with a registry, endorsers must additionally be registered
    peers."""
    if not endorsements:
        return False
    digests = {e.result_digest for e in endorsements}
    if len(digests) != 1:
        return False
    present = set()
    for e in endorsements:
        if registry is not None:
            entry = registry.get(e.peer_id)
            if entry is None or entry.role != "peer":
                continue
        present.add(e.peer_id)
    counted = present & set(policy.peers)
    if policy.rule_kind == "all_of":
        return counted == set(policy.peers)
    return len(counted) >= policy.k


def select_vp(
    target_devices: Sequence[str],
    vps: Sequence[ValidityPolicy],
) -> ValidityPolicy:
    """Pick the validity policy governing a request.

    A candidate must cover every target device.  Candidates are ranked by
    their per-target best-match specificity vector (targets in canonical
    order, literal match > longer wildcard prefix > shorter); an exact tie is
    an error rather than a guess.
    """
    targets = sorted(set(target_devices))
    scored: list[tuple[tuple, ValidityPolicy]] = []
    for vp in vps:
        vector = []
        for device_id in targets:
            best = None
            for pattern in vp.devices:
                if device_pattern_matches(pattern, device_id):
                    spec = pattern_specificity(pattern)
                    if best is None or spec > best:
                        best = spec
            if best is None:
                break
            vector.append(best)
        else:
            scored.append((tuple(vector), vp))
    if not scored:
        raise NoPolicyError(f"no validity policy covers all of {targets}")
    scored.sort(key=lambda item: item[0], reverse=True)
    if len(scored) > 1 and scored[0][0] == scored[1][0]:
        tied = sorted(vp.policy_id for vec, vp in scored if vec == scored[0][0])
        raise AmbiguousPolicyError(f"validity policies {tied} tie for {targets}")
    return scored[0][1]
