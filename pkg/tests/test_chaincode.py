import pytest

from confledger import canonical
from confledger.chaincode import (
    ChaincodeRuntime,
    ConfigurationRequest,
    SimulationError,
    StateSnapshot,
    build_ack,
    build_approval,
    build_policy_change,
    build_proposal,
    cr_id_of,
    cr_state_key,
    is_query_operation,
    new_nonce,
)
from confledger.identity import sign_document
from confledger.ledger import StateDatabase
from confledger.policy import AccessControlPolicy, AcpRule

from conftest import install_policies, make_acp, make_vp


def doc_arg(doc: dict) -> str:
    return canonical.encode(doc).decode("utf-8")


class Flow:
    """Drive chaincode operations against a state database the way committed
    blocks would: simulate, then apply the writes at the next height."""

    def __init__(self, runtime: ChaincodeRuntime, state: StateDatabase):
        self.runtime = runtime
        self.state = state
        self.height = 1  # policies sit at height 0

    def invoke(self, creator, chaincode, operation, *args):
        sim = self.runtime.simulate(chaincode, operation, list(args), creator, self.state)
        for key, value in sim.write_set:
            self.state.put(key, value, (self.height, 0))
        self.height += 1
        return canonical.decode(sim.response)

    def query(self, creator, chaincode, operation, *args):
        sim = self.runtime.simulate(chaincode, operation, list(args), creator, self.state)
        assert sim.write_set == [], f"query produced writes: {sim.write_set}"
        return canonical.decode(sim.response)


@pytest.fixture
def flow(runtime, policied_state):
    return Flow(runtime, policied_state)


def propose(flow, actors, proposer="alice", targets=("device-1",), config='{"vlan":7}', **kw):
    doc = build_proposal(proposer, targets, config, actors.key(proposer), **kw)
    return doc, flow.invoke(proposer, "mgtcc", "propose", doc_arg(doc))


def approve(flow, actors, cr_id, approver, result="pass", test_id="t-review"):
    doc = build_approval(approver, cr_id, test_id, result, actors.key(approver))
    return flow.invoke(approver, "mgtcc", "approve", doc_arg(doc))


def acknowledge(flow, actors, cr_id, device, status="applied"):
    doc = build_ack(device, cr_id, status, actors.key(device))
    return flow.invoke(device, "mgtcc", "acknowledge", doc_arg(doc))


def stored_cr(flow, cr_id) -> dict:
    value, _ = flow.state.get(cr_state_key(cr_id))
    return canonical.decode(value)


# ---------------------------------------------------------------------------
# Lifecycle: proposed -> valid -> acknowledged


def test_full_lifecycle(flow, actors):
    proposal, resp = propose(flow, actors)
    cr_id = resp["cr_id"]
    assert resp == {"cr_id": cr_id_of(proposal), "state": "proposed", "vp_id": "vp-default"}

    assert approve(flow, actors, cr_id, "ana")["state"] == "proposed"
    second = approve(flow, actors, cr_id, "ben")
    assert second == {"cr_id": cr_id, "state": "valid", "vp_status": "fulfilled"}

    final = acknowledge(flow, actors, cr_id, "device-1")
    assert final == {"cr_id": cr_id, "state": "acknowledged"}

    record = stored_cr(flow, cr_id)
    assert record["state"] == "acknowledged"
    assert [a["approver_id"] for a in record["approvals"]] == ["ana", "ben"]
    assert [a["device_id"] for a in record["acks"]] == ["device-1"]
    assert record["proposal"] == proposal


def test_two_failing_reviews_reject(flow, actors):
    _, resp = propose(flow, actors)
    cr_id = resp["cr_id"]
    assert approve(flow, actors, cr_id, "ana", result="fail")["state"] == "proposed"
    rejected = approve(flow, actors, cr_id, "ben", result="fail")
    assert rejected == {"cr_id": cr_id, "state": "rejected", "vp_status": "failed"}
    # A rejected CR accepts no further approvals.
    with pytest.raises(SimulationError) as exc:
        approve(flow, actors, cr_id, "cho")
    assert exc.value.code == "wrong_state"


def test_one_fail_still_recoverable(flow, actors):
    _, resp = propose(flow, actors)
    cr_id = resp["cr_id"]
    approve(flow, actors, cr_id, "ana", result="fail")
    approve(flow, actors, cr_id, "ben")
    done = approve(flow, actors, cr_id, "cho")
    assert done["state"] == "valid"


def test_multi_device_needs_all_acks(flow, actors):
    _, resp = propose(flow, actors, targets=("device-1", "device-2"))
    cr_id = resp["cr_id"]
    approve(flow, actors, cr_id, "ana")
    approve(flow, actors, cr_id, "cho")
    assert acknowledge(flow, actors, cr_id, "device-2")["state"] == "valid"
    assert acknowledge(flow, actors, cr_id, "device-1")["state"] == "acknowledged"


def test_apply_failure_marks_cr(flow, actors):
    _, resp = propose(flow, actors, targets=("device-1", "device-2"))
    cr_id = resp["cr_id"]
    approve(flow, actors, cr_id, "ana")
    approve(flow, actors, cr_id, "ben")
    failed = acknowledge(flow, actors, cr_id, "device-1", status="apply_failed")
    assert failed["state"] == "apply_failed"


# ---------------------------------------------------------------------------
# Propose guards


def test_propose_requires_registered_proposer(flow, actors):
    doc = build_proposal("ana", ["device-1"], "{}", actors.key("ana"))
    with pytest.raises(SimulationError) as exc:
        flow.invoke("ana", "mgtcc", "propose", doc_arg(doc))
    assert exc.value.code == "access_denied"


def test_propose_creator_must_match_signer(flow, actors):
    doc = build_proposal("alice", ["device-1"], "{}", actors.key("alice"))
    with pytest.raises(SimulationError) as exc:
        flow.invoke("bob", "mgtcc", "propose", doc_arg(doc))
    assert exc.value.code == "creator_mismatch"


def test_propose_rejects_tampered_signature(flow, actors):
    doc = build_proposal("alice", ["device-1"], "{}", actors.key("alice"))
    doc["config_document"] = '{"vlan":999}'
    with pytest.raises(SimulationError) as exc:
        flow.invoke("alice", "mgtcc", "propose", doc_arg(doc))
    assert exc.value.code == "bad_signature"


def test_propose_acp_denies_unpermitted_device(flow, actors):
    doc = build_proposal("alice", ["router-1"], "{}", actors.key("alice"))
    with pytest.raises(SimulationError) as exc:
        flow.invoke("alice", "mgtcc", "propose", doc_arg(doc))
    assert exc.value.code == "access_denied"


def test_propose_unsorted_targets_rejected(flow, actors):
    doc = {
        "proposer_id": "alice",
        "target_devices": ["device-2", "device-1"],
        "config_document": "{}",
        "created_at": 1700000000,
        "nonce": new_nonce(),
    }
    signed = sign_document(doc, actors.key("alice"))
    with pytest.raises(SimulationError) as exc:
        flow.invoke("alice", "mgtcc", "propose", doc_arg(signed))
    assert exc.value.code == "invalid_argument"


def test_propose_oversize_config_rejected(actors, policied_state):
    runtime = ChaincodeRuntime(actors.registry, max_config_bytes=64)
    flow = Flow(runtime, policied_state)
    doc = build_proposal("alice", ["device-1"], "x" * 65, actors.key("alice"))
    with pytest.raises(SimulationError) as exc:
        flow.invoke("alice", "mgtcc", "propose", doc_arg(doc))
    assert exc.value.code == "invalid_argument"
    ok = build_proposal("alice", ["device-1"], "x" * 64, actors.key("alice"))
    resp = flow.invoke("alice", "mgtcc", "propose", doc_arg(ok))
    assert resp["state"] == "proposed"


def test_propose_duplicate_document(flow, actors):
    doc, _ = propose(flow, actors)
    with pytest.raises(SimulationError) as exc:
        flow.invoke("alice", "mgtcc", "propose", doc_arg(doc))
    assert exc.value.code == "duplicate"


def test_identical_content_new_nonce_is_a_new_cr(flow, actors):
    _, first = propose(flow, actors, nonce=new_nonce())
    _, second = propose(flow, actors, nonce=new_nonce())
    assert first["cr_id"] != second["cr_id"]


def test_propose_with_no_vp_coverage(actors, runtime):
    state = StateDatabase()
    install_policies(
        state,
        AccessControlPolicy("acp-open", (AcpRule(("alice",), ("*",)),)),
        make_vp(devices=("switch-*",)),
    )
    flow = Flow(runtime, state)
    doc = build_proposal("alice", ["device-1"], "{}", actors.key("alice"))
    with pytest.raises(SimulationError) as exc:
        flow.invoke("alice", "mgtcc", "propose", doc_arg(doc))
    assert exc.value.code == "no_policy"


def test_propose_with_ambiguous_vps(actors, runtime):
    state = StateDatabase()
    install_policies(
        state,
        make_acp(),
        make_vp("vp-one"),
        make_vp("vp-two"),
    )
    flow = Flow(runtime, state)
    doc = build_proposal("alice", ["device-1"], "{}", actors.key("alice"))
    with pytest.raises(SimulationError) as exc:
        flow.invoke("alice", "mgtcc", "propose", doc_arg(doc))
    assert exc.value.code == "ambiguous_policy"


def test_propose_picks_most_specific_vp(actors, runtime):
    state = StateDatabase()
    install_policies(
        state,
        make_acp(),
        make_vp("vp-broad", devices=("device-*",)),
        make_vp("vp-exact", devices=("device-1",)),
    )
    flow = Flow(runtime, state)
    doc = build_proposal("alice", ["device-1"], "{}", actors.key("alice"))
    resp = flow.invoke("alice", "mgtcc", "propose", doc_arg(doc))
    assert resp["vp_id"] == "vp-exact"


# ---------------------------------------------------------------------------
# Approval guards


def test_approve_requires_designated_approver(flow, actors):
    _, resp = propose(flow, actors)
    doc = build_approval("alice", resp["cr_id"], "t-review", "pass", actors.key("alice"))
    with pytest.raises(SimulationError) as exc:
        flow.invoke("alice", "mgtcc", "approve", doc_arg(doc))
    assert exc.value.code == "ineligible"


def test_approve_unknown_test(flow, actors):
    _, resp = propose(flow, actors)
    with pytest.raises(SimulationError) as exc:
        approve(flow, actors, resp["cr_id"], "ana", test_id="t-ghost")
    assert exc.value.code == "unknown_test"


def test_approve_missing_cr(flow, actors):
    with pytest.raises(SimulationError) as exc:
        approve(flow, actors, "00" * 32, "ana")
    assert exc.value.code == "not_found"


def test_approve_twice_rejected(flow, actors):
    _, resp = propose(flow, actors)
    approve(flow, actors, resp["cr_id"], "ana")
    with pytest.raises(SimulationError) as exc:
        approve(flow, actors, resp["cr_id"], "ana", result="fail")
    assert exc.value.code == "duplicate"


def test_approve_after_valid_rejected(flow, actors):
    _, resp = propose(flow, actors)
    approve(flow, actors, resp["cr_id"], "ana")
    approve(flow, actors, resp["cr_id"], "ben")
    with pytest.raises(SimulationError) as exc:
        approve(flow, actors, resp["cr_id"], "cho")
    assert exc.value.code == "wrong_state"


def test_approve_bad_result_value(flow, actors):
    _, resp = propose(flow, actors)
    doc = build_approval("ana", resp["cr_id"], "t-review", "maybe", actors.key("ana"))
    with pytest.raises(SimulationError) as exc:
        flow.invoke("ana", "mgtcc", "approve", doc_arg(doc))
    assert exc.value.code == "invalid_argument"


def test_approve_forged_signature(flow, actors):
    _, resp = propose(flow, actors)
    doc = build_approval("ana", resp["cr_id"], "t-review", "pass", actors.key("ben"))
    with pytest.raises(SimulationError) as exc:
        flow.invoke("ana", "mgtcc", "approve", doc_arg(doc))
    assert exc.value.code == "bad_signature"


# ---------------------------------------------------------------------------
# Acknowledgement guards


def test_ack_only_in_valid_state(flow, actors):
    _, resp = propose(flow, actors)
    with pytest.raises(SimulationError) as exc:
        acknowledge(flow, actors, resp["cr_id"], "device-1")
    assert exc.value.code == "wrong_state"


def test_ack_only_from_target_device(flow, actors):
    _, resp = propose(flow, actors)
    approve(flow, actors, resp["cr_id"], "ana")
    approve(flow, actors, resp["cr_id"], "ben")
    with pytest.raises(SimulationError) as exc:
        acknowledge(flow, actors, resp["cr_id"], "device-2")
    assert exc.value.code == "not_target"


def test_ack_duplicate(flow, actors):
    _, resp = propose(flow, actors, targets=("device-1", "device-2"))
    approve(flow, actors, resp["cr_id"], "ana")
    approve(flow, actors, resp["cr_id"], "ben")
    acknowledge(flow, actors, resp["cr_id"], "device-1")
    with pytest.raises(SimulationError) as exc:
        acknowledge(flow, actors, resp["cr_id"], "device-1")
    assert exc.value.code == "duplicate"


def test_ack_bad_status(flow, actors):
    _, resp = propose(flow, actors)
    approve(flow, actors, resp["cr_id"], "ana")
    approve(flow, actors, resp["cr_id"], "ben")
    doc = build_ack("device-1", resp["cr_id"], "exploded", actors.key("device-1"))
    with pytest.raises(SimulationError) as exc:
        flow.invoke("device-1", "mgtcc", "acknowledge", doc_arg(doc))
    assert exc.value.code == "invalid_argument"


# ---------------------------------------------------------------------------
# Retrieval


def test_retrieve_filters(flow, actors):
    _, one = propose(flow, actors, targets=("device-1",))
    _, two = propose(flow, actors, targets=("device-2",), config='{"mtu":9000}')
    approve(flow, actors, two["cr_id"], "ana")
    approve(flow, actors, two["cr_id"], "ben")

    everything = flow.query("bob", "mgtcc", "retrieve")
    assert {c["cr_id"] for c in everything["crs"]} == {one["cr_id"], two["cr_id"]}

    by_state = flow.query("bob", "mgtcc", "retrieve", doc_arg({"state": "valid"}))
    assert [c["cr_id"] for c in by_state["crs"]] == [two["cr_id"]]

    by_device = flow.query("bob", "mgtcc", "retrieve", doc_arg({"device_id": "device-1"}))
    assert [c["cr_id"] for c in by_device["crs"]] == [one["cr_id"]]

    by_id = flow.query("bob", "mgtcc", "retrieve", doc_arg({"cr_id": one["cr_id"]}))
    assert [c["cr_id"] for c in by_id["crs"]] == [one["cr_id"]]

    nothing = flow.query("bob", "mgtcc", "retrieve", doc_arg({"cr_id": "55" * 32}))
    assert nothing == {"crs": []}


def test_retrieve_rejects_unknown_filter(flow):
    with pytest.raises(SimulationError) as exc:
        flow.query("bob", "mgtcc", "retrieve", doc_arg({"colour": "red"}))
    assert exc.value.code == "invalid_argument"
    with pytest.raises(SimulationError) as exc:
        flow.query("bob", "mgtcc", "retrieve", doc_arg({"state": "halfway"}))
    assert exc.value.code == "invalid_argument"


# ---------------------------------------------------------------------------
# PECC operations


def test_set_policy_is_admin_only(flow, actors):
    vp = make_vp("vp-new")
    signed_by_alice = build_policy_change("alice", vp, actors.key("alice"))
    with pytest.raises(SimulationError) as exc:
        flow.invoke("alice", "pecc", "set_policy", doc_arg(signed_by_alice))
    assert exc.value.code == "access_denied"
    signed_by_root = build_policy_change("root", vp, actors.key("root"))
    resp = flow.invoke("root", "pecc", "set_policy", doc_arg(signed_by_root))
    assert resp == {"key": "policy/vp/vp-new"}


def test_set_policy_claiming_admin_without_its_key(flow, actors):
    # Envelope creator is unauthenticated; the signed change document is what
    # authorizes a policy write, so forging it must fail.
    forged = build_policy_change("root", make_vp("vp-evil"), actors.key("alice"))
    with pytest.raises(SimulationError) as exc:
        flow.invoke("root", "pecc", "set_policy", doc_arg(forged))
    assert exc.value.code == "bad_signature"
    assert flow.state.get("policy/vp/vp-evil") is None


def test_set_policy_rejects_malformed(flow, actors):
    with pytest.raises(SimulationError) as exc:
        flow.invoke("root", "pecc", "set_policy", doc_arg({"kind": "vp"}))
    assert exc.value.code == "invalid_argument"
    unparseable = sign_document({"admin_id": "root", "policy": {"kind": "vp"}}, actors.key("root"))
    with pytest.raises(SimulationError) as exc:
        flow.invoke("root", "pecc", "set_policy", doc_arg(unparseable))
    assert exc.value.code == "invalid_argument"


def test_get_policy_roundtrip(flow):
    resp = flow.query("bob", "pecc", "get_policy", "vp", "vp-default")
    assert resp["policy"] == make_vp().to_doc()
    with pytest.raises(SimulationError) as exc:
        flow.query("bob", "pecc", "get_policy", "vp", "vp-missing")
    assert exc.value.code == "not_found"
    with pytest.raises(SimulationError) as exc:
        flow.query("bob", "pecc", "get_policy", "warrant", "x")
    assert exc.value.code == "invalid_argument"


def test_evaluate_acp_endpoint(flow):
    permit = flow.query("bob", "pecc", "evaluate_acp", "alice", doc_arg(["device-1"]))
    assert permit == {"permit": True, "reason": ""}
    deny = flow.query("bob", "pecc", "evaluate_acp", "bob", doc_arg(["device-1"]))
    assert deny["permit"] is False and "bob" in deny["reason"]


def test_evaluate_vp_endpoint(flow, actors):
    _, resp = propose(flow, actors)
    cr_id = resp["cr_id"]
    pending = flow.query("bob", "pecc", "evaluate_vp", cr_id)
    assert pending["status"] == "pending"
    assert pending["tests"] == [
        {
            "test_id": "t-review",
            "passes": 0,
            "fails": 0,
            "needed": 2,
            "satisfied": False,
            "unreachable": False,
        }
    ]
    approve(flow, actors, cr_id, "ana")
    approve(flow, actors, cr_id, "ben")
    done = flow.query("bob", "pecc", "evaluate_vp", cr_id)
    assert done["status"] == "fulfilled"
    assert done["tests"][0]["passes"] == 2


def test_unknown_chaincode_and_operation(flow):
    with pytest.raises(SimulationError) as exc:
        flow.invoke("alice", "billing", "propose")
    assert exc.value.code == "unknown_chaincode"
    with pytest.raises(SimulationError) as exc:
        flow.invoke("alice", "mgtcc", "explode")
    assert exc.value.code == "unknown_operation"


def test_query_operation_classification():
    assert is_query_operation("mgtcc", "retrieve")
    assert is_query_operation("pecc", "get_policy")
    assert not is_query_operation("mgtcc", "propose")
    assert not is_query_operation("pecc", "set_policy")
    assert not is_query_operation("billing", "retrieve")


# ---------------------------------------------------------------------------
# Simulation semantics


def test_simulation_is_deterministic(runtime, policied_state, actors):
    doc = build_proposal("alice", ["device-1"], '{"vlan":7}', actors.key("alice"))
    args = [doc_arg(doc)]
    a = runtime.simulate("mgtcc", "propose", args, "alice", policied_state)
    b = runtime.simulate("mgtcc", "propose", args, "alice", policied_state)
    assert a == b
    assert a.result_digest() == b.result_digest()


def test_simulation_reads_committed_state_only(policied_state):
    snapshot = StateSnapshot(policied_state)
    assert snapshot.get("cr/zzz") is None
    snapshot.put("cr/zzz", "buffered")
    assert snapshot.get("cr/zzz") is None  # own write stays invisible
    assert snapshot.write_set() == [("cr/zzz", "buffered")]
    assert ("cr/zzz", None) in snapshot.read_set()


def test_snapshot_records_first_read_version(policied_state):
    snapshot = StateSnapshot(policied_state)
    acp_key = "policy/acp/acp-default"
    snapshot.get(acp_key)
    snapshot.get(acp_key)
    reads = dict(snapshot.read_set())
    assert reads[acp_key] == policied_state.get_version(acp_key)
    keys = [k for k, _ in snapshot.read_set()]
    assert keys == sorted(keys)


def test_proposal_write_lands_under_cr_key(runtime, policied_state, actors):
    doc = build_proposal("alice", ["device-1"], "{}", actors.key("alice"))
    sim = runtime.simulate("mgtcc", "propose", [doc_arg(doc)], "alice", policied_state)
    (key, value) = sim.write_set[0]
    assert key == cr_state_key(cr_id_of(doc))
    stored = canonical.decode(value)
    assert stored["state"] == "proposed" and stored["proposal"] == doc


def test_cr_document_integrity_check():
    doc = {
        "cr_id": "00" * 32,
        "proposal": {"proposer_id": "alice"},
        "approvals": [],
        "acks": [],
        "state": "proposed",
        "vp_id": "vp-default",
    }
    with pytest.raises(SimulationError) as exc:
        ConfigurationRequest.from_doc(doc)
    assert exc.value.code == "integrity"
    cr = ConfigurationRequest.from_doc(doc, check=False)
    assert cr.to_doc() == doc
