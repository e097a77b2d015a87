import pytest

from confledger import canonical
from confledger.chaincode import ChaincodeRuntime, new_nonce
from confledger.identity import Identity, MembershipRegistry, generate_keypair, sign
from confledger.ledger import (
    Endorsement,
    StateDatabase,
    Transaction,
    compute_tx_id,
    make_policy_lookup,
)
from confledger.policy import (
    AccessControlPolicy,
    AcpRule,
    EndorsementPolicy,
    TestRule,
    ValidityPolicy,
)

ACTOR_SPECS = [
    ("alice", "proposer"),
    ("bob", "proposer"),
    ("ana", "approver"),
    ("ben", "approver"),
    ("cho", "approver"),
    ("device-1", "device"),
    ("device-2", "device"),
    ("peer-1", "peer"),
    ("peer-2", "peer"),
    ("peer-3", "peer"),
    ("orderer-1", "orderer"),
    ("root", "admin"),
]


class Actors:
    def __init__(self):
        self.keys: dict[str, bytes] = {}
        self.registry = MembershipRegistry()
        for actor_id, role in ACTOR_SPECS:
            sk, vk = generate_keypair()
            self.keys[actor_id] = sk
            self.registry.register(Identity(actor_id, role, vk.hex()))

    def key(self, actor_id: str) -> bytes:
        return self.keys[actor_id]


@pytest.fixture(scope="session")
def actors():
    return Actors()


@pytest.fixture
def registry(actors):
    return actors.registry


def make_acp(policy_id="acp-default", rules=None):
    rules = rules or [AcpRule(("alice",), ("device-*",))]
    return AccessControlPolicy(policy_id, tuple(rules))


def make_vp(policy_id="vp-default", devices=("device-*",), tests=None):
    tests = tests or [TestRule("t-review", ("ana", "ben", "cho"), "m_of_n", m=2)]
    return ValidityPolicy(policy_id, tuple(devices), tuple(tests))


def install_policies(state: StateDatabase, *policies, block=0):
    from confledger.policy import (
        AccessControlPolicy,
        ValidityPolicy,
        acp_state_key,
        endorsement_state_key,
        vp_state_key,
    )

    for idx, pol in enumerate(policies):
        if isinstance(pol, AccessControlPolicy):
            key = acp_state_key(pol.policy_id)
        elif isinstance(pol, ValidityPolicy):
            key = vp_state_key(pol.policy_id)
        else:
            key = endorsement_state_key(pol.chaincode)
        state.put(key, canonical.encode(pol.to_doc()).decode(), (block, idx))


@pytest.fixture
def runtime(registry):
    return ChaincodeRuntime(registry)


@pytest.fixture
def policied_state():
    state = StateDatabase()
    install_policies(state, make_acp(), make_vp())
    return state


PEER_IDS = ("peer-1", "peer-2", "peer-3")


def endorse_tx(
    actors,
    runtime,
    state,
    creator,
    chaincode,
    operation,
    args,
    peer_ids=PEER_IDS,
    nonce=None,
):
    """Simulate once and wrap the result as a fully endorsed transaction,
    the way the client assembly path does."""
    nonce = nonce or new_nonce()
    sim = runtime.simulate(chaincode, operation, args, creator, state)
    tx_id = compute_tx_id(creator, chaincode, operation, args, nonce)
    digest = sim.result_digest()
    endorsements = [
        Endorsement(
            pid,
            digest,
            sign(actors.key(pid), Endorsement.payload(tx_id, digest)).hex(),
        )
        for pid in peer_ids
    ]
    return Transaction(
        creator=creator,
        chaincode=chaincode,
        operation=operation,
        args=list(args),
        nonce=nonce,
        read_set=sim.read_set,
        write_set=sim.write_set,
        response=sim.response,
        endorsements=endorsements,
    )


@pytest.fixture
def policy_lookup():
    return make_policy_lookup(
        {
            "mgtcc": EndorsementPolicy("mgtcc", "all_of", PEER_IDS),
            "pecc": EndorsementPolicy("pecc", "all_of", PEER_IDS),
        }
    )
