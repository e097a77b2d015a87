"""Generate frontend/testdata/golden.json from the Python implementation.

The dashboard re-implements canonical encoding, content hashing, and Ed25519
signing in TypeScript; these vectors pin that re-implementation to the exact
bytes the chaincode verifies.  Regenerate after any change to the canonical
form or to the signed document layouts:

    python frontend/scripts/gen_golden.py
"""

import hashlib
import json
from pathlib import Path

from cryptography.hazmat.primitives.asymmetric import ed25519

from confledger import canonical
from confledger.chaincode import build_approval, build_proposal, cr_id_of
from confledger.identity import sign_document
from confledger.ledger import Block, Endorsement, Transaction

OUT = Path(__file__).resolve().parent.parent / "testdata" / "golden.json"

APPROVER_SEED = bytes(range(32))
PROPOSER_SEED = bytes(range(32, 64))


def verification_key(seed: bytes) -> str:
    private = ed25519.Ed25519PrivateKey.from_private_bytes(seed)
    return private.public_key().public_bytes_raw().hex()


def canonical_cases() -> list[dict]:
    docs = [
        ("empty map", {}),
        ("empty list", []),
        ("scalars", {"null": None, "true": True, "false": False, "zero": 0,
                     "negative": -42, "big": 2**53 - 1}),
        ("key order", {"zebra": 1, "alpha": {"inner_b": [], "inner_a": 2}, "mid": [3, {"y": 1, "x": 2}]}),
        ("unicode text", {"note": "héllo ☃ 😀", "de": "Straße"}),
        ("escapes", {"s": "quote\" backslash\\ newline\n tab\t bell del"}),
        ("astral key sort", {"😀": 1, "ﬀ": 2, "z": 3}),
        ("deep nesting", [[[{"a": [{"b": [0, -1, "x"]}]}]]]),
    ]
    return [
        {"name": name, "doc": doc, "encoded": canonical.encode(doc).decode("utf-8")}
        for name, doc in docs
    ]


def approval_vector() -> dict:
    unsigned = {
        "approver_id": "ana",
        "cr_id": hashlib.sha256(b"golden cr").hexdigest(),
        "test_id": "t-review",
        "result": "pass",
        "comment": "checked on staging ✓",
    }
    signed = build_approval(
        unsigned["approver_id"], unsigned["cr_id"], unsigned["test_id"],
        unsigned["result"], APPROVER_SEED, comment=unsigned["comment"],
    )
    assert sign_document(unsigned, APPROVER_SEED) == signed
    return {
        "seed_hex": APPROVER_SEED.hex(),
        "verification_key_hex": verification_key(APPROVER_SEED),
        "doc_unsigned": unsigned,
        "signing_bytes": canonical.signing_bytes(unsigned).decode("utf-8"),
        "signature_hex": signed["signature"],
        "signed_body": canonical.encode(signed).decode("utf-8"),
    }


def proposal_vector() -> dict:
    signed = build_proposal(
        "alice", ["device-2", "device-1"], '{"vlan":42,"mtu":9000}',
        PROPOSER_SEED, created_at=1700000000, nonce="ab" * 16,
    )
    return {"doc": signed, "cr_id": cr_id_of(signed)}


def _hexpad(tag: str, length: int) -> str:
    out = ""
    i = 0
    while len(out) < length:
        out += hashlib.sha256(f"{tag}/{i}".encode()).hexdigest()
        i += 1
    return out[:length]


def block_vectors() -> dict:
    txs = []
    for seq in range(2):
        record = {"cr_id": _hexpad(f"cr{seq}", 64), "state": "proposed"}
        txs.append(Transaction(
            creator="alice",
            chaincode="mgtcc",
            operation="propose",
            args=[canonical.encode({"proposer_id": "alice", "seq": seq}).decode()],
            nonce=_hexpad(f"nonce{seq}", 32),
            read_set=[("policy/vp/vp-default", (1, 0)), ("cr/" + record["cr_id"], None)],
            write_set=[("cr/" + record["cr_id"], canonical.encode(record).decode())],
            response=canonical.encode(record).decode(),
            endorsements=[
                Endorsement(f"peer-{i}", _hexpad(f"digest{seq}", 64),
                            _hexpad(f"sig{seq}.{i}", 128))
                for i in (1, 2, 3)
            ],
        ))
    block = Block(3, _hexpad("prev", 64), 1700000000123, txs).seal()
    intact = block.to_doc()
    mutated = json.loads(json.dumps(intact))  # deep copy
    args0 = mutated["transactions"][0]["args"][0]
    mutated["transactions"][0]["args"][0] = args0.replace('"seq":0', '"seq":7')
    assert mutated != intact
    return {"intact": intact, "mutated": mutated, "block_hash": block.block_hash}


def key_file_vector() -> dict:
    return {
        "id": "ana",
        "role": "approver",
        "scheme": "ed25519",
        "verification_key": verification_key(APPROVER_SEED),
        "signing_key": APPROVER_SEED.hex(),
    }


def main() -> None:
    vectors = {
        "canonical_cases": canonical_cases(),
        "approval": approval_vector(),
        "proposal": proposal_vector(),
        "block": block_vectors(),
        "key_file": key_file_vector(),
    }
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(vectors, ensure_ascii=False, indent=1) + "\n",
                   encoding="utf-8")
    print(f"wrote {OUT} ({OUT.stat().st_size} bytes)")


if __name__ == "__main__":
    main()
