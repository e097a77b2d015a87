"""Compare the compiled canonical encoder against the pure-Python fallback.

Every hash, signature, and stored byte in the ledger goes through canonical
encoding, so its throughput bounds block verification and replay speed.  This
script times both encoders on representative documents, checks they produce
byte-identical output, and then times a full chain verification under each.

Usage:
    python benchmarks/bench_canonical.py [--blocks N] [--txs N] [--repeat N]
"""

import argparse
import hashlib
import timeit

from confledger import canonical
from confledger.ledger import (
    GENESIS_PREV_HASH,
    Block,
    Endorsement,
    Transaction,
    verify_chain,
)

try:
    from confledger._canonical_fast import encode_canonical as encode_fast
except ImportError:
    encode_fast = None


def _hex(tag: str, length: int) -> str:
    out = ""
    counter = 0
    while len(out) < length:
        out += hashlib.sha256(f"{tag}:{counter}".encode()).hexdigest()
        counter += 1
    return out[:length]


def make_transaction(seq: int) -> Transaction:
    cr_key = "cr/" + _hex(f"cr{seq}", 64)
    record = {
        "cr_id": _hex(f"cr{seq}", 64),
        "state": "proposed",
        "vp_id": "vp-default",
        "approvals": [],
        "acks": [],
        "proposal": {
            "proposer_id": "alice",
            "target_devices": ["device-1", "device-2"],
            "config_document": '{"vlan":42,"mtu":9000,"ntp":["10.0.0.1","10.0.0.2"]}',
            "created_at": 1700000000 + seq,
            "nonce": _hex(f"nonce{seq}", 32),
            "signature": _hex(f"psig{seq}", 128),
        },
    }
    return Transaction(
        creator="alice",
        chaincode="mgtcc",
        operation="propose",
        args=[canonical.encode(record["proposal"]).decode()],
        nonce=_hex(f"txnonce{seq}", 32),
        read_set=[("policy/acp/acp-default", (1, 0)),
                  ("policy/vp/vp-default", (1, 1)), (cr_key, None)],
        write_set=[(cr_key, canonical.encode(record).decode())],
        response=canonical.encode({"cr_id": record["cr_id"], "state": "proposed"}).decode(),
        endorsements=[
            Endorsement(f"peer-{i}", _hex(f"digest{seq}", 64), _hex(f"esig{seq}{i}", 128))
            for i in (1, 2, 3)
        ],
    )


def make_chain(blocks: int, txs: int) -> list[Block]:
    chain = [Block(0, GENESIS_PREV_HASH, 0, []).seal()]
    seq = 0
    for number in range(1, blocks):
        batch = []
        for _ in range(txs):
            batch.append(make_transaction(seq))
            seq += 1
        chain.append(Block(number, chain[-1].block_hash, 1700000000000 + number, batch).seal())
    return chain


def workloads() -> list[tuple[str, object]]:
    tx = make_transaction(0)
    block = make_chain(2, 8)[1]
    return [
        ("status doc", {"found": True, "block_number": 17, "tx_index": 2,
                        "validity_flag": "valid"}),
        ("cr record", canonical.decode(tx.write_set[0][1])),
        ("block, 8 txs", block.to_doc()),
    ]


def time_op(fn, repeat: int) -> float:
    """Best-of-N per-call seconds, with iteration count auto-scaled."""
    timer = timeit.Timer(fn)
    loops, _ = timer.autorange()
    return min(timer.timeit(loops) for _ in range(repeat)) / loops


def human(seconds: float) -> str:
    if seconds < 1e-6:
        return f"{seconds * 1e9:7.1f} ns"
    if seconds < 1e-3:
        return f"{seconds * 1e6:7.1f} µs"
    if seconds < 1.0:
        return f"{seconds * 1e3:7.1f} ms"
    return f"{seconds:7.2f} s "


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--blocks", type=int, default=200,
                        help="chain length for the verification timing")
    parser.add_argument("--txs", type=int, default=5, help="transactions per block")
    parser.add_argument("--repeat", type=int, default=5,
                        help="timing repetitions (best is reported)")
    args = parser.parse_args()

    print(f"active encoder backend: {canonical.BACKEND}")
    if encode_fast is None:
        print("compiled encoder not built; timing the pure-Python encoder only")
        print("(build it with: pip install -e . --no-build-isolation)")

    print()
    print(f"{'workload':<14} {'bytes':>7} {'pure-python':>14} {'compiled':>14} {'speedup':>9}")
    for name, doc in workloads():
        reference = canonical.encode_pure(doc)
        pure = time_op(lambda: canonical.encode_pure(doc), args.repeat)
        row = f"{name:<14} {len(reference):>7} {human(pure):>14}"
        if encode_fast is not None:
            assert encode_fast(doc) == reference, f"backends disagree on {name!r}"
            fast = time_op(lambda: encode_fast(doc), args.repeat)
            row += f" {human(fast):>14} {pure / fast:>8.1f}x"
        print(row)

    chain = make_chain(args.blocks, args.txs)
    report = verify_chain(chain)
    assert report.ok, report
    print()
    print(f"verify_chain, {args.blocks} blocks x {args.txs} txs:")
    selected = canonical.encode
    try:
        canonical.encode = canonical.encode_pure
        pure = time_op(lambda: verify_chain(chain), args.repeat)
        print(f"  pure-python  {human(pure)}")
        if encode_fast is not None:
            canonical.encode = encode_fast
            fast = time_op(lambda: verify_chain(chain), args.repeat)
            print(f"  compiled     {human(fast)}   ({pure / fast:.1f}x)")
    finally:
        canonical.encode = selected
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
