"""Command line interface: key management, network lifecycle, and the
proposer/approver/operator flows.

All state for one deployment lives in a *network directory*:

    netdir/
      network.json        transport, peer addresses, ordering and endorsement
      registry.json       membership registry (public halves only)
      keys/<id>.json      actor key files (private half stays local)
      policies/*.json     policy documents installed at start
      peers/<id>/chain/   each peer's block files
      workspaces/<id>/    device daemon workspaces

With the tcp transport, `network start` serves the peers and orderer and the
other commands connect to them.  With the in_process transport there is no
server: each command boots the network from the block files on disk, does its
work, and shuts down again, which is convenient for single-operator use and
demos.

Exit codes: 0 success, 2 usage error, 3 policy denial, 4 state conflict,
5 network failure or timeout.
"""

from __future__ import annotations

import argparse
import contextlib
import shlex
import signal
import sys
import threading
from pathlib import Path
from typing import Optional, Sequence

from . import canonical
from .chaincode import (
    build_approval,
    build_policy_change,
    build_proposal,
)
from .daemon import DeviceDaemon, ExecHookApplier, MockApplier
from .errors import ConfLedgerError
from .identity import (
    Identity,
    MembershipRegistry,
    ROLES,
    generate_keypair,
    load_key_file,
    save_key_file,
)
from .ledger import ChainStore, ChainVerificationError, make_policy_lookup, replay
from .network import (
    Client,
    NetworkConfig,
    NetworkError,
    NetworkHost,
    PeerNode,
    QueryError,
    QueryMismatchError,
    SubmitOutcome,
    SubmitTimeoutError,
    UnreachablePeerError,
    connect,
)
from .policy import (
    AccessControlPolicy,
    AcpRule,
    EndorsementPolicy,
    PolicyError,
    TestRule,
    ValidityPolicy,
    policy_from_doc,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DENIED = 3
EXIT_CONFLICT = 4
EXIT_NETWORK = 5

# Chaincode/client error codes bucketed into the exit-code contract.
_DENIAL_CODES = {
    "access_denied",
    "ineligible",
    "not_target",
    "bad_signature",
    "creator_mismatch",
    "no_policy",
    "ambiguous_policy",
    "endorsement_policy_unmet",
    "policy_error",
}
_NETWORK_CODES = {"orderer_unavailable", "unreachable"}


class CliError(ConfLedgerError):
    def __init__(self, exit_code: int, message: str) -> None:
        super().__init__(message)
        self.exit_code = exit_code


# ---------------------------------------------------------------------------
# The network directory


class NetDir:
    def __init__(self, root: Path) -> None:
        self.root = Path(root)

    @property
    def config_path(self) -> Path:
        return self.root / "network.json"

    @property
    def registry_path(self) -> Path:
        return self.root / "registry.json"

    @property
    def keys_dir(self) -> Path:
        return self.root / "keys"

    @property
    def policies_dir(self) -> Path:
        return self.root / "policies"

    @property
    def peers_dir(self) -> Path:
        return self.root / "peers"

    @property
    def workspaces_dir(self) -> Path:
        return self.root / "workspaces"

    def key_path(self, actor_id: str) -> Path:
        return self.keys_dir / f"{actor_id}.json"

    @property
    def initialised(self) -> bool:
        return self.config_path.exists()

    def require_initialised(self) -> "NetDir":
        if not self.initialised:
            raise CliError(
                EXIT_USAGE, f"{self.root} is not a network directory; run `network init`"
            )
        return self

    def load_config(self) -> NetworkConfig:
        try:
            return NetworkConfig.load(str(self.config_path))
        except (canonical.CanonicalError, NetworkError, OSError, KeyError) as exc:
            raise CliError(EXIT_USAGE, f"cannot load {self.config_path}: {exc}") from None

    def load_registry(self) -> MembershipRegistry:
        try:
            return MembershipRegistry.load(str(self.registry_path))
        except (ConfLedgerError, OSError, KeyError) as exc:
            raise CliError(EXIT_USAGE, f"cannot load {self.registry_path}: {exc}") from None

    def load_signing_key(self, actor_id: str) -> bytes:
        path = self.key_path(actor_id)
        if not path.exists():
            raise CliError(EXIT_USAGE, f"no key file for {actor_id!r} at {path}")
        _, signing_key = load_key_file(str(path))
        if signing_key is None:
            raise CliError(EXIT_USAGE, f"{path} holds no private key")
        return signing_key

    def server_keys(self, config: NetworkConfig) -> dict[str, bytes]:
        return {
            actor_id: self.load_signing_key(actor_id)
            for actor_id in (*config.peers, config.orderer_id)
        }

    def policy_files(self) -> list[Path]:
        if not self.policies_dir.is_dir():
            return []
        return sorted(self.policies_dir.glob("*.json"))

    def find_admin(self, registry: MembershipRegistry) -> Optional[str]:
        """An admin identity whose private key is available locally."""
        for actor_id in sorted(registry.ids()):
            identity = registry.get(actor_id)
            if identity and identity.role == "admin" and self.key_path(actor_id).exists():
                return actor_id
        return None


def _generate_actor(netdir: NetDir, registry: MembershipRegistry, actor_id: str, role: str) -> Identity:
    signing_key, verification_key = generate_keypair()
    identity = Identity(actor_id, role, verification_key.hex())
    registry.register(identity)
    netdir.keys_dir.mkdir(parents=True, exist_ok=True)
    save_key_file(str(netdir.key_path(actor_id)), identity, signing_key)
    return identity


def _policy_locator(parsed) -> tuple[str, str]:
    if isinstance(parsed, AccessControlPolicy):
        return "acp", parsed.policy_id
    if isinstance(parsed, ValidityPolicy):
        return "vp", parsed.policy_id
    if isinstance(parsed, EndorsementPolicy):
        return "endorsement", parsed.chaincode
    raise CliError(EXIT_USAGE, f"unsupported policy type {type(parsed).__name__}")


def ensure_policies(netdir: NetDir, registry: MembershipRegistry, make_client) -> int:
    """Install every policy file that is not yet in ledger state.

    Returns the number installed.  Needs a local admin key only when at least
    one policy is missing.
    """
    pending = []
    for path in netdir.policy_files():
        try:
            parsed = policy_from_doc(canonical.decode(path.read_bytes()))
        except (canonical.CanonicalError, PolicyError, KeyError, TypeError) as exc:
            raise CliError(EXIT_USAGE, f"bad policy file {path}: {exc}") from None
        pending.append(parsed)
    if not pending:
        return 0
    probe: Client = make_client("policy-probe")
    missing = []
    for parsed in pending:
        kind, policy_id = _policy_locator(parsed)
        try:
            probe.query_chaincode("pecc", "get_policy", [kind, policy_id])
        except QueryError as exc:
            if exc.code != "not_found":
                raise
            missing.append(parsed)
    if not missing:
        return 0
    admin_id = netdir.find_admin(registry)
    if admin_id is None:
        raise CliError(
            EXIT_DENIED,
            "policies are not installed and no admin key is available locally",
        )
    admin_key = netdir.load_signing_key(admin_id)
    admin: Client = make_client(admin_id)
    for parsed in missing:
        change = build_policy_change(admin_id, parsed, admin_key)
        outcome = admin.submit("pecc", "set_policy", [_doc_arg(change)])
        if not outcome.committed_valid:
            raise CliError(
                _outcome_exit(outcome),
                f"installing policy failed: {outcome.error_code or outcome.validity_flag}",
            )
    return len(missing)


@contextlib.contextmanager
def open_client(netdir: NetDir, actor_id: str):
    """A client for this netdir: a connection in tcp mode, an embedded
    network in in_process mode (booted from the block files, policies
    ensured, stopped afterwards)."""
    config = netdir.load_config()
    registry = netdir.load_registry()
    if config.transport == "tcp":
        yield connect(actor_id, registry, config)
        return
    host = NetworkHost(registry, netdir.server_keys(config), config, base_dir=str(netdir.root))
    host.start()
    try:
        ensure_policies(netdir, registry, host.client)
        yield host.client(actor_id)
    finally:
        host.stop()


# ---------------------------------------------------------------------------
# Output helpers


def _doc_arg(doc: dict) -> str:
    return canonical.encode(doc).decode("utf-8")


def _outcome_exit(outcome: SubmitOutcome) -> int:
    if outcome.committed_valid:
        return EXIT_OK
    if outcome.status == "committed":
        return EXIT_CONFLICT  # committed but flagged invalid
    if outcome.error_code in _DENIAL_CODES:
        return EXIT_DENIED
    if outcome.error_code in _NETWORK_CODES:
        return EXIT_NETWORK
    return EXIT_CONFLICT


def _print_outcome(outcome: SubmitOutcome, extra: Optional[dict] = None) -> int:
    if outcome.status == "aborted":
        print(f"aborted {outcome.error_code}: {outcome.reason}", file=sys.stderr)
        return _outcome_exit(outcome)
    for key, value in (extra or {}).items():
        print(f"{key} {value}")
    print(f"flag {outcome.validity_flag}")
    print(f"block {outcome.block_number} index {outcome.tx_index}")
    return _outcome_exit(outcome)


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


# ---------------------------------------------------------------------------
# keygen


def cmd_keygen(args) -> int:
    netdir = NetDir(args.netdir).require_initialised()
    registry = netdir.load_registry()
    if args.role not in ROLES:
        raise CliError(EXIT_USAGE, f"role must be one of {sorted(ROLES)}")
    try:
        identity = _generate_actor(netdir, registry, args.id, args.role)
    except ConfLedgerError as exc:
        raise CliError(EXIT_CONFLICT, str(exc)) from None
    registry.save(str(netdir.registry_path))
    print(f"id {identity.id}")
    print(f"role {identity.role}")
    print(f"verification_key {identity.verification_key}")
    print(f"key_file {netdir.key_path(identity.id)}")
    if netdir.load_config().transport == "tcp":
        print("note: restart `network start` to pick up the new identity", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# network init / start / verify / replay


DEMO_CAST = (
    ("alice", "proposer"),
    ("bob", "proposer"),
    ("ana", "approver"),
    ("ben", "approver"),
    ("cho", "approver"),
    ("device-1", "device"),
    ("device-2", "device"),
)


def _demo_policies() -> list:
    acp = AccessControlPolicy(
        "acp-default", (AcpRule(("alice", "bob"), ("device-*",)),)
    )
    vp = ValidityPolicy(
        "vp-default",
        ("device-*",),
        (TestRule("t-review", ("ana", "ben", "cho"), "m_of_n", m=2),),
    )
    return [acp, vp]


def _parse_endorsement(spec: str, peer_ids: tuple[str, ...], chaincode: str) -> EndorsementPolicy:
    if spec == "all_of":
        return EndorsementPolicy(chaincode, "all_of", peer_ids)
    if spec.startswith("k_of:"):
        try:
            k = int(spec.split(":", 1)[1])
        except ValueError:
            raise CliError(EXIT_USAGE, f"bad endorsement spec {spec!r}") from None
        return EndorsementPolicy(chaincode, "k_of", peer_ids, k=k)
    raise CliError(EXIT_USAGE, f"endorsement must be all_of or k_of:<k>, got {spec!r}")


def cmd_network_init(args) -> int:
    netdir = NetDir(args.netdir)
    if netdir.initialised:
        raise CliError(EXIT_USAGE, f"{netdir.root} is already initialised")
    if args.peers < 1:
        raise CliError(EXIT_USAGE, "need at least one peer")
    netdir.root.mkdir(parents=True, exist_ok=True)
    netdir.keys_dir.mkdir(exist_ok=True)
    netdir.policies_dir.mkdir(exist_ok=True)

    registry = MembershipRegistry()
    peer_ids = tuple(f"peer-{i}" for i in range(1, args.peers + 1))
    orderer_id = "orderer-1"
    for peer_id in peer_ids:
        _generate_actor(netdir, registry, peer_id, "peer")
    _generate_actor(netdir, registry, orderer_id, "orderer")
    _generate_actor(netdir, registry, args.admin, "admin")

    addresses = {}
    port = args.base_port if args.transport == "tcp" else 0
    for actor_id in (orderer_id, *peer_ids):
        addresses[actor_id] = f"127.0.0.1:{port}"
        if port:
            port += 1

    endorsement = {
        cc: _parse_endorsement(args.endorsement, peer_ids, cc) for cc in ("mgtcc", "pecc")
    }
    config = NetworkConfig(
        transport=args.transport,
        peers={pid: addresses[pid] for pid in peer_ids},
        orderer_id=orderer_id,
        orderer_address=addresses[orderer_id],
        max_txs=args.max_txs,
        max_wait_ms=args.max_wait_ms,
        endorsement=endorsement,
    )
    config.save(str(netdir.config_path))

    if args.demo_cast:
        for actor_id, role in DEMO_CAST:
            _generate_actor(netdir, registry, actor_id, role)
        for policy in _demo_policies():
            kind, policy_id = _policy_locator(policy)
            path = netdir.policies_dir / f"{kind}-{policy_id}.json"
            path.write_bytes(canonical.encode(policy.to_doc()))
    registry.save(str(netdir.registry_path))

    # Mint every peer's genesis block so the directory verifies from day one.
    for peer_id in peer_ids:
        PeerNode(
            peer_id,
            netdir.load_signing_key(peer_id),
            registry,
            config,
            chain_dir=str(netdir.peers_dir / peer_id / "chain"),
        )

    print(f"initialised {netdir.root}")
    print(f"transport {config.transport}")
    print(f"peers {','.join(peer_ids)}")
    print(f"orderer {orderer_id}")
    print(f"admin {args.admin}")
    if args.demo_cast:
        print(f"cast {','.join(actor_id for actor_id, _ in DEMO_CAST)}")
        print("policies acp-default,vp-default")
    return EXIT_OK


def cmd_network_start(args) -> int:
    netdir = NetDir(args.netdir).require_initialised()
    config = netdir.load_config()
    if config.transport != "tcp":
        raise CliError(
            EXIT_USAGE,
            "network start serves the tcp transport; in_process networks "
            "boot on demand inside each command",
        )
    registry = netdir.load_registry()
    host = NetworkHost(registry, netdir.server_keys(config), config, base_dir=str(netdir.root))
    host.start()
    stop_event = threading.Event()
    gateway_server = None
    try:
        # With ephemeral ports the operating system chose the addresses;
        # persist them so client commands know where to connect.
        bound = host.bound_addresses
        if bound != {**config.peers, config.orderer_id: config.orderer_address}:
            doc = config.to_doc()
            doc["peers"] = [{"id": pid, "address": bound[pid]} for pid in config.peers]
            doc["orderer"] = {"id": config.orderer_id, "address": bound[config.orderer_id]}
            config = NetworkConfig.from_doc(doc)
            config.save(str(netdir.config_path))
        ensure_policies(netdir, registry, lambda actor: connect(actor, registry, config))
        for peer_id in sorted(config.peers):
            print(f"peer {peer_id} listening on {bound[peer_id]}", flush=True)
        print(f"orderer {config.orderer_id} listening on {bound[config.orderer_id]}", flush=True)

        if args.gateway:
            gateway_server = _start_gateway_thread(args.gateway, registry, config, args.static)
            print(f"gateway listening on {args.gateway}", flush=True)

        print("ready", flush=True)
        if args.ready_file:
            ready = {"orderer": bound[config.orderer_id], "peers": {p: bound[p] for p in config.peers}}
            Path(args.ready_file).write_bytes(canonical.encode(ready))

        for signum in (signal.SIGINT, signal.SIGTERM):
            signal.signal(signum, lambda *_: stop_event.set())
        while not stop_event.wait(0.5):
            pass
        return EXIT_OK
    finally:
        if gateway_server is not None:
            gateway_server.should_exit = True
        host.stop()


def _start_gateway_thread(listen: str, registry, config, static_dir):
    try:
        import uvicorn
    except ImportError:
        raise CliError(EXIT_USAGE, "the gateway needs uvicorn installed") from None
    from .gateway import create_app

    app = create_app(
        client_factory=lambda actor_id: connect(actor_id, registry, config),
        registry=registry,
        static_dir=static_dir,
    )
    host_part, _, port_part = listen.rpartition(":")
    server = uvicorn.Server(
        uvicorn.Config(app, host=host_part or "127.0.0.1", port=int(port_part), log_level="warning")
    )
    server.install_signal_handlers = lambda: None  # not the main thread
    thread = threading.Thread(target=server.run, name="gateway", daemon=True)
    thread.start()
    return server


def _peer_dirs(netdir: NetDir, only: Optional[str] = None) -> list[tuple[str, Path]]:
    config = netdir.load_config()
    peer_ids = [only] if only else sorted(config.peers)
    out = []
    for peer_id in peer_ids:
        if peer_id not in config.peers:
            raise CliError(EXIT_USAGE, f"unknown peer {peer_id!r}")
        out.append((peer_id, netdir.peers_dir / peer_id / "chain"))
    return out


def cmd_network_verify(args) -> int:
    netdir = NetDir(args.netdir).require_initialised()
    worst = EXIT_OK
    for peer_id, chain_dir in _peer_dirs(netdir, args.peer):
        store = ChainStore(str(chain_dir))
        numbers = store.block_numbers()
        if not numbers:
            print(f"{peer_id} empty")
            continue
        report = store.verify_files()
        if report.ok:
            print(f"{peer_id} ok height {numbers[-1]}")
        else:
            print(f"{peer_id} FAIL {report}")
            worst = EXIT_CONFLICT
    return worst


def cmd_network_replay(args) -> int:
    netdir = NetDir(args.netdir).require_initialised()
    config = netdir.load_config()
    registry = netdir.load_registry()
    lookup = make_policy_lookup(config.endorsement)
    digests = {}
    worst = EXIT_OK
    for peer_id, chain_dir in _peer_dirs(netdir, args.peer):
        store = ChainStore(str(chain_dir))
        try:
            blocks = store.load()
            state = replay(blocks, lookup, registry)
        except (ChainVerificationError, ConfLedgerError) as exc:
            print(f"{peer_id} FAIL {exc}")
            worst = EXIT_CONFLICT
            continue
        digest = state.digest
        digests[peer_id] = digest
        print(f"{peer_id} height {len(blocks) - 1} state {digest}")
    if worst == EXIT_OK and len(set(digests.values())) > 1:
        print("state digests diverge", file=sys.stderr)
        return EXIT_CONFLICT
    if worst == EXIT_OK and len(digests) > 1:
        print("state digests match")
    return worst


# ---------------------------------------------------------------------------
# propose / approve / list / show


def cmd_propose(args) -> int:
    netdir = NetDir(args.netdir).require_initialised()
    config_path = Path(args.config_file)
    if not config_path.is_file():
        raise CliError(EXIT_USAGE, f"config file {config_path} not found")
    config_document = config_path.read_text(encoding="utf-8")
    targets = sorted({t.strip() for t in args.targets.split(",") if t.strip()})
    if not targets:
        raise CliError(EXIT_USAGE, "no target devices given")
    signing_key = netdir.load_signing_key(args.actor)
    proposal = build_proposal(args.actor, targets, config_document, signing_key)
    with open_client(netdir, args.actor) as client:
        outcome = client.submit("mgtcc", "propose", [_doc_arg(proposal)])
    extra = {}
    if outcome.status == "committed":
        extra["cr_id"] = canonical.decode(outcome.response)["cr_id"]
    return _print_outcome(outcome, extra)


def cmd_approve(args) -> int:
    netdir = NetDir(args.netdir).require_initialised()
    signing_key = netdir.load_signing_key(args.actor)
    approval = build_approval(
        args.actor, args.cr, args.test, args.result, signing_key, comment=args.comment
    )
    with open_client(netdir, args.actor) as client:
        outcome = client.submit("mgtcc", "approve", [_doc_arg(approval)])
    extra = {}
    if outcome.status == "committed":
        body = canonical.decode(outcome.response)
        extra["cr_id"] = body["cr_id"]
        extra["state"] = body["state"]
    return _print_outcome(outcome, extra)


def _retrieve(client: Client, filter_doc: dict) -> dict:
    return client.query_chaincode("mgtcc", "retrieve", [_doc_arg(filter_doc)])


def cmd_list(args) -> int:
    netdir = NetDir(args.netdir).require_initialised()
    filter_doc = {}
    if args.state:
        filter_doc["state"] = args.state
    if args.device:
        filter_doc["device_id"] = args.device
    with open_client(netdir, args.actor) as client:
        try:
            listing = _retrieve(client, filter_doc)
        except QueryError as exc:
            raise CliError(_query_exit(exc), f"{exc.code}: {exc}") from None
    if args.canonical:
        sys.stdout.buffer.write(canonical.encode(listing))
        sys.stdout.buffer.write(b"\n")
        return EXIT_OK
    for cr in listing["crs"]:
        targets = ",".join(cr["proposal"]["target_devices"])
        print(f"{cr['cr_id']} {cr['state']} {cr['proposal']['proposer_id']} {targets}")
    return EXIT_OK


def cmd_show(args) -> int:
    netdir = NetDir(args.netdir).require_initialised()
    with open_client(netdir, args.actor) as client:
        try:
            listing = _retrieve(client, {"cr_id": args.cr})
        except QueryError as exc:
            raise CliError(_query_exit(exc), f"{exc.code}: {exc}") from None
    if not listing["crs"]:
        raise CliError(EXIT_CONFLICT, f"not_found: no CR {args.cr}")
    cr = listing["crs"][0]
    if args.canonical:
        sys.stdout.buffer.write(canonical.encode(cr))
        sys.stdout.buffer.write(b"\n")
        return EXIT_OK
    print(f"cr_id {cr['cr_id']}")
    print(f"state {cr['state']}")
    print(f"proposer {cr['proposal']['proposer_id']}")
    print(f"targets {','.join(cr['proposal']['target_devices'])}")
    print(f"vp {cr['vp_id']}")
    print(f"config {cr['proposal']['config_document']}")
    for approval in cr["approvals"]:
        comment = f" {approval['comment']!r}" if approval["comment"] else ""
        print(
            f"approval {approval['approver_id']} {approval['test_id']} "
            f"{approval['result']}{comment}"
        )
    for ack in cr["acks"]:
        detail = f" {ack['detail']!r}" if ack["detail"] else ""
        print(f"ack {ack['device_id']} {ack['status']}{detail}")
    return EXIT_OK


def _query_exit(exc: QueryError) -> int:
    if exc.code in _DENIAL_CODES:
        return EXIT_DENIED
    return EXIT_CONFLICT


# ---------------------------------------------------------------------------
# daemon / gateway


def cmd_daemon(args) -> int:
    netdir = NetDir(args.netdir).require_initialised()
    signing_key = netdir.load_signing_key(args.device)
    workspace = Path(args.workspace) if args.workspace else netdir.workspaces_dir / args.device
    with open_client(netdir, args.device) as client:
        if args.exec_hook:
            applier = ExecHookApplier(shlex.split(args.exec_hook), workspace)
        else:
            applier = MockApplier(workspace)
        daemon = DeviceDaemon(
            device_id=args.device,
            signing_key=signing_key,
            client=client,
            workspace=workspace,
            applier=applier,
            poll_interval=args.interval,
            paranoid=args.paranoid,
        )

        def on_cycle(report):
            if not report.ok:
                print(f"cycle skipped: {report.note}", file=sys.stderr, flush=True)
                return
            for cr_id in report.applied:
                print(f"applied {cr_id}", flush=True)
            for cr_id in report.failed:
                print(f"apply_failed {cr_id}", flush=True)
            for cr_id in report.deferred:
                print(f"deferred {cr_id}", flush=True)
            for cr_id in report.distrusted:
                print(f"distrusted {cr_id}", flush=True)

        stop = threading.Event()
        for signum in (signal.SIGINT, signal.SIGTERM):
            signal.signal(signum, lambda *_: stop.set())
        print(f"device {args.device} polling every {args.interval}s", flush=True)
        daemon.run(max_cycles=args.max_cycles, stop=stop, on_cycle=on_cycle)
    return EXIT_OK


def cmd_gateway(args) -> int:
    netdir = NetDir(args.netdir).require_initialised()
    config = netdir.load_config()
    registry = netdir.load_registry()
    try:
        import uvicorn
    except ImportError:
        raise CliError(EXIT_USAGE, "the gateway needs uvicorn installed") from None
    from .gateway import create_app

    host_part, _, port_part = args.listen.rpartition(":")
    if config.transport == "tcp":
        app = create_app(
            client_factory=lambda actor_id: connect(actor_id, registry, config),
            registry=registry,
            static_dir=args.static,
        )
        print(f"gateway listening on {args.listen}", flush=True)
        uvicorn.run(app, host=host_part or "127.0.0.1", port=int(port_part), log_level="warning")
        return EXIT_OK
    host = NetworkHost(registry, netdir.server_keys(config), config, base_dir=str(netdir.root))
    host.start()
    try:
        ensure_policies(netdir, registry, host.client)
        app = create_app(
            client_factory=host.client, registry=registry, static_dir=args.static
        )
        print(f"gateway listening on {args.listen}", flush=True)
        uvicorn.run(app, host=host_part or "127.0.0.1", port=int(port_part), log_level="warning")
        return EXIT_OK
    finally:
        host.stop()


# ---------------------------------------------------------------------------
# demo


def cmd_demo(args) -> int:
    netdir = NetDir(args.netdir)
    if not netdir.initialised:
        init_args = argparse.Namespace(
            netdir=args.netdir,
            peers=3,
            transport="in_process",
            base_port=0,
            max_txs=10,
            max_wait_ms=50,
            endorsement="all_of",
            admin="root",
            demo_cast=True,
        )
        cmd_network_init(init_args)
        print()
    config = netdir.load_config()
    registry = netdir.load_registry()
    if config.transport != "in_process":
        raise CliError(EXIT_USAGE, "the demo drives an in_process network")

    host = NetworkHost(registry, netdir.server_keys(config), config, base_dir=str(netdir.root))
    host.start()
    try:
        installed = ensure_policies(netdir, registry, host.client)
        if installed:
            print(f"[0] installed {installed} policies (access control + validity)")

        def submit(actor, chaincode, operation, doc):
            outcome = host.client(actor).submit(chaincode, operation, [_doc_arg(doc)])
            if not outcome.committed_valid:
                raise CliError(
                    _outcome_exit(outcome),
                    f"{operation} by {actor} failed: {outcome.error_code or outcome.validity_flag}",
                )
            return outcome

        # 1: a proposer files a configuration change for both devices.
        proposal = build_proposal(
            "alice",
            ["device-1", "device-2"],
            '{"dns":"10.0.0.53","vlan":42}',
            netdir.load_signing_key("alice"),
        )
        outcome = submit("alice", "mgtcc", "propose", proposal)
        cr_id = canonical.decode(outcome.response)["cr_id"]
        print(f"[1] alice proposed {cr_id[:16]}… for device-1,device-2 (block {outcome.block_number})")

        # 2: approvers see it in the review queue.
        queue = _retrieve(host.client("ana"), {"state": "proposed"})
        print(f"[2] review queue shows {len(queue['crs'])} proposed CR")

        # 3: two of the three reviewers pass it.
        for approver in ("ana", "ben"):
            approval = build_approval(
                approver, cr_id, "t-review", "pass", netdir.load_signing_key(approver)
            )
            outcome = submit(approver, "mgtcc", "approve", approval)
            state = canonical.decode(outcome.response)["state"]
            print(f"[3] {approver} approved t-review -> state {state} (block {outcome.block_number})")

        # 4: both device daemons pick it up, apply, and acknowledge.
        for device in ("device-1", "device-2"):
            daemon = DeviceDaemon(
                device_id=device,
                signing_key=netdir.load_signing_key(device),
                client=host.client(device),
                workspace=netdir.workspaces_dir / device,
            )
            report = daemon.poll_once()
            if report.applied != (cr_id,):
                raise CliError(EXIT_CONFLICT, f"{device} did not apply the CR: {report}")
            print(f"[4] {device} applied and acknowledged")
        final = _retrieve(host.client("alice"), {"cr_id": cr_id})["crs"][0]
        print(f"[4] CR state {final['state']}")

        # 5: a second request dies in review.
        proposal = build_proposal(
            "bob", ["device-1"], '{"vlan":13}', netdir.load_signing_key("bob")
        )
        outcome = submit("bob", "mgtcc", "propose", proposal)
        bad_id = canonical.decode(outcome.response)["cr_id"]
        for approver in ("ana", "ben"):
            approval = build_approval(
                approver, bad_id, "t-review", "fail", netdir.load_signing_key(approver)
            )
            outcome = submit(approver, "mgtcc", "approve", approval)
        state = canonical.decode(outcome.response)["state"]
        print(f"[5] bob's request was voted down -> state {state}")
    finally:
        host.stop()

    # 6: the ledger itself checks out, identically on every peer.
    verify_args = argparse.Namespace(netdir=args.netdir, peer=None)
    if cmd_network_verify(verify_args) != EXIT_OK:
        return EXIT_CONFLICT
    code = cmd_network_replay(verify_args)
    if code != EXIT_OK:
        return code
    print("demo complete")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="confledger",
        description="Multi-party authorized configuration management on a "
        "permissioned, hash-chained ledger.",
    )
    parser.add_argument(
        "--netdir",
        default="netdir",
        help="network directory holding config, keys, and chains (default: ./netdir)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate a keypair and register the identity")
    p.add_argument("--id", required=True, dest="id")
    p.add_argument("--role", required=True, choices=sorted(ROLES))
    p.set_defaults(func=cmd_keygen)

    net = sub.add_parser("network", help="network lifecycle").add_subparsers(
        dest="network_command", required=True
    )

    p = net.add_parser("init", help="create a network directory")
    p.add_argument("--peers", type=int, default=3)
    p.add_argument("--transport", choices=("in_process", "tcp"), default="in_process")
    p.add_argument("--base-port", type=int, default=0, help="first tcp port; 0 = ephemeral")
    p.add_argument("--max-txs", type=int, default=10, help="orderer batch size")
    p.add_argument("--max-wait-ms", type=int, default=200, help="orderer batch timeout")
    p.add_argument("--endorsement", default="all_of", help="all_of or k_of:<k>")
    p.add_argument("--admin", default="root", help="admin identity to create")
    p.add_argument(
        "--demo-cast",
        action="store_true",
        help="also create example proposers, approvers, devices, and policies",
    )
    p.set_defaults(func=cmd_network_init)

    p = net.add_parser("start", help="serve peers and orderer (tcp transport)")
    p.add_argument("--ready-file", default="", help="write this file once serving")
    p.add_argument("--gateway", default="", help="also serve the HTTP gateway on host:port")
    p.add_argument("--static", default="", help="static asset dir for the gateway")
    p.set_defaults(func=cmd_network_start)

    p = net.add_parser("verify", help="recompute every block hash and link")
    p.add_argument("--peer", default=None)
    p.set_defaults(func=cmd_network_verify)

    p = net.add_parser("replay", help="rebuild state from the chain and print its digest")
    p.add_argument("--peer", default=None)
    p.set_defaults(func=cmd_network_replay)

    p = sub.add_parser("propose", help="submit a configuration request")
    p.add_argument("--as", required=True, dest="actor")
    p.add_argument("--targets", required=True, help="comma-separated device ids")
    p.add_argument("--config-file", required=True)
    p.set_defaults(func=cmd_propose)

    p = sub.add_parser("approve", help="record a test verdict on a CR")
    p.add_argument("--as", required=True, dest="actor")
    p.add_argument("--cr", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--result", required=True, choices=("pass", "fail"))
    p.add_argument("--comment", default="")
    p.set_defaults(func=cmd_approve)

    p = sub.add_parser("list", help="list configuration requests")
    p.add_argument("--as", default="observer", dest="actor")
    p.add_argument("--state", default="")
    p.add_argument("--device", default="")
    p.add_argument("--canonical", action="store_true", help="print exact stored bytes")
    p.set_defaults(func=cmd_list)

    p = sub.add_parser("show", help="print one CR in full")
    p.add_argument("--as", default="observer", dest="actor")
    p.add_argument("--cr", required=True)
    p.add_argument("--canonical", action="store_true", help="print exact stored bytes")
    p.set_defaults(func=cmd_show)

    p = sub.add_parser("daemon", help="run a device's poll/apply/ack loop")
    p.add_argument("--device", required=True)
    p.add_argument("--interval", type=float, default=1.0)
    p.add_argument("--paranoid", action="store_true", help="re-verify approvals locally")
    p.add_argument("--max-cycles", type=int, default=None)
    p.add_argument("--workspace", default="")
    p.add_argument("--exec-hook", default="", help="apply via this command instead of the mock")
    p.set_defaults(func=cmd_daemon)

    p = sub.add_parser("gateway", help="serve the HTTP/JSON gateway")
    p.add_argument("--listen", default="127.0.0.1:8788")
    p.add_argument("--static", default="", help="serve a dashboard bundle from this dir")
    p.set_defaults(func=cmd_gateway)

    p = sub.add_parser("demo", help="run the full lifecycle on a local network")
    p.set_defaults(func=cmd_demo)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        return _fail(exc.exit_code, str(exc))
    except (SubmitTimeoutError, UnreachablePeerError) as exc:
        return _fail(EXIT_NETWORK, str(exc))
    except QueryMismatchError as exc:
        return _fail(EXIT_NETWORK, f"peers disagree: {exc}")
    except QueryError as exc:
        return _fail(_query_exit(exc), f"{exc.code}: {exc}")
    except NetworkError as exc:
        return _fail(EXIT_NETWORK, str(exc))
    except ConfLedgerError as exc:
        return _fail(EXIT_CONFLICT, str(exc))
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    raise SystemExit(main())
