"""Command line interface: netdir lifecycle, CR flows, exit-code contract."""

import os
import signal
import subprocess
import sys
import time
from pathlib import Path

import pytest

from confledger import canonical
from confledger.chaincode import cr_id_of
from confledger.cli import (
    EXIT_CONFLICT,
    EXIT_DENIED,
    EXIT_NETWORK,
    EXIT_OK,
    EXIT_USAGE,
    main,
)


def run(capsys, netdir, *args):
    code = main(["--netdir", str(netdir), *args])
    out, err = capsys.readouterr()
    return code, out, err


def line_value(out: str, key: str) -> str:
    for line in out.splitlines():
        if line.startswith(key + " "):
            return line[len(key) + 1 :]
    raise AssertionError(f"no {key!r} line in {out!r}")


@pytest.fixture
def netdir(tmp_path, capsys):
    nd = tmp_path / "net"
    code, out, _ = run(
        capsys, nd, "network", "init", "--demo-cast", "--max-wait-ms", "40"
    )
    assert code == EXIT_OK, out
    return nd


def propose(capsys, netdir, actor="alice", targets="device-1", doc='{"vlan":7}'):
    cfg = netdir / f"cfg-{abs(hash((actor, targets, doc)))}.json"
    cfg.write_text(doc)
    code, out, err = run(
        capsys, netdir, "propose", "--as", actor, "--targets", targets,
        "--config-file", str(cfg),
    )
    return code, out, err


def approve(capsys, netdir, actor, cr_id, result="pass"):
    return run(
        capsys, netdir, "approve", "--as", actor, "--cr", cr_id,
        "--test", "t-review", "--result", result,
    )


def make_valid_cr(capsys, netdir) -> str:
    code, out, _ = propose(capsys, netdir)
    assert code == EXIT_OK, out
    cr_id = line_value(out, "cr_id")
    for actor in ("ana", "ben"):
        code, out, _ = approve(capsys, netdir, actor, cr_id)
        assert code == EXIT_OK, out
    assert line_value(out, "state") == "valid"
    return cr_id


# ---------------------------------------------------------------------------
# network init / verify / replay


def test_init_creates_a_verifiable_network(netdir, capsys):
    assert (netdir / "network.json").exists()
    assert (netdir / "registry.json").exists()
    assert (netdir / "keys" / "alice.json").exists()
    assert (netdir / "policies").is_dir()
    code, out, _ = run(capsys, netdir, "network", "verify")
    assert code == EXIT_OK
    # One genesis block per peer, all intact.
    for peer in ("peer-1", "peer-2", "peer-3"):
        assert f"{peer} ok height 0" in out


def test_init_refuses_an_initialised_dir(netdir, capsys):
    code, _, err = run(capsys, netdir, "network", "init")
    assert code == EXIT_USAGE
    assert "already initialised" in err


def test_replay_digests_match_across_peers(netdir, capsys):
    make_valid_cr(capsys, netdir)
    code, out, _ = run(capsys, netdir, "network", "replay")
    assert code == EXIT_OK
    assert "state digests match" in out
    digests = {
        line.split()[-1] for line in out.splitlines() if line.startswith("peer-")
    }
    assert len(digests) == 1


def test_verify_reports_a_tampered_block_file(netdir, capsys):
    make_valid_cr(capsys, netdir)
    victim = sorted((netdir / "peers" / "peer-2" / "chain").iterdir())[-1]
    data = bytearray(victim.read_bytes())
    data[len(data) // 2] ^= 0x01
    victim.write_bytes(bytes(data))
    code, out, _ = run(capsys, netdir, "network", "verify")
    assert code == EXIT_CONFLICT
    assert "peer-2 FAIL" in out
    assert "peer-1 ok" in out  # the other replicas are untouched
    code, out, _ = run(capsys, netdir, "network", "replay")
    assert code == EXIT_CONFLICT
    assert "peer-2 FAIL" in out


def test_verify_single_peer_flag(netdir, capsys):
    code, out, _ = run(capsys, netdir, "network", "verify", "--peer", "peer-1")
    assert code == EXIT_OK
    assert out.startswith("peer-1 ok")
    code, _, err = run(capsys, netdir, "network", "verify", "--peer", "peer-9")
    assert code == EXIT_USAGE


def test_start_requires_tcp_transport(netdir, capsys):
    code, _, err = run(capsys, netdir, "network", "start")
    assert code == EXIT_USAGE
    assert "tcp" in err


# ---------------------------------------------------------------------------
# keygen


def test_keygen_registers_identity(netdir, capsys):
    code, out, _ = run(capsys, netdir, "keygen", "--id", "dave", "--role", "proposer")
    assert code == EXIT_OK
    assert line_value(out, "id") == "dave"
    assert len(line_value(out, "verification_key")) == 64
    assert (netdir / "keys" / "dave.json").exists()
    registry = canonical.decode((netdir / "registry.json").read_bytes())
    assert any(e["id"] == "dave" for e in registry)


def test_keygen_duplicate_id(netdir, capsys):
    code, _, err = run(capsys, netdir, "keygen", "--id", "alice", "--role", "proposer")
    assert code == EXIT_CONFLICT
    assert "alice" in err


def test_keygen_bad_role_is_a_usage_error(netdir, capsys):
    with pytest.raises(SystemExit) as excinfo:
        run(capsys, netdir, "keygen", "--id", "eve", "--role", "overlord")
    assert excinfo.value.code == EXIT_USAGE


def test_keygen_outside_a_netdir(tmp_path, capsys):
    code, _, err = run(capsys, tmp_path / "nowhere", "keygen", "--id", "x", "--role", "device")
    assert code == EXIT_USAGE
    assert "network init" in err


# ---------------------------------------------------------------------------
# propose


def test_propose_prints_cr_id_flag_and_block(netdir, capsys):
    code, out, _ = propose(capsys, netdir)
    assert code == EXIT_OK
    cr_id = line_value(out, "cr_id")
    assert len(cr_id) == 64 and int(cr_id, 16) >= 0
    assert line_value(out, "flag") == "valid"
    block_line = line_value(out, "block")
    number, _, index = block_line.partition(" index ")
    assert int(number) >= 1 and int(index) >= 0


def test_propose_without_permission_is_denied(netdir, capsys):
    # cho is an approver; the access control policy only admits alice and bob.
    code, _, err = propose(capsys, netdir, actor="cho")
    assert code == EXIT_DENIED
    assert "aborted access_denied" in err


def test_propose_missing_config_file(netdir, capsys):
    code, _, err = run(
        capsys, netdir, "propose", "--as", "alice", "--targets", "device-1",
        "--config-file", str(netdir / "missing.json"),
    )
    assert code == EXIT_USAGE
    assert "not found" in err


def test_propose_missing_key_file(netdir, capsys):
    (netdir / "keys" / "alice.json").unlink()
    code, _, err = propose(capsys, netdir)
    assert code == EXIT_USAGE
    assert "no key file" in err


def test_propose_requires_targets_flag(netdir, capsys):
    with pytest.raises(SystemExit) as excinfo:
        run(capsys, netdir, "propose", "--as", "alice", "--config-file", "x.json")
    assert excinfo.value.code == EXIT_USAGE


# ---------------------------------------------------------------------------
# approve


def test_approval_chain_reaches_valid(netdir, capsys):
    code, out, _ = propose(capsys, netdir)
    cr_id = line_value(out, "cr_id")
    code, out, _ = approve(capsys, netdir, "ana", cr_id)
    assert code == EXIT_OK
    assert line_value(out, "state") == "proposed"
    code, out, _ = approve(capsys, netdir, "ben", cr_id)
    assert code == EXIT_OK
    assert line_value(out, "state") == "valid"


def test_duplicate_approval_conflicts(netdir, capsys):
    code, out, _ = propose(capsys, netdir)
    cr_id = line_value(out, "cr_id")
    approve(capsys, netdir, "ana", cr_id)
    code, _, err = approve(capsys, netdir, "ana", cr_id)
    assert code == EXIT_CONFLICT
    assert "aborted duplicate" in err


def test_approve_unknown_cr(netdir, capsys):
    code, _, err = approve(capsys, netdir, "ana", "f" * 64)
    assert code == EXIT_CONFLICT
    assert "not_found" in err


def test_approve_by_non_approver_is_denied(netdir, capsys):
    code, out, _ = propose(capsys, netdir)
    cr_id = line_value(out, "cr_id")
    code, _, err = approve(capsys, netdir, "alice", cr_id)
    assert code == EXIT_DENIED
    assert "aborted ineligible" in err


# ---------------------------------------------------------------------------
# list / show


def test_list_empty_on_fresh_network(netdir, capsys):
    code, out, _ = run(capsys, netdir, "list", "--state", "proposed")
    assert code == EXIT_OK
    assert out.strip() == ""


def test_list_filters_by_state(netdir, capsys):
    code, out, _ = propose(capsys, netdir)
    cr_id = line_value(out, "cr_id")
    code, out, _ = run(capsys, netdir, "list", "--state", "proposed")
    assert code == EXIT_OK
    assert cr_id in out and "alice" in out and "device-1" in out
    code, out, _ = run(capsys, netdir, "list", "--state", "valid")
    assert out.strip() == ""


def test_list_rejects_unknown_state(netdir, capsys):
    code, _, err = run(capsys, netdir, "list", "--state", "sideways")
    assert code == EXIT_CONFLICT
    assert "invalid_argument" in err


def test_show_displays_approvals(netdir, capsys):
    cr_id = make_valid_cr(capsys, netdir)
    code, out, _ = run(capsys, netdir, "show", "--cr", cr_id)
    assert code == EXIT_OK
    assert line_value(out, "state") == "valid"
    assert "approval ana t-review pass" in out
    assert "approval ben t-review pass" in out
    assert line_value(out, "proposer") == "alice"


def test_show_unknown_cr(netdir, capsys):
    code, _, err = run(capsys, netdir, "show", "--cr", "e" * 64)
    assert code == EXIT_CONFLICT
    assert "not_found" in err


def test_show_canonical_rehashes_to_cr_id(netdir, capsys):
    cr_id = make_valid_cr(capsys, netdir)
    code, out, _ = run(capsys, netdir, "show", "--cr", cr_id, "--canonical")
    assert code == EXIT_OK
    record = canonical.decode(out.strip().encode())
    assert record["cr_id"] == cr_id
    assert cr_id_of(record["proposal"]) == cr_id
    # Byte-stable: re-encoding the parsed record reproduces the output.
    assert canonical.encode(record) == out.strip().encode()


def test_list_canonical_round_trips(netdir, capsys):
    make_valid_cr(capsys, netdir)
    code, out, _ = run(capsys, netdir, "list", "--canonical")
    assert code == EXIT_OK
    listing = canonical.decode(out.strip().encode())
    assert len(listing["crs"]) == 1
    assert canonical.encode(listing) == out.strip().encode()


# ---------------------------------------------------------------------------
# daemon command


def test_daemon_applies_and_reports(netdir, capsys):
    cr_id = make_valid_cr(capsys, netdir)
    code, out, _ = run(
        capsys, netdir, "daemon", "--device", "device-1",
        "--max-cycles", "2", "--interval", "0.01",
    )
    assert code == EXIT_OK
    assert f"applied {cr_id}" in out
    assert (netdir / "workspaces" / "device-1" / "applied" / cr_id).exists()
    code, out, _ = run(capsys, netdir, "show", "--cr", cr_id)
    assert "ack device-1 applied" in out


def test_daemon_exec_hook(netdir, capsys):
    cr_id = make_valid_cr(capsys, netdir)
    hook = 'sh -c "cat > \\"$CONFLEDGER_WORKSPACE/hook-$CONFLEDGER_CR_ID\\""'
    code, out, _ = run(
        capsys, netdir, "daemon", "--device", "device-1",
        "--max-cycles", "1", "--interval", "0.01", "--exec-hook", hook,
    )
    assert code == EXIT_OK
    assert f"applied {cr_id}" in out
    hook_out = netdir / "workspaces" / "device-1" / f"hook-{cr_id}"
    assert hook_out.read_text() == '{"vlan":7}'


def test_daemon_paranoid_accepts_honest_chain(netdir, capsys):
    cr_id = make_valid_cr(capsys, netdir)
    code, out, _ = run(
        capsys, netdir, "daemon", "--device", "device-1", "--paranoid",
        "--max-cycles", "1", "--interval", "0.01",
    )
    assert code == EXIT_OK
    assert f"applied {cr_id}" in out


# ---------------------------------------------------------------------------
# demo


def test_demo_runs_the_full_story(tmp_path, capsys):
    code, out, _ = run(capsys, tmp_path / "demo", "demo")
    assert code == EXIT_OK
    assert "demo complete" in out
    assert "CR state acknowledged" in out
    assert "state digests match" in out


# ---------------------------------------------------------------------------
# tcp transport end to end


@pytest.mark.slow
def test_tcp_network_serves_cli_clients(tmp_path, capsys):
    nd = tmp_path / "net"
    code, out, _ = run(
        capsys, nd, "network", "init", "--demo-cast", "--transport", "tcp",
        "--max-wait-ms", "40",
    )
    assert code == EXIT_OK
    ready = tmp_path / "ready"
    proc = subprocess.Popen(
        [
            sys.executable, "-m", "confledger.cli", "--netdir", str(nd),
            "network", "start", "--ready-file", str(ready),
        ],
        stdout=subprocess.PIPE,
        stderr=subprocess.STDOUT,
    )
    try:
        deadline = time.monotonic() + 30
        while not ready.exists():
            assert proc.poll() is None, proc.stdout.read().decode()
            assert time.monotonic() < deadline, "server never became ready"
            time.sleep(0.05)

        cr_id = make_valid_cr(capsys, nd)
        code, out, _ = run(
            capsys, nd, "daemon", "--device", "device-1",
            "--max-cycles", "2", "--interval", "0.01",
        )
        assert code == EXIT_OK and f"applied {cr_id}" in out
        code, out, _ = run(capsys, nd, "show", "--cr", cr_id)
        assert "ack device-1 applied" in out
    finally:
        proc.send_signal(signal.SIGTERM)
        assert proc.wait(timeout=15) == 0
    # After shutdown the chains on disk still verify and agree.
    code, out, _ = run(capsys, nd, "network", "replay")
    assert code == EXIT_OK
    assert "state digests match" in out


@pytest.mark.slow
def test_tcp_commands_fail_cleanly_when_server_is_down(tmp_path, capsys):
    nd = tmp_path / "net"
    run(
        capsys, nd, "network", "init", "--demo-cast", "--transport", "tcp",
        "--base-port", "1",  # reserved port: nothing will ever listen here
    )
    code, _, err = propose(capsys, nd)
    assert code == EXIT_NETWORK
    assert "unreachable" in err
