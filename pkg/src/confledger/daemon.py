"""Device-side configuration daemon.

Each managed device runs one daemon. It polls the ledger for configuration
requests that target the device and have reached the ``valid`` state, applies
each one exactly once through a pluggable applier, and acknowledges the
outcome (``applied`` or ``apply_failed``) back onto the ledger with the
device's own signature.

Crash safety rests on two legs: the applier is idempotent (re-applying an
already-applied configuration is a no-op), and the chaincode rejects a second
acknowledgement for the same (device, CR) as a duplicate.  A daemon killed
between apply and ack therefore re-applies harmlessly on restart, re-sends the
ack, and records a chaincode ``duplicate`` refusal as success — the ledger
ends up with exactly one acknowledgement either way.
"""

from __future__ import annotations

import os
import subprocess
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import canonical
from .chaincode import (
    ACK_APPLIED,
    ACK_APPLY_FAILED,
    ConfigurationRequest,
    SimulationError,
    build_ack,
)
from .errors import ConfLedgerError
from .identity import verify_document
from .network import Client, NetworkError, QueryError, QueryMismatchError
from .policy import ApprovalVote, PolicyError, ValidityPolicy, evaluate_vp

__all__ = [
    "FAIL_APPLY",
    "CRASH_AFTER_APPLY_ENV",
    "STATE_FILENAME",
    "ApplyError",
    "DaemonError",
    "DeviceState",
    "MockApplier",
    "ExecHookApplier",
    "CycleReport",
    "DeviceDaemon",
]

# A configuration document containing this token anywhere makes the mock
# applier fail deterministically; used to exercise the apply_failed path.
FAIL_APPLY = "FAIL_APPLY"

# Test hook: when this environment variable is "1" or equal to the CR id
# being processed, the daemon hard-exits after applying but before
# acknowledging — simulating a crash at the worst possible moment.
CRASH_AFTER_APPLY_ENV = "CONFLEDGER_CRASH_AFTER_APPLY"

STATE_FILENAME = "device_state.json"


class DaemonError(ConfLedgerError):
    pass


class ApplyError(ConfLedgerError):
    """The applier could not bring the device to the requested configuration."""


# ---------------------------------------------------------------------------
# Persistent device-side state


@dataclass
class DeviceState:
    """What the daemon remembers across restarts.

    ``applied`` lists CR ids in the order they were acknowledged, each at most
    once; a CR id present here is never applied or acknowledged again.
    """

    device_id: str
    applier_kind: str
    applied: list[str] = field(default_factory=list)
    last_height: int = 0

    def to_doc(self) -> dict:
        return {
            "device_id": self.device_id,
            "applier_kind": self.applier_kind,
            "applied": list(self.applied),
            "last_height": self.last_height,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "DeviceState":
        state = cls(
            device_id=doc["device_id"],
            applier_kind=doc["applier_kind"],
            applied=list(doc["applied"]),
            last_height=doc["last_height"],
        )
        if len(set(state.applied)) != len(state.applied):
            raise DaemonError("device state lists a CR id twice")
        return state

    def save(self, path: Path) -> None:
        tmp = path.with_suffix(".tmp")
        tmp.write_bytes(canonical.encode(self.to_doc()))
        tmp.replace(path)

    @classmethod
    def load(cls, path: Path) -> "DeviceState":
        try:
            doc = canonical.decode(path.read_bytes())
        except canonical.CanonicalError as exc:
            raise DaemonError(f"unreadable device state {path}: {exc}") from None
        if not isinstance(doc, dict):
            raise DaemonError(f"device state {path} is not a document")
        return cls.from_doc(doc)

    def seen(self, cr_id: str) -> bool:
        return cr_id in self.applied

    def record(self, cr_id: str) -> None:
        if cr_id not in self.applied:
            self.applied.append(cr_id)


# ---------------------------------------------------------------------------
# Appliers


class MockApplier:
    """Applies a configuration by writing it under ``<workspace>/applied/``.

    Deterministic failure: any document containing the FAIL_APPLY token is
    rejected.  Re-applying an identical document is a no-op, so replays after
    a crash are harmless.
    """

    kind = "mock"

    def __init__(self, workspace: Path) -> None:
        self.applied_dir = Path(workspace) / "applied"
        self.applied_dir.mkdir(parents=True, exist_ok=True)

    def apply(self, cr_id: str, config_document: str) -> None:
        if FAIL_APPLY in config_document:
            raise ApplyError(f"configuration for {cr_id} contains {FAIL_APPLY}")
        target = self.applied_dir / cr_id
        data = config_document.encode("utf-8")
        if target.exists() and target.read_bytes() == data:
            return
        tmp = target.with_suffix(".tmp")
        tmp.write_bytes(data)
        tmp.replace(target)


class ExecHookApplier:
    """Runs an external command with the configuration document on stdin.

    The CR id and workspace are exposed via CONFLEDGER_CR_ID and
    CONFLEDGER_WORKSPACE; a non-zero exit status means the apply failed.
    Idempotence is the hook's responsibility.
    """

    kind = "exec_hook"

    def __init__(self, command: Sequence[str], workspace: Path, timeout: float = 60.0) -> None:
        if not command:
            raise DaemonError("exec hook needs a command")
        self.command = list(command)
        self.workspace = Path(workspace)
        self.timeout = timeout

    def apply(self, cr_id: str, config_document: str) -> None:
        env = dict(os.environ)
        env["CONFLEDGER_CR_ID"] = cr_id
        env["CONFLEDGER_WORKSPACE"] = str(self.workspace)
        try:
            proc = subprocess.run(
                self.command,
                input=config_document.encode("utf-8"),
                capture_output=True,
                env=env,
                timeout=self.timeout,
            )
        except OSError as exc:
            raise ApplyError(f"hook failed to start: {exc}") from None
        except subprocess.TimeoutExpired:
            raise ApplyError(f"hook timed out after {self.timeout}s") from None
        if proc.returncode != 0:
            detail = proc.stderr.decode("utf-8", "replace").strip()[-500:]
            raise ApplyError(f"hook exited {proc.returncode}: {detail}")


# ---------------------------------------------------------------------------
# The daemon


@dataclass(frozen=True)
class CycleReport:
    """Outcome of one poll cycle."""

    ok: bool
    height: int = 0
    pending: tuple[str, ...] = ()  # valid CRs for this device not yet handled
    applied: tuple[str, ...] = ()
    failed: tuple[str, ...] = ()  # applier refused; acknowledged apply_failed
    deferred: tuple[str, ...] = ()  # ack didn't commit; retried next cycle
    distrusted: tuple[str, ...] = ()  # paranoid verification failed; never acked
    note: str = ""


class DeviceDaemon:
    """Polls for valid CRs targeting one device, applies, and acknowledges."""

    def __init__(
        self,
        device_id: str,
        signing_key: bytes,
        client: Client,
        workspace: Path,
        applier: Optional[object] = None,
        poll_interval: float = 1.0,
        paranoid: bool = False,
    ) -> None:
        self.device_id = device_id
        self.signing_key = signing_key
        self.client = client
        self.workspace = Path(workspace)
        self.workspace.mkdir(parents=True, exist_ok=True)
        self.applier = applier if applier is not None else MockApplier(self.workspace)
        self.poll_interval = poll_interval
        self.paranoid = paranoid
        self.state_path = self.workspace / STATE_FILENAME
        if self.state_path.exists():
            self.state = DeviceState.load(self.state_path)
            if self.state.device_id != device_id:
                raise DaemonError(
                    f"workspace belongs to {self.state.device_id!r}, not {device_id!r}"
                )
            if self.state.applier_kind != self.applier.kind:
                raise DaemonError(
                    f"workspace was driven by a {self.state.applier_kind!r} applier, "
                    f"refusing to continue with {self.applier.kind!r}"
                )
        else:
            self.state = DeviceState(device_id=device_id, applier_kind=self.applier.kind)
            self.state.save(self.state_path)

    # -- one cycle

    def poll_once(self) -> CycleReport:
        """Fetch valid CRs for this device and drive each new one to an ack.

        A divergent or failed query aborts the cycle without acting; the next
        cycle retries.  Within a cycle CRs are handled in CR-id order.
        """
        filter_doc = canonical.encode(
            {"device_id": self.device_id, "state": "valid"}
        ).decode("utf-8")
        try:
            body = self.client.query("mgtcc", "retrieve", [filter_doc])
        except QueryMismatchError as exc:
            return CycleReport(ok=False, note=f"peers disagree, retrying: {exc}")
        except (QueryError, NetworkError) as exc:
            return CycleReport(ok=False, note=f"query failed, retrying: {exc}")
        height = body["height"]
        listing = canonical.decode(body["response"])
        pending = [
            doc["cr_id"] for doc in listing["crs"] if not self.state.seen(doc["cr_id"])
        ]
        applied: list[str] = []
        failed: list[str] = []
        deferred: list[str] = []
        distrusted: list[str] = []
        for cr_doc in listing["crs"]:  # retrieve returns canonical cr_id order
            cr_id = cr_doc["cr_id"]
            if self.state.seen(cr_id):
                continue
            if self.paranoid:
                problem = self._distrust_reason(cr_doc)
                if problem is not None:
                    distrusted.append(cr_id)
                    continue
            status, detail = self._apply(cr_id, cr_doc["proposal"]["config_document"])
            self._maybe_crash(cr_id)
            if self._acknowledge(cr_id, status, detail):
                self.state.record(cr_id)
                (applied if status == ACK_APPLIED else failed).append(cr_id)
            else:
                deferred.append(cr_id)
        self.state.last_height = height
        self.state.save(self.state_path)
        return CycleReport(
            ok=True,
            height=height,
            pending=tuple(pending),
            applied=tuple(applied),
            failed=tuple(failed),
            deferred=tuple(deferred),
            distrusted=tuple(distrusted),
        )

    def run(
        self,
        max_cycles: Optional[int] = None,
        stop: Optional[threading.Event] = None,
        on_cycle=None,
    ) -> int:
        """Poll until stopped; returns the number of cycles run."""
        cycles = 0
        while max_cycles is None or cycles < max_cycles:
            report = self.poll_once()
            cycles += 1
            if on_cycle is not None:
                on_cycle(report)
            if stop is not None and stop.wait(self.poll_interval):
                break
            if stop is None:
                time.sleep(self.poll_interval)
        return cycles

    # -- internals

    def _apply(self, cr_id: str, config_document: str) -> tuple[str, str]:
        try:
            self.applier.apply(cr_id, config_document)
            return ACK_APPLIED, ""
        except ApplyError as exc:
            return ACK_APPLY_FAILED, str(exc)[:500]

    def _maybe_crash(self, cr_id: str) -> None:
        trigger = os.environ.get(CRASH_AFTER_APPLY_ENV, "")
        if trigger and trigger in ("1", cr_id):
            os._exit(70)

    def _acknowledge(self, cr_id: str, status: str, detail: str) -> bool:
        """Submit the ack; True when the ledger now holds exactly one ack."""
        ack = build_ack(self.device_id, cr_id, status, self.signing_key, detail)
        arg = canonical.encode(ack).decode("utf-8")
        try:
            outcome = self.client.submit("mgtcc", "acknowledge", [arg])
        except NetworkError:
            return False
        if outcome.committed_valid:
            return True
        # A duplicate refusal means an earlier ack (ours, before a crash)
        # already committed — the goal state, not an error.
        if outcome.status == "aborted" and outcome.error_code == "duplicate":
            return True
        return False

    def _distrust_reason(self, cr_doc: dict) -> Optional[str]:
        """Re-derive the CR's validity locally; None when everything checks out.

        Paranoid mode refuses to act on a CR whose record does not prove
        itself: recomputed id, proposer and approver signatures, this device
        among the targets, and a locally evaluated fulfilled validity policy.
        """
        registry = self.client.registry
        try:
            cr = ConfigurationRequest.from_doc(cr_doc, check=True)
        except (SimulationError, KeyError, TypeError) as exc:
            return f"malformed CR record: {exc}"
        if cr.state != "valid":
            return f"state is {cr.state!r}, not valid"
        if self.device_id not in cr.target_devices:
            return "this device is not targeted"
        if not verify_document(cr.proposal, registry, "proposer_id"):
            return "proposal signature does not verify"
        for approval in cr.approvals:
            if not verify_document(approval, registry, "approver_id"):
                return f"approval by {approval.get('approver_id')!r} does not verify"
        try:
            reply = self.client.query_chaincode("pecc", "get_policy", ["vp", cr.vp_id])
            vp = ValidityPolicy.from_doc(reply["policy"])
            votes = [
                ApprovalVote(a["approver_id"], a["test_id"], a["result"])
                for a in cr.approvals
            ]
            evaluation = evaluate_vp(votes, vp, registry)
        except (NetworkError, QueryError, QueryMismatchError) as exc:
            return f"cannot fetch governing policy: {exc}"
        except (PolicyError, KeyError, TypeError) as exc:
            return f"validity policy does not evaluate: {exc}"
        if not evaluation.fulfilled:
            return f"validity policy evaluates to {evaluation.status!r}"
        return None
