"""Actor identities, Ed25519 signing, and the flat membership registry.

Every actor in the system (proposers, approvers, devices, peers, the orderer,
admins) is an Identity: an id bound to a role and an Ed25519 verification
key.  Signatures are deterministic, which keeps endorsement comparison
byte-exact.  The registry is a flat signed membership list persisted as a
canonical document; there is no certificate hierarchy.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass
from typing import Iterable, Optional

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric import ed25519

from confledger import canonical
from confledger.errors import ConfLedgerError

ROLES = frozenset({"proposer", "approver", "device", "peer", "orderer", "admin"})
SCHEME = "ed25519"


class IdentityError(ConfLedgerError):
    pass


class UnknownSchemeError(IdentityError):
    pass


class DuplicateIdentityError(IdentityError):
    pass


class UnknownIdentityError(IdentityError):
    pass


def generate_keypair(scheme_tag: str = SCHEME) -> tuple[bytes, bytes]:
    """Return (signing_key, verification_key) raw bytes for the scheme."""
    if scheme_tag != SCHEME:
        raise UnknownSchemeError(f"unknown signature scheme {scheme_tag!r}")
    sk = ed25519.Ed25519PrivateKey.generate()
    return sk.private_bytes_raw(), sk.public_key().public_bytes_raw()


def sign(signing_key: bytes, payload: bytes) -> bytes:
    if len(signing_key) != 32:
        raise IdentityError("malformed signing key (expected 32 raw bytes)")
    return ed25519.Ed25519PrivateKey.from_private_bytes(signing_key).sign(payload)


def verify(verification_key: bytes, signature: bytes, payload: bytes) -> bool:
    try:
        pk = ed25519.Ed25519PublicKey.from_public_bytes(verification_key)
        pk.verify(signature, payload)
        return True
    except (InvalidSignature, ValueError):
        return False


@dataclass(frozen=True)
class Identity:
    """Public half of an actor: id, role, hex verification key."""

    id: str
    role: str
    verification_key: str

    def __post_init__(self) -> None:
        if not self.id:
            raise IdentityError("identity id must be non-empty")
        if self.role not in ROLES:
            raise IdentityError(f"unknown role {self.role!r}")
        try:
            raw = bytes.fromhex(self.verification_key)
        except ValueError:
            raise IdentityError("verification key is not hex") from None
        if len(raw) != 32:
            raise IdentityError("verification key must be 32 bytes")

    def to_doc(self) -> dict:
        return {
            "id": self.id,
            "role": self.role,
            "scheme": SCHEME,
            "verification_key": self.verification_key,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Identity":
        if doc.get("scheme", SCHEME) != SCHEME:
            raise UnknownSchemeError(f"unknown signature scheme {doc.get('scheme')!r}")
        return cls(
            id=doc["id"],
            role=doc["role"],
            verification_key=doc["verification_key"],
        )


@dataclass(frozen=True)
class Signature:
    """A detached signature attributed to a registered signer."""

    signer_id: str
    signature: str  # hex over the canonical payload


class MembershipRegistry:
    """id -> Identity map with a content digest.

    Read-mostly: reads take a snapshot reference, writes are exclusive.
    """

    def __init__(self, entries: Iterable[Identity] = ()) -> None:
        self._lock = threading.Lock()
        self._entries: dict[str, Identity] = {}
        for identity in entries:
            self.register(identity)

    def register(self, identity: Identity) -> None:
        with self._lock:
            if identity.id in self._entries:
                raise DuplicateIdentityError(f"id {identity.id!r} already registered")
            self._entries = {**self._entries, identity.id: identity}

    def get(self, identity_id: str) -> Optional[Identity]:
        return self._entries.get(identity_id)

    def lookup(self, identity_id: str) -> Identity:
        identity = self._entries.get(identity_id)
        if identity is None:
            raise UnknownIdentityError(f"unknown identity {identity_id!r}")
        return identity

    def require_role(self, identity_id: str, role: str) -> Identity:
        identity = self.lookup(identity_id)
        if identity.role != role:
            raise IdentityError(
                f"identity {identity_id!r} has role {identity.role!r}, needs {role!r}"
            )
        return identity

    def verify(self, signer_id: str, signature_hex: str, payload: bytes) -> bool:
        """True iff the signature verifies against the registered key."""
        identity = self._entries.get(signer_id)
        if identity is None:
            return False
        try:
            sig = bytes.fromhex(signature_hex)
        except ValueError:
            return False
        return verify(bytes.fromhex(identity.verification_key), sig, payload)

    def ids(self) -> list[str]:
        return sorted(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, identity_id: str) -> bool:
        return identity_id in self._entries

    @property
    def digest(self) -> str:
        # Pure function of the entry set: canonical maps sort keys, so
        # insertion order cannot leak into the digest.
        return canonical.hex_digest({i: e.to_doc() for i, e in self._entries.items()})

    def to_doc(self) -> list[dict]:
        return [self._entries[i].to_doc() for i in sorted(self._entries)]

    @classmethod
    def from_doc(cls, doc: list[dict]) -> "MembershipRegistry":
        return cls(Identity.from_doc(d) for d in doc)

    def save(self, path: str) -> None:
        _write_file(path, canonical.encode(self.to_doc()))

    @classmethod
    def load(cls, path: str) -> "MembershipRegistry":
        with open(path, "rb") as fh:
            return cls.from_doc(canonical.decode(fh.read()))


def sign_document(doc: dict, signing_key: bytes, field: str = "signature") -> dict:
    """Return a copy of `doc` with `field` holding the hex signature over the
    canonical serialization with that field blanked."""
    signed = dict(doc)
    signed[field] = sign(signing_key, canonical.signing_bytes(doc, (field,))).hex()
    return signed


def verify_document(
    doc: dict,
    registry: MembershipRegistry,
    signer_field: str,
    field: str = "signature",
) -> bool:
    signer_id = doc.get(signer_field)
    signature = doc.get(field)
    if not isinstance(signer_id, str) or not isinstance(signature, str):
        return False
    return registry.verify(signer_id, signature, canonical.signing_bytes(doc, (field,)))


def save_key_file(
    path: str,
    identity: Identity,
    signing_key: Optional[bytes] = None,
) -> None:
    """One canonical document per file; private key files are chmod 0600."""
    doc = identity.to_doc()
    if signing_key is not None:
        doc["signing_key"] = signing_key.hex()
    _write_file(path, canonical.encode(doc), private=signing_key is not None)


def load_key_file(path: str) -> tuple[Identity, Optional[bytes]]:
    with open(path, "rb") as fh:
        doc = canonical.decode(fh.read())
    identity = Identity.from_doc(doc)
    signing_key = bytes.fromhex(doc["signing_key"]) if "signing_key" in doc else None
    if signing_key is not None and len(signing_key) != 32:
        raise IdentityError(f"malformed signing key in {path}")
    return identity, signing_key


def _write_file(path: str, data: bytes, private: bool = False) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    if private:
        os.chmod(tmp, 0o600)
    os.replace(tmp, path)
