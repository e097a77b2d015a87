import os
import stat

import pytest
from hypothesis import given, strategies as st

from confledger import canonical, identity
from confledger.identity import (
    DuplicateIdentityError,
    Identity,
    IdentityError,
    MembershipRegistry,
    UnknownIdentityError,
    UnknownSchemeError,
    generate_keypair,
    load_key_file,
    save_key_file,
    sign,
    sign_document,
    verify,
    verify_document,
)


def test_sign_verify_roundtrip():
    sk, vk = generate_keypair()
    payload = b"reconfigure the vlan"
    assert verify(vk, sign(sk, payload), payload)


def test_verify_with_different_key_fails():
    sk, _ = generate_keypair()
    _, other_vk = generate_keypair()
    payload = b"payload"
    assert not verify(other_vk, sign(sk, payload), payload)


def test_flipped_payload_byte_fails():
    sk, vk = generate_keypair()
    payload = bytearray(b"payload-bytes")
    sig = sign(sk, bytes(payload))
    payload[3] ^= 0x01
    assert not verify(vk, sig, bytes(payload))


def test_empty_payload_signs_and_verifies():
    sk, vk = generate_keypair()
    assert verify(vk, sign(sk, b""), b"")


def test_signatures_are_deterministic():
    sk, vk = generate_keypair()
    s1, s2 = sign(sk, b"same"), sign(sk, b"same")
    assert s1 == s2
    assert verify(vk, s1, b"same") and verify(vk, s2, b"same")


def test_unknown_scheme_rejected():
    with pytest.raises(UnknownSchemeError):
        generate_keypair("rsa-2048")


def test_malformed_signing_key():
    with pytest.raises(IdentityError):
        sign(b"\x00" * 7, b"x")


@given(st.binary(max_size=200), st.integers(min_value=0))
def test_single_byte_mutation_rejected(payload, pos):
    sk, vk = _FIXED_KEYPAIR
    mutated = bytearray(payload) if payload else bytearray(b"\x00")
    i = pos % len(mutated)
    mutated[i] ^= 0xFF
    sig = sign(sk, payload)
    assert verify(vk, sig, payload)
    assert not verify(vk, sig, bytes(mutated)) or bytes(mutated) == payload


_FIXED_KEYPAIR = generate_keypair()


class TestRegistry:
    def _identity(self, actor_id="alice", role="proposer"):
        _, vk = generate_keypair()
        return Identity(actor_id, role, vk.hex())

    def test_register_then_lookup(self):
        reg = MembershipRegistry()
        ident = self._identity()
        reg.register(ident)
        assert reg.lookup("alice") == ident

    def test_duplicate_id_rejected(self):
        reg = MembershipRegistry()
        reg.register(self._identity())
        with pytest.raises(DuplicateIdentityError):
            reg.register(self._identity())

    def test_unknown_lookup(self):
        with pytest.raises(UnknownIdentityError):
            MembershipRegistry().lookup("ghost")

    def test_closed_role_set(self):
        _, vk = generate_keypair()
        with pytest.raises(IdentityError):
            Identity("x", "superuser", vk.hex())

    def test_digest_independent_of_insertion_order(self):
        a, b = self._identity("a"), self._identity("b", "approver")
        r1 = MembershipRegistry([a, b])
        r2 = MembershipRegistry([b, a])
        assert r1.digest == r2.digest

    def test_digest_changes_with_entries(self):
        reg = MembershipRegistry([self._identity("a")])
        before = reg.digest
        reg.register(self._identity("b", "device"))
        assert reg.digest != before

    def test_verify_against_wrong_signer(self):
        sk, vk = generate_keypair()
        reg = MembershipRegistry(
            [Identity("alice", "proposer", vk.hex()), self._identity("mallory")]
        )
        payload = b"data"
        sig = sign(sk, payload).hex()
        assert reg.verify("alice", sig, payload)
        assert not reg.verify("mallory", sig, payload)
        assert not reg.verify("nobody", sig, payload)

    def test_registry_file_roundtrip(self, tmp_path):
        reg = MembershipRegistry([self._identity("a"), self._identity("b", "peer")])
        path = tmp_path / "registry"
        reg.save(str(path))
        loaded = MembershipRegistry.load(str(path))
        assert loaded.digest == reg.digest
        assert loaded.ids() == ["a", "b"]


def test_sign_document_roundtrip(registry, actors):
    doc = {"approver_id": "ana", "verdict": "pass"}
    signed = sign_document(doc, actors.key("ana"))
    assert verify_document(signed, registry, "approver_id")
    tampered = dict(signed, verdict="fail")
    assert not verify_document(tampered, registry, "approver_id")


def test_key_file_roundtrip_and_permissions(tmp_path):
    sk, vk = generate_keypair()
    ident = Identity("device-9", "device", vk.hex())
    path = tmp_path / "device-9.json"
    save_key_file(str(path), ident, sk)
    mode = stat.S_IMODE(os.stat(path).st_mode)
    assert mode == 0o600
    loaded_ident, loaded_sk = load_key_file(str(path))
    assert loaded_ident == ident
    assert loaded_sk == sk


def test_public_key_file_has_no_signing_key(tmp_path):
    _, vk = generate_keypair()
    ident = Identity("watcher", "peer", vk.hex())
    path = tmp_path / "watcher.json"
    save_key_file(str(path), ident)
    _, loaded_sk = load_key_file(str(path))
    assert loaded_sk is None
    doc = canonical.decode(path.read_bytes())
    assert "signing_key" not in doc
