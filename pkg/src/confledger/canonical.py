"""Canonical document encoding.

Every digest and signature in the system is computed over this one byte
representation: a map-and-list text encoding (JSON subset) with
lexicographically sorted keys, UTF-8, no insignificant whitespace, integers
in decimal.  Byte-valued fields are hex strings by convention.  Floats are
rejected outright so encodings stay bit-exact across platforms.

Two interchangeable encoders exist: a compiled one (confledger._canonical_fast,
built from Cython) and the pure-Python one below.  The compiled encoder is
picked at import time when available; set CONFLEDGER_PURE_PYTHON=1 to force
the fallback.  Both produce byte-identical output.
"""

from __future__ import annotations

import hashlib
import json
import os
from typing import Any

from confledger.errors import CanonicalError

__all__ = [
    "BACKEND",
    "CanonicalError",
    "decode",
    "digest",
    "encode",
    "encode_pure",
    "hex_digest",
    "signing_bytes",
]

_JSON_KWARGS = {
    "sort_keys": True,
    "separators": (",", ":"),
    "ensure_ascii": False,
    "allow_nan": False,
}


def _validate(obj: Any, path: str = "$") -> None:
    # Exact-type checks: subclasses (bool is handled first, IntEnum, str
    # subtypes) would make encoding depend on the subclass and are refused.
    if obj is None or obj is True or obj is False:
        return
    t = type(obj)
    if t is str or t is int:
        return
    if t is list:
        for i, item in enumerate(obj):
            _validate(item, f"{path}[{i}]")
        return
    if t is dict:
        for key in obj:
            if type(key) is not str:
                raise CanonicalError(f"{path}: non-string key {key!r}")
            _validate(obj[key], f"{path}.{key}")
        return
    raise CanonicalError(f"{path}: unsupported type {t.__name__}")


def encode_pure(obj: Any) -> bytes:
    """Encode `obj` to canonical bytes (pure-Python reference encoder)."""
    _validate(obj)
    try:
        return json.dumps(obj, **_JSON_KWARGS).encode("utf-8")
    except UnicodeEncodeError as exc:
        raise CanonicalError(f"unencodable text: {exc}") from None


def _reject_float(text: str) -> Any:
    raise CanonicalError(f"float literal {text!r} not allowed")


def decode(data: bytes | str, strict: bool = False) -> Any:
    """Decode canonical bytes back to a document.

    With strict=True the input must be byte-identical to the re-encoding of
    the parsed value, i.e. it must actually be in canonical form.
    """
    if isinstance(data, str):
        raw = data.encode("utf-8")
    else:
        raw = bytes(data)
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CanonicalError(f"not UTF-8: {exc}") from None
    try:
        obj = json.loads(text, parse_float=_reject_float, parse_constant=_reject_float)
    except json.JSONDecodeError as exc:
        raise CanonicalError(f"malformed document: {exc}") from None
    if strict and encode(obj) != raw:
        raise CanonicalError("document is not in canonical form")
    return obj


def digest(obj: Any) -> bytes:
    """SHA-256 over the canonical encoding."""
    return hashlib.sha256(encode(obj)).digest()


def hex_digest(obj: Any) -> str:
    return hashlib.sha256(encode(obj)).hexdigest()


def signing_bytes(doc: dict, blank_fields: tuple[str, ...] = ("signature",)) -> bytes:
    """Canonical bytes of `doc` with the given fields set to the empty string.

    Signatures and content hashes are always computed over this form, so the
    signed/hashed field never covers itself.
    """
    blanked = dict(doc)
    for field in blank_fields:
        blanked[field] = ""
    return encode(blanked)


_FORCE_PURE = os.environ.get("CONFLEDGER_PURE_PYTHON", "") not in ("", "0")

if _FORCE_PURE:
    encode = encode_pure
    BACKEND = "pure-python"
else:
    try:
        from confledger._canonical_fast import encode_canonical as encode

        BACKEND = "cython"
    except ImportError:
        encode = encode_pure
        BACKEND = "pure-python"
