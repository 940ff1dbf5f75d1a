"""Authenticated encryption for control messages.

A control payload (a JSON object) is sealed with AES-GCM under a key
derived from the shared secret by SHA-256.  The wire form is a JSON
object with base64 fields: n (nonce, fresh per message), c (ciphertext),
t (authentication tag).  Decoding verifies the tag, so any bit flip or
wrong secret raises instead of returning plaintext; a ReplayGuard
rejects nonce reuse within a session.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import json
import os
import threading
from collections import deque

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

NONCE_BYTES = 12
TAG_BYTES = 16
_MAX_TRACKED_NONCES = 100_000


class AuthenticationError(Exception):
    """The message failed verification and must be discarded."""


def derive_key(secret: str) -> bytes:
    if not secret:
        raise AuthenticationError("empty secret")
    return hashlib.sha256(secret.encode("utf-8")).digest()


def encode_control(payload: dict, secret: str) -> dict:
    """Seal a JSON payload into a {n, c, t} envelope."""
    key = derive_key(secret)
    nonce = os.urandom(NONCE_BYTES)
    plaintext = json.dumps(payload, separators=(",", ":"), sort_keys=True).encode("utf-8")
    sealed = AESGCM(key).encrypt(nonce, plaintext, None)
    ciphertext, tag = sealed[:-TAG_BYTES], sealed[-TAG_BYTES:]
    return {
        "n": base64.b64encode(nonce).decode("ascii"),
        "c": base64.b64encode(ciphertext).decode("ascii"),
        "t": base64.b64encode(tag).decode("ascii"),
    }


class ReplayGuard:
    """Rejects envelopes whose nonce was already accepted in this session."""

    def __init__(self, capacity: int = _MAX_TRACKED_NONCES) -> None:
        self._seen: set[bytes] = set()
        self._order: deque[bytes] = deque()
        self._capacity = capacity
        self._lock = threading.Lock()

    def check(self, nonce: bytes) -> None:
        with self._lock:
            if nonce in self._seen:
                raise AuthenticationError("replayed nonce")

    def mark(self, nonce: bytes) -> None:
        with self._lock:
            if nonce in self._seen:
                return
            self._seen.add(nonce)
            self._order.append(nonce)
            if len(self._order) > self._capacity:
                self._seen.discard(self._order.popleft())


def decode_control(envelope: dict, secret: str, guard: ReplayGuard | None = None) -> dict:
    """Open an envelope; raises AuthenticationError on any defect.

    Only verified nonces are remembered by the guard, so a forged
    message cannot block a later legitimate one.
    """
    if not isinstance(envelope, dict) or set(envelope) - {"n", "c", "t"} or not {"n", "c", "t"} <= set(envelope):
        raise AuthenticationError("malformed envelope: expected fields n, c, t")
    try:
        nonce = base64.b64decode(envelope["n"], validate=True)
        ciphertext = base64.b64decode(envelope["c"], validate=True)
        tag = base64.b64decode(envelope["t"], validate=True)
    except (binascii.Error, TypeError, ValueError) as exc:
        raise AuthenticationError(f"malformed envelope: {exc}") from exc
    if len(nonce) != NONCE_BYTES or len(tag) != TAG_BYTES:
        raise AuthenticationError("malformed envelope: bad field length")
    if guard is not None:
        guard.check(nonce)
    key = derive_key(secret)
    try:
        plaintext = AESGCM(key).decrypt(nonce, ciphertext + tag, None)
    except InvalidTag as exc:
        raise AuthenticationError("message verification failed") from exc
    try:
        payload = json.loads(plaintext.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise AuthenticationError(f"verified payload is not JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise AuthenticationError("verified payload is not a JSON object")
    if guard is not None:
        guard.mark(nonce)
    return payload
