"""Secure I/O drivers with domain multiplexing, and the user-app end of the
encrypted channel.

A driver serves its bound user device to the OS through two virtual devices:
``A`` carries the plaintext stream in passthrough mode, ``B`` carries
length-prefixed AEAD frames while a trusted-path session is open. Never both.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

from . import enclave as enc
from .attestation import (
    APP_TO_DRIVER,
    DRIVER_TO_APP,
    KeyTransportMessage,
    channel_nonce,
    confirm_key,
    key_transport_recv,
    local_attest_verify,
    nonce_fields,
    start_transport,
)
from .crypto import NONCE_SIZE, TAG_SIZE, AuthFailure, DeterministicRng, aead_open, aead_seal, sha256
from .enclave import EnclaveImage, EnclaveInstance, Measurement, Report
from .tb import APPROVAL_SIZE, Approval

DRIVER_CODE = b"sgxio secure-io driver v1: domain multiplexing over two virtual devices"
USER_APP_CODE = b"sgxio user-app v1: trusted path client"
ROGUE_DRIVER_CODE = b"sgxio secure-io driver (rogue)"
ROGUE_USER_APP_CODE = b"sgxio user-app (attacker build)"

PASSTHROUGH = "os-passthrough"
TRUSTED = "trusted"
CLOSED = "closed"

DISPLAYED = "displayed"
ABORTED = "aborted"

_FRAME_AAD = b"sgxio-trusted-path"
_LEN = 4


class TrustedPathError(Exception):
    pass


class ApprovalMissing(TrustedPathError):
    pass


class ChannelRefused(TrustedPathError):
    pass


class ReplayDetected(TrustedPathError):
    pass


def encode_frame(nonce: bytes, sealed: bytes) -> bytes:
    body = nonce + sealed
    return len(body).to_bytes(_LEN, "big") + body


def decode_frame(frame: bytes) -> tuple[bytes, bytes]:
    if len(frame) < _LEN + NONCE_SIZE + TAG_SIZE:
        raise AuthFailure("frame too short")
    n = int.from_bytes(frame[:_LEN], "big")
    body = frame[_LEN:]
    if n != len(body):
        raise AuthFailure("frame length prefix mismatch")
    return body[:NONCE_SIZE], body[NONCE_SIZE:]


@dataclass
class TrustedPathSession:
    """One side of an established channel. Counter 0 of the driver->app
    direction is reserved for key confirmation, so both directions start at 1."""

    app_id: Measurement
    driver_id: Measurement
    key: bytes = field(repr=False)
    side: str  # "app" | "driver"
    send_counter: int = 1
    recv_counter: int = 0
    mode: str = TRUSTED

    @property
    def send_direction(self) -> int:
        return APP_TO_DRIVER if self.side == "app" else DRIVER_TO_APP


def session_send(session: TrustedPathSession, payload: bytes) -> bytes:
    if session.mode != TRUSTED:
        raise TrustedPathError("session not in trusted mode")
    nonce = channel_nonce(session.send_direction, session.send_counter)
    session.send_counter += 1
    return encode_frame(nonce, aead_seal(session.key, nonce, payload, _FRAME_AAD))


def session_recv(session: TrustedPathSession, frame: bytes) -> bytes:
    """Raises AuthFailure for tampered/misdirected frames, ReplayDetected for
    counter regression."""
    if session.mode != TRUSTED:
        raise TrustedPathError("session not in trusted mode")
    nonce, sealed = decode_frame(frame)
    payload = aead_open(session.key, nonce, sealed, _FRAME_AAD)
    direction, counter = nonce_fields(nonce)
    if direction == session.send_direction:
        raise AuthFailure("frame reflected back to its sender")
    if counter <= session.recv_counter:
        raise ReplayDetected(f"counter {counter} <= last accepted {session.recv_counter}")
    session.recv_counter = counter
    return payload


@dataclass(frozen=True)
class DeviceEvent:
    device: str
    direction: str
    payload: bytes
    tag: str = ""  # source tag, compared at the sink


class UserDevice:
    def __init__(self, name: str, direction: str = "input"):
        if direction not in ("input", "output", "bidirectional"):
            raise ValueError(direction)
        self.name = name
        self.direction = direction
        self.emitted: list[DeviceEvent] = []
        self.received: list[bytes] = []
        self._seq = 0

    def press(self, payload: bytes) -> DeviceEvent:
        self._seq += 1
        ev = DeviceEvent(self.name, "input", payload, f"{self.name}#{self._seq}")
        self.emitted.append(ev)
        return ev

    def show(self, payload: bytes) -> None:
        self.received.append(payload)


class VirtualDevice:
    def __init__(self, name: str, kind: str):
        if kind not in ("passthrough", "encrypted-char"):
            raise ValueError(kind)
        self.name = name
        self.kind = kind
        self.writes: list[bytes] = []

    def write(self, data: bytes) -> None:
        self.writes.append(data)


def driver_image(device: str, debug: bool = True, code: bytes = DRIVER_CODE) -> EnclaveImage:
    return EnclaveImage((code, json.dumps({"device": device}).encode()), debug)


@dataclass(frozen=True)
class AppPolicy:
    drivers: frozenset[Measurement]
    tbs: frozenset[Measurement]

    def to_page(self) -> bytes:
        doc = {"drivers": sorted(m.hex() for m in self.drivers), "tbs": sorted(m.hex() for m in self.tbs)}
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()


def user_app_image(policy: AppPolicy, debug: bool = True, code: bytes = USER_APP_CODE) -> EnclaveImage:
    return EnclaveImage((code, policy.to_page()), debug)


class DriverEnclave:
    """Driver logic. Never branches on which OS it serves."""

    def __init__(self, instance: EnclaveInstance, device: str, *, key_confirm: bool = True):
        self.instance = instance
        self.device = device
        self.key_confirm = key_confirm
        self.vdev_a = VirtualDevice(f"{device}-A", "passthrough")
        self.vdev_b = VirtualDevice(f"{device}-B", "encrypted-char")
        self.approval: Approval | None = None
        self.tb_report: Report | None = None
        self.session: TrustedPathSession | None = None
        self._pending_request_step: int | None = None

    @property
    def identity(self) -> Measurement:
        return self.instance.identity

    @property
    def mode(self) -> str:
        return TRUSTED if self.session is not None else PASSTHROUGH

    @property
    def approved(self) -> bool:
        return self.approval is not None and self.approval.verdict

    def approval_request(self, tb_id: Measurement, nonce: bytes, step: int) -> Report:
        self._pending_request_step = step
        return enc.ereport(self.instance, tb_id, sha256(b"sgxio-approval-request" + nonce))

    def accept_approval(self, approval_bytes: bytes, tb_report: Report) -> bool:
        """Keep the TB verdict iff it is MACed for us and bound to the report."""
        try:
            approval = Approval.from_bytes(approval_bytes)
        except ValueError:
            return False
        if not local_attest_verify(self.instance, tb_report):
            return False
        if tb_report.data != sha256(approval_bytes) or approval.issued_to != self.identity:
            return False
        if self._pending_request_step is None or approval.step < self._pending_request_step:
            return False
        self.approval, self.tb_report = approval, tb_report
        self._pending_request_step = None
        return approval.verdict

    def accept_transport(self, raw_msg: bytes) -> list[bytes]:
        """Derive the key from (sender id, nonce) and answer with an optional
        key confirmation and an authenticated status frame."""
        msg = KeyTransportMessage.from_bytes(raw_msg)
        key = key_transport_recv(self.instance, msg)
        session = TrustedPathSession(msg.sender_id, self.identity, key, "driver")
        replies = [confirm_key(key, msg)] if self.key_confirm else []
        if self.approved:
            status = b"\x01" + self.approval.to_bytes() + self.tb_report.to_bytes()
        else:
            status = b"\x00"
        replies.append(session_send(session, status))
        if self.approved:
            self.session = session
        return replies

    def route(self, event: DeviceEvent) -> tuple[str, bytes]:
        """Returns (virtual device, bytes written)."""
        if self.session is None:
            self.vdev_a.write(event.payload)
            return "A", event.payload
        frame = session_send(self.session, event.payload)
        self.vdev_b.write(frame)
        return "B", frame

    def from_app(self, frame: bytes) -> bytes:
        if self.session is None:
            raise TrustedPathError("no trusted session")
        return session_recv(self.session, frame)

    def close_session(self) -> None:
        if self.session is not None:
            self.session.mode = CLOSED
        self.session = None

    def evidence_for(self, app_id: Measurement, challenge: bytes) -> tuple[Report, Report | None, bytes | None]:
        """Report targeted at the app plus the TB's report and approval."""
        report = enc.ereport(self.instance, app_id, sha256(b"sgxio-driver-evidence" + challenge))
        approval = self.approval.to_bytes() if self.approval else None
        return report, self.tb_report, approval


Transport = Callable[[bytes], list[bytes]]


class UserAppEnclave:
    def __init__(self, instance: EnclaveInstance, policy: AppPolicy, *, key_confirm: bool = True):
        self.instance = instance
        self.policy = policy
        self.key_confirm = key_confirm
        self.sessions: dict[Measurement, TrustedPathSession] = {}
        self.tb_seen: dict[Measurement, Measurement] = {}

    @property
    def identity(self) -> Measurement:
        return self.instance.identity

    def open_trusted_path(self, driver_id: Measurement, transport: Transport,
                          rng: DeterministicRng) -> TrustedPathSession:
        if driver_id not in self.policy.drivers:
            raise ChannelRefused(f"driver {driver_id} not in app policy")
        pending = start_transport(self.instance, driver_id, rng)
        replies = list(transport(pending.message.to_bytes()))
        if self.key_confirm:
            if not replies or not pending.confirm(replies.pop(0)):
                raise ApprovalMissing("driver did not confirm the key")
        if not replies:
            raise ApprovalMissing("no status from driver")
        session = TrustedPathSession(self.identity, driver_id, pending.key, "app")
        status = session_recv(session, replies[0])
        self._check_status(driver_id, status)
        self.sessions[driver_id] = session
        return session

    def _check_status(self, driver_id: Measurement, status: bytes) -> None:
        if not status or status[0] != 1:
            raise ApprovalMissing("driver holds no TB approval")
        approval = Approval.from_bytes(status[1:1 + APPROVAL_SIZE])
        tb_report = Report.from_bytes(status[1 + APPROVAL_SIZE:])
        if not approval.verdict or approval.issued_to != driver_id:
            raise ApprovalMissing("approval not issued to this driver")
        if tb_report.enclave_id not in self.policy.tbs:
            raise ApprovalMissing(f"approval from unexpected TB {tb_report.enclave_id}")
        self.tb_seen[driver_id] = tb_report.enclave_id

    def close(self, driver_id: Measurement) -> None:
        session = self.sessions.pop(driver_id, None)
        if session is not None:
            session.mode = CLOSED

    def seal_secret(self, secret: bytes, nonce: bytes, key: bytes | None = None) -> bytes:
        return enc.seal(self.instance, secret, nonce, key)

    def unseal_secret(self, blob: bytes, key: bytes | None = None) -> bytes:
        secret = enc.unseal(self.instance, blob, key)
        # the working copy lives in enclave memory
        self.instance.store(self.instance.heap_offset, secret)
        return secret


def user_verify(app: UserAppEnclave, screen_session: TrustedPathSession | None,
                keyboard_session: TrustedPathSession | None, sealed_secret: bytes,
                display: Callable[[bytes], None], seal_key: bytes | None = None) -> str:
    """Show the provisioned secret over the trusted screen path, only when both
    trusted paths are up. ``display`` carries the frame to the screen driver."""
    if screen_session is None or keyboard_session is None:
        return ABORTED
    if screen_session.mode != TRUSTED or keyboard_session.mode != TRUSTED:
        return ABORTED
    try:
        secret = app.unseal_secret(sealed_secret, seal_key)
    except AuthFailure:
        return ABORTED
    display(session_send(screen_session, secret))
    return DISPLAYED
