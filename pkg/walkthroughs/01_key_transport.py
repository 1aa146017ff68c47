"""
Non-interactive key agreement between two enclaves
==================================================

Two enclaves on the same CPU agree on a 128-bit key with a single message.
The sender computes a report over a fresh nonce, targeted at the receiver,
and keeps the MAC as the key. Only its own identity and the nonce travel.
The receiver recomputes the MAC under its own report key.
"""

from sgxio import enclave as enc
from sgxio.attestation import key_transport_recv, key_transport_send, start_transport, confirm_key
from sgxio.crypto import DeterministicRng

rng = DeterministicRng(2024)
authority = enc.LaunchAuthority(rng.fork("authority"))
cpu = enc.CpuState(rng.fork("cpu"), authority.public)


def start(label, debug=True):
    image = enc.EnclaveImage((label.encode(),), debug)
    m = enc.measure(image)
    return enc.launch(cpu, image, authority.issue(m, debug), m, enc.HostContext.OS, label)


app, driver, bystander = start("user-app"), start("keyboard-driver"), start("bystander")

# %%
# The sender derives the key and produces the message (64 bytes on the wire).
key, msg = key_transport_send(app, driver.identity, rng)
print("message bytes :", len(msg.to_bytes()))
print("key           :", key.hex())

# %%
# The intended receiver gets the same key; anyone else gets noise.
print("driver agrees :", key_transport_recv(driver, msg) == key)
print("bystander     :", key_transport_recv(bystander, msg) == key)

# %%
# Optional confirmation: the receiver encrypts the nonce back. The sender
# accepts it once, so a replayed confirmation is worthless.
pending = start_transport(app, driver.identity, rng)
proof = confirm_key(key_transport_recv(driver, pending.message), pending.message)
print("confirmed     :", pending.confirm(proof))
print("replayed      :", pending.confirm(proof))
