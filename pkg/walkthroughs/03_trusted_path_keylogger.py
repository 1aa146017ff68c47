"""
A keylogger against the trusted path
====================================

A keyboard driver enclave serves the keyboard to the OS in plaintext until
a user app opens a trusted path. From then on keystrokes leave the driver
only as AEAD frames. Here a keylogger in the OS records everything and then
tries replaying, tampering with and forging frames.
"""

from sgxio.harness.runner import run
from sgxio.harness.scenario import resolve
from sgxio.trace import observed_bytes

result = run(resolve("s4_keylogger"), seed=11)
m = result.machine
pin = m.secrets["pin"]
greeting = m.secrets["greeting"]

# %%
# What the OS saw, as one byte stream.
seen = observed_bytes(result.trace.events, "vm-os")
print("greeting typed before the path opened is visible:", greeting in seen)
print("any 4 bytes of the PIN visible:", any(pin[i:i + 4] in seen for i in range(len(pin) - 3)))

# %%
# The app got every keystroke, each tagged with the physical key event.
inputs = result.trace.select("app_input")
print("app received PIN:", b"".join(e["data"] for e in inputs) == pin)
print("first tags:", [e["tag"] for e in inputs[:4]])

# %%
# Injected frames die at the app.
for ev in result.trace.select("frame_rejected"):
    print(ev.render())
