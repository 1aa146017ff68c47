"""
Debug enclaves without debug exposure
=====================================

Enclaves built in debug mode can be read and written by whoever issues the
debug instructions. The hypervisor traps those instructions when they come
from the VM, so only the hypervisor itself may debug. Sealing keys come from
the TB, which hands them out only after the hypervisor has been attested.
"""

from sgxio.harness.runner import run
from sgxio.harness.scenario import resolve
from sgxio.trace import observed_bytes

sc = resolve("s5_debug_tweak")
for tweak in (True, False):
    result = run(sc, encls_tweak=tweak)
    phrase = result.machine.secrets["phrase"]
    outcomes = sorted({(e["caller"], e["enclave"], e["outcome"]) for e in result.trace.select("debug_op")})
    print(f"tweak={tweak}")
    for row in outcomes:
        print("   ", *row)
    print("    secret visible to OS:", phrase in observed_bytes(result.trace.events, "vm-os"))

# %%
# Under an implanted hypervisor that disables the trap, the TB refuses to
# re-derive the sealing key, so there is nothing in memory to steal.
bad = run(resolve("s5b_compromised_hypervisor"))
for ev in bad.trace.select("seal_delegation") + bad.trace.select("user_verify"):
    print(ev.render())
