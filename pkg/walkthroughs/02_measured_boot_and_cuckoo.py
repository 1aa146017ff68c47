"""
Measured boot and the cuckoo attack
===================================

The TPM records every boot stage in a hash chain. The TB enclave checks a
quote of that chain against a golden value, but a compromised hypervisor can
forward the quote request to an attacker's TPM that replays the honest chain.
Pinning the AIK of the local TPM, provisioned once by an approved
integrator, is what catches it.
"""

from sgxio.harness.runner import run
from sgxio.harness.scenario import resolve

scenario = resolve("s2_cuckoo")
print(scenario.description)

# %%
# With the AIK pinned, the diverted quote carries the wrong signature.
pinned = run(scenario)
for ev in pinned.trace.select("hv_attest"):
    print(ev.render())
print("verdict:", "pass" if pinned.passed else "fail")

# %%
# Turn pinning off and the same attack goes through: the TB trusts whichever
# AIK answered, and the implanted hypervisor gets its drivers approved.
unpinned = run(scenario, aik_pinning=False)
for ev in unpinned.trace.select("hv_attest") + unpinned.trace.select("session_open"):
    print(ev.render())
