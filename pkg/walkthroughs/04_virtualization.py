"""
Enclave virtualization
======================

Genuine enclave code can be run by the attacker inside the OS. Its keys are
real, so the only thing standing between it and the user app is that the
hypervisor never grants the OS the TPM or a TB channel. Exposing the TPM to
the OS shows what happens when that mediation is missing.
"""

from sgxio.harness.runner import run
from sgxio.harness.scenario import resolve

for name in ("s3a_virtual_tb", "s3b_virtual_path"):
    sc = resolve(name)
    print(f"== {name}: {sc.description}")
    for label, kw in (("mediated", {}), ("exposed", {"expose_tpm_to_os": True})):
        result = run(sc, **kw)
        fake = len(result.trace.select("app_input", origin="fake"))
        opened = [e["outcome"] for e in result.trace.select("session_open")]
        print(f"  {label:9s} session={opened} fake keystrokes accepted={fake}")

# %%
# The capability audit notices the exposed configuration immediately.
exposed = run(resolve("s3a_virtual_tb"), expose_tpm_to_os=True)
for ev in exposed.trace.select("capability_violation"):
    print(ev.render())
