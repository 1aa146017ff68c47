"""
Remote attestation of the whole chain, and device spoofing
==========================================================

A remote verifier checks the user app by signature, the driver through the
app, the TB through the driver and the hypervisor through the TB's approval.
Substituting any one of them breaks the chain at exactly that link.
"""

from sgxio.harness.runner import run
from sgxio.harness.scenario import resolve

for name in ("s_chain", "s_chain_user_app", "s_chain_driver", "s_chain_tb", "s_chain_hypervisor"):
    verdict = run(resolve(name)).trace.select("chain_verdict")[0]
    print(f"{name:20s} {verdict['outcome']:7s} {verdict.get('link') or verdict.get('links')}")

# %%
# Spoofing from the OS: interrupts, MMIO and DMA are all policed by the
# hypervisor, which logs every decision.
spoof = run(resolve("s_spoof"))
for kind in ("interrupt", "mmio_claim", "dma"):
    for ev in spoof.trace.select(kind):
        print(ev.render())
