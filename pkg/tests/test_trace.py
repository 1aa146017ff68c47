from sgxio.trace import Trace, in_order, observed_bytes, render_value, substring_absent, windows


def test_rendering():
    t = Trace()
    ev = t.emit("vm-os", "vdev_read", device="kbd-B", data=b"\x01\xff", ok=True, none=None, text="a b")
    assert ev.render() == "step=0 domain=vm-os event=vdev_read device=kbd-B data=01ff ok=true none=- text=a_b"
    assert render_value(b"") == "-"
    assert t.render().endswith("\n")


def test_matching_and_select():
    t = Trace()
    t.emit("hypervisor", "dma", base=0x100, outcome="deny")
    t.emit("hypervisor", "dma", base=0x200, outcome="allow")
    assert [e.step for e in t.select("dma", outcome="deny")] == [0]
    assert t.events[0].matches(base=256, domain="hypervisor")
    assert not t.events[0].matches(missing=1)


def test_substring_scan_oracle():
    t = Trace()
    secret = bytes(range(16))
    t.emit("vm-os", "a", data=b"xx" + secret[:3])
    t.emit("enclave(ua)", "b", data=secret)
    assert substring_absent(t.events, secret, domain="vm-os", window=4)
    t.emit("vm-os", "c", data=secret[3:4] + b"yy")
    # windows may straddle event boundaries
    assert not substring_absent(t.events, secret, domain="vm-os", window=4)
    assert observed_bytes(t.events, "enclave(ua)") == secret
    assert len(windows(secret, 4)) == 13 and windows(b"ab", 4) == [b"ab"]


def test_order():
    t = Trace()
    for name in ("boot", "attest", "approve", "session"):
        t.emit("x", name)
    assert in_order(t.events, ["boot", "approve", "session"])
    assert not in_order(t.events, ["session", "boot"])
