"""Recompute the golden PCR for a scenario's boot stages.

Independent of the package: plain hashlib over the stage blobs, starting from
an all-zero register. Usage: python3 tools/golden_pcr.py <scenario.yaml>...
"""

import hashlib
import sys

import yaml


def golden(blobs):
    pcr = bytes(32)
    for blob in blobs:
        pcr = hashlib.sha256(pcr + hashlib.sha256(blob).digest()).digest()
    return pcr


def main(paths):
    status = 0
    for path in paths:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
        stages = [bytes.fromhex(s["blob"]) for s in doc["boot"]["stages"]]
        want = golden(stages).hex()
        have = doc["boot"]["golden_pcr"]
        mark = "ok" if want == have else "MISMATCH"
        status |= want != have
        print(f"{mark} {path} {want}")
    return status


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
