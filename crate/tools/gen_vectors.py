#!/usr/bin/env python3
"""Regenerates the golden hash vectors under crates/cli/vectors/.

Straight-line reference implementation of the Merkle and log-entry hash
encodings, independent of the Rust code paths it checks:

  leaf        = sha256(0x00 || data)
  node        = sha256(0x01 || left || right)        (odd nodes promote)
  op bytes    = origin u32be || seq u64be || stamp u64be || tag u8
                || keylen u32be || key || arg i64be   (tag: 1=inc, 2=write)
  entry hash  = sha256(len(op) u32be || op || t u64be || prev)
"""

import hashlib
import json
import os
import struct

OUT_DIR = os.path.join(os.path.dirname(__file__), "..", "crates", "cli", "vectors")


def sha(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def merkle_root(leaves):
    level = [sha(b"\x00" + leaf) for leaf in leaves]
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level) - 1, 2):
            nxt.append(sha(b"\x01" + level[i] + level[i + 1]))
        if len(level) % 2 == 1:
            nxt.append(level[-1])
        level = nxt
    return level[0]


def merkle_cases():
    cases = []
    for n in (1, 2, 4, 5):
        leaves = [f"leaf-{i}".encode() for i in range(n)]
        cases.append(
            {
                "leaves_hex": [l.hex() for l in leaves],
                "root_hex": merkle_root(leaves).hex(),
            }
        )
    return {"cases": cases}


def op_bytes(origin, seq, stamp, effect):
    tag = 1 if effect["kind"] == "inc" else 2
    key = effect["key"].encode()
    arg = effect.get("amount", effect.get("value"))
    return (
        struct.pack(">I", origin)
        + struct.pack(">Q", seq)
        + struct.pack(">Q", stamp)
        + bytes([tag])
        + struct.pack(">I", len(key))
        + key
        + struct.pack(">q", arg)
    )


def entry_hash(op, t, prev):
    return sha(struct.pack(">I", len(op)) + op + struct.pack(">Q", t) + prev)


def chain_case():
    specs = [
        (0, 0, 1, {"kind": "inc", "key": "c", "amount": 2}, 1),
        (1, 0, 2, {"kind": "write", "key": "x", "value": -5}, 3),
        (0, 1, 4, {"kind": "write", "key": "the-key", "value": 7}, 4),
        (2, 0, 6, {"kind": "inc", "key": "c", "amount": 1}, 9),
    ]
    prev = b"\x00" * 32
    entries = []
    for origin, seq, stamp, effect, t in specs:
        op = op_bytes(origin, seq, stamp, effect)
        h = entry_hash(op, t, prev)
        entries.append(
            {
                "origin": origin,
                "seq": seq,
                "stamp": stamp,
                "effect": effect,
                "t": t,
                "prev_hex": prev.hex(),
                "entry_hex": h.hex(),
            }
        )
        prev = h
    return {"entries": entries}


def main():
    os.makedirs(OUT_DIR, exist_ok=True)
    with open(os.path.join(OUT_DIR, "merkle.json"), "w") as f:
        json.dump(merkle_cases(), f, indent=2)
        f.write("\n")
    with open(os.path.join(OUT_DIR, "chain.json"), "w") as f:
        json.dump(chain_case(), f, indent=2)
        f.write("\n")
    print(f"wrote vectors to {os.path.normpath(OUT_DIR)}")


if __name__ == "__main__":
    main()
