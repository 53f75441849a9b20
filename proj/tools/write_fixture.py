#!/usr/bin/env python3
"""Writes a reference .actrun file from FORMAT.md alone, independent of the
C++ writer. Values are multiples of 1/8 so float32 holds them exactly.

    python3 tools/write_fixture.py tests/fixtures/extractor_n200_l25_d64.actrun
"""

import json
import struct
import sys
import zlib

import numpy as np

N, L, D = 200, 25, 64
ROLES = ["sample", "output"]


def value_grid(role_index):
    l = np.arange(L).reshape(L, 1, 1)
    n = np.arange(N).reshape(1, N, 1)
    k = np.arange(D).reshape(1, 1, D)
    return (((l * 31 + n * 17 + k * 7 + role_index * 13) % 1000) / 8.0 - 60.0).astype("<f4")


def manifest():
    instances = []
    for i in range(N):
        acceptable = i % 2 == 0
        answer_yes = (i % 3) != 0
        instances.append({
            "id": "blimp-%05d/%s" % (i // 2, "acc" if acceptable else "unacc"),
            "label": "acceptable" if acceptable else "unacceptable",
            "generated_text": "yes" if answer_yes else "no",
            "em_correct": answer_yes == acceptable,
            "predicted_label": "acceptable" if answer_yes else "unacceptable",
        })
    return {
        "format_version": 1,
        "model_id": "fixture-extractor",
        "task": "blimp",
        "variation": "instruction_first",
        "sanity": "none",
        "intervention": "none",
        "num_layers": L,
        "hidden_dim": D,
        "roles": ROLES,
        "degraded": False,
        "instances": instances,
        "notes": {"writer": "write_fixture.py", "output_states": "reencode"},
    }


def main(path):
    text = json.dumps(manifest(), separators=(",", ":")).encode("utf-8")
    tensors = b"".join(value_grid(r).tobytes() for r in range(len(ROLES)))
    crc = zlib.crc32(tensors, zlib.crc32(text)) & 0xFFFFFFFF
    with open(path, "wb") as f:
        f.write(b"ACTR")
        f.write(struct.pack("<IQII", 1, len(text), crc, 0))
        f.write(text)
        f.write(tensors)


if __name__ == "__main__":
    main(sys.argv[1])
