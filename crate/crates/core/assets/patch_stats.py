#!/usr/bin/env python3
"""Toy patch model speaking the sfa line protocol.

Layer "stats" answers with [mean, min, max] of the luminance samples.
Layer "maps" answers with a 2x2x2 feature-map stack: quadrant means and
quadrant means squared over 255.
"""
import json
import sys


def quadrant_means(data, size):
    half = size // 2
    out = []
    for qy in (0, 1):
        for qx in (0, 1):
            vals = [data[y * size + x]
                    for y in range(qy * half, (qy + 1) * half)
                    for x in range(qx * half, (qx + 1) * half)]
            out.append(sum(vals) / len(vals))
    return out


for line in sys.stdin:
    req = json.loads(line)
    channels, size, _ = req["shape"]
    data = req["data"][: size * size]
    if req["layer_tag"] == "stats":
        resp = {"features": [sum(data) / len(data), min(data), max(data)]}
    elif req["layer_tag"] == "maps":
        q = quadrant_means(data, size)
        resp = {"feature_maps": {"shape": [2, 2, 2], "data": q + [v * v / 255.0 for v in q]}}
    else:
        resp = {"error": "unknown layer " + req["layer_tag"]}
    sys.stdout.write(json.dumps(resp) + "\n")
    sys.stdout.flush()
