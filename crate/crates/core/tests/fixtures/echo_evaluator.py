#!/usr/bin/env python3
"""Minimal merge-bbo/1 evaluator used by the client tests.

objective = mean of the scaling weights of active layers (0 when none are
active); score = 1 - objective / 2. Inactive weights are never read.

Flags:
  --space N,L        advertise this space in the handshake
  --protocol NAME    advertise a different protocol
  --error-after K    answer request K+1 onward with an error object
  --crash-after K    exit after answering K requests
  --wrong-id-after K echo a wrong id from request K+1 onward
"""

import argparse
import json
import sys


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--space", default=None)
    ap.add_argument("--protocol", default="merge-bbo/1")
    ap.add_argument("--error-after", type=int, default=None)
    ap.add_argument("--crash-after", type=int, default=None)
    ap.add_argument("--wrong-id-after", type=int, default=None)
    args = ap.parse_args()

    hello = {"protocol": args.protocol}
    if args.space:
        n, l = (int(v) for v in args.space.split(","))
        hello["space"] = {"n_models": n, "n_layers": l}
    print(json.dumps(hello), flush=True)

    served = 0
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        if args.crash_after is not None and served >= args.crash_after:
            sys.exit(1)
        try:
            req = json.loads(line)
            rid = req["id"]
            z, x = req["z"], req["x"]
        except (ValueError, KeyError, TypeError) as exc:
            print(json.dumps({"id": -1, "error": f"malformed request: {exc}"}), flush=True)
            continue

        if args.error_after is not None and served >= args.error_after:
            resp = {"id": rid, "error": "injected failure"}
        else:
            active = [xi for zi, xi in zip(z, x) if zi]
            obj = sum(active) / len(active) if active else 0.0
            resp = {"id": rid, "objective": obj, "score": min(1.0, max(0.0, 1.0 - obj / 2.0))}
        if args.wrong_id_after is not None and served >= args.wrong_id_after:
            resp["id"] = rid + 1000
        print(json.dumps(resp), flush=True)
        served += 1


if __name__ == "__main__":
    main()
