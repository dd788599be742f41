"""Serve a synthetic estimator over the JSON-lines adapter protocol.

    python -m meshconf.adapter_worker --dataset poses.jsonl --estimator OP

Each stdin line is a request ``{"image_id": ..., "occluder": {...} | null}``;
each stdout line is ``{"joints": [...], "detected": [...]}`` or
``{"error": "..."}``. ``--max-requests`` makes the worker exit after that
many answers, which is how the crash path of a sweep gets exercised.
"""
from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence, TextIO

from .geometry import OccluderSpec
from .poses import load_dataset
from .sensitivity import AdapterError
from .synth import SyntheticAdapter


def serve(adapter: SyntheticAdapter, stdin: TextIO, stdout: TextIO, max_requests: Optional[int] = None) -> int:
    served = 0
    for line in stdin:
        if not line.strip():
            continue
        if max_requests is not None and served >= max_requests:
            return 3
        try:
            req = json.loads(line)
            occ = req.get("occluder")
            resp = adapter.estimate(req["image_id"], OccluderSpec.from_dict(occ) if occ else None).to_dict()
        except (AdapterError, KeyError, ValueError, TypeError) as exc:
            resp = {"error": str(exc)}
        stdout.write(json.dumps(resp) + "\n")
        stdout.flush()
        served += 1
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    p = argparse.ArgumentParser(prog="python -m meshconf.adapter_worker", description=__doc__.splitlines()[0])
    p.add_argument("--dataset", required=True, help="pose fixture (JSONL) the worker answers for")
    p.add_argument("--estimator", choices=("SPIN", "OP"), default="OP")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--base-error", type=float, default=4.0, help="mean unoccluded joint error")
    p.add_argument("--boost", type=float, default=3.0, help="error multiplier for joints under the occluder")
    p.add_argument("--occlusion-error", type=float, default=0.0, help="error added to joints under the occluder")
    p.add_argument("--miss-rate", type=float, default=0.0, help="probability the detector drops an occluded joint")
    p.add_argument("--max-requests", type=int, default=None, help="exit (status 3) after this many answers")
    args = p.parse_args(argv)
    adapter = SyntheticAdapter(
        load_dataset(args.dataset), args.estimator, seed=args.seed, base_error=args.base_error,
        occlusion_error=args.occlusion_error, boost=args.boost, miss_rate=args.miss_rate,
    )
    return serve(adapter, sys.stdin, sys.stdout, args.max_requests)


if __name__ == "__main__":
    sys.exit(main())
