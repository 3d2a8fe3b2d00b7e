#!/usr/bin/env python3
"""Write the synthetic fixture bundles to disk so the CLI can run on them.

Usage: python scripts/make_fixtures.py [DEST]   (default: data/)
"""

import sys
from pathlib import Path

from gsan.graph import save_bundle
from gsan.synthetic import inductive_toy_bundle, sbm_bundle


def main() -> int:
    dest = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("data")
    jobs = {
        "sbm30": sbm_bundle(seed=3),
        "sbm80": sbm_bundle(n=80, sizes=(24, 16, 40), seed=0),
        "toy-ppi": inductive_toy_bundle(seed=1),
    }
    for name, bundle in jobs.items():
        save_bundle(bundle, dest / name)
        print(f"wrote {dest / name} ({bundle.task}, {len(bundle.graphs)} graph(s))")
    return 0


if __name__ == "__main__":
    sys.exit(main())
