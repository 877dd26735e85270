"""Print the covering-fibration verdicts for built-in or user fragments."""

import argparse
import json
from pathlib import Path

from fiberround.obstruction import PRESETS, decide, load_problem, preset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("fragments", nargs="*", type=Path, help="fragment JSON files")
    ap.add_argument("--dump", type=Path, help="write the built-in fragments into this directory and exit")
    args = ap.parse_args()
    if args.dump:
        args.dump.mkdir(parents=True, exist_ok=True)
        for name in ("universal-so3", "so3-over-4-manifold"):
            (args.dump / f"{name}.json").write_text(json.dumps(PRESETS[name](), indent=2) + "\n")
        return
    problems = [(str(p), load_problem(p)) for p in args.fragments] or [
        (n, preset(n)) for n in ("universal-so3", "so3-over-4-manifold")]
    for label, problem in problems:
        for propagate in (False, True):
            report, frag = decide(problem, propagate=propagate)
            print(f"{label} [{'with' if propagate else 'without'} exactness closure]: {report.line()}")
            if propagate:
                for note in frag.derivations:
                    print(f"    {note}")


if __name__ == "__main__":
    main()
