#!/usr/bin/env python3
"""Build demo assets for the browser planner: a small cohort with a strong
label model plus trained tiny checkpoints.

Usage: python3 scripts/make_demo.py [target_dir]   (default: demo/)
Then:  sofa serve --gen demo/gen --clf demo/clf --cohort demo/cohort \
           --ui frontend/dist --port 8000
"""

import json
import sys
import tempfile
from pathlib import Path

from sofa.cli import run

DEMO_CONFIG = {
    "synth": {"label": {"beta0": -2.0, "beta1": 10.0}},
}


def main() -> int:
    target = Path(sys.argv[1] if len(sys.argv) > 1 else "demo")
    target.mkdir(parents=True, exist_ok=True)
    cfg_path = target / "demo_config.json"
    cfg_path.write_text(json.dumps(DEMO_CONFIG, indent=2))
    steps = [
        ["synth", "--n", "64", "--seed", "17", "--tiny", "--config", str(cfg_path),
         "--out", str(target / "cohort")],
        ["train-gen", "--cohort", str(target / "cohort"), "--tiny",
         "--config", str(cfg_path), "--out", str(target / "gen")],
        ["train-clf", "--cohort", str(target / "cohort"), "--gen", str(target / "gen"),
         "--tiny", "--config", str(cfg_path), "--out", str(target / "clf")],
    ]
    for argv in steps:
        print("+ sofa " + " ".join(argv))
        code = run(argv)
        if code != 0:
            return code
    print(f"demo ready under {target}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
