from __future__ import annotations

import argparse
import json
from pathlib import Path

from app.models.config import load_config, validate_config
from app.services.experiments import FIGURES, run_figure
from app.settings import configure_logging


def main() -> int:
    parser = argparse.ArgumentParser(description="Write CSV + gnuplot stubs for every figure recipe")
    parser.add_argument("--configs", default="configs", help="Directory holding fig2.toml..fig5.toml")
    parser.add_argument("--out-dir", default="data/results", help="Output directory")
    parser.add_argument("--trials", type=int, help="Override trials per point")
    parser.add_argument("--only", choices=FIGURES, action="append", help="Restrict to these figures")
    args = parser.parse_args()
    configure_logging()

    written: dict[str, list[str]] = {}
    for figure in args.only or FIGURES:
        config = load_config(Path(args.configs) / f"{figure}.toml")
        if args.trials is not None:
            config = validate_config({**config.model_dump(), "trials": args.trials})
        outcome = run_figure(config, figure, Path(args.out_dir) / f"{figure}.csv")
        for line in outcome.summary:
            print(line)
        written[figure] = outcome.files

    print(json.dumps({"written": written}, ensure_ascii=False, indent=2))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
