"""
Unified Runner
Runs any censalign sub-command

Usage:
    poetry run python run.py generate --family sigmoid --out data/sigmoid.jsonl
    poetry run python run.py train --data data/sigmoid.jsonl --out results/model.json
    poetry run python run.py experiment --config exp.json --out-dir results/
"""

from censalign.cli import main

if __name__ == "__main__":
    raise SystemExit(main())
