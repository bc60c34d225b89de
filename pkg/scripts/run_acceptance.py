#!/usr/bin/env python3
"""Run the numbered acceptance experiments and write a summary JSON.

Each criterion writes its own ``report.json`` under ``<output>/criterion_NN/``;
the summary lists pass/fail per criterion and the wall time it took.

Typical usage:

    python3 scripts/run_acceptance.py --output acceptance
    python3 scripts/run_acceptance.py --only 4 5 7 --quick

Notes:
- Full-scale criteria integrate long orbits (Lorenz, horizons up to 1e4);
  expect several minutes for the whole set.
- ``--quick`` shortens horizons and sample counts for a smoke run; verdicts at
  that scale are indicative only.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from quasiergodic import __version__  # noqa: E402
from quasiergodic.experiments import CRITERIA, run_criterion  # noqa: E402
from quasiergodic.reports import read_json, write_json  # noqa: E402


def _repo_root() -> Path:
    return Path(__file__).resolve().parents[1]


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument(
        "--output",
        default=str(_repo_root() / "acceptance"),
        help="Output directory (default: repo-root/acceptance)",
    )
    parser.add_argument(
        "--only",
        nargs="+",
        type=int,
        choices=sorted(CRITERIA),
        help="Criterion numbers to run (default: all)",
    )
    parser.add_argument(
        "--quick",
        action=argparse.BooleanOptionalAction,
        default=False,
        help="Reduced horizons and sample counts. Default: false",
    )
    parser.add_argument("--verbose", action="store_true", help="Debug logging")

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    out_dir = Path(args.output).expanduser().resolve()
    selected = args.only or sorted(CRITERIA)

    summary = {
        "generated_at": datetime.now(timezone.utc).isoformat(),
        "tool_version": __version__,
        "quick": bool(args.quick),
        "criteria": [],
    }

    for i, criterion in enumerate(selected, 1):
        title = CRITERIA[criterion][0]
        print(f"[{i}/{len(selected)}] criterion {criterion}: {title} ...", flush=True)
        started = time.perf_counter()
        report_path = run_criterion(criterion, out_dir / f"criterion_{criterion:02d}", args.quick)
        elapsed = time.perf_counter() - started
        report = read_json(report_path)
        passed = bool(report["results"].get("passed"))
        print(f"  -> {'pass' if passed else 'FAIL'} in {elapsed:.1f} s"
              + (" (partial)" if report["partial"] else ""))
        summary["criteria"].append({
            "criterion": criterion,
            "title": title,
            "passed": passed,
            "partial": report["partial"],
            "seconds": round(elapsed, 3),
            "report": report_path.relative_to(out_dir).as_posix(),
        })

    summary_path = write_json(out_dir / "summary.json", summary)
    failed = [c["criterion"] for c in summary["criteria"] if not c["passed"]]
    print(f"Wrote {summary_path}")
    if failed:
        print(f"Failed criteria: {failed}")
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
