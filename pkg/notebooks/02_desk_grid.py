import sys
from pathlib import Path

PROJECT_ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(PROJECT_ROOT))

from src.harness import Workspace, run_grid
from src.reporting import aggregate_results, directional_checks, write_report


def main():
    grid_dir = PROJECT_ROOT / "configs" / "desk_grid"
    ws = Workspace(PROJECT_ROOT / "outputs" / "workspace")

    # Run (or reuse) every experiment for every seed
    results = run_grid(ws, grid_dir)

    # Tables + checks
    paths = write_report(results, ws.reports_dir(), "desk_grid", experiments_root=ws.root / "experiments")
    checks = directional_checks(aggregate_results(results))

    print("Done.")
    print(f"Report:  {paths['markdown']}")
    print(f"Results: {paths['csv']}")
    print(checks.to_string(index=False))


if __name__ == "__main__":
    main()
