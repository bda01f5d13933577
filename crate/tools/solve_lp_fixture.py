"""Solve every .lp file in a directory with HiGHS and print `name,objective` CSV.

Used to refresh crates/nnopf/tests/fixtures/case9_dcopf_highs.csv:

    cargo test -p nnopf --test acceptance -- --write-lp /tmp/lp
    python3 tools/solve_lp_fixture.py /tmp/lp > crates/nnopf/tests/fixtures/case9_dcopf_highs.csv
"""

import sys
from pathlib import Path

import highspy


def solve(path: Path) -> float:
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.setOptionValue("primal_feasibility_tolerance", 1e-9)
    h.setOptionValue("dual_feasibility_tolerance", 1e-9)
    h.readModel(str(path))
    h.run()
    status = h.modelStatusToString(h.getModelStatus())
    if status != "Optimal":
        raise SystemExit(f"{path.name}: {status}")
    return h.getInfo().objective_function_value


def main() -> None:
    files = sorted(Path(sys.argv[1]).glob("*.lp"))
    print("name,objective")
    for f in files:
        print(f"{f.stem},{solve(f)!r}")


if __name__ == "__main__":
    main()
