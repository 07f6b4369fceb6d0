#!/usr/bin/env python3
"""
Pylint and pyright checks for the promoalloc package
"""

import subprocess
import sys
from pathlib import Path


def _run(name: str, args: list[str]) -> bool:
    print(f"Running {name} check...")
    result = subprocess.run(args, capture_output=True, text=True, check=False)

    if result.stdout:
        print(f"\n{name} output:")
        print(result.stdout)

    if result.stderr:
        print(f"\n{name} errors:")
        print(result.stderr)

    if result.returncode != 0:
        print(f"\n{name} check failed with exit code: {result.returncode}")
        return False
    print(f"{name} check passed!")
    return True


def run_lint() -> bool:
    project_root = Path(__file__).parent.parent
    package = str(project_root / "promoalloc")

    pylint_args = [
        "pylint",
        "--disable=missing-module-docstring,missing-class-docstring,missing-function-docstring",
        "--max-line-length=120",
        # matrix and solver notation
        "--good-names=i,j,k,d,f,g,n,p,q,u,w,x,y,z,e,_",
        package,
        str(project_root / "scripts" / "reproduce_tables.py"),
    ]
    pylint_ok = _run("Pylint", pylint_args)
    pyright_ok = _run("Pyright", ["pyright", package])
    return pylint_ok and pyright_ok


if __name__ == "__main__":
    success = run_lint()
    sys.exit(0 if success else 1)
