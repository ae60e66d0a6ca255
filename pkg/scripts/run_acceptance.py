"""Run the acceptance checks and print one PASS/FAIL line per criterion.

    python scripts/run_acceptance.py
"""
import os
import subprocess
import sys

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def main():
    proc = subprocess.run([sys.executable, "-m", "pytest", "-s", "-q", "-p", "no:cacheprovider",
                           os.path.join(ROOT, "tests", "test_acceptance.py")],
                          capture_output=True, text=True, cwd=ROOT)
    lines = [ln for ln in proc.stdout.splitlines() if ln.startswith("criterion ")]
    print("\n".join(lines))
    print(f"{sum('PASS' in ln for ln in lines)}/{len(lines)} criteria pass")
    return 0 if lines and all("PASS" in ln for ln in lines) else 1


if __name__ == "__main__":
    sys.exit(main())
