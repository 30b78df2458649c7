"""
Run script for the keyword spotting toolkit
This script:
1. Pins BLAS/OpenMP to one thread when --single-thread is given
2. Checks that the required packages are importable
3. Hands the command line to kwskit.cli
"""

import importlib
import os
import sys

SINGLE_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                      "VECLIB_MAXIMUM_THREADS", "NUMEXPR_NUM_THREADS")


def pin_threads(argv):
    """Must run before numpy is imported for the limits to take effect"""
    if "--single-thread" in argv:
        for name in SINGLE_THREAD_VARS:
            os.environ[name] = "1"


def check_dependencies():
    """
    Check that the required Python modules are installed

    Returns:
        bool: True if all required modules import, False otherwise
    """
    required_modules = ["numpy", "scipy", "librosa", "soundfile", "pandas", "tqdm", "dotenv"]
    optional_modules = ["matplotlib"]

    missing_required = []
    for module in required_modules:
        try:
            importlib.import_module(module)
        except ImportError:
            missing_required.append(module)

    missing_optional = []
    for module in optional_modules:
        try:
            importlib.import_module(module)
        except ImportError:
            missing_optional.append(module)

    if missing_required:
        print(f"Missing required modules: {', '.join(missing_required)}", file=sys.stderr)
        print("Please run: pip install -r requirements.txt", file=sys.stderr)
        return False
    if missing_optional:
        print(f"Optional modules not found: {', '.join(missing_optional)} "
              f"(report --plots will be skipped)", file=sys.stderr)
    return True


def run_app(argv=None):
    """Run one toolkit command and exit with its status"""
    argv = sys.argv[1:] if argv is None else argv
    pin_threads(argv)
    if not check_dependencies():
        sys.exit(1)

    from kwskit.cli import main

    try:
        sys.exit(main(argv))
    except KeyboardInterrupt:
        print("\nInterrupted by user.", file=sys.stderr)
        sys.exit(130)


if __name__ == "__main__":
    run_app()
