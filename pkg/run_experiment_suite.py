"""
Experiment Suite Orchestrator
Runs the synthetic presets in sequence: d3 -> zero -> dim -> tanh -> dpi -> bench sweeps
"""
import argparse
import sys
import time
import subprocess
from datetime import datetime
from pathlib import Path

from settings import BASE_DIR, DEFAULT_OUT_DIR

LOG_FILE = BASE_DIR / "experiment_suite.log"

QUICK_FLAGS = ["--n", "4000", "--trials", "1", "--epochs", "5"]


def log(message, log_file=None):
    timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
    msg = f"[{timestamp}] {message}"
    print(msg)
    with open(log_file or LOG_FILE, "a") as f:
        f.write(msg + "\n")


def build_steps(quick=False, out_dir=DEFAULT_OUT_DIR, seed=0):
    """(description, cli arguments) for every experiment, in run order."""
    common = ["--out-dir", str(out_dir), "--seed", str(seed)]
    # (description, arguments, extra arguments for --quick); argparse keeps the last value of a flag
    steps = [
        ("I(X;Y|Z), d=3 vs MI-Diff", ["synth", "--preset", "d3", "--estimators", "dv,nwj,ldr,midiff",
                                      "--track-epochs"], []),
        ("Zero CMI I(X;Z|Y)", ["synth", "--preset", "zero"], []),
        ("Data dimension d=10", ["synth", "--preset", "dim", "--d", "10", "--n", "200000", "--tau", "3e-5"], []),
        ("Non-linear tanh(0.05x)", ["synth", "--preset", "tanh", "--estimators", "dv,nwj,ldr,midiff"], []),
        ("Additivity and DPI, rho=0.3", ["synth", "--preset", "dpi", "--rho", "0.3", "--n", "200000"], []),
        ("Sweep over n", ["bench", "--axis", "n", "--values", "5000,10000,20000,40000,80000"],
         ["--values", "1000,2000"]),
        ("Sweep over k", ["bench", "--axis", "k", "--values", "1,2,5,10,20"], ["--values", "1,2"]),
        ("Sweep at fixed k/n", ["bench", "--axis", "ratio", "--k", "20", "--n", "20000",
                                "--values", "5000,10000,20000,40000"], ["--k", "2", "--values", "1000,2000"]),
    ]
    return [(desc, args + (QUICK_FLAGS + extra if quick else []) + common) for desc, args, extra in steps]


def run_step(description, cli_args, log_file=None):
    log(f"🚀 Starting: {description}...", log_file)
    start_time = time.time()

    try:
        # Run as a subprocess to ensure clean state
        result = subprocess.run(
            [sys.executable, str(BASE_DIR / "cli.py"), *cli_args],
            cwd=BASE_DIR,
            capture_output=True,
            text=True
        )
        duration = time.time() - start_time

        if result.returncode == 0:
            log(f"✅ Completed: {description} in {duration:.2f}s", log_file)
            log(f"Output:\n{result.stdout}", log_file)
            return True
        log(f"❌ Failed: {description}", log_file)
        log(f"Error Output:\n{result.stderr}", log_file)
        return False

    except OSError as e:
        log(f"❌ Exception running {description}: {e}", log_file)
        return False


def main(argv=None):
    parser = argparse.ArgumentParser(description="Run every synthetic experiment through cli.py")
    parser.add_argument("--quick", action="store_true", help="tiny sizes for a smoke run")
    parser.add_argument("--out-dir", type=str, default=str(DEFAULT_OUT_DIR))
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    log("=" * 50)
    log("🧪 Starting Experiment Suite" + (" (quick)" if args.quick else ""))
    log("=" * 50)

    for description, cli_args in build_steps(args.quick, Path(args.out_dir), args.seed):
        if not run_step(description, cli_args):
            log(f"⛔ Stopping suite due to failure in: {description}")
            return 1

    log("=" * 50)
    log("🎉 Experiment Suite Completed Successfully")
    log("=" * 50)
    return 0


if __name__ == "__main__":
    sys.exit(main())
