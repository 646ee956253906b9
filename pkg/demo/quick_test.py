"""
Quick Test Script

Runs SVGD and noisy SVGD on a small Gaussian problem and prints the
diagnostics. Run this first to verify your setup works.
"""
import sys
import os

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.dynamics import run
from src.oracle import mv_reference_flow, ou_variance
from src.kernels import ZeroKernel
from src.run_config import RunConfig, validate_config
from src.targets import standard_gaussian


def quick_test():
    """Short runs of both samplers plus one reference flow"""
    print("=" * 60)
    print("Quick Noisy SVGD Test")
    print("=" * 60)
    print()

    try:
        # Test 1: Config and contract probes
        print("1. Validating a d=10 Gaussian config...")
        base = RunConfig(n=50, d=10, target="gauss(10)", iterations=100, record_every=50,
                         metrics=("damv", "ksd", "proxy"))
        validated = validate_config(base)
        for name, status in sorted(validated.assumptions.items()):
            print(f"   {name}: {status}")
        print()

        # Test 2: SVGD against noisy SVGD
        print("2. Running SVGD (lam=0) and noisy SVGD (lam=1)...")
        results = {}
        for lam in (0.0, 1.0):
            _, records = run(base.with_overrides(lam=lam))
            final = records[-1]
            results[lam] = final
            print(f"   lam={lam:g}: DAMV={final.damv:.4f}  KSD^2={final.ksd_squared:.4g}  "
                  f"proxy KL={final.proxy_kl:.4g}")
        print()

        # Test 3: Reference flow against the Ornstein-Uhlenbeck variance
        print("3. Running the zero-kernel reference flow from N(0, 4)...")
        flow = mv_reference_flow(standard_gaussian(1), ZeroKernel(), 1.0, n_ref=2000,
                                 dt=0.01, horizon=1.0, seed=0, init="gauss(2.0)", snapshot_every=50)
        for snapshot in flow:
            expected = ou_variance(snapshot.t, 4.0)
            print(f"   t={snapshot.t:.2f}: variance {snapshot.positions.var():.3f} "
                  f"(closed form {expected:.3f})")
        print()

        # Summary
        print("=" * 60)
        print("Test Summary")
        print("=" * 60)
        collapse = results[0.0].damv < results[1.0].damv
        print(f"{'✅' if collapse else 'ℹ️ '} SVGD DAMV below noisy SVGD DAMV: {collapse}")
        print()
        print("=" * 60)
        print("✅ All tests completed!")
        print("=" * 60)
        print()
        print("Next step: Run 'python -m src.cli figure1 --set dims=[1,5,20] --set seeds=2'")

    except Exception as e:
        print()
        print("=" * 60)
        print("❌ Test failed!")
        print("=" * 60)
        print(f"Error: {e}")
        import traceback
        traceback.print_exc()
        print()
        print("Troubleshooting:")
        print("1. Install requirements: pip install -r requirements.txt")
        print("2. Run from the repository root")
        return False

    return True


if __name__ == "__main__":
    quick_test()
