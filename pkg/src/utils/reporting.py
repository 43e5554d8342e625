"""
Console formatting shared by the test scripts and verify_acceptance.py.
"""
import time
import traceback
from typing import Callable, List, Sequence, Tuple


def print_header(title):
    """Print a formatted section header."""
    print(f"\n{'='*60}")
    print(f"🧪 {title}")
    print(f"{'='*60}")


def print_task(task, status="testing"):
    """Print task status."""
    status_icon = {"testing": "🔄", "pass": "✅", "fail": "❌", "skip": "⏭️"}.get(status, "❓")
    print(f"{status_icon} {task}")


def run_test_functions(title: str, tests: Sequence[Tuple[str, Callable[[], None]]],
                       verbose_failures: bool = False) -> bool:
    """
    Run plain-assert test functions and print a pass/fail summary.

    Args:
        title: Header printed before the run
        tests: (name, function) pairs; a function passes when it returns without raising
        verbose_failures: Print the traceback of each failure

    Returns:
        True when every test passed
    """
    print_header(title)
    results: List[Tuple[str, bool]] = []
    for name, func in tests:
        start = time.time()
        try:
            func()
            print_task(f"{name} ({time.time() - start:.2f}s)", "pass")
            results.append((name, True))
        except Exception as e:
            print_task(f"{name}: {type(e).__name__}: {e}", "fail")
            if verbose_failures:
                traceback.print_exc()
            results.append((name, False))

    passed = sum(1 for _, ok in results if ok)
    print(f"\nTests Passed: {passed}/{len(results)}")
    if passed != len(results):
        print(f"❌ {len(results) - passed} tests failed: "
              + ', '.join(name for name, ok in results if not ok))
    return passed == len(results)
