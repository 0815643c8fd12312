"""The Export-document run: certify actors, send four slices, let everyone try to read."""
import sys
import tempfile
import time

from martsia.demo import run_demo

with tempfile.TemporaryDirectory() as out:
    start = time.perf_counter()
    report, table = run_demo(out=f"{out}/run")
    print(table)
    print(f"message {report['message_id'][:16]}...  {report['blocks']} blocks  "
          f"chain valid: {report['chain_valid']}  channels agree: {report['channel_equivalence']}")
    print(f"mismatches: {len(report['mismatches'])}  ({time.perf_counter() - start:.1f} s)")
sys.exit(1 if report["mismatches"] else 0)
