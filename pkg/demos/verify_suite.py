"""Run the package's self-verification suite and print the report.

Five independent oracles check the math end to end: the collision transfer
inequality on exactly enumerable instances, brute-force collision statistics,
divergence closed forms against Monte Carlo, objective gradients against
finite differences, and simulated coverage of the fixed-lambda bound. The
same suite backs the `pbcurl verify` CLI command. About five seconds.
"""

import json

from pbcurl.oracle import run_verify_suite

report = run_verify_suite()
print(json.dumps(report, indent=2, sort_keys=True))
print()
print("all passed:", report["all_passed"])
