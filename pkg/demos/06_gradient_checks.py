"""
Trust but verify: finite-difference gradient checks
===================================================

Every backward pass in the library is hand derived, so every one of them is
checked against central finite differences: perturb each input and parameter
coordinate by +/- eps, difference the scalar loss, and compare against the
analytic gradient. The suite covers every layer type, including full
bottleneck blocks with their residual wiring.
"""

from localattn import gradcheck_suite

suite = gradcheck_suite(seed=0, tolerance=1e-4)
for line in suite.lines():
    print(line)

print()
print("all layers pass" if suite.passed else "FAILURES above")

# The same table is available from the command line:
#   python3 -m localattn.cli gradcheck
# and the full oracle + invariant + gradient battery:
#   python3 -m localattn.cli verify
