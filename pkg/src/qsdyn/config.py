"""Tunable constants and iteration budgets.

Every truncation of an infinite construction is controlled by an explicit
parameter here, so runs are reproducible and the truncation points show up
in diagnostics instead of being buried in the code.
"""

from dataclasses import dataclass, field

# Extendability margin epsilon: a branch counts as extendable when the
# cross-ratio of its maximal monotone extension exceeds this value.
EXTEND_EPSILON = 0.05

# Adjacent-branch comparability constant used by depth-of-adjacent-folding
# refinement: the new neighbor's length must be within [1/C, C] of the
# folding branch's length.
COMPARABILITY = 8.0

# A critical value closer to a domain endpoint than this fraction of the
# domain length triggers the boundary-refinement preamble of a step.
BOUNDARY_CLOSENESS = 0.1

# Default large-diamond size for plane extensions (height units).
LARGE_DIAMOND = 0.25

# Height threshold below which the height-preservation checks are run.
HEIGHT_THRESHOLD = 0.25

# Staircase construction refuses to run when dom(psi) is longer than this
# multiple of the restrictive interval (the far-away regime needs surgery
# that is out of scope here).
STAIRCASE_RATIO_BOUND = 1e3

# Root finding / property tolerances.
ROOT_TOL = 1e-12
PROP_TOL = 1e-9

# Tolerance band around 0 for symbol C in kneading itineraries.
KNEADING_TOL = 1e-13

# When True, find_preimage re-evaluates its result and asserts the residual.
# Enabled by the test suite's conftest.
CHECK_ROOTS = False


@dataclass
class RefinementBudget:
    """Caps on every 'to infinity' construction.

    max_time   : largest iterate count searched for return/branch times
    min_len    : branches shorter than this are dropped (become gaps)
    depth      : truncation depth for infinite boundary refinements
    stages     : number of pull-back stages run by staged pipelines
    fill_stages: filling-in iterations per stage
    mesh       : target mesh for the final refinement of monotone branches
    max_branches: hard cap on the branch count of any single induced map
    escape_budget: max compositions while waiting for a critical value to
                   escape an external branch
    """

    max_time: int = 24
    min_len: float = 1e-5
    depth: int = 12
    stages: int = 4
    fill_stages: int = 3
    mesh: float = 0.05
    max_branches: int = 4000
    escape_budget: int = 200
    kneading_depth: int = 48
    probe_points: int = 257
    oracle_depth: int = 52

    def scaled(self, **overrides):
        from dataclasses import replace
        return replace(self, **overrides)
