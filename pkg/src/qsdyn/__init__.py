"""qsdyn: induced first-return maps, branchwise equivalences and
quasisymmetric conjugacy machinery for S-unimodal interval maps."""

__version__ = "0.1.0"

from .core import (Interval, PlanePoint, Diamond, HomographyFix, cross_ratio,
                   poincare_length, height, diamond_contains,
                   delta_of_homography, find_preimage)
from .unimodal import (UnimodalMap, QuadraticFamily, ConjugatedQuadratic,
                       KneadingSequence, CEFit, make_map, load_map_spec,
                       dump_map_spec, validate_class_C, fixed_point_q,
                       kneading_sequence, conjugacy_oracle,
                       collet_eckmann_check)
from .config import RefinementBudget
