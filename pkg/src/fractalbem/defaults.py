"""Numerical defaults shared by the library and the command line.

Every tunable used by more than one module lives here so that the CLI can
document it in ``--help`` and tests can refer to a single source.
"""

#: wavenumber of the incident field
K = 5.0
#: pairs of cells are near when the bounding-ball gap is below ``ETA`` times the larger diameter
ETA = 1.0
#: relative piece size of the tensor rule for the nearest separated pairs and the right-hand side
RULE_FINE = 0.25
#: relative piece size of the tensor rule for the smooth rest on unseparated pairs
RULE_NEAR = 0.125
#: relative piece size for pairs at intermediate distance
RULE_MID = 0.5
#: gap / diameter beyond which the intermediate rule is used
TIER_MID = 3.0
#: gap / diameter beyond which a single barycenter node per cell is used
TIER_FAR = 8.0
#: relative rule size inside the self-similar closure for the static singular part
CLOSURE_RULE = 0.125
#: field quadrature pieces satisfy ``diam <= FIELD_THETA * distance`` to the evaluation point
FIELD_THETA = 0.25
#: recursion depth cap for the subdivision quadrature
DEPTH_CAP = 8
#: mesh parameter of the reference solution relative to the finest study mesh
REFERENCE_FACTOR = 4.0
#: samples for Monte-Carlo probes
SAMPLES = 100_000
#: significant digits of every floating-point number written to JSON/CSV
DIGITS = 17
