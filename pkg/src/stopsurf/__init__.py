"""stopsurf: a numerical laboratory for two-dimensional optimal stopping.

Solves time-inhomogeneous obstacle problems for jump-diffusions on a
truncated box, extracts the optimal stopping surface x*(t, y), verifies
the checkable local hypotheses behind boundary continuity, and validates
the solve pathwise by simulation.
"""

__version__ = "0.1.0"
