"""invarc: compile typed invariant declarations into structure-preserving
neural ODE vector fields, train them, and check that the invariants hold.
"""

__version__ = "0.1.0"
