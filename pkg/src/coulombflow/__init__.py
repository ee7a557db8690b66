"""coulombflow: a numerical laboratory for log-gas particle systems,
their mean-field Coulomb transport equation, and the free-entropy
gradient-flow structure connecting the two.
"""

__version__ = "0.1.0"
