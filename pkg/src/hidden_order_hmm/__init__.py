"""
Hidden Order HMM

Detects hidden-order patches in the transaction-sign series of market members
with hidden Markov and hidden semi-Markov models, and computes the statistical
characterization of the detected patches.
"""

__version__ = "0.1.0"
