"""Causal deep Q-learning on a from-scratch cart-pole.

A stratified interventional effect estimate (PEACE) computed per minibatch
is injected into the DQN loss as a reciprocal penalty, next to a plain DQN
baseline, a synthetic-SCM validation sandbox for the estimator, and a
seeded deterministic training/duel harness.
"""

__version__ = "0.1.0"
