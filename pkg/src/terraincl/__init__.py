"""Continual reinforcement learning harness for terrain-incremental locomotion.

Trains a PPO agent on a fixed sequence of procedurally generated terrains
while a frozen-policy validation pool measures skill retention and transfer
on every terrain in parallel.
"""

__version__ = "0.1.0"
