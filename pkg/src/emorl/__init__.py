"""Offline reinforcement learning benchmark for an emotion-adaptive game robot.

Modules: ``mdp`` (states, actions, rewards), ``dataset`` (transition logs),
``sim`` (simulated behaviour data and the exact Q* oracle), ``network``
(numpy MLP with manual backprop), ``algos`` (NFQ, DQN, DDQN, BCQ, CQL),
``train`` (runs and grid search), ``evaluate`` (V(s0) and the report) and
``cli``.
"""

__version__ = "0.1.0"
