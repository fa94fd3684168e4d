"""Network intervention managers for Prisoner's Dilemma populations.

A system manager toggles one link per step on a connected interaction graph.
Agents play PD with their neighbours and imitate better-off neighbours.
Three managers are provided: hierarchical graph RL (node agent + link agent),
a flat DQN over all node pairs, and a uniform random baseline.
"""

__version__ = "0.1.0"
