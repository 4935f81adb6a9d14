"""Cooperative lane-merge coordination: dataset tooling, learners, DQN planner, orchestrator and simulator."""

__version__ = "0.1.0"
