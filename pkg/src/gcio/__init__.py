"""Goal-conditioned control policies trained on trajectory optimization.

The pipeline: sample tasks from a system's task distribution, solve each
as a multiple-shooting NLP, relabel intermediate states as goals to
multiply the training data, fit a small MLP policy by behavior cloning,
and evaluate success rate, cost optimality and inference latency in
closed-loop simulation.
"""

__version__ = "0.1.0"
