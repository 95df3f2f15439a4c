"""Instance segmentation as RL-driven graph partitioning.

A stateless soft actor-critic predicts merge affinities on the edges of a
superpixel region-adjacency graph, a multicut solver turns them into an
instance partition, and non-differentiable shape/count priors (or a
supervised Dice term) reward the agent through subgraph-decomposed rewards.
"""

__version__ = "0.1.0"
