"""Distributed single- and multi-object tracking over sensor networks.

Library layout:

- gaussian: Gaussian/mixture algebra, covariance intersection, merge/prune
- kalman: KF, multi-sensor KF, EKF, UKF and the unscented transform
- mm_filters: jump-Markov banks (GPB1, IMM) and probability-vector fusion
- network_consensus: graphs, Metropolis weights, distributed filter steps
- rfs_core: random-finite-set primitives, samplers, set integrals
- cphd: Gaussian-mixture CPHD filtering and its consensus variant
- labeled_rfs: delta-GLMB / marginalized delta-GLMB / LMB filters
- labeled_fusion: consensus fusion of labeled multi-object densities
- scenario: motion/sensor models, truth and measurement simulation
- metrics: OSPA, position RMSE, cardinality statistics
- harness: batch experiment runner behind the `distrack` CLI
"""

__version__ = "0.1.0"
