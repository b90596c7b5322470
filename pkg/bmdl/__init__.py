"""
BMDL: Bayesian multi-domain learning for overdispersed count data.

Hierarchical negative-binomial factor analysis across domains with
domain-dependent factor selection, Gibbs inference, feature extraction for
target-domain samples, and a classification evaluation harness.
"""

__version__ = "0.1.0"
__author__ = "BMDL Developers"
__description__ = "Multi-domain negative binomial factor analysis with Gibbs sampling"
