"""PAC-Bayesian training and risk certificates for contrastive representation learning.

Stochastic feed-forward networks with diagonal Gaussian posteriors are trained
by minimizing generalisation-bound objectives (an iid Catoni-style objective
and a chi-square objective for temporally dependent data), and the resulting
representations ship with numerically computed risk certificates plus
mean-classifier downstream evaluation.
"""

__version__ = "0.1.0"
