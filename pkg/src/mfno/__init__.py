"""Multi-fidelity Fourier neural operator surrogates for two-phase flow.

Subpackages cover the full desk-scale pipeline: geomodel generation,
finite-volume two-phase simulation, dataset assembly, operator training
(pretrain on coarse-grid data, fine-tune on fine-grid data), and
evaluation metrics. See the README for the command-line workflow.
"""

__version__ = "0.1.0"
