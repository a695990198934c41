"""Numerical laboratory for Schrodinger operators on the half-line ``[1, inf)``."""
from .potential import HypothesisViolation, PotentialProfile, ProfileError
from .operator import DiscreteOperator, Grid, assemble_operator
from .eigen import EigenReport, negative_spectrum
from .spectral import SpectralDensity, density_jost, density_resolvent_limit, free_density
from .entropy import SumRuleReport, relative_entropy, semicontinuity_check, sum_rule_check
from .riccati import RiccatiDecomposition, decompose, weighted_estimate
from .layers import LayerSystem, build_and_fill, build_layers, fill_gaps
from .partition import PartitionOfUnity, assemble, build_partition, partition_certificates

__version__ = "0.1.0"
