"""Application programs built on the QMPI primitives."""

from .bench import BenchRow, bcast_bench, epr_demo
from .chem import ChemResult, ChemTermSpec, block_layout, chem_term
from .tfim import TfimResult, TfimSpec, tfim_evolve, tfim_oracle

__all__ = [
    "BenchRow", "bcast_bench", "epr_demo",
    "ChemResult", "ChemTermSpec", "block_layout", "chem_term",
    "TfimResult", "TfimSpec", "tfim_evolve", "tfim_oracle",
]
