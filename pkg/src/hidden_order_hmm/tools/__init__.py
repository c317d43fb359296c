"""
Command tools for the hidden order HMM analysis
"""

from .simulate import simulate_series
from .modeling import fit_model, decode_sequence
from .patch_extraction import extract_member_patches
from .statistics import compute_statistics, analyze_asymmetry
from .comparison import compare_segments
from .pipeline import run_pipeline

__all__ = [
    'simulate_series',
    'fit_model',
    'decode_sequence',
    'extract_member_patches',
    'compute_statistics',
    'analyze_asymmetry',
    'compare_segments',
    'run_pipeline',
]
