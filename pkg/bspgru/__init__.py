"""
Block-structured pruning and sparse inference toolkit for GRU classifiers
"""
__version__ = "0.1.0"
