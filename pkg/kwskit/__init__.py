"""
kwskit - custom keyword spotting: embedding training, evaluation and
data-resource experiments
"""

__version__ = "0.1.0"
