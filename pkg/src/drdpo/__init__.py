"""
drdpo: DPO and Dr. DPO on exactly computable tabular policies
"""

__version__ = "0.1.0"
