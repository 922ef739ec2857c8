"""
Oscilla source modules
"""
__version__ = "1.0.0"
