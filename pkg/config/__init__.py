"""
Oscilla configuration
"""
