"""
CLI package for BMDL.
"""

from .main import main

__all__ = ['main']
