"""
ShapeSeeker - neural implicit shape and radiance fields for single objects and composed scenes
"""

__version__ = "1.0.0"
__author__ = "ShapeSeeker Team"
