"""Two-stage video background modeling and foreground segmentation."""
__version__ = "0.1.0"
