"""Dataset layouts, codecs, synthetic scenes, run configuration and reports."""
