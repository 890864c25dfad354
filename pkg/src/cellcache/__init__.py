"""Content-aware user clustering and regret-learning caching for small cells."""
__version__ = "0.1.0"
