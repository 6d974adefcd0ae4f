"""Novel class discovery without forgetting, on feature vectors."""

__version__ = '0.1.0'
