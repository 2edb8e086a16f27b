"""Video detailed-captioning pipeline and caption-as-proxy benchmark harness."""

__version__ = "0.1.0"
