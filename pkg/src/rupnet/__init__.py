"""RUPNet: lightweight residual encoder-decoder for real-time polyp segmentation"""

__version__ = "0.3.0"
