"""Memory-budgeted VQA probe for frozen visual representations.

A fixed-capacity attention reasoning module is trained on top of frozen
feature tokens (ground-truth scene tokens, raw pixels, or externally
extracted features) to answer questions about synthetic scenes, under a
hard budget on token-count x token-dimension.
"""

__version__ = "0.1.0"
