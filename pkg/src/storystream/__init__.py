"""Streaming story discovery engine.

Clusters a chronological article stream into stories with a lightweight
trainable article encoder that is continually refreshed, window by window,
through self-supervised contrastive updates.
"""

__version__ = "0.1.0"
