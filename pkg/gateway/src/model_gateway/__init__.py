"""Model gateway for the segmentation backend wire protocol.

Serves the six /v1/* endpoints either from recorded fixtures (mock
mode, fully offline and deterministic) or from pluggable
detector/segmenter/annotator model adapters (live mode, with
per-session segmenter memory). Both modes share one schema and error
taxonomy, so clients cannot tell them apart at the protocol level.
"""

__version__ = "0.1.0"
