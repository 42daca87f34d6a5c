"""Exception taxonomy shared across the package.

Every error carries a stable ``category`` slug so the CLI can emit a
single machine-parseable line and the services can map failures onto
HTTP status codes.
"""


class ArroError(Exception):
    """Base class for all package errors."""

    category = "error"


class ShapeError(ArroError):
    """Raster dimensions do not line up."""

    category = "shape-error"


class EmptyMaskError(ArroError):
    """Operation requires at least one set pixel."""

    category = "empty-mask"


class FormatError(ArroError):
    """Persisted data (RLE runs, manifests, images) is malformed."""

    category = "format-error"


class FrameError(ArroError):
    """A specific frame of an episode failed to load or validate."""

    category = "frame-error"

    def __init__(self, message, index=None, file=None):
        super().__init__(message)
        self.index = index
        self.file = file


class ConfigError(ArroError):
    """Invalid configuration value."""

    category = "config-error"


class InputError(ArroError):
    """Metric input does not satisfy the operation's preconditions."""

    category = "input-error"


class BackendError(ArroError):
    """Transport or model failure; retriable by the caller."""

    category = "backend-error"


class ProtocolError(ArroError):
    """Peer answered, but the payload violates the wire contract."""

    category = "protocol-error"


class SessionError(ArroError):
    """Unknown, closed or expired tracking session."""

    category = "session-error"


class StateError(ArroError):
    """Operation called against a session in the wrong lifecycle state."""

    category = "state-error"


class InitError(BackendError):
    """Track initialization could not seed an entity."""

    category = "init-error"


class PromptUnresolvedError(ArroError):
    """A detector prompt produced no usable detection."""

    category = "prompt-unresolved"

    def __init__(self, prompt, message=None):
        super().__init__(message or f"prompt unresolved: {prompt!r}")
        self.prompt = prompt


class GripperUnresolvedError(ArroError):
    """The annotator did not yield both gripper finger regions."""

    category = "gripper-unresolved"


class InitTimeoutError(ArroError):
    """Session initialization exceeded its wall-clock budget."""

    category = "timeout"
