class HookError(Exception):
    """Base class for hook-side failures."""


class BackendUnavailable(HookError):
    """A denoising backend's dependencies or weights are missing."""


class EngineProtocolError(HookError):
    """Malformed or unexpected frame on the engine connection."""


class EngineRemoteError(HookError):
    """ERROR frame from the engine, with its diagnostic code."""

    def __init__(self, code: int, message: str):
        super().__init__(f"engine error {code}: {message}")
        self.code = code
        self.message = message
