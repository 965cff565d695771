"""Exception types shared across the package."""


class VidswapError(Exception):
    """Base class for all package errors."""

    code = "error"

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.context = context

    def to_json(self) -> dict:
        return {"code": self.code, "message": str(self), "context": self.context}


class ShapeError(VidswapError):
    """Tensor dimensions violate a documented contract."""

    code = "shape"


class EmptyMaskError(VidswapError):
    """An operation required at least one positive mask pixel."""

    code = "empty_mask"


class ConfigError(VidswapError):
    """Invalid or unknown configuration value."""

    code = "config"


class TensorFormatError(VidswapError):
    """Corrupt or unsupported binary tensor file.

    ``code`` distinguishes failure classes: bad_magic, bad_version,
    bad_dtype, bad_rank, dim_overflow, truncated, nonfinite.
    """

    code = "tensor_format"

    def __init__(self, code: str, message: str, **context):
        super().__init__(message, **context)
        self.code = code
