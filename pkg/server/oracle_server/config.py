"""Server configuration."""

from dataclasses import dataclass

RESIZE_POLICIES = ("bilinear", "nearest", "reject")


@dataclass(frozen=True)
class ServerConfig:
    """Deployment settings for the scoring service.

    model
        Model identifier, e.g. ``seeded:mlp:10:1`` (built-in deterministic
        classifier with 10 classes, seed 1) or ``torchscript:/path/to/model.pt``.
    host, port
        Listen address for the standalone server.
    height, width
        Input size the model expects; incoming images are adapted to it
        according to ``resize``.
    resize
        ``bilinear`` or ``nearest`` rescales mismatched images with the named
        fixed resampling filter; ``reject`` treats a size mismatch as an
        undecodable input (HTTP 422).
    deterministic
        Forces inference mode and fixed preprocessing: no augmentation, a
        fixed resampling filter, single-threaded evaluation where the backend
        allows it.  Identical request bytes then produce identical response
        bytes.
    """

    model: str = "seeded:mlp:10:1"
    host: str = "127.0.0.1"
    port: int = 8000
    height: int = 32
    width: int = 32
    resize: str = "bilinear"
    deterministic: bool = True

    def __post_init__(self):
        if self.resize not in RESIZE_POLICIES:
            raise ValueError(f"unknown resize policy: {self.resize!r}")
        if self.height <= 0 or self.width <= 0:
            raise ValueError("model input size must be positive")
        if not (0 < self.port < 65536):
            raise ValueError(f"invalid port: {self.port}")
