"""Resolution of image references to bytes."""

from __future__ import annotations

import base64
import binascii
import mimetypes
from dataclasses import dataclass
from pathlib import Path

DATA_URI_PREFIX = "data:"


@dataclass(frozen=True)
class ImageAttachment:
    data: bytes
    mime: str = "image/png"

    def data_uri(self) -> str:
        return f"data:{self.mime};base64,{base64.b64encode(self.data).decode('ascii')}"


def resolve_image(image_ref: str, root: str | Path | None) -> ImageAttachment:
    """Load the bytes behind an image reference.

    Accepts ``data:<mime>;base64,<payload>`` URIs or paths; relative paths
    are taken against ``root``. Raises ``FileNotFoundError`` or
    ``ValueError`` when the reference cannot be resolved.
    """
    if image_ref.startswith(DATA_URI_PREFIX):
        header, _, encoded = image_ref.partition(",")
        if ";base64" not in header or not encoded:
            raise ValueError("only base64 data URIs are supported")
        try:
            data = base64.b64decode(encoded, validate=True)
        except binascii.Error as exc:
            raise ValueError(f"bad base64 image payload: {exc}") from exc
        if not data:
            raise ValueError("empty image payload")
        mime = header[len(DATA_URI_PREFIX):].split(";")[0] or "application/octet-stream"
        return ImageAttachment(data, mime)

    path = Path(image_ref)
    if not path.is_absolute():
        if root is None:
            raise FileNotFoundError(f"relative image path {image_ref!r} with no corpus root")
        path = Path(root) / path
    data = path.read_bytes()
    mime = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
    return ImageAttachment(data, mime)
