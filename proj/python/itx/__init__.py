"""ITX confidential-computing simulator."""

from ._itx import (
    FRAME_GRANULE,
    KEY_CONTEXTS,
    MAX_FRAME_SIZE,
    MAX_KEY_REGIONS,
    ItxError,
    Scenario,
    StreamIV,
    StreamType,
    check_frame_size,
    compile,
    compose_iv,
    decrypt_frame,
    decrypt_stream,
    default_device_json,
    dice_boot,
    encrypt_frame,
    encrypt_stream,
    sha256,
    toy_job_json,
)

__all__ = [
    "FRAME_GRANULE",
    "KEY_CONTEXTS",
    "MAX_FRAME_SIZE",
    "MAX_KEY_REGIONS",
    "ItxError",
    "Scenario",
    "StreamIV",
    "StreamType",
    "check_frame_size",
    "compile",
    "compose_iv",
    "decrypt_frame",
    "decrypt_stream",
    "default_device_json",
    "dice_boot",
    "encrypt_frame",
    "encrypt_stream",
    "sha256",
    "toy_job_json",
]
