import struct

import numpy as np
import pytest


def wav_bytes(samples, sample_rate=16000, channels=1, fmt="pcm16"):
    """Hand-assembled RIFF bytes so the loader is tested against an
    independent writer."""
    if fmt == "pcm16":
        payload = b"".join(struct.pack("<h", int(s)) for s in samples)
        audio_format, bits = 1, 16
        block = 2 * channels
    elif fmt == "float32":
        payload = b"".join(struct.pack("<f", float(s)) for s in samples)
        audio_format, bits = 3, 32
        block = 4 * channels
    else:
        raise ValueError(fmt)
    hdr = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    hdr += b"fmt " + struct.pack(
        "<IHHIIHH", 16, audio_format, channels, sample_rate,
        sample_rate * block, block, bits,
    )
    hdr += b"data" + struct.pack("<I", len(payload))
    return hdr + payload


@pytest.fixture
def sine_clip():
    from medspeech.audio_io import AudioClip

    t = np.arange(16000) / 16000.0
    return AudioClip(0.5 * np.sin(2 * np.pi * 440.0 * t), 16000)
