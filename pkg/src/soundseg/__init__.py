"""Singing-voice separation with a spectrogram U-Net."""

__version__ = "0.1.0"

WORKING_RATE = 11025
FRAME_SIZE = 1024
HOP = 256
PATCH_FREQ = 512
PATCH_TIME = 128
