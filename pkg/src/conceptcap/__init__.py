"""Zero-shot captioning over a shared embedding space.

Train a prompt-conditioned decoder on text alone by auto-encoding each
sentence from its own embedding plus retrieved concept prompts, then
swap in vision features at inference time.
"""

__version__ = "0.1.0"
