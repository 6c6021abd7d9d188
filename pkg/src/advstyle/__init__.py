"""Style-based targeted attacks on a toy speech recognizer.

Modules: ``autodiff`` (reverse-mode engine), ``signal`` (synthesis, front-end,
WAV), ``ctc``, ``asr`` (toy acoustic model), ``style`` (content/style codes and
decoder), ``attacks`` (STA, SCA, attack-only), ``metrics``, ``harness`` and
``cli``.
"""
__version__ = "0.1.0"
