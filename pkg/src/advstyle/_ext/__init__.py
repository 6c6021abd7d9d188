"""Compiled kernels; importing succeeds only when the extension was built."""
