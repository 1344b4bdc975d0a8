"""Built-in configuration presets (``*.cfg`` data files)."""
