"""Domain models: assembly, CFG, oracle, attack, emulation and report types."""
