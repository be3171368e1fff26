"""Core algorithms: parsing, CFG analysis, similarity models, emulation, correction and attack."""
