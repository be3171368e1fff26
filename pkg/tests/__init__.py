"""Test suite for simevade."""
