"""Test suite for BMDL."""
