"""Test suite for the sparse OFDM sensing library."""
