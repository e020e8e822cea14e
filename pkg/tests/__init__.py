"""Tests for rotadapt."""
