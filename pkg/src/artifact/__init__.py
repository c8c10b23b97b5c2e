"""Verifier for recursive quantum programs."""
