"""Authenticated SOME/IP service discovery anchored in a DNSSEC-signed vehicle zone."""

__version__ = "0.1.0"
