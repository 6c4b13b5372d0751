"""From-scratch Adinkra symbol classification toolkit."""

__version__ = "0.1.0"
