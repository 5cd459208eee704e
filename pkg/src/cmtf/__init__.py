"""Cross-modal temporal fusion pipeline for daily market direction forecasting."""

__version__ = "0.1.0"
