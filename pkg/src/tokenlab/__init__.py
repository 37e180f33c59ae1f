"""tokenlab: desk-scale simulator and policy lab for computational token economics."""

__version__ = "0.1.0"
