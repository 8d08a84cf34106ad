"""leadrisk: stacked-ensemble risk assessment for residential water lead."""

__version__ = "0.1.0"
