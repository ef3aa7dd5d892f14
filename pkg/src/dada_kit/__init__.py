"""Event attribution by data assimilation: model evidence in factual and counterfactual worlds."""

__version__ = "0.1.0"
