"""
riskgrid - spatial risk-terrain modelling toolkit
- Fishnet grids and per-cell features from point layers
- k-NN spatial weights, global and local Moran's I
- Poisson GLM, random forest, SDEM and Manski models with evaluation tables
"""

__version__ = '1.0.0'
