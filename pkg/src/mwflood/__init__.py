"""Shallow-water flood modelling on uniform, wavelet-generated non-uniform and adaptive grids.

Modules
-------
raster_io
    ESRI ASCII grids, hydrographs and scenario configs.
field_core
    Planar (average + two slopes) projections of DEMs and flow fields.
mra
    Multiwavelet and Haar filter banks, detail trees and static grid generation.
quadgrid
    Quadtree leaf sets, grading, face enumeration and ``.nug`` files.
solver_uniform, solver_nonuniform, solver_adaptive
    DG2, FV1 and ACC solvers on uniform, static non-uniform and adaptive grids.
metrics
    Gauge RMSE and flood-extent scores.
scenarios
    Synthetic valley, dam-break and lake-at-rest cases.
"""

__version__ = "0.1.0"
