"""raydose: deterministic 5.9 GHz V2X exposure simulator.

Ray-launching multipath field prediction (reflections, one UTD diffraction,
directive diffuse scattering, Weissberger foliage loss) over a polygonal
urban scene, followed by whole-body SAR dosimetry and exposure statistics.
"""

__version__ = "0.1.0"
