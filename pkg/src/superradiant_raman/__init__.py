# superradiant_raman: cumulant mean-field simulation of superradiant Raman
# scattering of three-level atoms in a driven optical cavity.

__version__ = "0.1.0"
