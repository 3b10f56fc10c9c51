"""Numerical lab for anisotropic isoperimetry.

Modules: ``integrand`` (convex integrands and their duals), ``wulff`` (Wulff
shapes), ``domain`` (level-set domains and anisotropic curvature),
``torsion`` (the anisotropic torsion potential), ``deficits`` (deficits and
identities), ``capillarity`` (potentials and the capillarity flow) and
``experiments`` (scenario runner and reports).
"""

__version__ = "0.1.0"
