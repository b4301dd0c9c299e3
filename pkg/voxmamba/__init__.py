"""voxmamba : couches Mamba sélectives pour la segmentation volumique 3D"""

__version__ = "0.1.0"
