"""Select a LIDAR 3D detection model that suits degraded point clouds.

Modules:

* ``pointcloud_io``  KITTI velodyne/label/calib formats and box types
* ``degrade``        voxel-grid filter, uniform and random sampling, Gaussian noise
* ``features``       density ratio, noise estimate, label statistics
* ``selector``       model registry and the rule-based selector
* ``evaluation``     rotated-IoU matching and R40 average precision
* ``detect``         oracle and geometric baseline detectors
* ``render``         bird's-eye SVG output
* ``protocol``       binary wire format
* ``service``        selection server, edge client, training-data pipeline
* ``cli``            ``pcselect`` command line
"""
from ._accel import backend, set_backend

__version__ = "0.1.0"
__all__ = ["backend", "set_backend", "__version__"]
