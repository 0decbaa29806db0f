"""Build script: compiles the optional Cython convolution kernels.

If Cython or a C compiler is unavailable the package still installs and
falls back to the numpy kernels at import time (see voicelink.nn.kernels).
"""

import numpy as np
from setuptools import setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/voicelink/nn/_convkern.pyx",
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
except ImportError:
    ext_modules = []

setup(
    ext_modules=ext_modules,
    include_dirs=[np.get_include()],
)
